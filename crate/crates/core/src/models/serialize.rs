//! Versioned JSON model files. Float arrays are stored as base64 of their
//! little-endian bytes so every double survives the round trip bit for bit.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Estimator, Model, ModelError, Result, Task};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "bordertouch-model";

pub(crate) mod f64_vec {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn encode(values: &[f64]) -> String {
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        STANDARD.encode(bytes)
    }

    pub fn decode(text: &str) -> std::result::Result<Vec<f64>, String> {
        let bytes = STANDARD.decode(text).map_err(|e| e.to_string())?;
        if bytes.len() % 8 != 0 {
            return Err(format!("{} bytes is not a whole number of doubles", bytes.len()));
        }
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect())
    }

    pub fn serialize<S: Serializer>(values: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&encode(values))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
        let text = String::deserialize(d)?;
        decode(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize)]
struct EnvelopeRef<'a> {
    format: &'a str,
    version: u32,
    model: &'a Model,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope {
    format: String,
    version: u32,
    model: Model,
}

impl Model {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&EnvelopeRef { format: FORMAT_NAME, version: MODEL_FORMAT_VERSION, model: self })
            .expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let env: Envelope = serde_json::from_str(text).map_err(|e| ModelError::Format(e.to_string()))?;
        if env.format != FORMAT_NAME {
            return Err(ModelError::Format(format!("unknown format `{}`", env.format)));
        }
        if env.version != MODEL_FORMAT_VERSION {
            return Err(ModelError::Format(format!("unsupported version {}", env.version)));
        }
        env.model.validate()?;
        Ok(env.model)
    }

    /// Structural checks on a loaded model.
    pub fn validate(&self) -> Result<()> {
        let width = match self.task {
            Task::Regression { n_outputs } => n_outputs,
            Task::Classification { n_classes } => n_classes,
        };
        let outputs = match &self.estimator {
            Estimator::Linear(m) => m.validate()?,
            Estimator::Polynomial(m) => m.validate()?,
            Estimator::Forest(m) => m.validate()?,
            Estimator::Mlp(m) => m.validate()?,
        };
        if outputs < width {
            return Err(ModelError::Format(format!("model has {outputs} outputs, task needs {width}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_bitwise() {
        let v = vec![0.1, -0.0, f64::MIN_POSITIVE, 1e308, std::f64::consts::PI, 5e-324];
        let back = f64_vec::decode(&f64_vec::encode(&v)).unwrap();
        assert_eq!(v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), back.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert!(f64_vec::decode("AAA=").is_err());
    }
}
