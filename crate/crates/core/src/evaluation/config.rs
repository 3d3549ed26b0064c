//! Experiment configuration: one TOML or JSON file, unknown keys rejected,
//! with dotted `key=value` overrides applied before validation.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{EvalError, Result};
use crate::geometry::FrameSpec;
use crate::models::{ForestParams, ModelSpec, MlpParams};
use crate::sensing::{ArrangementSpec, NoiseModel, DEFAULT_STRETCH_SAMPLES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    #[serde(default)]
    pub frame: FrameSpec,
    pub arrangements: Vec<ArrangementSpec>,
    /// Points per sensor for the stretch integral.
    #[serde(default = "default_stretch_samples")]
    pub stretch_samples: usize,
    /// Nearest neighbours used by the reference predictor.
    #[serde(default = "default_oracle_k")]
    pub oracle_k: usize,
    /// Fill the `seconds` column of the sweep table. Off by default so that
    /// outputs are reproducible byte for byte.
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "TaskConfig::localization")]
    pub localization: TaskConfig,
    #[serde(default = "TaskConfig::classification")]
    pub classification: TaskConfig,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub surface: Option<SurfaceConfig>,
}

fn default_stretch_samples() -> usize {
    DEFAULT_STRETCH_SAMPLES
}

fn default_oracle_k() -> usize {
    1
}

/// Data generation, split and models for one experiment type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub depths: Vec<f64>,
    pub n_samples: usize,
    /// Exact training-set size; overrides `train_fraction`.
    #[serde(default)]
    pub n_train: Option<usize>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub noise: NoiseSettings,
    pub models: Vec<ModelSpec>,
    /// Recorded dataset (JSON Lines) used instead of simulation.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
}

fn default_train_fraction() -> f64 {
    crate::dataset::DEFAULT_TRAIN_FRACTION
}

impl TaskConfig {
    pub fn localization() -> Self {
        Self {
            depths: vec![20.0],
            n_samples: 1500,
            n_train: None,
            train_fraction: default_train_fraction(),
            noise: NoiseSettings::default(),
            models: vec![ModelSpec::Forest(ForestParams::default()), ModelSpec::Mlp(MlpParams::default())],
            dataset: None,
        }
    }

    pub fn classification() -> Self {
        Self {
            depths: vec![0.0, 15.0, 20.0],
            n_samples: 1496,
            n_train: Some(997),
            train_fraction: default_train_fraction(),
            noise: NoiseSettings::default(),
            models: vec![ModelSpec::Mlp(MlpParams::default())],
            dataset: None,
        }
    }

    /// Noise model for the given stream seed.
    pub fn noise_model(&self, seed: u64) -> NoiseModel {
        NoiseModel { sigma: self.noise.sigma, seed, dropout_ids: self.noise.dropout_ids.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSettings {
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub dropout_ids: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    /// When set, `classify` first searches the noise level reaching this
    /// accuracy and then runs at that level.
    pub target_accuracy: Option<f64>,
    pub sigma_max: f64,
    pub tolerance: f64,
    pub n_seeds: usize,
    pub max_iterations: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { target_accuracy: None, sigma_max: 0.1, tolerance: 0.02, n_seeds: 5, max_iterations: 20 }
    }
}

/// Inputs for surface-model validation against tracked markers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceConfig {
    pub mocap: PathBuf,
    /// CSV `frame,x,y,z` of the indenter position per mocap frame.
    pub touch_track: PathBuf,
    pub rows: usize,
    pub cols: usize,
    #[serde(default)]
    pub rest_frame: usize,
}

impl ExperimentConfig {
    /// A small default experiment on the standard frame.
    pub fn example(seed: u64) -> Self {
        Self {
            seed,
            frame: FrameSpec::default(),
            arrangements: vec![ArrangementSpec::border(3, 20.0, 2.0)],
            stretch_samples: DEFAULT_STRETCH_SAMPLES,
            oracle_k: 1,
            record_timing: false,
            output_dir: None,
            localization: TaskConfig::localization(),
            classification: TaskConfig::classification(),
            calibration: CalibrationConfig::default(),
            surface: None,
        }
    }

    /// Reads a `.toml` or `.json` file and applies `key=value` overrides.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let value = if is_json {
            serde_json::from_str(&text).map_err(|e| EvalError::Config(format!("{}: {e}", path.display())))?
        } else {
            let t: toml::Value = toml::from_str(&text).map_err(|e| EvalError::Config(format!("{}: {e}", path.display())))?;
            serde_json::to_value(t).map_err(|e| EvalError::Config(e.to_string()))?
        };
        let mut config = Self::from_value(value, overrides)?;
        // relative data paths are resolved against the config file
        if let Some(dir) = path.parent() {
            config.resolve_paths(dir);
        }
        Ok(config)
    }

    pub fn from_value(mut value: Value, overrides: &[String]) -> Result<Self> {
        // task sections have per-task defaults; fill them in so a partial
        // section or a dotted override only replaces what it names
        if let Value::Object(map) = &mut value {
            let defaults = [
                ("localization", serde_json::to_value(TaskConfig::localization())),
                ("classification", serde_json::to_value(TaskConfig::classification())),
                ("calibration", serde_json::to_value(CalibrationConfig::default())),
            ];
            for (key, default) in defaults {
                let mut merged = default.expect("defaults serialize");
                if let Some(user) = map.remove(key) {
                    merge(&mut merged, user);
                }
                map.insert(key.into(), merged);
            }
        }
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let config: Self = serde_json::from_value(value).map_err(|e| EvalError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for a in &mut self.arrangements {
            if let ArrangementSpec::Custom { path } = a {
                fix(path);
            }
        }
        for t in [&mut self.localization, &mut self.classification] {
            if let Some(p) = &mut t.dataset {
                fix(p);
            }
        }
        if let Some(s) = &mut self.surface {
            fix(&mut s.mocap);
            fix(&mut s.touch_track);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(EvalError::Config(m));
        if self.arrangements.is_empty() {
            return err("at least one arrangement is required".into());
        }
        if self.stretch_samples < 2 {
            return err("stretch_samples must be >= 2".into());
        }
        if self.oracle_k == 0 {
            return err("oracle_k must be >= 1".into());
        }
        for (name, t) in [("localization", &self.localization), ("classification", &self.classification)] {
            if t.depths.is_empty() || t.depths.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
                return err(format!("{name}.depths must be a non-empty list of depths >= 0"));
            }
            if t.models.is_empty() {
                return err(format!("{name}.models is empty"));
            }
            if !(0.0..=1.0).contains(&t.train_fraction) {
                return err(format!("{name}.train_fraction must lie in [0, 1]"));
            }
            if !(t.noise.sigma >= 0.0 && t.noise.sigma.is_finite()) {
                return err(format!("{name}.noise.sigma must be >= 0"));
            }
        }
        // a flat membrane carries no position information
        if self.localization.depths.contains(&0.0) {
            return err("localization.depths must all be > 0".into());
        }
        let c = &self.calibration;
        if let Some(t) = c.target_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return err("calibration.target_accuracy must lie in [0, 1]".into());
            }
        }
        if !(c.sigma_max > 0.0) || !(c.tolerance > 0.0) || c.n_seeds == 0 {
            return err("calibration needs sigma_max > 0, tolerance > 0 and n_seeds >= 1".into());
        }
        let mut names = BTreeSet::new();
        for a in &self.arrangements {
            if let Some(n) = a.default_name() {
                if !names.insert(n.clone()) {
                    return err(format!("arrangement {n} listed twice"));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form (sorted keys) of the resolved
    /// config, ignoring `output_dir`.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut v {
            m.remove("output_dir");
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Sets `a.b.c=value` in a JSON tree. Numeric segments index arrays. The
/// value is read as JSON when it parses (numbers, booleans, arrays, quoted
/// strings) and as a bare string otherwise.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| EvalError::Config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(EvalError::Config(format!("override key `{key}` is malformed")));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let segments: Vec<&str> = key.split('.').collect();
    let mut node = root;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(seg.to_string(), value);
                    return Ok(());
                }
                map.entry(seg.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| EvalError::Config(format!("`{seg}` in `{key}` must index a list")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| EvalError::Config(format!("index {idx} in `{key}` is past the end ({len} items)")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(EvalError::Config(format!("`{key}`: cannot descend into a scalar at `{seg}`"))),
        };
    }
    unreachable!("loop returns on the last segment")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_toml_gets_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "seed = 7\narrangements = [{ kind = \"border\", n_per_side = 3 }]\n").unwrap();
        let c = ExperimentConfig::load(&p, &[]).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.classification.n_train, Some(997));
        assert_eq!(c.frame, FrameSpec::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        let v = serde_json::json!({"seed": 1, "arrangements": [{"kind": "cross", "arm_len_mm": 30}], "sed": 2});
        assert!(matches!(ExperimentConfig::from_value(v, &[]), Err(EvalError::Config(_))));
        let v = serde_json::json!({"seed": 1, "arrangements": [{"kind": "cross", "arm_len_mm": 30}]});
        assert!(ExperimentConfig::from_value(v.clone(), &["localization.noise.sigmaa=0.1".into()]).is_err());
        assert!(ExperimentConfig::from_value(v, &["seed=abc".into()]).is_err());
    }

    #[test]
    fn override_equals_edit() {
        let base = serde_json::json!({"seed": 1, "arrangements": [{"kind": "border", "n_per_side": 3}]});
        let a = ExperimentConfig::from_value(
            base.clone(),
            &["arrangements.0.n_per_side=2".into(), "classification.noise.sigma=0.01".into(), "seed=9".into()],
        )
        .unwrap();
        let mut b = ExperimentConfig::from_value(base, &[]).unwrap();
        b.arrangements[0] = ArrangementSpec::border(2, 20.0, 2.0);
        b.classification.noise.sigma = 0.01;
        b.seed = 9;
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn hash_ignores_output_dir() {
        let mut a = ExperimentConfig::example(1);
        let h = a.hash();
        a.output_dir = Some("/tmp/x".into());
        assert_eq!(a.hash(), h);
        a.seed = 2;
        assert_ne!(a.hash(), h);
        assert_eq!(h.len(), 64);
    }

    #[test]
    fn override_errors() {
        let mut v = serde_json::json!({"a": [1, 2]});
        assert!(apply_override(&mut v, "a.5=1").is_err());
        assert!(apply_override(&mut v, "a.x=1").is_err());
        assert!(apply_override(&mut v, "novalue").is_err());
        assert!(apply_override(&mut v, "a.0.b=1").is_err());
        apply_override(&mut v, "b.c=\"s\"").unwrap();
        assert_eq!(v["b"]["c"], "s");
    }

    #[test]
    fn localization_rejects_depth_zero() {
        let mut c = ExperimentConfig::example(1);
        c.localization.depths = vec![0.0, 20.0];
        assert!(c.validate().is_err());
    }
}
