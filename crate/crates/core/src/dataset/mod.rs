//! Synthetic touch datasets, train/test splitting, and ingestion of recorded
//! motion-capture and resistance data.

mod mocap;
mod stream;

pub use mocap::{
    ingest_mocap_csv, marker_pair_stretch, normalize_frames, parse_mocap_csv, parse_mocap_frames, NormalizedFrames, UnitTransform,
};
pub use stream::{
    parse_resistance_csv, read_resistance_csv, segment_touch_windows, ResistanceStream, SignalUnit, TouchWindow,
};

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{FrameSpec, GeometryError, TouchEvent};
use crate::sensing::{apply_noise, feature_vector, Arrangement, NoiseModel, SensingError};

/// Default share of samples used for training.
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.666;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Sensing(#[from] SensingError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("line {line}, column {column}: {message}")]
    Parse { line: u64, column: usize, message: String },
    #[error("frame {frame}: expected {expected} markers, found {found}")]
    GridMismatch { frame: u64, expected: usize, found: usize },
    #[error("degenerate rest frame: {0}")]
    DegenerateRestFrame(String),
    #[error("resistance stream is empty")]
    EmptyStream,
    #[error("invalid stream: {0}")]
    InvalidStream(String),
    #[error("depth {0} mm is not in the configured depth list")]
    UnknownDepth(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for DatasetError {
    fn from(e: std::io::Error) -> Self {
        DatasetError::Io(e.to_string())
    }
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

/// One touch: sensor readings plus location and depth targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub features: Vec<f64>,
    pub x: f64,
    pub y: f64,
    pub depth_mm: f64,
    pub depth_class: usize,
}

impl Sample {
    pub fn location(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    Simulated,
    Ingested { session: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    pub arrangement: String,
    pub depths: Vec<f64>,
    pub provenance: Provenance,
    pub seed: u64,
}

impl Dataset {
    pub fn new(
        samples: Vec<Sample>,
        arrangement: impl Into<String>,
        depths: Vec<f64>,
        provenance: Provenance,
        seed: u64,
    ) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(DatasetError::InvalidInput("a dataset needs at least one sample".into()));
        };
        let width = first.features.len();
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != width {
                return Err(DatasetError::InvalidInput(format!(
                    "sample {i} has {} features, expected {width}",
                    s.features.len()
                )));
            }
            match depths.get(s.depth_class) {
                Some(&d) if d == s.depth_mm => {}
                _ => {
                    return Err(DatasetError::InvalidInput(format!(
                        "sample {i}: depth class {} does not match {} mm",
                        s.depth_class, s.depth_mm
                    )))
                }
            }
        }
        Ok(Self { samples, arrangement: arrangement.into(), depths, provenance, seed })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.samples[0].features.len()
    }

    pub fn n_classes(&self) -> usize {
        self.depths.len()
    }

    pub fn features(&self) -> Vec<&[f64]> {
        self.samples.iter().map(|s| s.features.as_slice()).collect()
    }

    /// Same metadata, different samples. Fails if `samples` is empty.
    pub fn with_samples(&self, samples: Vec<Sample>) -> Result<Self> {
        Self::new(samples, self.arrangement.clone(), self.depths.clone(), self.provenance.clone(), self.seed)
    }

    /// Keeps only the samples for which `keep` returns true.
    pub fn filter(&self, keep: impl Fn(&Sample) -> bool) -> Result<Self> {
        self.with_samples(self.samples.iter().filter(|s| keep(s)).cloned().collect())
    }

    /// Writes one JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for s in &self.samples {
            serde_json::to_writer(&mut out, s).map_err(|e| DatasetError::Io(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads a JSON Lines dataset file. The depth list is rebuilt from the
    /// `(depth_class, depth_mm)` pairs found in the file.
    pub fn read_jsonl<R: BufRead>(input: R, arrangement: impl Into<String>, session: impl Into<String>) -> Result<Self> {
        let mut samples = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let s: Sample = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
                line: i as u64 + 1,
                column: e.column(),
                message: e.to_string(),
            })?;
            samples.push(s);
        }
        let n_classes = samples.iter().map(|s| s.depth_class + 1).max().unwrap_or(0);
        let mut depths = vec![f64::NAN; n_classes];
        for s in &samples {
            let slot = &mut depths[s.depth_class];
            if slot.is_nan() {
                *slot = s.depth_mm;
            }
        }
        if depths.iter().any(|d| d.is_nan()) {
            return Err(DatasetError::InvalidInput("depth classes are not contiguous".into()));
        }
        Self::new(samples, arrangement, depths, Provenance::Ingested { session: session.into() }, 0)
    }
}

/// `n` touches uniformly distributed over the touch area, depth drawn
/// uniformly from `depths`.
pub fn sample_touches(frame: &FrameSpec, depths: &[f64], n: usize, seed: u64) -> Result<Vec<TouchEvent>> {
    check_depths(depths)?;
    let area = frame.touch_area();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let x = rng.random_range(area.min_x..area.max_x);
            let y = rng.random_range(area.min_y..area.max_y);
            let depth = depths[rng.random_range(0..depths.len())];
            TouchEvent::new(x, y, depth)
        })
        .collect())
}

fn check_depths(depths: &[f64]) -> Result<()> {
    if depths.is_empty() {
        return Err(DatasetError::InvalidInput("depth list is empty".into()));
    }
    if depths.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(DatasetError::InvalidInput(format!("depths must be finite and >= 0: {depths:?}")));
    }
    for (i, d) in depths.iter().enumerate() {
        if depths[..i].contains(d) {
            return Err(DatasetError::InvalidInput(format!("depth {d} listed twice")));
        }
    }
    Ok(())
}

/// Simulates sensor readings for every touch; noise is drawn from a generator
/// seeded with `noise.seed`, in touch order.
pub fn build_dataset(
    frame: &FrameSpec,
    arrangement: &Arrangement,
    touches: &[TouchEvent],
    depths: &[f64],
    noise: &NoiseModel,
    samples_per_sensor: usize,
) -> Result<Dataset> {
    check_depths(depths)?;
    let mut rng = noise.rng();
    let samples = touches
        .iter()
        .map(|t| {
            let class = depths.iter().position(|&d| d == t.depth).ok_or(DatasetError::UnknownDepth(t.depth))?;
            let clean = feature_vector(frame, t, arrangement, samples_per_sensor)?;
            let features = apply_noise(&clean, noise, &mut rng)?;
            Ok(Sample { features, x: t.x, y: t.y, depth_mm: t.depth, depth_class: class })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, arrangement.name(), depths.to_vec(), Provenance::Simulated, noise.seed)
}

/// Number of training samples for `n` samples at `fraction`, rounding
/// half-way cases to even.
pub fn train_count(n: usize, fraction: f64) -> usize {
    (n as f64 * fraction).round_ties_even() as usize
}

/// Random split with `train_count(n, fraction)` training samples.
pub fn split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(DatasetError::InvalidInput(format!("train fraction {fraction} outside [0, 1]")));
    }
    split_exact(dataset, train_count(dataset.len(), fraction), seed)
}

/// Random split with exactly `n_train` training samples.
pub fn split_exact(dataset: &Dataset, n_train: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = dataset.len();
    if n_train == 0 || n_train >= n {
        return Err(DatasetError::InvalidInput(format!(
            "cannot split {n} samples into {n_train} train and {} test",
            n.saturating_sub(n_train)
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| dataset.samples[i].clone()).collect::<Vec<_>>();
    Ok((dataset.with_samples(pick(&order[..n_train]))?, dataset.with_samples(pick(&order[n_train..]))?))
}
