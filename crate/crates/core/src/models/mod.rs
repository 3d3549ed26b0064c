//! Regression and classification models sharing one fit/predict contract:
//! least squares (plain and polynomial), a random forest and a small MLP.

mod forest;
mod linear;
mod metrics;
mod mlp;
mod serialize;

pub use forest::{fit_forest, ForestModel, ForestParams, Tree};
pub use linear::{expand_polynomial, fit_linear, polynomial_columns, LinearModel, PolynomialModel};
pub use metrics::{classification_metrics, compute_metrics, localization_metrics, ClassificationMetrics, LocalizationMetrics, Metrics};
pub use mlp::{fit_mlp, gradient_check, gradient_check_network, softmax, BatchTargets, Dense, MlpModel, MlpParams, MlpTask, Network};
pub use serialize::MODEL_FORMAT_VERSION;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training set is empty")]
    EmptyTrain,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("model file: {0}")]
    Format(String),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// What a model is trained to predict from a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Touch position (x, y) in mm.
    Location,
    /// Index into the dataset's depth list.
    Depth,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Regression(Vec<Vec<f64>>),
    Classes { labels: Vec<usize>, n_classes: usize },
}

impl Targets {
    pub fn from_dataset(dataset: &Dataset, target: Target) -> Self {
        match target {
            Target::Location => Targets::Regression(dataset.samples().iter().map(|s| vec![s.x, s.y]).collect()),
            Target::Depth => Targets::Classes {
                labels: dataset.samples().iter().map(|s| s.depth_class).collect(),
                n_classes: dataset.n_classes(),
            },
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Targets::Regression(y) => y.len(),
            Targets::Classes { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> Task {
        match self {
            Targets::Regression(y) => Task::Regression { n_outputs: y.first().map_or(0, Vec::len) },
            Targets::Classes { n_classes, .. } => Task::Classification { n_classes: *n_classes },
        }
    }

    /// Regression targets as-is, class labels one-hot encoded over `width` columns.
    fn dense(&self, width: usize) -> Vec<Vec<f64>> {
        match self {
            Targets::Regression(y) => y.clone(),
            Targets::Classes { labels, .. } => labels
                .iter()
                .map(|&l| {
                    let mut row = vec![0.0; width];
                    row[l] = 1.0;
                    row
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Task {
    Regression { n_outputs: usize },
    Classification { n_classes: usize },
}

/// Model family and hyperparameters, as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Linear {},
    Polynomial {
        #[serde(default = "default_degree")]
        degree: usize,
    },
    Forest(ForestParams),
    Mlp(MlpParams),
}

fn default_degree() -> usize {
    2
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Linear {} => "linear",
            ModelSpec::Polynomial { .. } => "polynomial",
            ModelSpec::Forest(_) => "forest",
            ModelSpec::Mlp(_) => "mlp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimator {
    Linear(LinearModel),
    Polynomial(PolynomialModel),
    Forest(ForestModel),
    Mlp(MlpModel),
}

/// A fitted model together with the task it was trained for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub task: Task,
    pub seed: u64,
    pub estimator: Estimator,
}

impl Model {
    pub fn name(&self) -> &'static str {
        match self.estimator {
            Estimator::Linear(_) => "linear",
            Estimator::Polynomial(_) => "polynomial",
            Estimator::Forest(_) => "forest",
            Estimator::Mlp(_) => "mlp",
        }
    }

    /// Raw output vector: coordinates for regression, per-class scores for
    /// classification.
    pub fn predict(&self, features: &[f64]) -> Vec<f64> {
        match &self.estimator {
            Estimator::Linear(m) => m.predict(features),
            Estimator::Polynomial(m) => m.predict(features),
            Estimator::Forest(m) => m.predict(features),
            Estimator::Mlp(m) => m.predict(features),
        }
    }

    /// Highest-scoring class; ties go to the lowest index.
    pub fn predict_class(&self, features: &[f64]) -> usize {
        argmax(&self.predict(features))
    }

    pub fn predict_location(&self, features: &[f64]) -> [f64; 2] {
        let out = self.predict(features);
        [out[0], out[1]]
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Fits the model described by `spec`. Linear, polynomial and forest models
/// treat classification as regression on one-hot targets.
pub fn fit(spec: &ModelSpec, features: &[Vec<f64>], targets: &Targets, seed: u64) -> Result<Model> {
    check_training_set(features, targets)?;
    let task = targets.task();
    let width = match task {
        Task::Regression { n_outputs } => n_outputs,
        Task::Classification { n_classes } => n_classes,
    };
    let estimator = match spec {
        ModelSpec::Linear {} => Estimator::Linear(fit_linear(features, &targets.dense(width))?),
        ModelSpec::Polynomial { degree } => {
            Estimator::Polynomial(PolynomialModel::fit(features, &targets.dense(width), *degree)?)
        }
        ModelSpec::Forest(params) => Estimator::Forest(fit_forest(features, &targets.dense(width), params, seed)?),
        ModelSpec::Mlp(params) => Estimator::Mlp(fit_mlp(features, targets, params, seed)?),
    };
    Ok(Model { task, seed, estimator })
}

pub(crate) fn check_training_set(features: &[Vec<f64>], targets: &Targets) -> Result<()> {
    if features.is_empty() {
        return Err(ModelError::EmptyTrain);
    }
    if features.len() != targets.len() {
        return Err(ModelError::ShapeMismatch(format!("{} feature rows, {} targets", features.len(), targets.len())));
    }
    let p = features[0].len();
    if let Some(row) = features.iter().find(|r| r.len() != p) {
        return Err(ModelError::ShapeMismatch(format!("feature rows of length {p} and {}", row.len())));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ModelError::InvalidParams("non-finite feature value".into()));
    }
    match targets {
        Targets::Regression(y) => {
            let q = y[0].len();
            if q == 0 || y.iter().any(|r| r.len() != q) {
                return Err(ModelError::ShapeMismatch("regression targets must share a non-zero width".into()));
            }
            if y.iter().flatten().any(|v| !v.is_finite()) {
                return Err(ModelError::InvalidParams("non-finite target value".into()));
            }
        }
        Targets::Classes { labels, n_classes } => {
            if let Some(l) = labels.iter().find(|&&l| l >= *n_classes) {
                return Err(ModelError::ShapeMismatch(format!("label {l} with {n_classes} classes")));
            }
        }
    }
    Ok(())
}

/// Per-column mean and standard deviation; constant columns get scale 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    #[serde(with = "serialize::f64_vec")]
    pub mean: Vec<f64>,
    #[serde(with = "serialize::f64_vec")]
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let p = rows.first().map_or(0, Vec::len);
        let n = rows.len() as f64;
        let mut mean = vec![0.0; p];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; p];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / n).sqrt();
                // relative floor so columns constant up to rounding stay unscaled
                if sd > 1e-12 * m.abs().max(1e-300) { sd } else { 1.0 }
            })
            .collect();
        Self { mean, std }
    }

    pub fn identity(p: usize) -> Self {
        Self { mean: vec![0.0; p], std: vec![1.0; p] }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn inverse(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| v * s + m).collect()
    }
}
