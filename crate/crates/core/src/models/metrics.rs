use serde::{Deserialize, Serialize};

use super::{ModelError, Result};

/// Euclidean localization error statistics, in mm (mse in mm²).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationMetrics {
    pub n: usize,
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub n: usize,
    pub accuracy: f64,
    /// `confusion[i][j]` counts samples of true class `i` predicted as `j`.
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum Metrics {
    Localization(LocalizationMetrics),
    Classification(ClassificationMetrics),
}

pub fn localization_metrics(predictions: &[[f64; 2]], truths: &[[f64; 2]]) -> Result<LocalizationMetrics> {
    if predictions.len() != truths.len() {
        return Err(ModelError::ShapeMismatch(format!("{} predictions, {} truths", predictions.len(), truths.len())));
    }
    if truths.is_empty() {
        return Err(ModelError::EmptyTrain);
    }
    let n = truths.len() as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (p, t) in predictions.iter().zip(truths) {
        let d = (p[0] - t[0]).hypot(p[1] - t[1]);
        abs += d;
        sq += d * d;
    }
    let mse = sq / n;
    Ok(LocalizationMetrics { n: truths.len(), mae: abs / n, mse, rmse: mse.sqrt() })
}

pub fn classification_metrics(predictions: &[usize], truths: &[usize], n_classes: usize) -> Result<ClassificationMetrics> {
    if predictions.len() != truths.len() {
        return Err(ModelError::ShapeMismatch(format!("{} predictions, {} truths", predictions.len(), truths.len())));
    }
    if truths.is_empty() {
        return Err(ModelError::EmptyTrain);
    }
    let width = predictions.iter().chain(truths).map(|c| c + 1).max().unwrap_or(0).max(n_classes);
    let mut confusion = vec![vec![0; width]; width];
    for (p, t) in predictions.iter().zip(truths) {
        confusion[*t][*p] += 1;
    }
    let correct = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(ClassificationMetrics { n: truths.len(), accuracy: correct as f64 / truths.len() as f64, confusion })
}

/// Dispatches on the prediction type: 2-vectors are locations, anything
/// else is treated as class scores and reduced with argmax.
pub fn compute_metrics(predictions: &[Vec<f64>], truths: &[Vec<f64>], classes: Option<usize>) -> Result<Metrics> {
    match classes {
        None => {
            let p: Vec<[f64; 2]> = predictions.iter().map(|v| [v[0], v[1]]).collect();
            let t: Vec<[f64; 2]> = truths.iter().map(|v| [v[0], v[1]]).collect();
            localization_metrics(&p, &t).map(Metrics::Localization)
        }
        Some(k) => {
            let p: Vec<usize> = predictions.iter().map(|v| super::argmax(v)).collect();
            let t: Vec<usize> = truths.iter().map(|v| super::argmax(v)).collect();
            classification_metrics(&p, &t, k).map(Metrics::Classification)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let m = localization_metrics(&[[1.0, 2.0], [3.0, 4.0]], &[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!((m.mae, m.rmse), (0.0, 0.0));
        let c = classification_metrics(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(c.accuracy, 1.0);
        assert_eq!(c.confusion, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
    }

    #[test]
    fn three_and_four_mm() {
        let m = localization_metrics(&[[3.0, 0.0], [0.0, 4.0]], &[[0.0, 0.0], [0.0, 0.0]]).unwrap();
        assert_eq!(m.mae, 3.5);
        assert!((m.rmse - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(m.rmse, m.mse.sqrt());
    }

    #[test]
    fn confusion_counts() {
        let c = classification_metrics(&[0, 2, 2, 2], &[0, 1, 2, 2], 3).unwrap();
        assert_eq!(c.accuracy, 0.75);
        assert_eq!(c.confusion[1][2], 1);
        let row_sums: Vec<usize> = c.confusion.iter().map(|r| r.iter().sum()).collect();
        assert_eq!(row_sums, vec![1, 1, 2]);
    }

    #[test]
    fn single_class() {
        let c = classification_metrics(&[0, 0], &[0, 0], 1).unwrap();
        assert_eq!((c.accuracy, c.confusion.clone()), (1.0, vec![vec![2]]));
        let m = compute_metrics(&[vec![0.9, 0.1]], &[vec![1.0, 0.0]], Some(2)).unwrap();
        assert!(matches!(m, Metrics::Classification(ClassificationMetrics { accuracy: 1.0, .. })));
    }
}
