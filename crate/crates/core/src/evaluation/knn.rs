//! Brute-force nearest-neighbour reference predictor.

use super::{EvalError, Result};
use crate::dataset::{Dataset, Sample};
use crate::models::{classification_metrics, localization_metrics, Metrics, Target};

/// Indices of the `k` training samples closest to `features` in Euclidean
/// distance, nearest first. Equal distances keep training order, so the
/// lowest index wins a tie.
pub fn nearest_neighbors(train: &[Sample], features: &[f64], k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, s)| (s.features.iter().zip(features).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().take(k).map(|(_, i)| i).collect()
}

/// Location: mean of the neighbours' locations. Class: majority vote, ties
/// broken by the lowest class index.
pub fn knn_predict(train: &Dataset, features: &[f64], k: usize, target: Target) -> Vec<f64> {
    let idx = nearest_neighbors(train.samples(), features, k);
    let s = train.samples();
    match target {
        Target::Location => {
            let n = idx.len() as f64;
            vec![idx.iter().map(|&i| s[i].x).sum::<f64>() / n, idx.iter().map(|&i| s[i].y).sum::<f64>() / n]
        }
        Target::Depth => {
            let mut votes = vec![0.0; train.n_classes()];
            for &i in &idx {
                votes[s[i].depth_class] += 1.0;
            }
            votes
        }
    }
}

pub fn knn_oracle(train: &Dataset, test: &Dataset, k: usize, target: Target) -> Result<Metrics> {
    if k == 0 {
        return Err(EvalError::Config("k must be >= 1".into()));
    }
    if train.n_features() != test.n_features() {
        return Err(EvalError::Config("train and test feature widths differ".into()));
    }
    let preds: Vec<Vec<f64>> = test.samples().iter().map(|s| knn_predict(train, &s.features, k, target)).collect();
    Ok(match target {
        Target::Location => {
            let p: Vec<[f64; 2]> = preds.iter().map(|v| [v[0], v[1]]).collect();
            let t: Vec<[f64; 2]> = test.samples().iter().map(|s| [s.x, s.y]).collect();
            Metrics::Localization(localization_metrics(&p, &t)?)
        }
        Target::Depth => {
            let p: Vec<usize> = preds.iter().map(|v| crate::models::argmax(v)).collect();
            let t: Vec<usize> = test.samples().iter().map(|s| s.depth_class).collect();
            Metrics::Classification(classification_metrics(&p, &t, train.n_classes().max(test.n_classes()))?)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Provenance;

    fn ds(rows: &[(f64, f64, usize)]) -> Dataset {
        let samples = rows
            .iter()
            .map(|&(f, x, c)| Sample { features: vec![f], x, y: 0.0, depth_mm: [0.0, 10.0][c], depth_class: c })
            .collect();
        Dataset::new(samples, "t", vec![0.0, 10.0], Provenance::Simulated, 0).unwrap()
    }

    #[test]
    fn self_test_is_exact() {
        let d = ds(&[(0.0, 1.0, 0), (1.0, 2.0, 1), (2.0, 3.0, 1)]);
        match knn_oracle(&d, &d, 1, Target::Location).unwrap() {
            Metrics::Localization(m) => assert_eq!(m.mae, 0.0),
            _ => unreachable!(),
        }
        match knn_oracle(&d, &d, 1, Target::Depth).unwrap() {
            Metrics::Classification(m) => assert_eq!(m.accuracy, 1.0),
            _ => unreachable!(),
        }
    }

    #[test]
    fn ties_pick_lowest_index() {
        let d = ds(&[(0.0, 5.0, 0), (2.0, 7.0, 1)]);
        assert_eq!(nearest_neighbors(d.samples(), &[1.0], 1), vec![0]);
        assert_eq!(knn_predict(&d, &[1.0], 1, Target::Location), vec![5.0, 0.0]);
        // 1-1 vote split goes to class 0
        assert_eq!(crate::models::argmax(&knn_predict(&d, &[1.0], 2, Target::Depth)), 0);
    }
}
