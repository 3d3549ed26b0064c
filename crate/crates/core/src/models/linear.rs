//! Least squares with intercept, and polynomial feature expansion.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::serialize::f64_vec;
use super::{ModelError, Result, Standardizer};

/// `y = W x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub n_features: usize,
    pub n_outputs: usize,
    /// Row-major, `n_outputs × n_features`.
    #[serde(with = "f64_vec")]
    pub weights: Vec<f64>,
    #[serde(with = "f64_vec")]
    pub bias: Vec<f64>,
    /// The design matrix was numerically rank deficient; the stored solution
    /// is the minimum-norm one.
    pub rank_deficient: bool,
}

impl LinearModel {
    pub fn weight(&self, output: usize, feature: usize) -> f64 {
        self.weights[output * self.n_features + feature]
    }

    pub fn predict(&self, features: &[f64]) -> Vec<f64> {
        (0..self.n_outputs)
            .map(|o| {
                let w = &self.weights[o * self.n_features..(o + 1) * self.n_features];
                self.bias[o] + w.iter().zip(features).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    pub(crate) fn validate(&self) -> Result<usize> {
        if self.weights.len() != self.n_features * self.n_outputs || self.bias.len() != self.n_outputs {
            return Err(ModelError::Format("linear weights do not match declared shape".into()));
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(ModelError::Format("non-finite linear coefficient".into()));
        }
        Ok(self.n_outputs)
    }
}

/// Relative size of an `R` diagonal entry below which a column counts as
/// linearly dependent on the previous ones.
const RANK_TOL: f64 = 1e-10;

/// Ordinary least squares with an intercept column, solved by Householder QR.
/// Falls back to the SVD minimum-norm solution when the design is rank
/// deficient.
pub fn fit_linear(features: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<LinearModel> {
    let n = features.len();
    if n == 0 {
        return Err(ModelError::EmptyTrain);
    }
    let p = features[0].len();
    let q = targets.first().map_or(0, Vec::len);
    if targets.len() != n {
        return Err(ModelError::ShapeMismatch(format!("{n} feature rows, {} targets", targets.len())));
    }
    if n < p + 1 {
        return Err(ModelError::TooFewSamples { needed: p + 1, got: n });
    }
    let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { features[i][j - 1] });
    let rhs = DMatrix::from_fn(n, q, |i, j| targets[i][j]);

    let qr = design.clone().qr();
    let r = qr.r();
    let col_scale = (0..p + 1).map(|j| design.column(j).norm()).fold(0.0, f64::max);
    let rank_deficient = (0..p + 1).any(|j| !(r[(j, j)].abs() > RANK_TOL * col_scale));
    let coef = if rank_deficient {
        log::warn!("least-squares design is rank deficient; using the minimum-norm solution");
        design
            .svd(true, true)
            .solve(&rhs, RANK_TOL * col_scale)
            .map_err(|e| ModelError::InvalidParams(e.to_string()))?
    } else {
        let qty = qr.q().transpose() * &rhs;
        r.solve_upper_triangular(&qty)
            .ok_or_else(|| ModelError::InvalidParams("singular triangular factor".into()))?
    };

    let mut weights = Vec::with_capacity(q * p);
    for o in 0..q {
        weights.extend((1..=p).map(|j| coef[(j, o)]));
    }
    let model = LinearModel {
        n_features: p,
        n_outputs: q,
        weights,
        bias: (0..q).map(|o| coef[(0, o)]).collect(),
        rank_deficient,
    };
    if model.weights.iter().chain(&model.bias).any(|v| !v.is_finite()) {
        return Err(ModelError::InvalidParams("least squares produced non-finite coefficients".into()));
    }
    Ok(model)
}

/// Monomials of total degree 1..=degree as lists of feature indices, ordered
/// by degree, then lexicographically: for `(a, b)` and degree 2 this is
/// `a, b, a², ab, b²`.
pub fn polynomial_columns(n_features: usize, degree: usize) -> Vec<Vec<usize>> {
    fn extend(start: usize, n: usize, left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(prefix.clone());
            return;
        }
        for i in start..n {
            prefix.push(i);
            extend(i, n, left - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for d in 1..=degree {
        extend(0, n_features, d, &mut Vec::with_capacity(d), &mut out);
    }
    out
}

/// Expands one feature row into all monomials of degree `1..=degree`
/// (no constant term), in `polynomial_columns` order.
pub fn expand_polynomial(features: &[f64], degree: usize) -> Vec<f64> {
    polynomial_columns(features.len(), degree)
        .iter()
        .map(|idx| idx.iter().map(|&i| features[i]).product())
        .collect()
}

/// Least squares on standardized inputs expanded to polynomial features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialModel {
    pub degree: usize,
    pub input: Standardizer,
    pub linear: LinearModel,
}

impl PolynomialModel {
    pub fn fit(features: &[Vec<f64>], targets: &[Vec<f64>], degree: usize) -> Result<Self> {
        if degree == 0 {
            return Err(ModelError::InvalidParams("polynomial degree must be >= 1".into()));
        }
        let input = Standardizer::fit(features);
        let expanded: Vec<Vec<f64>> = features.iter().map(|r| expand_polynomial(&input.transform(r), degree)).collect();
        let linear = fit_linear(&expanded, targets)?;
        Ok(Self { degree, input, linear })
    }

    pub fn predict(&self, features: &[f64]) -> Vec<f64> {
        self.linear.predict(&expand_polynomial(&self.input.transform(features), self.degree))
    }

    pub(crate) fn validate(&self) -> Result<usize> {
        let expected = polynomial_columns(self.input.len(), self.degree).len();
        if self.degree == 0 || self.input.std.len() != self.input.len() || self.linear.n_features != expected {
            return Err(ModelError::Format("polynomial model shapes are inconsistent".into()));
        }
        self.linear.validate()
    }
}
