//! Fully connected ReLU network trained by mini-batch SGD with momentum.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::serialize::f64_vec;
use super::{ModelError, Result, Standardizer, Targets};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlpTask {
    /// Linear output, mean squared error.
    Regression,
    /// Softmax output, cross-entropy.
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Output width for classification; defaults to the number of classes.
    pub n_outputs: Option<usize>,
    /// Train regression heads on standardized targets.
    pub standardize_targets: bool,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 32,
            epochs: 200,
            n_outputs: None,
            standardize_targets: true,
        }
    }
}

/// `out = W in + b`, with `W` row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    #[serde(with = "f64_vec")]
    pub w: Vec<f64>,
    #[serde(with = "f64_vec")]
    pub b: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, w: vec![0.0; inputs * outputs], b: vec![0.0; outputs] }
    }

    /// Row-major batch product; `x` is `batch × inputs`.
    fn forward(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(batch * self.outputs);
        for row in x.chunks_exact(self.inputs).take(batch) {
            for (o, wr) in self.w.chunks_exact(self.inputs).enumerate() {
                out.push(self.b[o] + wr.iter().zip(row).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        out
    }
}

/// Layer stack with ReLU between layers and a linear last layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Dense>,
}

/// Batch targets for the loss.
pub enum BatchTargets<'a> {
    /// `batch × outputs`, row-major.
    Values(&'a [f64]),
    Labels(&'a [usize]),
}

impl Network {
    /// Weights uniform in ±sqrt(6 / (fan_in + fan_out)), biases zero.
    pub fn glorot(sizes: &[usize], rng: &mut impl Rng) -> Self {
        let layers = sizes
            .windows(2)
            .map(|s| {
                let limit = (6.0 / (s[0] + s[1]) as f64).sqrt();
                let mut d = Dense::zeros(s[0], s[1]);
                d.w.iter_mut().for_each(|w| *w = rng.random_range(-limit..limit));
                d
            })
            .collect();
        Self { layers }
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().expect("non-empty network").outputs
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Pre-activations of every layer; the last entry is the network output.
    fn forward_all(&self, x: &[f64], batch: usize) -> Vec<Vec<f64>> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut act = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&act, batch);
            if i + 1 < self.layers.len() {
                act = z.iter().map(|v| v.max(0.0)).collect();
            }
            pre.push(z);
        }
        pre
    }

    pub fn forward(&self, x: &[f64], batch: usize) -> Vec<f64> {
        self.forward_all(x, batch).pop().expect("non-empty network")
    }

    /// Batch loss and, if requested, its gradient with respect to every
    /// parameter (same layout as the network).
    ///
    /// Regression loss is the mean over samples and outputs of the squared
    /// error; classification loss is the mean cross-entropy of the softmax.
    pub fn loss_and_grad(&self, x: &[f64], batch: usize, targets: &BatchTargets, want_grad: bool) -> (f64, Option<Vec<Dense>>) {
        let pre = self.forward_all(x, batch);
        let out = pre.last().expect("non-empty network");
        let q = self.n_outputs();
        let mut delta = vec![0.0; batch * q];
        let loss = match targets {
            BatchTargets::Values(y) => {
                let scale = 1.0 / (batch * q) as f64;
                let mut sum = 0.0;
                for ((d, o), t) in delta.iter_mut().zip(out).zip(y.iter()) {
                    let e = o - t;
                    sum += e * e;
                    *d = 2.0 * e * scale;
                }
                sum * scale
            }
            BatchTargets::Labels(labels) => {
                let mut sum = 0.0;
                for (b, &label) in labels.iter().enumerate().take(batch) {
                    let z = &out[b * q..(b + 1) * q];
                    let p = softmax(z);
                    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                    sum += lse - z[label];
                    for (k, d) in delta[b * q..(b + 1) * q].iter_mut().enumerate() {
                        *d = (p[k] - if k == label { 1.0 } else { 0.0 }) / batch as f64;
                    }
                }
                sum / batch as f64
            }
        };
        if !want_grad {
            return (loss, None);
        }

        let mut grads: Vec<Dense> = self.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input: Vec<f64> = if li == 0 { x[..batch * layer.inputs].to_vec() } else { pre[li - 1].iter().map(|v| v.max(0.0)).collect() };
            let g = &mut grads[li];
            for b in 0..batch {
                let d = &delta[b * layer.outputs..(b + 1) * layer.outputs];
                let a = &input[b * layer.inputs..(b + 1) * layer.inputs];
                for (o, &dv) in d.iter().enumerate() {
                    if dv == 0.0 {
                        continue;
                    }
                    g.b[o] += dv;
                    for (gw, av) in g.w[o * layer.inputs..(o + 1) * layer.inputs].iter_mut().zip(a) {
                        *gw += dv * av;
                    }
                }
            }
            if li > 0 {
                let z_prev = &pre[li - 1];
                let mut next = vec![0.0; batch * layer.inputs];
                for b in 0..batch {
                    let d = &delta[b * layer.outputs..(b + 1) * layer.outputs];
                    let nd = &mut next[b * layer.inputs..(b + 1) * layer.inputs];
                    for (o, &dv) in d.iter().enumerate() {
                        if dv == 0.0 {
                            continue;
                        }
                        for (n, w) in nd.iter_mut().zip(&layer.w[o * layer.inputs..(o + 1) * layer.inputs]) {
                            *n += dv * w;
                        }
                    }
                    for (n, z) in nd.iter_mut().zip(&z_prev[b * layer.inputs..(b + 1) * layer.inputs]) {
                        if *z <= 0.0 {
                            *n = 0.0;
                        }
                    }
                }
                delta = next;
            }
        }
        (loss, Some(grads))
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub task: MlpTask,
    pub params: MlpParams,
    pub input: Standardizer,
    /// Regression target scaling, when enabled.
    pub target: Option<Standardizer>,
    pub network: Network,
}

impl MlpModel {
    /// Regression output in target units, or class probabilities.
    pub fn predict(&self, features: &[f64]) -> Vec<f64> {
        let out = self.network.forward(&self.input.transform(features), 1);
        match (self.task, &self.target) {
            (MlpTask::Classification, _) => softmax(&out),
            (MlpTask::Regression, Some(t)) => t.inverse(&out),
            (MlpTask::Regression, None) => out,
        }
    }

    pub(crate) fn validate(&self) -> Result<usize> {
        let bad = |m: &str| Err(ModelError::Format(format!("mlp: {m}")));
        let layers = &self.network.layers;
        if layers.is_empty() || layers[0].inputs != self.input.len() || self.input.std.len() != self.input.len() {
            return bad("input width does not match the standardizer");
        }
        for w in layers.windows(2) {
            if w[0].outputs != w[1].inputs {
                return bad("layer shapes do not chain");
            }
        }
        for l in layers {
            if l.w.len() != l.inputs * l.outputs || l.b.len() != l.outputs {
                return bad("layer arrays do not match declared shape");
            }
            if l.w.iter().chain(&l.b).any(|v| !v.is_finite()) {
                return bad("non-finite parameter");
            }
        }
        if let Some(t) = &self.target {
            if t.len() != self.network.n_outputs() {
                return bad("target standardizer width differs from output width");
            }
        }
        Ok(self.network.n_outputs())
    }
}

pub fn fit_mlp(features: &[Vec<f64>], targets: &Targets, params: &MlpParams, seed: u64) -> Result<MlpModel> {
    super::check_training_set(features, targets)?;
    if params.batch_size == 0 || params.hidden.contains(&0) {
        return Err(ModelError::InvalidParams("batch_size and hidden widths must be >= 1".into()));
    }
    if !(params.learning_rate > 0.0 && params.learning_rate.is_finite()) || !(0.0..1.0).contains(&params.momentum) {
        return Err(ModelError::InvalidParams("learning_rate must be > 0 and momentum in [0, 1)".into()));
    }
    let n = features.len();
    let p = features[0].len();
    let input = Standardizer::fit(features);
    let xs: Vec<f64> = features.iter().flat_map(|r| input.transform(r)).collect();

    let (task, q, target, ys, labels) = match targets {
        Targets::Regression(y) => {
            let scaler = params.standardize_targets.then(|| Standardizer::fit(y));
            let flat: Vec<f64> = y.iter().flat_map(|r| scaler.as_ref().map_or_else(|| r.clone(), |s| s.transform(r))).collect();
            if params.n_outputs.is_some_and(|k| k != y[0].len()) {
                return Err(ModelError::InvalidParams("n_outputs can only be set for classification".into()));
            }
            (MlpTask::Regression, y[0].len(), scaler, flat, vec![])
        }
        Targets::Classes { labels, n_classes } => {
            let q = params.n_outputs.unwrap_or(*n_classes);
            if q < *n_classes || q == 0 {
                return Err(ModelError::InvalidParams(format!("{q} outputs for {n_classes} classes")));
            }
            (MlpTask::Classification, q, None, vec![], labels.clone())
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes: Vec<usize> = std::iter::once(p).chain(params.hidden.iter().copied()).chain(std::iter::once(q)).collect();
    let mut network = Network::glorot(&sizes, &mut rng);
    let mut velocity: Vec<f64> = vec![0.0; network.n_params()];

    let mut order: Vec<usize> = (0..n).collect();
    let mut bx = Vec::with_capacity(params.batch_size * p);
    let mut by = Vec::with_capacity(params.batch_size * q);
    let mut bl = Vec::with_capacity(params.batch_size);
    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        for (bi, chunk) in order.chunks(params.batch_size).enumerate() {
            bx.clear();
            by.clear();
            bl.clear();
            for &i in chunk {
                bx.extend_from_slice(&xs[i * p..(i + 1) * p]);
                match task {
                    MlpTask::Regression => by.extend_from_slice(&ys[i * q..(i + 1) * q]),
                    MlpTask::Classification => bl.push(labels[i]),
                }
            }
            let t = match task {
                MlpTask::Regression => BatchTargets::Values(&by),
                MlpTask::Classification => BatchTargets::Labels(&bl),
            };
            let (loss, grads) = network.loss_and_grad(&bx, chunk.len(), &t, true);
            if !loss.is_finite() {
                log::error!("mlp training diverged: epoch {epoch}, batch {bi}, loss {loss}");
                return Err(ModelError::NonFiniteLoss { epoch, batch: bi, loss });
            }
            let grads = grads.expect("gradient requested");
            let g = grads.iter().flat_map(|l| l.w.iter().chain(l.b.iter()));
            for ((w, v), g) in network.params_mut().zip(velocity.iter_mut()).zip(g) {
                *v = params.momentum * *v - params.learning_rate * g;
                *w += *v;
            }
        }
    }
    Ok(MlpModel { task, params: params.clone(), input, target, network })
}

/// Largest relative difference between backpropagated and central-difference
/// gradients (step 1e-5) of the batch loss, over all parameters.
pub fn gradient_check_network(network: &Network, x: &[f64], batch: usize, targets: &BatchTargets) -> f64 {
    const H: f64 = 1e-5;
    let (_, grads) = network.loss_and_grad(x, batch, targets, true);
    let analytic: Vec<f64> = grads.expect("gradient requested").iter().flat_map(|l| l.w.iter().chain(l.b.iter()).copied().collect::<Vec<_>>()).collect();
    let mut probe = network.clone();
    let mut worst: f64 = 0.0;
    for (k, g) in analytic.iter().enumerate() {
        let original = *probe.params_mut().nth(k).expect("parameter index");
        *probe.params_mut().nth(k).expect("parameter index") = original + H;
        let up = probe.loss_and_grad(x, batch, targets, false).0;
        *probe.params_mut().nth(k).expect("parameter index") = original - H;
        let down = probe.loss_and_grad(x, batch, targets, false).0;
        *probe.params_mut().nth(k).expect("parameter index") = original;
        let fd = (up - down) / (2.0 * H);
        worst = worst.max((g - fd).abs() / (g.abs() + fd.abs()).max(1e-8));
    }
    worst
}

/// Gradient check on a randomly initialized network with layer widths
/// `sizes`, random biases, a standard-normal input batch and random targets.
pub fn gradient_check(sizes: &[usize], task: MlpTask, batch: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut network = Network::glorot(sizes, &mut rng);
    for l in &mut network.layers {
        l.b.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
    }
    let x: Vec<f64> = (0..batch * sizes[0]).map(|_| rng.sample(StandardNormal)).collect();
    let q = network.n_outputs();
    match task {
        MlpTask::Regression => {
            let y: Vec<f64> = (0..batch * q).map(|_| rng.sample(StandardNormal)).collect();
            gradient_check_network(&network, &x, batch, &BatchTargets::Values(&y))
        }
        MlpTask::Classification => {
            let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..q)).collect();
            gradient_check_network(&network, &x, batch, &BatchTargets::Labels(&labels))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20 {
            for task in [MlpTask::Regression, MlpTask::Classification] {
                let e = gradient_check(&[3, 5, 5, 2], task, 8, seed);
                assert!(e <= 1e-4, "seed {seed} {task:?}: {e}");
            }
        }
        assert_eq!(gradient_check(&[3, 5, 5, 2], MlpTask::Regression, 8, 7), gradient_check(&[3, 5, 5, 2], MlpTask::Regression, 8, 7));
    }

    #[test]
    fn zero_network_has_zero_gradients() {
        let net = Network { layers: vec![Dense::zeros(3, 5), Dense::zeros(5, 5), Dense::zeros(5, 2)] };
        let x = vec![0.0; 12];
        let y = vec![0.0; 8];
        let (loss, g) = net.loss_and_grad(&x, 4, &BatchTargets::Values(&y), true);
        assert_eq!(loss, 0.0);
        assert!(g.unwrap().iter().all(|l| l.w.iter().chain(&l.b).all(|v| *v == 0.0)));
        assert_eq!(gradient_check_network(&net, &x, 4, &BatchTargets::Values(&y)), 0.0);
    }

    #[test]
    fn separable_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = Vec::new();
        let mut labels = Vec::new();
        for i in 0..200 {
            let c = i % 2;
            let center = if c == 0 { -5.0 } else { 5.0 };
            x.push(vec![center + rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)]);
            labels.push(c);
        }
        let params = MlpParams { epochs: 20, ..MlpParams::default() };
        let m = fit_mlp(&x, &Targets::Classes { labels: labels.clone(), n_classes: 2 }, &params, 1).unwrap();
        let correct = x.iter().zip(&labels).filter(|(r, l)| super::super::argmax(&m.predict(r)) == **l).count();
        assert!(correct as f64 / 200.0 >= 0.99);
    }

    #[test]
    fn zero_target_regression() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<Vec<f64>> = (0..2048).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let params = MlpParams { standardize_targets: false, ..MlpParams::default() };
        let m = fit_mlp(&x, &Targets::Regression(vec![vec![0.0]; 2048]), &params, 2).unwrap();
        let worst = x.iter().map(|r| m.predict(r)[0].abs()).fold(0.0, f64::max);
        assert!(worst < 1e-2, "{worst}");
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Network::glorot(&[4, 6, 3], &mut rng);
        for _ in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-100.0..100.0)).collect();
            let s: f64 = softmax(&net.forward(&x, 1)).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let x: Vec<Vec<f64>> = (0..32).map(|i| vec![i as f64]).collect();
        let y: Vec<Vec<f64>> = (0..32).map(|i| vec![1e200 * i as f64]).collect();
        let params = MlpParams { learning_rate: 0.5, epochs: 10, standardize_targets: false, ..MlpParams::default() };
        assert!(matches!(fit_mlp(&x, &Targets::Regression(y), &params, 0), Err(ModelError::NonFiniteLoss { .. })));
    }

    #[test]
    fn forced_output_width() {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64]).collect();
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let params = MlpParams { n_outputs: Some(4), epochs: 2, ..MlpParams::default() };
        let m = fit_mlp(&x, &Targets::Classes { labels, n_classes: 3 }, &params, 0).unwrap();
        assert_eq!(m.predict(&[1.0]).len(), 4);
    }
}
