//! Central finite-difference checks for layer and model gradients.

use rand::seq::index::sample;

use super::layers::Layer;
use super::model::Network;
use super::ops;
use super::tensor::Tensor;
use crate::error::Result;
use crate::rng::{seeded, Rng};

/// `(f(x+h·e_i) - f(x-h·e_i)) / 2h` for every coordinate.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps near-zero gradients
/// from inflating the ratio.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(tensor, index, analytic, numeric)` at the worst coordinate.
    pub worst: (usize, usize, f64, f64),
}

impl GradCheckReport {
    fn new() -> Self {
        GradCheckReport {
            checked: 0,
            max_rel_error: 0.0,
            worst: (0, 0, 0.0, 0.0),
        }
    }

    fn record(&mut self, tensor: usize, index: usize, a: f64, n: f64, floor: f64) {
        let e = relative_error(a, n, floor);
        self.checked += 1;
        if e > self.max_rel_error || self.checked == 1 {
            self.max_rel_error = e.max(self.max_rel_error);
            self.worst = (tensor, index, a, n);
        }
    }
}

fn pick(len: usize, per_tensor: usize, rng: &mut Rng) -> Vec<usize> {
    if len <= per_tensor {
        (0..len).collect()
    } else {
        let mut v = sample(rng, len, per_tensor).into_vec();
        v.sort_unstable();
        v
    }
}

fn model_loss(net: &mut Network, x: &Tensor, labels: &[u8], seed: u64) -> Result<f64> {
    let mut rng = seeded(seed);
    let logits = net.forward(x, Some(&mut rng))?;
    Ok(ops::softmax_cross_entropy(&logits, labels)?.0)
}

/// Compares backprop against central differences on up to `per_tensor`
/// sampled coordinates of every parameter tensor. Runs in train mode with
/// the dropout mask fixed by `seed`.
pub fn check_network(
    net: &Network,
    x: &Tensor,
    labels: &[u8],
    h: f64,
    floor: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut net = net.clone();
    net.loss_and_grad(x, labels, Some(&mut seeded(seed)))?;
    let grads: Vec<Vec<f64>> = net.params_mut().iter().map(|p| p.grad.to_vec()).collect();
    let mut pick_rng = seeded(seed ^ 0x5eed);
    let mut report = GradCheckReport::new();
    for (t, g) in grads.iter().enumerate() {
        for i in pick(g.len(), per_tensor, &mut pick_rng) {
            let orig = net.params_mut()[t].value[i];
            net.params_mut()[t].value[i] = orig + h;
            let up = model_loss(&mut net, x, labels, seed)?;
            net.params_mut()[t].value[i] = orig - h;
            let down = model_loss(&mut net, x, labels, seed)?;
            net.params_mut()[t].value[i] = orig;
            report.record(t, i, g[i], (up - down) / (2.0 * h), floor);
        }
    }
    Ok(report)
}

/// Checks one layer in train mode against the scalar probe
/// `L = Σ r·layer(x)` for fixed random `r`. Tensor index 0 is the input;
/// parameters follow.
pub fn check_layer(
    layer: &Layer,
    x: &Tensor,
    h: f64,
    floor: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut layer = layer.clone();
    let y = layer.forward(x, Some(&mut seeded(seed)))?;
    let mut r_rng = seeded(seed ^ 0xbeef);
    let probe: Vec<f64> = (0..y.len())
        .map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut r_rng))
        .collect();
    let g = Tensor::new(y.shape(), probe.clone())?;
    layer.zero_grad();
    let dx = layer.backward(&g)?;
    let grads: Vec<Vec<f64>> = layer.params_mut().iter().map(|p| p.grad.to_vec()).collect();

    let eval = |l: &mut Layer, x: &Tensor| -> Result<f64> {
        let y = l.forward(x, Some(&mut seeded(seed)))?;
        Ok(y.data().iter().zip(&probe).map(|(a, b)| a * b).sum())
    };
    let mut report = GradCheckReport::new();
    let mut xv = x.clone();
    for i in 0..x.len() {
        let orig = xv.data()[i];
        xv.data_mut()[i] = orig + h;
        let up = eval(&mut layer, &xv)?;
        xv.data_mut()[i] = orig - h;
        let down = eval(&mut layer, &xv)?;
        xv.data_mut()[i] = orig;
        report.record(0, i, dx.data()[i], (up - down) / (2.0 * h), floor);
    }
    for (t, g) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let orig = layer.params_mut()[t].value[i];
            layer.params_mut()[t].value[i] = orig + h;
            let up = eval(&mut layer, x)?;
            layer.params_mut()[t].value[i] = orig - h;
            let down = eval(&mut layer, x)?;
            layer.params_mut()[t].value[i] = orig;
            report.record(t + 1, i, g[i], (up - down) / (2.0 * h), floor);
        }
    }
    Ok(report)
}
