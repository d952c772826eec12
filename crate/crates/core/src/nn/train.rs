use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::layers::ParamRef;
use super::model::{ModelConfig, Network};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::{seeded, sub_seed};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 20,
            epochs: 50,
            learning_rate: 1e-5,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1".to_string()));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1".to_string()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// First-order update rule with its per-parameter state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<ParamRef<'_>>) {
        match self.kind {
            OptimizerKind::Sgd => {
                for p in params {
                    for (w, g) in p.value.iter_mut().zip(p.grad.iter()) {
                        *w -= self.lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.m.is_empty() {
                    self.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
                    self.v = self.m.clone();
                }
                self.t += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(self.t);
                let c2 = 1.0 - ADAM_BETA2.powi(self.t);
                for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
                    for i in 0..p.value.len() {
                        let g = p.grad[i];
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
                        let mh = m[i] / c1;
                        let vh = v[i] / c2;
                        p.value[i] -= self.lr * mh / (vh.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

/// A network in eval mode plus its training history.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub network: Network,
    pub train: TrainConfig,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
}

impl TrainedModel {
    pub fn predict(&self, x: &Tensor) -> Result<(Vec<u8>, Tensor)> {
        self.network.predict(x)
    }

    pub fn epochs(&self) -> usize {
        self.loss_curve.len()
    }
}

/// Splits a permutation into mini-batches. The last short batch is kept;
/// with batch norm a trailing batch of one sample cannot be normalised, so
/// it joins the batch before it.
pub fn batches(order: &[usize], batch_size: usize, merge_singleton: bool) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(batch_size).collect();
    if merge_singleton && out.len() > 1 && out.last().map(|b| b.len()) == Some(1) {
        out.pop();
        let start = (out.len() - 1) * batch_size;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

pub fn train(model: &ModelConfig, x: &Tensor, y: &[u8], cfg: &TrainConfig) -> Result<TrainedModel> {
    train_observed(model, x, y, cfg, &mut |_, _| Ok(()))
}

/// Trains and calls `observer(epoch, network)` after every epoch, where
/// `network` is the current weights (use its eval-mode methods).
pub fn train_observed(
    model: &ModelConfig,
    x: &Tensor,
    y: &[u8],
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(usize, &Network) -> Result<()>,
) -> Result<TrainedModel> {
    cfg.validate()?;
    if x.batch() == 0 {
        return Err(Error::invalid(
            "cannot train on an empty data set".to_string(),
        ));
    }
    if x.batch() != y.len() {
        return Err(Error::shape(format!(
            "{} samples but {} labels",
            x.batch(),
            y.len()
        )));
    }
    let k = model.n_classes();
    if let Some(bad) = y.iter().find(|&&l| l as usize >= k) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    if (0..k).any(|c| !y.contains(&(c as u8))) {
        log::warn!("training set does not contain every class");
    }

    let mut net = Network::new(model.clone(), sub_seed(cfg.seed, 1))?;
    if net.has_batchnorm() && x.batch() < 2 {
        return Err(Error::invalid(
            "batch norm models need at least 2 training samples".to_string(),
        ));
    }
    let mut shuffle_rng = seeded(sub_seed(cfg.seed, 2));
    let mut dropout_rng = seeded(sub_seed(cfg.seed, 3));
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut order: Vec<usize> = (0..x.batch()).collect();
    let merge = net.has_batchnorm();
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let mut total = 0.0;
        for b in batches(&order, cfg.batch_size, merge) {
            let xb = x.select(b);
            let yb: Vec<u8> = b.iter().map(|&i| y[i]).collect();
            let loss = net.loss_and_grad(&xb, &yb, Some(&mut dropout_rng))?;
            total += loss * b.len() as f64;
            opt.step(net.params_mut());
        }
        curve.push(total / x.batch() as f64);
        observer(epoch, &net)?;
    }
    Ok(TrainedModel {
        network: net,
        train: cfg.clone(),
        loss_curve: curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::{CnnConfig, MlpConfig};
    use rand::Rng as _;
    use rand_distr::{Distribution, Normal};

    /// Two Gaussian blobs in `d` dimensions, split along the first `k` axes.
    fn blobs(n: usize, d: usize, seed: u64) -> (Tensor, Vec<u8>) {
        let mut rng = seeded(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut data = Vec::with_capacity(n * d);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let l = (i % 2) as u8;
            for j in 0..d {
                let shift = if j < 8 {
                    if l == 1 {
                        2.0
                    } else {
                        -2.0
                    }
                } else {
                    0.0
                };
                data.push(shift + noise.sample(&mut rng));
            }
            y.push(l);
        }
        (Tensor::new(&[n, d], data).unwrap(), y)
    }

    fn accuracy(pred: &[u8], y: &[u8]) -> f64 {
        pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
    }

    #[test]
    fn batching_keeps_the_tail() {
        let order: Vec<usize> = (0..41).collect();
        let b = batches(&order, 20, false);
        assert_eq!(
            b.iter().map(|s| s.len()).collect::<Vec<_>>(),
            vec![20, 20, 1]
        );
        let b = batches(&order, 20, true);
        assert_eq!(b.iter().map(|s| s.len()).collect::<Vec<_>>(), vec![20, 21]);
        let b = batches(&order[..45.min(41)], 20, true);
        assert_eq!(b.concat(), order);
    }

    #[test]
    fn loss_curve_has_one_entry_per_epoch() {
        let (x, y) = blobs(30, 360, 1);
        let cfg = TrainConfig {
            epochs: 50,
            ..TrainConfig::default()
        };
        let m = train(&ModelConfig::Mlp(MlpConfig::default()), &x, &y, &cfg).unwrap();
        assert_eq!(m.loss_curve.len(), 50);
        assert!(m.loss_curve.iter().all(|l| l.is_finite() && *l >= 0.0));
    }

    #[test]
    fn same_seed_same_weights() {
        let (x, y) = blobs(25, 360, 2);
        let cfg = TrainConfig {
            epochs: 3,
            seed: 9,
            ..TrainConfig::default()
        };
        let model = ModelConfig::Mlp(MlpConfig::default());
        let a = train(&model, &x, &y, &cfg).unwrap();
        let b = train(&model, &x, &y, &cfg).unwrap();
        assert_eq!(a.network.params(), b.network.params());
        assert_eq!(a.loss_curve, b.loss_curve);
        let c = train(&model, &x, &y, &TrainConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.network.params(), c.network.params());
    }

    #[test]
    fn separable_data_is_learned_and_generalises() {
        let (x, y) = blobs(200, 360, 3);
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let m = train(&ModelConfig::Mlp(MlpConfig::default()), &x, &y, &cfg).unwrap();
        let (pred, _) = m.predict(&x).unwrap();
        assert!(accuracy(&pred, &y) >= 0.95);
        let (xt, yt) = blobs(100, 360, 4);
        let (pt, _) = m.predict(&xt).unwrap();
        assert!(accuracy(&pt, &yt) >= 0.9);
        assert!(m.loss_curve.last().unwrap() < &m.loss_curve[0]);
    }

    #[test]
    fn cnn_trains_on_mesh_data() {
        let mut rng = seeded(5);
        let n = 60;
        let mut data = vec![0.0; n * 540];
        let mut y = Vec::new();
        for i in 0..n {
            let l = (i % 2) as u8;
            for (j, v) in data[i * 540..(i + 1) * 540].iter_mut().enumerate() {
                let band = j / 90;
                *v = rng.random::<f64>() - 0.5 + if band == 2 && l == 1 { 1.5 } else { 0.0 };
            }
            y.push(l);
        }
        let x = Tensor::new(&[n, 6, 10, 9], data).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            epochs: 20,
            ..TrainConfig::default()
        };
        let m = train(&ModelConfig::Cnn(CnnConfig::default()), &x, &y, &cfg).unwrap();
        let (pred, _) = m.predict(&x).unwrap();
        assert!(accuracy(&pred, &y) >= 0.95);
    }

    #[test]
    fn bad_inputs() {
        let model = ModelConfig::Mlp(MlpConfig::default());
        let cfg = TrainConfig::default();
        assert!(train(&model, &Tensor::zeros(&[0, 360]), &[], &cfg).is_err());
        assert!(train(&model, &Tensor::zeros(&[2, 360]), &[0], &cfg).is_err());
        assert!(train(&model, &Tensor::zeros(&[2, 360]), &[0, 2], &cfg).is_err());
        let zero_lr = TrainConfig {
            learning_rate: 0.0,
            ..cfg.clone()
        };
        assert!(train(&model, &Tensor::zeros(&[2, 360]), &[0, 1], &zero_lr).is_err());
        let cnn = ModelConfig::Cnn(CnnConfig::default());
        assert!(train(&cnn, &Tensor::zeros(&[1, 6, 10, 9]), &[0], &cfg).is_err());
    }

    #[test]
    fn sgd_moves_weights() {
        let (x, y) = blobs(20, 360, 6);
        let model = ModelConfig::Mlp(MlpConfig::default());
        let cfg = TrainConfig {
            epochs: 1,
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let before = Network::new(model.clone(), sub_seed(cfg.seed, 1)).unwrap();
        let after = train(&model, &x, &y, &cfg).unwrap();
        assert_ne!(before.params(), after.network.params());
    }
}
