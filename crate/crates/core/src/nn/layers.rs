use rand_distr::{Distribution, Uniform};

use super::ops::{self, ConvGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    HeUniform,
    GlorotUniform,
}

fn init_weights(n: usize, fan_in: usize, fan_out: usize, init: Init, rng: &mut Rng) -> Vec<f64> {
    let bound = match init {
        Init::HeUniform => (6.0 / fan_in as f64).sqrt(),
        Init::GlorotUniform => (6.0 / (fan_in + fan_out) as f64).sqrt(),
    };
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    (0..n).map(|_| dist.sample(rng)).collect()
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub d_in: usize,
    pub d_out: usize,
    /// `d_in × d_out`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    grad_w: Vec<f64>,
    grad_b: Vec<f64>,
    input: Option<Tensor>,
}

impl Dense {
    pub fn new(d_in: usize, d_out: usize, init: Init, rng: &mut Rng) -> Self {
        Dense {
            d_in,
            d_out,
            weight: init_weights(d_in * d_out, d_in, d_out, init, rng),
            bias: vec![0.0; d_out],
            grad_w: vec![0.0; d_in * d_out],
            grad_b: vec![0.0; d_out],
            input: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    /// `c_out × c_in × k × k`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    grad_w: Vec<f64>,
    grad_b: Vec<f64>,
    cache: Option<(Vec<f64>, Vec<usize>)>,
}

impl Conv2d {
    pub fn new(c_in: usize, c_out: usize, kernel: usize, rng: &mut Rng) -> Self {
        let fan_in = c_in * kernel * kernel;
        let n = c_out * fan_in;
        Conv2d {
            c_in,
            c_out,
            kernel,
            weight: init_weights(n, fan_in, c_out * kernel * kernel, Init::HeUniform, rng),
            bias: vec![0.0; c_out],
            grad_w: vec![0.0; n],
            grad_b: vec![0.0; c_out],
            cache: None,
        }
    }

    fn filter_shape(&self) -> [usize; 4] {
        [self.c_out, self.c_in, self.kernel, self.kernel]
    }
}

/// Per-channel batch normalisation over `N×C×H×W`.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    grad_gamma: Vec<f64>,
    grad_beta: Vec<f64>,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    batch_stats: bool,
    shape: Vec<usize>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            channels,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            grad_gamma: vec![0.0; channels],
            grad_beta: vec![0.0; channels],
            cache: None,
        }
    }

    fn check(&self, shape: &[usize]) -> Result<(usize, usize)> {
        if shape.len() != 4 || shape[1] != self.channels {
            return Err(Error::shape(format!(
                "batch norm over {} channels got input {shape:?}",
                self.channels
            )));
        }
        Ok((shape[0], shape[2] * shape[3]))
    }

    fn normalise(&self, x: &Tensor, mean: &[f64], inv_std: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (n, hw) = (x.shape()[0], x.shape()[2] * x.shape()[3]);
        let c = self.channels;
        let mut xhat = vec![0.0; x.len()];
        let mut y = vec![0.0; x.len()];
        for b in 0..n {
            for ch in 0..c {
                let o = (b * c + ch) * hw;
                for i in o..o + hw {
                    xhat[i] = (x.data()[i] - mean[ch]) * inv_std[ch];
                    y[i] = self.gamma[ch] * xhat[i] + self.beta[ch];
                }
            }
        }
        (xhat, y)
    }

    fn channel_stats(&self, x: &Tensor) -> (Vec<f64>, Vec<f64>) {
        let (n, hw) = (x.shape()[0], x.shape()[2] * x.shape()[3]);
        let c = self.channels;
        let m = (n * hw) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let vals = (0..n).flat_map(|b| {
                let o = (b * c + ch) * hw;
                x.data()[o..o + hw].iter().copied()
            });
            mean[ch] = vals.clone().sum::<f64>() / m;
            var[ch] = vals.map(|v| (v - mean[ch]).powi(2)).sum::<f64>() / m;
        }
        (mean, var)
    }
}

#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

#[derive(Debug, Clone)]
pub struct Dropout {
    pub p: f64,
    mask: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    BatchNorm2d(BatchNorm2d),
    Relu(Option<Vec<bool>>),
    MaxPool2d(MaxPool2d),
    Dropout(Dropout),
    Flatten(Option<Vec<usize>>),
}

/// A parameter tensor together with its accumulated gradient.
pub struct ParamRef<'a> {
    pub value: &'a mut [f64],
    pub grad: &'a mut [f64],
}

impl Layer {
    pub fn relu() -> Self {
        Layer::Relu(None)
    }

    pub fn flatten() -> Self {
        Layer::Flatten(None)
    }

    pub fn dropout(p: f64) -> Self {
        Layer::Dropout(Dropout { p, mask: None })
    }

    pub fn maxpool(kernel: usize, stride: usize) -> Self {
        Layer::MaxPool2d(MaxPool2d {
            kernel,
            stride,
            cache: None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::BatchNorm2d(_) => "batchnorm2d",
            Layer::Relu(_) => "relu",
            Layer::MaxPool2d(_) => "maxpool2d",
            Layer::Dropout(_) => "dropout",
            Layer::Flatten(_) => "flatten",
        }
    }

    /// Output shape for a single item of shape `s` (no batch axis).
    pub fn out_shape(&self, s: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Dense(d) => {
                if s != [d.d_in] {
                    return Err(Error::shape(format!("dense({}) got {s:?}", d.d_in)));
                }
                Ok(vec![d.d_out])
            }
            Layer::Conv2d(c) => {
                let g = ops::conv_geom(&[&[1], s].concat(), &c.filter_shape())?;
                Ok(vec![c.c_out, g.oh, g.ow])
            }
            Layer::BatchNorm2d(b) => {
                b.check(&[&[1], s].concat())?;
                Ok(s.to_vec())
            }
            Layer::MaxPool2d(p) => {
                if s.len() != 3 || s[1] < p.kernel || s[2] < p.kernel {
                    return Err(Error::shape(format!("maxpool got {s:?}")));
                }
                Ok(vec![
                    s[0],
                    (s[1] - p.kernel) / p.stride + 1,
                    (s[2] - p.kernel) / p.stride + 1,
                ])
            }
            Layer::Relu(_) | Layer::Dropout(_) => Ok(s.to_vec()),
            Layer::Flatten(_) => Ok(vec![s.iter().product()]),
        }
    }

    /// Forward pass. `train` carries the dropout RNG; `None` is eval mode.
    /// Caches whatever `backward` needs.
    pub fn forward(&mut self, x: &Tensor, train: Option<&mut Rng>) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => {
                let y = ops::dense_forward(x, &d.weight, &d.bias)?;
                d.input = Some(x.clone());
                Ok(y)
            }
            Layer::Conv2d(c) => {
                let g = ops::conv_geom(x.shape(), &c.filter_shape())?;
                let mut col = Vec::new();
                let y = ops::conv_forward_raw(
                    x.data(),
                    &c.weight,
                    &c.bias,
                    &g,
                    c.c_out,
                    Some(&mut col),
                );
                c.cache = Some((col, x.shape().to_vec()));
                Tensor::new(&[g.n, c.c_out, g.oh, g.ow], y)
            }
            Layer::BatchNorm2d(b) => {
                b.check(x.shape())?;
                let batch_stats = train.is_some();
                if batch_stats && x.batch() < 2 {
                    return Err(Error::invalid(
                        "batch norm needs at least 2 samples per training batch".to_string(),
                    ));
                }
                let (mean, var) = if batch_stats {
                    let (mean, var) = b.channel_stats(x);
                    for ch in 0..b.channels {
                        b.running_mean[ch] =
                            BN_MOMENTUM * b.running_mean[ch] + (1.0 - BN_MOMENTUM) * mean[ch];
                        b.running_var[ch] =
                            BN_MOMENTUM * b.running_var[ch] + (1.0 - BN_MOMENTUM) * var[ch];
                    }
                    (mean, var)
                } else {
                    (b.running_mean.clone(), b.running_var.clone())
                };
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                let (xhat, y) = b.normalise(x, &mean, &inv_std);
                b.cache = Some(BnCache {
                    xhat,
                    inv_std,
                    batch_stats,
                    shape: x.shape().to_vec(),
                });
                Tensor::new(x.shape(), y)
            }
            Layer::Relu(mask) => {
                *mask = Some(x.data().iter().map(|&v| v > 0.0).collect());
                Ok(ops::relu(x))
            }
            Layer::MaxPool2d(p) => {
                let (y, arg, [oh, ow]) = ops::maxpool_raw(x.data(), x.shape(), p.kernel, p.stride)?;
                let mut shape = x.shape().to_vec();
                let nd = shape.len();
                shape[nd - 2] = oh;
                shape[nd - 1] = ow;
                p.cache = Some((arg, x.shape().to_vec()));
                Tensor::new(&shape, y)
            }
            Layer::Dropout(d) => match train {
                Some(rng) => {
                    let (y, mask) = ops::dropout_mask(x, d.p, true, rng)?;
                    d.mask = mask;
                    Ok(y)
                }
                None => {
                    d.mask = None;
                    Ok(x.clone())
                }
            },
            Layer::Flatten(s) => {
                *s = Some(x.shape().to_vec());
                x.clone().reshape(&[x.batch(), x.item_len()])
            }
        }
    }

    /// Inference without touching caches or running statistics.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => ops::dense_forward(x, &d.weight, &d.bias),
            Layer::Conv2d(c) => {
                let g = ops::conv_geom(x.shape(), &c.filter_shape())?;
                let y = ops::conv_forward_raw(x.data(), &c.weight, &c.bias, &g, c.c_out, None);
                Tensor::new(&[g.n, c.c_out, g.oh, g.ow], y)
            }
            Layer::BatchNorm2d(b) => {
                b.check(x.shape())?;
                let inv_std: Vec<f64> = b
                    .running_var
                    .iter()
                    .map(|v| 1.0 / (v + BN_EPS).sqrt())
                    .collect();
                let (_, y) = b.normalise(x, &b.running_mean, &inv_std);
                Tensor::new(x.shape(), y)
            }
            Layer::Relu(_) => Ok(ops::relu(x)),
            Layer::MaxPool2d(p) => ops::maxpool(x, p.kernel, p.stride),
            Layer::Dropout(_) => Ok(x.clone()),
            Layer::Flatten(_) => x.clone().reshape(&[x.batch(), x.item_len()]),
        }
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let missing = || Error::invalid("backward called before forward".to_string());
        match self {
            Layer::Dense(d) => {
                let x = d.input.as_ref().ok_or_else(missing)?;
                let n = x.batch();
                ops::gemm_tn(x.data(), g.data(), &mut d.grad_w, d.d_in, n, d.d_out);
                for row in g.data().chunks(d.d_out) {
                    for (gb, v) in d.grad_b.iter_mut().zip(row) {
                        *gb += v;
                    }
                }
                let mut dx = vec![0.0; n * d.d_in];
                ops::gemm_nt(g.data(), &d.weight, &mut dx, n, d.d_out, d.d_in);
                Tensor::new(&[n, d.d_in], dx)
            }
            Layer::Conv2d(c) => {
                let (col, xs) = c.cache.as_ref().ok_or_else(missing)?;
                let geom: ConvGeom = ops::conv_geom(xs, &c.filter_shape())?;
                let (o, p, np, k) = (c.c_out, geom.oh * geom.ow, geom.np(), geom.k());
                let mut gm = vec![0.0; o * np];
                for n in 0..geom.n {
                    for oc in 0..o {
                        let src = &g.data()[(n * o + oc) * p..(n * o + oc + 1) * p];
                        gm[oc * np + n * p..oc * np + (n + 1) * p].copy_from_slice(src);
                    }
                }
                ops::gemm_nt(&gm, col, &mut c.grad_w, o, np, k);
                for oc in 0..o {
                    c.grad_b[oc] += gm[oc * np..(oc + 1) * np].iter().sum::<f64>();
                }
                let mut dcol = vec![0.0; k * np];
                ops::gemm_tn(&c.weight, &gm, &mut dcol, k, o, np);
                Tensor::new(xs, ops::col2im(&dcol, &geom))
            }
            Layer::BatchNorm2d(b) => {
                let cache = b.cache.as_ref().ok_or_else(missing)?;
                let (n, hw) = (cache.shape[0], cache.shape[2] * cache.shape[3]);
                let c = b.channels;
                let m = (n * hw) as f64;
                let mut dx = vec![0.0; g.len()];
                for ch in 0..c {
                    let idx = || {
                        (0..n).flat_map(move |s| {
                            let o = (s * c + ch) * hw;
                            o..o + hw
                        })
                    };
                    let (mut sum_g, mut sum_gx) = (0.0, 0.0);
                    for i in idx() {
                        sum_g += g.data()[i];
                        sum_gx += g.data()[i] * cache.xhat[i];
                    }
                    b.grad_beta[ch] += sum_g;
                    b.grad_gamma[ch] += sum_gx;
                    let scale = b.gamma[ch] * cache.inv_std[ch];
                    if cache.batch_stats {
                        for i in idx() {
                            dx[i] = scale / m * (m * g.data()[i] - sum_g - cache.xhat[i] * sum_gx);
                        }
                    } else {
                        for i in idx() {
                            dx[i] = scale * g.data()[i];
                        }
                    }
                }
                Tensor::new(&cache.shape, dx)
            }
            Layer::Relu(mask) => {
                let mask = mask.as_ref().ok_or_else(missing)?;
                let mut dx = g.clone();
                for (v, &m) in dx.data_mut().iter_mut().zip(mask) {
                    if !m {
                        *v = 0.0;
                    }
                }
                Ok(dx)
            }
            Layer::MaxPool2d(p) => {
                let (arg, xs) = p.cache.as_ref().ok_or_else(missing)?;
                let mut dx = Tensor::zeros(xs);
                for (&i, &v) in arg.iter().zip(g.data()) {
                    dx.data_mut()[i] += v;
                }
                Ok(dx)
            }
            Layer::Dropout(d) => {
                let mut dx = g.clone();
                if let Some(mask) = &d.mask {
                    for (v, m) in dx.data_mut().iter_mut().zip(mask) {
                        *v *= m;
                    }
                }
                Ok(dx)
            }
            Layer::Flatten(s) => {
                let s = s.as_ref().ok_or_else(missing)?;
                g.clone().reshape(s)
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<ParamRef<'_>> {
        match self {
            Layer::Dense(d) => vec![
                ParamRef {
                    value: &mut d.weight,
                    grad: &mut d.grad_w,
                },
                ParamRef {
                    value: &mut d.bias,
                    grad: &mut d.grad_b,
                },
            ],
            Layer::Conv2d(c) => vec![
                ParamRef {
                    value: &mut c.weight,
                    grad: &mut c.grad_w,
                },
                ParamRef {
                    value: &mut c.bias,
                    grad: &mut c.grad_b,
                },
            ],
            Layer::BatchNorm2d(b) => vec![
                ParamRef {
                    value: &mut b.gamma,
                    grad: &mut b.grad_gamma,
                },
                ParamRef {
                    value: &mut b.beta,
                    grad: &mut b.grad_beta,
                },
            ],
            _ => Vec::new(),
        }
    }

    pub fn params(&self) -> Vec<&[f64]> {
        match self {
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::BatchNorm2d(b) => vec![&b.gamma, &b.beta],
            _ => Vec::new(),
        }
    }

    /// Non-trainable state that still belongs in a checkpoint.
    pub fn buffers(&self) -> Vec<&[f64]> {
        match self {
            Layer::BatchNorm2d(b) => vec![&b.running_mean, &b.running_var],
            _ => Vec::new(),
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::BatchNorm2d(b) => vec![&mut b.running_mean, &mut b.running_var],
            _ => Vec::new(),
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn init_bounds() {
        let mut rng = seeded(3);
        let d = Dense::new(360, 128, Init::HeUniform, &mut rng);
        let bound = (6.0f64 / 360.0).sqrt();
        assert!(d.weight.iter().all(|w| w.abs() <= bound));
        assert!(d.bias.iter().all(|&b| b == 0.0));
        let g = Dense::new(64, 2, Init::GlorotUniform, &mut rng);
        let bound = (6.0f64 / 66.0).sqrt();
        assert!(g.weight.iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn batchnorm_train_output_is_standardised() {
        let mut bn = Layer::BatchNorm2d(BatchNorm2d::new(2));
        let x: Vec<f64> = (0..4 * 2 * 3 * 3)
            .map(|i| (i as f64 * 0.37).sin() * 5.0 + 3.0)
            .collect();
        let x = Tensor::new(&[4, 2, 3, 3], x).unwrap();
        let mut rng = seeded(0);
        let y = bn.forward(&x, Some(&mut rng)).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|n| y.data()[(n * 2 + ch) * 9..(n * 2 + ch + 1) * 9].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn batchnorm_affine_and_single_sample() {
        let mut b = BatchNorm2d::new(1);
        b.gamma = vec![2.0];
        b.beta = vec![3.0];
        let mut bn = Layer::BatchNorm2d(b);
        let x = Tensor::new(&[3, 1, 2, 2], (0..12).map(|i| (i * i) as f64).collect()).unwrap();
        let mut rng = seeded(0);
        let y = bn.forward(&x, Some(&mut rng)).unwrap();
        let mean = y.data().iter().sum::<f64>() / 12.0;
        let std = (y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 12.0).sqrt();
        assert!((mean - 3.0).abs() < 1e-9);
        assert!((std - 2.0).abs() < 1e-4);
        let one = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(bn.forward(&one, Some(&mut rng)).is_err());
        assert!(bn.forward(&one, None).is_ok());
    }

    #[test]
    fn batchnorm_eval_converges_to_train_normalisation() {
        let mut bn = Layer::BatchNorm2d(BatchNorm2d::new(3));
        let x: Vec<f64> = (0..5 * 3 * 2 * 2)
            .map(|i| (i as f64 * 1.3).cos() * 2.0 - 1.0)
            .collect();
        let x = Tensor::new(&[5, 3, 2, 2], x).unwrap();
        let mut rng = seeded(0);
        let mut last = None;
        for _ in 0..300 {
            last = Some(bn.forward(&x, Some(&mut rng)).unwrap());
        }
        let eval = bn.infer(&x).unwrap();
        for (a, b) in eval.data().iter().zip(last.unwrap().data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let mut p = Layer::maxpool(2, 2);
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0, 4.0, 2.0, 3.0]).unwrap();
        p.forward(&x, None).unwrap();
        let dx = p
            .backward(&Tensor::new(&[1, 1, 1, 1], vec![2.0]).unwrap())
            .unwrap();
        assert_eq!(dx.data(), &[0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_before_forward_is_an_error() {
        let mut rng = seeded(0);
        let mut d = Layer::Dense(Dense::new(2, 2, Init::HeUniform, &mut rng));
        assert!(d.backward(&Tensor::zeros(&[1, 2])).is_err());
    }
}
