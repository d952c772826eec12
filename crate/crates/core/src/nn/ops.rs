//! Stateless forward kernels and the small GEMM helpers the layers share.

use rand::Rng as _;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// `c[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let ci = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (cv, bv) in ci.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m×n] += aᵀ · b` with `a` stored `k×m`, `b` stored `k×n`.
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let bp = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            for (cv, bv) in c[i * n..(i + 1) * n].iter_mut().zip(bp) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m×n] += a · bᵀ` with `a` stored `m×k`, `b` stored `n×k`.
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let ai = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let bj = &b[j * k..(j + 1) * k];
            c[i * n + j] += ai.iter().zip(bj).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `y = x·W + b` for `x: N×in`, `W: in×out` row-major.
pub fn dense_forward(x: &Tensor, w: &[f64], b: &[f64]) -> Result<Tensor> {
    if x.shape().len() != 2 {
        return Err(Error::shape(format!(
            "dense input must be N×in, got {:?}",
            x.shape()
        )));
    }
    let (n, d_in) = (x.shape()[0], x.shape()[1]);
    let d_out = b.len();
    if w.len() != d_in * d_out {
        return Err(Error::shape(format!(
            "weight has {} values, {d_in}×{d_out} expected",
            w.len()
        )));
    }
    let mut y = Vec::with_capacity(n * d_out);
    for _ in 0..n {
        y.extend_from_slice(b);
    }
    gemm_nn(x.data(), w, &mut y, n, d_in, d_out);
    Tensor::new(&[n, d_out], y)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Inverted dropout. In train mode each element is zeroed with probability
/// `p` and survivors are scaled by `1/(1-p)`; in eval mode it is the identity.
pub fn dropout(x: &Tensor, p: f64, train: bool, rng: &mut Rng) -> Result<Tensor> {
    Ok(dropout_mask(x, p, train, rng)?.0)
}

pub(crate) fn dropout_mask(
    x: &Tensor,
    p: f64,
    train: bool,
    rng: &mut Rng,
) -> Result<(Tensor, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("dropout p = {p} must be in [0, 1)")));
    }
    if !train || p == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..x.len())
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    let mut y = x.clone();
    for (v, m) in y.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Ok((y, Some(mask)))
}

pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn np(&self) -> usize {
        self.n * self.oh * self.ow
    }
}

/// Column matrix `K × (N·OH·OW)`, `K = C·kh·kw`.
pub(crate) fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let np = g.np();
    let p = g.oh * g.ow;
    let mut col = vec![0.0; g.k() * np];
    for c in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * np..(row + 1) * np];
                for n in 0..g.n {
                    let src = &x[(n * g.c + c) * g.h * g.w..];
                    for y in 0..g.oh {
                        let s = (y + ky) * g.w + kx;
                        let d = n * p + y * g.ow;
                        dst[d..d + g.ow].copy_from_slice(&src[s..s + g.ow]);
                    }
                }
            }
        }
    }
    col
}

pub(crate) fn col2im(col: &[f64], g: &ConvGeom) -> Vec<f64> {
    let np = g.np();
    let p = g.oh * g.ow;
    let mut x = vec![0.0; g.n * g.c * g.h * g.w];
    for c in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &col[row * np..(row + 1) * np];
                for n in 0..g.n {
                    let base = (n * g.c + c) * g.h * g.w;
                    for y in 0..g.oh {
                        let s = base + (y + ky) * g.w + kx;
                        let d = n * p + y * g.ow;
                        for (xv, cv) in x[s..s + g.ow].iter_mut().zip(&src[d..d + g.ow]) {
                            *xv += cv;
                        }
                    }
                }
            }
        }
    }
    x
}

pub(crate) fn conv_geom(x_shape: &[usize], f_shape: &[usize]) -> Result<ConvGeom> {
    if x_shape.len() != 4 || f_shape.len() != 4 {
        return Err(Error::shape(format!(
            "conv expects N×C×H×W input and O×C×kh×kw filters, got {x_shape:?} and {f_shape:?}"
        )));
    }
    let (n, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (kh, kw) = (f_shape[2], f_shape[3]);
    if f_shape[1] != c {
        return Err(Error::shape(format!(
            "filters expect {} input channels, input has {c}",
            f_shape[1]
        )));
    }
    if h < kh || w < kw {
        return Err(Error::shape(format!(
            "input {h}×{w} is smaller than the {kh}×{kw} kernel"
        )));
    }
    Ok(ConvGeom {
        n,
        c,
        h,
        w,
        kh,
        kw,
        oh: h - kh + 1,
        ow: w - kw + 1,
    })
}

/// Valid cross-correlation. Shapes: x `N×C×H×W` (or `C×H×W`),
/// filters `O×C×kh×kw`, bias `O`.
pub fn conv2d_valid(x: &Tensor, filters: &Tensor, bias: &[f64]) -> Result<Tensor> {
    let batched = x.shape().len() == 4;
    let xs: Vec<usize> = if batched {
        x.shape().to_vec()
    } else if x.shape().len() == 3 {
        [&[1], x.shape()].concat()
    } else {
        return Err(Error::shape(format!("conv input shape {:?}", x.shape())));
    };
    let g = conv_geom(&xs, filters.shape())?;
    let o = filters.shape()[0];
    if bias.len() != o {
        return Err(Error::shape(format!(
            "{} biases for {o} filters",
            bias.len()
        )));
    }
    let out = conv_forward_raw(x.data(), filters.data(), bias, &g, o, None);
    let shape = if batched {
        vec![g.n, o, g.oh, g.ow]
    } else {
        vec![o, g.oh, g.ow]
    };
    Tensor::new(&shape, out)
}

/// Shared by the layer: optionally hands back the column matrix.
pub(crate) fn conv_forward_raw(
    x: &[f64],
    w: &[f64],
    bias: &[f64],
    g: &ConvGeom,
    o: usize,
    keep_col: Option<&mut Vec<f64>>,
) -> Vec<f64> {
    let col = im2col(x, g);
    let np = g.np();
    let mut om = vec![0.0; o * np];
    gemm_nn(w, &col, &mut om, o, g.k(), np);
    let p = g.oh * g.ow;
    let mut out = vec![0.0; g.n * o * p];
    for oc in 0..o {
        for n in 0..g.n {
            let src = &om[oc * np + n * p..oc * np + (n + 1) * p];
            let dst = &mut out[(n * o + oc) * p..(n * o + oc + 1) * p];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s + bias[oc];
            }
        }
    }
    if let Some(c) = keep_col {
        *c = col;
    }
    out
}

/// Max over non-overlapping `k×k` windows with stride `stride`; trailing
/// rows/columns that do not fill a window are dropped. Returns the output
/// and the flat input index of each selected element.
pub(crate) fn maxpool_raw(
    x: &[f64],
    shape: &[usize],
    k: usize,
    stride: usize,
) -> Result<(Vec<f64>, Vec<usize>, [usize; 2])> {
    let (lead, h, w) = match shape.len() {
        3 => (shape[0], shape[1], shape[2]),
        4 => (shape[0] * shape[1], shape[2], shape[3]),
        _ => return Err(Error::shape(format!("maxpool input shape {shape:?}"))),
    };
    if h < k || w < k {
        return Err(Error::shape(format!(
            "pool kernel {k}×{k} larger than input {h}×{w}"
        )));
    }
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let mut out = Vec::with_capacity(lead * oh * ow);
    let mut arg = Vec::with_capacity(lead * oh * ow);
    for l in 0..lead {
        let base = l * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut bi = base + y * stride * w + xx * stride;
                for dy in 0..k {
                    for dx in 0..k {
                        let i = base + (y * stride + dy) * w + xx * stride + dx;
                        if x[i] > best {
                            best = x[i];
                            bi = i;
                        }
                    }
                }
                out.push(best);
                arg.push(bi);
            }
        }
    }
    Ok((out, arg, [oh, ow]))
}

/// 2×2 stride-2 max-pooling over `C×H×W` or `N×C×H×W`.
pub fn maxpool(x: &Tensor, k: usize, stride: usize) -> Result<Tensor> {
    let (out, _, [oh, ow]) = maxpool_raw(x.data(), x.shape(), k, stride)?;
    let mut shape = x.shape().to_vec();
    let nd = shape.len();
    shape[nd - 2] = oh;
    shape[nd - 1] = ow;
    Tensor::new(&shape, out)
}

/// Row-wise softmax.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.shape().len() != 2 {
        return Err(Error::shape(format!(
            "softmax expects N×K, got {:?}",
            logits.shape()
        )));
    }
    let k = logits.shape()[1];
    let mut p = logits.clone();
    for row in p.data_mut().chunks_mut(k) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    Ok(p)
}

/// Mean cross-entropy of softmax probabilities. Returns `(loss, probs)`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[u8]) -> Result<(f64, Tensor)> {
    let probs = softmax(logits)?;
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::shape(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    let mut loss = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let l = l as usize;
        if l >= k {
            return Err(Error::invalid(format!(
                "label {l} out of range for {k} classes"
            )));
        }
        // log-sum-exp form keeps saturated logits finite.
        let row = &logits.data()[i * k..(i + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - row[l];
    }
    Ok((loss / n.max(1) as f64, probs))
}

/// Gradient of the mean cross-entropy w.r.t. the logits.
pub fn softmax_cross_entropy_grad(probs: &Tensor, labels: &[u8]) -> Tensor {
    let (n, k) = (probs.shape()[0], probs.shape()[1]);
    let mut g = probs.clone();
    for (i, &l) in labels.iter().enumerate() {
        g.data_mut()[i * k + l as usize] -= 1.0;
    }
    g.data_mut().iter_mut().for_each(|v| *v /= n as f64);
    g
}
