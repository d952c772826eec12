//! RBF-kernel soft-margin SVM trained with a seeded simplified SMO.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::seeded;

pub fn rbf_kernel(x: &[f64], z: &[f64], gamma: f64) -> Result<f64> {
    if x.len() != z.len() {
        return Err(Error::shape(format!(
            "kernel arguments have {} and {} dimensions",
            x.len(),
            z.len()
        )));
    }
    if !(gamma > 0.0) {
        return Err(Error::invalid(format!("gamma {gamma} must be positive")));
    }
    Ok(rbf(x, z, gamma))
}

fn rbf(x: &[f64], z: &[f64], gamma: f64) -> f64 {
    let d: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
    (-gamma * d).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    pub c: f64,
    /// `None` means `1 / n_features`.
    pub gamma: Option<f64>,
    pub tol: f64,
    pub max_passes: usize,
    /// Hard cap on sweeps over the data.
    pub max_sweeps: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            gamma: None,
            tol: 1e-3,
            max_passes: 10,
            max_sweeps: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub support_vectors: Matrix,
    pub alphas: Vec<f64>,
    /// ±1 per support vector.
    pub labels: Vec<f64>,
    pub b: f64,
    pub gamma: f64,
    pub c: f64,
}

fn signed(y: u8) -> f64 {
    if y == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Trains on rows of `x` with labels in {0, 1}; label 1 is the positive class.
pub fn train_smo(x: &Matrix, y: &[u8], cfg: &SvmConfig) -> Result<SvmModel> {
    let n = x.rows();
    if n != y.len() {
        return Err(Error::shape(format!("{n} rows but {} labels", y.len())));
    }
    if let Some(bad) = y.iter().find(|&&l| l > 1) {
        return Err(Error::invalid(format!("label {bad} is not 0 or 1")));
    }
    if !y.contains(&0) || !y.contains(&1) {
        return Err(Error::invalid(
            "SVM training needs both classes present".to_string(),
        ));
    }
    if !(cfg.c > 0.0) || !(cfg.tol > 0.0) {
        return Err(Error::invalid("C and tol must be positive".to_string()));
    }
    let gamma = cfg.gamma.unwrap_or(1.0 / x.cols().max(1) as f64);
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("gamma {gamma} must be positive")));
    }

    let mut k = vec![0.0; n * n];
    for i in 0..n {
        k[i * n + i] = 1.0;
        for j in 0..i {
            let v = rbf(x.row(i), x.row(j), gamma);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    let ys: Vec<f64> = y.iter().map(|&l| signed(l)).collect();
    let c = cfg.c;
    let tol = cfg.tol;
    let mut alpha = vec![0.0; n];
    let mut b = 0.0;
    // f[i] = Σ αⱼ yⱼ K(j, i), kept incrementally.
    let mut f = vec![0.0; n];
    let mut rng = seeded(cfg.seed);

    let take_step = |i: usize, j: usize, alpha: &mut [f64], f: &mut [f64], b: &mut f64| -> bool {
        let ei = f[i] + *b - ys[i];
        let ej = f[j] + *b - ys[j];
        let (ai, aj) = (alpha[i], alpha[j]);
        let (lo, hi) = if ys[i] != ys[j] {
            ((aj - ai).max(0.0), (c + aj - ai).min(c))
        } else {
            ((ai + aj - c).max(0.0), (ai + aj).min(c))
        };
        if hi - lo < 1e-12 {
            return false;
        }
        let eta = 2.0 * k[i * n + j] - k[i * n + i] - k[j * n + j];
        if eta >= 0.0 {
            return false;
        }
        let mut aj_new = (aj - ys[j] * (ei - ej) / eta).clamp(lo, hi);
        if aj_new - lo < 1e-12 {
            aj_new = lo;
        } else if hi - aj_new < 1e-12 {
            aj_new = hi;
        }
        if (aj_new - aj).abs() < 1e-10 * (aj_new + aj + 1e-10) {
            return false;
        }
        let mut ai_new = ai + ys[i] * ys[j] * (aj - aj_new);
        if ai_new < 1e-12 {
            ai_new = 0.0;
        } else if c - ai_new < 1e-12 {
            ai_new = c;
        }
        let (di, dj) = (ai_new - ai, aj_new - aj);
        let b1 = *b - ei - ys[i] * di * k[i * n + i] - ys[j] * dj * k[i * n + j];
        let b2 = *b - ej - ys[i] * di * k[i * n + j] - ys[j] * dj * k[j * n + j];
        *b = if ai_new > 0.0 && ai_new < c {
            b1
        } else if aj_new > 0.0 && aj_new < c {
            b2
        } else {
            0.5 * (b1 + b2)
        };
        for t in 0..n {
            f[t] += ys[i] * di * k[i * n + t] + ys[j] * dj * k[j * n + t];
        }
        alpha[i] = ai_new;
        alpha[j] = aj_new;
        true
    };

    let mut passes = 0;
    let mut sweeps = 0;
    while passes < cfg.max_passes {
        if sweeps == cfg.max_sweeps {
            log::warn!("SMO stopped after {sweeps} sweeps without converging");
            break;
        }
        sweeps += 1;
        let mut changed = 0;
        for i in 0..n {
            let ri = (f[i] + b - ys[i]) * ys[i];
            if !((ri < -tol && alpha[i] < c) || (ri > tol && alpha[i] > 0.0)) {
                continue;
            }
            // Random partner first; if it cannot move, scan the rest.
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let mut moved = take_step(i, j, &mut alpha, &mut f, &mut b);
            if !moved {
                for off in 1..n {
                    let jj = (j + off) % n;
                    if jj != i && take_step(i, jj, &mut alpha, &mut f, &mut b) {
                        moved = true;
                        break;
                    }
                }
            }
            if moved {
                changed += 1;
            }
        }
        passes = if changed == 0 { passes + 1 } else { 0 };
    }

    let sv: Vec<usize> = (0..n).filter(|&i| alpha[i] > 0.0).collect();
    Ok(SvmModel {
        support_vectors: x.select_rows(&sv),
        alphas: sv.iter().map(|&i| alpha[i]).collect(),
        labels: sv.iter().map(|&i| ys[i]).collect(),
        b,
        gamma,
        c,
    })
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.support_vectors.cols()
    }

    pub fn n_support(&self) -> usize {
        self.alphas.len()
    }

    /// `Σ αᵢ yᵢ K(xᵢ, x) + b`
    pub fn decision_value(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() && self.n_support() > 0 {
            return Err(Error::shape(format!(
                "model has {} features, input has {}",
                self.dim(),
                x.len()
            )));
        }
        Ok((0..self.n_support())
            .map(|s| {
                self.alphas[s] * self.labels[s] * rbf(self.support_vectors.row(s), x, self.gamma)
            })
            .sum::<f64>()
            + self.b)
    }

    pub fn decision_values(&self, x: &Matrix) -> Result<Vec<f64>> {
        (0..x.rows())
            .map(|r| self.decision_value(x.row(r)))
            .collect()
    }

    /// Label 1 where the decision value is positive, else 0.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<u8>> {
        Ok(self
            .decision_values(x)?
            .into_iter()
            .map(|v| u8::from(v > 0.0))
            .collect())
    }

    /// `Σ αᵢ yᵢ`, zero at a feasible dual point.
    pub fn dual_residual(&self) -> f64 {
        self.alphas
            .iter()
            .zip(&self.labels)
            .map(|(a, y)| a * y)
            .sum()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = SvmHeader {
            c: self.c,
            gamma: self.gamma,
            b: self.b,
            n_support: self.n_support(),
            dim: self.dim(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let blob = self
            .support_vectors
            .as_slice()
            .iter()
            .chain(&self.alphas)
            .chain(&self.labels);
        for &v in blob {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let hlen = bytes
            .get(..4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
            .ok_or_else(|| Error::format(0, "missing header length"))?;
        let json = bytes
            .get(4..4 + hlen)
            .ok_or_else(|| Error::format(4, "truncated header"))?;
        let h: SvmHeader = serde_json::from_slice(json)?;
        let body = &bytes[4 + hlen..];
        let want = (h.n_support * (h.dim + 2)) * 4;
        if body.len() != want {
            return Err(Error::format(
                (4 + hlen) as u64,
                format!("expected {want} bytes of weights, found {}", body.len()),
            ));
        }
        let vals: Vec<f64> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let nsv = h.n_support * h.dim;
        Ok(SvmModel {
            support_vectors: Matrix::new(h.n_support, h.dim, vals[..nsv].to_vec())?,
            alphas: vals[nsv..nsv + h.n_support].to_vec(),
            labels: vals[nsv + h.n_support..].to_vec(),
            b: h.b,
            gamma: h.gamma,
            c: h.c,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[derive(Serialize, Deserialize)]
struct SvmHeader {
    c: f64,
    gamma: f64,
    b: f64,
    n_support: usize,
    dim: usize,
}
