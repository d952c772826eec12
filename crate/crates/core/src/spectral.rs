//! Periodogram band powers and the two classifier input shapes.
//!
//! Every channel of every trial yields one dB value per band:
//! `10·log10(max(ε, 2·∫ P(f) df))` where `P` is the one-sided periodogram
//! (rectangular window, `1/(fs·N)` scaling) and the integral is trapezoidal
//! over the grid bins in `[f_lo, f_hi)`.

use std::io::Write;
use std::path::Path;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::data::{BandSet, ChannelLayout, EpochSet, MESH_COLS, MESH_ROWS};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Power floor applied before the logarithm.
pub const POWER_FLOOR: f64 = 1e-12;

/// One-sided power spectral density, `fs·N` normalized, so that
/// `Σ pxx · fs/N` equals the mean square of the signal.
pub fn periodogram(signal: &[f64], fs: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut planner = FftPlanner::new();
    periodogram_with(&mut planner, signal, fs)
}

fn periodogram_with(
    planner: &mut FftPlanner<f64>,
    signal: &[f64],
    fs: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = signal.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "periodogram needs at least 2 samples, got {n}"
        )));
    }
    if !(fs > 0.0) {
        return Err(Error::invalid(format!(
            "sampling rate {fs} must be positive"
        )));
    }
    let mut buf: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);

    let n_bins = n / 2 + 1;
    let scale = 1.0 / (fs * n as f64);
    let pxx = (0..n_bins)
        .map(|k| {
            let p = buf[k].norm_sqr() * scale;
            // DC and (even N) Nyquist have no mirror image.
            if k == 0 || (n % 2 == 0 && k == n / 2) {
                p
            } else {
                2.0 * p
            }
        })
        .collect();
    let freqs = (0..n_bins).map(|k| k as f64 * fs / n as f64).collect();
    Ok((freqs, pxx))
}

/// `10·log10(max(ε, 2·trapz(pxx over [f_lo, f_hi))))`.
pub fn band_power_db(freqs: &[f64], pxx: &[f64], f_lo: f64, f_hi: f64) -> Result<f64> {
    if freqs.len() != pxx.len() {
        return Err(Error::shape(format!(
            "{} frequencies vs {} power values",
            freqs.len(),
            pxx.len()
        )));
    }
    let idx: Vec<usize> = (0..freqs.len())
        .filter(|&i| freqs[i] >= f_lo && freqs[i] < f_hi)
        .collect();
    if idx.len() < 2 {
        return Err(Error::invalid(format!(
            "band [{f_lo}, {f_hi}) holds {} frequency bins; trapezoidal integration needs 2",
            idx.len()
        )));
    }
    let integral: f64 = idx
        .windows(2)
        .map(|w| 0.5 * (pxx[w[0]] + pxx[w[1]]) * (freqs[w[1]] - freqs[w[0]]))
        .sum();
    Ok(10.0 * (2.0 * integral).max(POWER_FLOOR).log10())
}

/// Band powers in dB, `[n_trials][n_bands][n_channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub n_trials: usize,
    pub band_set: BandSet,
    pub channel_names: Vec<String>,
    values: Vec<f64>,
}

impl FeatureTensor {
    pub fn new(
        n_trials: usize,
        band_set: BandSet,
        channel_names: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let need = n_trials * band_set.len() * channel_names.len();
        if values.len() != need {
            return Err(Error::shape(format!(
                "feature tensor needs {need} values, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite feature at flat index {i}"
            )));
        }
        Ok(FeatureTensor {
            n_trials,
            band_set,
            channel_names,
            values,
        })
    }

    pub fn n_bands(&self) -> usize {
        self.band_set.len()
    }

    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn get(&self, trial: usize, band: usize, channel: usize) -> f64 {
        self.values[(trial * self.n_bands() + band) * self.n_channels() + channel]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column names of the flat view: `<band>_<channel>`.
    pub fn column_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.n_bands() * self.n_channels());
        for b in self.band_set.bands() {
            for c in &self.channel_names {
                out.push(format!("{}_{}", b.name, c));
            }
        }
        out
    }
}

/// Band powers of every channel of every trial.
pub fn features(e: &EpochSet, bands: &BandSet) -> Result<FeatureTensor> {
    e.ensure_valid()?;
    let fs = e.fs as f64;
    let mut planner = FftPlanner::new();
    let nb = bands.len();
    let nc = e.n_channels;
    let mut values = vec![0.0; e.n_trials * nb * nc];
    let mut buf = vec![0.0f64; e.n_samples];
    for t in 0..e.n_trials {
        for c in 0..nc {
            for (b, v) in buf.iter_mut().zip(e.signal(t, c)) {
                *b = *v as f64;
            }
            let (freqs, pxx) = periodogram_with(&mut planner, &buf, fs)?;
            for (bi, band) in bands.bands().iter().enumerate() {
                values[(t * nb + bi) * nc + c] = band_power_db(&freqs, &pxx, band.f_lo, band.f_hi)
                    .map_err(|err| Error::invalid(format!("band '{}': {err}", band.name)))?;
            }
        }
    }
    FeatureTensor::new(e.n_trials, bands.clone(), e.channel_names.clone(), values)
}

/// `[n_trials][n_bands·n_channels]`, band-major: element `(band, ch)` lands
/// in column `band·n_channels + ch`.
pub fn flatten(t: &FeatureTensor) -> Matrix {
    Matrix::new(t.n_trials, t.n_bands() * t.n_channels(), t.values.clone())
        .expect("tensor dims are consistent")
}

pub fn unflatten(m: &Matrix, bands: &BandSet, channel_names: &[String]) -> Result<FeatureTensor> {
    let width = bands.len() * channel_names.len();
    if m.cols() != width {
        return Err(Error::shape(format!(
            "flat features have {} columns, {} bands × {} channels need {width}",
            m.cols(),
            bands.len(),
            channel_names.len()
        )));
    }
    FeatureTensor::new(
        m.rows(),
        bands.clone(),
        channel_names.to_vec(),
        m.as_slice().to_vec(),
    )
}

/// Precomputed flat-column → mesh-cell map for one channel list.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshMap {
    n_bands: usize,
    n_channels: usize,
    cells: Vec<usize>,
}

impl MeshMap {
    pub fn new(n_bands: usize, channel_names: &[String], layout: &ChannelLayout) -> Result<Self> {
        let mut cells = Vec::with_capacity(channel_names.len());
        for name in channel_names {
            let (r, c) = layout
                .slot(name)
                .ok_or_else(|| Error::invalid(format!("channel '{name}' missing from layout")))?;
            cells.push(r * MESH_COLS + c);
        }
        Ok(MeshMap {
            n_bands,
            n_channels: channel_names.len(),
            cells,
        })
    }

    /// Values per trial in mesh form, `n_bands × 10 × 9`.
    pub fn mesh_len(&self) -> usize {
        self.n_bands * MESH_ROWS * MESH_COLS
    }

    pub fn flat_len(&self) -> usize {
        self.n_bands * self.n_channels
    }

    /// Scatter one flat row into a zeroed mesh buffer.
    pub fn scatter(&self, flat: &[f64], out: &mut [f64]) {
        debug_assert_eq!(flat.len(), self.flat_len());
        debug_assert_eq!(out.len(), self.mesh_len());
        out.iter_mut().for_each(|v| *v = 0.0);
        let plane = MESH_ROWS * MESH_COLS;
        for b in 0..self.n_bands {
            for (ch, &cell) in self.cells.iter().enumerate() {
                out[b * plane + cell] = flat[b * self.n_channels + ch];
            }
        }
    }

    pub fn gather(&self, mesh: &[f64], out: &mut [f64]) {
        let plane = MESH_ROWS * MESH_COLS;
        for b in 0..self.n_bands {
            for (ch, &cell) in self.cells.iter().enumerate() {
                out[b * self.n_channels + ch] = mesh[b * plane + cell];
            }
        }
    }

    /// Mesh every row of a flat matrix.
    pub fn mesh_rows(&self, flat: &Matrix) -> Result<Vec<f64>> {
        if flat.cols() != self.flat_len() {
            return Err(Error::shape(format!(
                "expected {} flat columns, got {}",
                self.flat_len(),
                flat.cols()
            )));
        }
        let m = self.mesh_len();
        let mut out = vec![0.0; flat.rows() * m];
        for i in 0..flat.rows() {
            self.scatter(flat.row(i), &mut out[i * m..(i + 1) * m]);
        }
        Ok(out)
    }
}

/// `[n_trials][n_bands][10][9]`; cells without a channel are 0.
pub fn mesh(t: &FeatureTensor, layout: &ChannelLayout) -> Result<Vec<f64>> {
    MeshMap::new(t.n_bands(), &t.channel_names, layout)?.mesh_rows(&flatten(t))
}

pub fn unmesh(
    mesh: &[f64],
    n_trials: usize,
    bands: &BandSet,
    channel_names: &[String],
    layout: &ChannelLayout,
) -> Result<FeatureTensor> {
    let map = MeshMap::new(bands.len(), channel_names, layout)?;
    if mesh.len() != n_trials * map.mesh_len() {
        return Err(Error::shape(format!(
            "mesh holds {} values, {n_trials} trials need {}",
            mesh.len(),
            n_trials * map.mesh_len()
        )));
    }
    let mut values = vec![0.0; n_trials * map.flat_len()];
    for t in 0..n_trials {
        map.gather(
            &mesh[t * map.mesh_len()..(t + 1) * map.mesh_len()],
            &mut values[t * map.flat_len()..(t + 1) * map.flat_len()],
        );
    }
    FeatureTensor::new(n_trials, bands.clone(), channel_names.to_vec(), values)
}

/// Feature CSV: header `label,<band>_<channel>...`, one row per trial.
/// Values use the shortest representation that parses back to the same f64.
pub fn write_features_csv(path: &Path, t: &FeatureTensor, labels: &[u8]) -> Result<()> {
    if labels.len() != t.n_trials {
        return Err(Error::shape(format!(
            "{} labels for {} trials",
            labels.len(),
            t.n_trials
        )));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["label".to_string()];
    header.extend(t.column_names());
    w.write_record(&header)?;
    let flat = flatten(t);
    for (i, &label) in labels.iter().enumerate() {
        let mut rec = Vec::with_capacity(flat.cols() + 1);
        rec.push(label.to_string());
        rec.extend(flat.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Inverse of [`write_features_csv`]. Band and channel names come from the
/// header; band edges are looked up in `bands`.
pub fn read_features_csv(path: &Path, bands: &BandSet) -> Result<(FeatureTensor, Vec<u8>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.get(0) != Some("label") {
        return Err(Error::invalid(format!(
            "{}: first column must be 'label'",
            path.display()
        )));
    }
    let cols: Vec<&str> = header.iter().skip(1).collect();
    let per_band = cols.len() / bands.len().max(1);
    if per_band * bands.len() != cols.len() || per_band == 0 {
        return Err(Error::shape(format!(
            "{}: {} feature columns do not divide into {} bands",
            path.display(),
            cols.len(),
            bands.len()
        )));
    }
    let mut channel_names = Vec::with_capacity(per_band);
    for (i, col) in cols.iter().enumerate() {
        let (band, ch) = col
            .split_once('_')
            .ok_or_else(|| Error::invalid(format!("column '{col}' is not <band>_<channel>")))?;
        let bi = i / per_band;
        if band != bands.bands()[bi].name {
            return Err(Error::invalid(format!(
                "column '{col}' found where band '{}' was expected",
                bands.bands()[bi].name
            )));
        }
        if bi == 0 {
            channel_names.push(ch.to_string());
        } else if channel_names[i % per_band] != ch {
            return Err(Error::invalid(format!(
                "column '{col}' breaks channel order"
            )));
        }
    }
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse_err = |s: &str| Error::invalid(format!("{}: bad number '{s}'", path.display()));
        let l: u8 = rec[0].parse().map_err(|_| parse_err(&rec[0]))?;
        labels.push(l);
        for s in rec.iter().skip(1) {
            values.push(s.parse::<f64>().map_err(|_| parse_err(s))?);
        }
    }
    let t = FeatureTensor::new(labels.len(), bands.clone(), channel_names, values)?;
    Ok((t, labels))
}

pub const MESH_MAGIC: &[u8; 4] = b"MSH1";

/// Mesh blob: `MSH1`, u32 n_trials, u32 n_bands, u32 rows, u32 cols, then
/// f32 little-endian values trial/band/row/col.
pub fn write_mesh_blob(path: &Path, t: &FeatureTensor, layout: &ChannelLayout) -> Result<()> {
    let m = mesh(t, layout)?;
    let mut buf = Vec::with_capacity(20 + 4 * m.len());
    buf.extend_from_slice(MESH_MAGIC);
    for d in [t.n_trials, t.n_bands(), MESH_ROWS, MESH_COLS] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &m {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}
