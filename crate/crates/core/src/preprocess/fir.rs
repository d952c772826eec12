//! Windowed-sinc FIR design and zero-phase (forward-backward) filtering.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Lowpass,
    Bandpass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Hamming,
}

/// A lowpass uses only `f_hi` as its cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub f_lo: f64,
    pub f_hi: f64,
    pub n_taps: usize,
    #[serde(default)]
    pub window: Window,
}

impl FilterSpec {
    pub fn lowpass(cutoff: f64, n_taps: usize) -> Self {
        FilterSpec {
            kind: FilterKind::Lowpass,
            f_lo: 0.0,
            f_hi: cutoff,
            n_taps,
            window: Window::Hamming,
        }
    }

    pub fn bandpass(f_lo: f64, f_hi: f64, n_taps: usize) -> Self {
        FilterSpec {
            kind: FilterKind::Bandpass,
            f_lo,
            f_hi,
            n_taps,
            window: Window::Hamming,
        }
    }
}

fn window(kind: Window, n: usize) -> Vec<f64> {
    match kind {
        Window::Hamming => {
            if n == 1 {
                return vec![1.0];
            }
            let m = (n - 1) as f64;
            (0..n)
                .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / m).cos())
                .collect()
        }
    }
}

/// Unity-DC-gain windowed-sinc lowpass.
fn lowpass_taps(cutoff: f64, fs: f64, win: &[f64]) -> Vec<f64> {
    let n = win.len();
    let mid = (n - 1) as f64 / 2.0;
    let fc = cutoff / fs;
    let mut h: Vec<f64> = win
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let t = i as f64 - mid;
            let s = if t == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * t).sin() / (PI * t)
            };
            s * w
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Linear-phase windowed-sinc taps. The bandpass is the difference of two
/// unity-DC lowpasses, so its DC gain is zero.
pub fn fir_design(spec: &FilterSpec, fs: f64) -> Result<Vec<f64>> {
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::invalid(format!(
            "sampling rate {fs} must be positive"
        )));
    }
    if spec.n_taps < 3 || spec.n_taps % 2 == 0 {
        return Err(Error::invalid(format!(
            "n_taps must be odd and >= 3, got {}",
            spec.n_taps
        )));
    }
    let nyq = fs / 2.0;
    if !(spec.f_hi > 0.0 && spec.f_hi < nyq) {
        return Err(Error::invalid(format!(
            "cutoff {} Hz must lie in (0, {nyq}) for fs = {fs}",
            spec.f_hi
        )));
    }
    let win = window(spec.window, spec.n_taps);
    match spec.kind {
        FilterKind::Lowpass => Ok(lowpass_taps(spec.f_hi, fs, &win)),
        FilterKind::Bandpass => {
            if !(spec.f_lo > 0.0 && spec.f_lo < spec.f_hi) {
                return Err(Error::invalid(format!(
                    "band-pass needs 0 < f_lo < f_hi, got {}..{}",
                    spec.f_lo, spec.f_hi
                )));
            }
            let hi = lowpass_taps(spec.f_hi, fs, &win);
            let lo = lowpass_taps(spec.f_lo, fs, &win);
            Ok(hi.iter().zip(&lo).map(|(a, b)| a - b).collect())
        }
    }
}

/// Largest odd tap count whose 3× reflection padding fits in `len` samples.
pub fn max_taps_for_len(len: usize) -> usize {
    let n = len.saturating_sub(1) / 3;
    if n % 2 == 0 {
        n.saturating_sub(1)
    } else {
        n
    }
}

/// Reusable forward-backward FIR filter for signals of one fixed length.
///
/// The causal pass is computed as an FFT convolution; the FFT of the taps
/// is computed once and shared by every signal.
pub struct ZeroPhaseFir {
    n_taps: usize,
    len: usize,
    pad: usize,
    fft_len: usize,
    taps_hat: Vec<Complex64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl ZeroPhaseFir {
    pub fn new(taps: &[f64], len: usize) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::invalid("empty tap vector"));
        }
        let pad = 3 * taps.len();
        if len <= pad {
            return Err(Error::invalid(format!(
                "signal of {len} samples is too short for {} taps (need > {pad})",
                taps.len()
            )));
        }
        let padded = len + 2 * pad;
        let fft_len = (padded + taps.len() - 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(fft_len);
        let inv = planner.plan_fft_inverse(fft_len);
        let mut taps_hat = vec![Complex64::new(0.0, 0.0); fft_len];
        for (d, &t) in taps_hat.iter_mut().zip(taps) {
            d.re = t;
        }
        fwd.process(&mut taps_hat);
        Ok(ZeroPhaseFir {
            n_taps: taps.len(),
            len,
            pad,
            fft_len,
            taps_hat,
            fwd,
            inv,
        })
    }

    pub fn n_taps(&self) -> usize {
        self.n_taps
    }

    /// Causal filtering of `x` in place, zero initial state.
    fn causal(&self, x: &mut [f64], scratch: &mut Vec<Complex64>) {
        scratch.clear();
        scratch.extend(x.iter().map(|&v| Complex64::new(v, 0.0)));
        scratch.resize(self.fft_len, Complex64::new(0.0, 0.0));
        self.fwd.process(scratch);
        for (s, h) in scratch.iter_mut().zip(&self.taps_hat) {
            *s *= h;
        }
        self.inv.process(scratch);
        let scale = 1.0 / self.fft_len as f64;
        for (o, s) in x.iter_mut().zip(scratch.iter()) {
            *o = s.re * scale;
        }
    }

    pub fn apply(&self, signal: &[f64]) -> Result<Vec<f64>> {
        if signal.len() != self.len {
            return Err(Error::shape(format!(
                "filter planned for {} samples, got {}",
                self.len,
                signal.len()
            )));
        }
        let mut ext = reflect_pad(signal, self.pad);
        let mut scratch = Vec::with_capacity(self.fft_len);
        self.causal(&mut ext, &mut scratch);
        ext.reverse();
        self.causal(&mut ext, &mut scratch);
        ext.reverse();
        Ok(ext[self.pad..self.pad + self.len].to_vec())
    }
}

/// Odd (point-symmetric) reflection about both endpoints.
fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    out.extend_from_slice(x);
    out.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    out
}

/// Zero-phase filtering: forward pass, backward pass, 3×taps reflection
/// padding on both ends.
pub fn filtfilt(signal: &[f64], taps: &[f64]) -> Result<Vec<f64>> {
    ZeroPhaseFir::new(taps, signal.len())?.apply(signal)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct-form forward-backward filter, independent of the FFT path.
    fn filtfilt_direct(x: &[f64], h: &[f64]) -> Vec<f64> {
        let pad = 3 * h.len();
        let ext = reflect_pad(x, pad);
        let causal = |v: &[f64]| -> Vec<f64> {
            (0..v.len())
                .map(|n| {
                    h.iter()
                        .enumerate()
                        .filter(|(k, _)| *k <= n)
                        .map(|(k, c)| c * v[n - k])
                        .sum()
                })
                .collect()
        };
        let mut y = causal(&ext);
        y.reverse();
        let mut y = causal(&y);
        y.reverse();
        y[pad..pad + x.len()].to_vec()
    }

    fn gain_at(h: &[f64], f: f64, fs: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (n, c) in h.iter().enumerate() {
            let w = 2.0 * PI * f / fs * n as f64;
            re += c * w.cos();
            im -= c * w.sin();
        }
        (re * re + im * im).sqrt()
    }

    fn sine(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / fs).sin())
            .collect()
    }

    #[test]
    fn near_nyquist_lowpass_is_allpass() {
        let h = fir_design(&FilterSpec::lowpass(500.0 - 1e-3, 4001), 1000.0).unwrap();
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((h[2000] - 1.0).abs() < 1e-5);
        assert!((gain_at(&h, 123.0, 1000.0) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn bandpass_passband_at_25hz() {
        let h = fir_design(&FilterSpec::bandpass(0.5, 50.0, 501), 250.0).unwrap();
        let db = 20.0 * gain_at(&h, 25.0, 250.0).log10();
        assert!(db.abs() < 0.5, "25 Hz gain {db} dB");
        assert!(gain_at(&h, 0.0, 250.0) < 1e-12);
        // symmetric (linear phase)
        for i in 0..250 {
            assert!((h[i] - h[500 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn cutoff_at_or_above_nyquist_fails() {
        assert!(fir_design(&FilterSpec::bandpass(0.5, 130.0, 501), 250.0).is_err());
        assert!(fir_design(&FilterSpec::lowpass(125.0, 51), 250.0).is_err());
        assert!(fir_design(&FilterSpec::lowpass(40.0, 50), 250.0).is_err());
        assert!(fir_design(&FilterSpec::bandpass(0.0, 40.0, 51), 250.0).is_err());
    }

    #[test]
    fn fft_path_matches_direct_form() {
        let h = fir_design(&FilterSpec::bandpass(1.0, 30.0, 31), 250.0).unwrap();
        let x: Vec<f64> = (0..200)
            .map(|i| ((i * 7919 % 113) as f64 - 56.0) / 10.0)
            .collect();
        let a = filtfilt(&x, &h).unwrap();
        let b = filtfilt_direct(&x, &h);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10, "{u} vs {v}");
        }
    }

    #[test]
    fn dc_is_rejected() {
        let h = fir_design(&FilterSpec::bandpass(0.5, 50.0, 501), 250.0).unwrap();
        let x = vec![7.0; 2000];
        let y = filtfilt(&x, &h).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-3 * 7.0));
    }

    #[test]
    fn ten_hz_amplitude_preserved() {
        let fs = 250.0;
        let h = fir_design(&FilterSpec::bandpass(0.5, 50.0, 501), fs).unwrap();
        let x = sine(10.0, fs, 2000);
        let y = filtfilt(&x, &h).unwrap();
        // Least-squares sine fit on the interior.
        let (mut sc, mut cc, mut ss) = (0.0, 0.0, 0.0);
        for i in 500..1500 {
            let w = 2.0 * PI * 10.0 * i as f64 / fs;
            sc += y[i] * w.sin();
            cc += y[i] * w.cos();
            ss += 1.0;
        }
        let amp = 2.0 * (sc * sc + cc * cc).sqrt() / ss;
        assert!((amp - 1.0).abs() < 0.01, "amplitude {amp}");
        // zero phase: in-phase component dominates.
        assert!(cc.abs() / sc.abs() < 1e-3);
    }

    #[test]
    fn zero_lag_cross_correlation_peak() {
        let fs = 250.0;
        let h = fir_design(&FilterSpec::bandpass(0.5, 50.0, 101), fs).unwrap();
        let x = sine(13.0, fs, 1000);
        let y = filtfilt(&x, &h).unwrap();
        let xc = |lag: i64| -> f64 {
            (400..600)
                .map(|i| x[i] * y[(i as i64 + lag) as usize])
                .sum()
        };
        let best = (-8..=8).max_by(|a, b| xc(*a).total_cmp(&xc(*b))).unwrap();
        assert_eq!(best, 0);
    }

    #[test]
    fn identity_filter_and_short_signal() {
        let mut x = vec![0.0; 16];
        x[5] = 1.0;
        let y = filtfilt(&x, &[1.0]).unwrap();
        assert!(y.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(filtfilt(&x, &[0.2; 5]).is_ok());
        assert!(filtfilt(&x, &[0.1; 7]).is_err());
        assert_eq!(max_taps_for_len(500), 165);
        assert_eq!(max_taps_for_len(2000), 665);
        assert!(filtfilt(&vec![0.0; 500], &vec![0.0; 165]).is_ok());
    }
}
