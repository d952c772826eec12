//! Decimation to 250 Hz, 0.5–50 Hz band-pass and average re-referencing.

mod fir;

pub use fir::{
    filtfilt, fir_design, max_taps_for_len, FilterKind, FilterSpec, Window, ZeroPhaseFir,
};

use serde::{Deserialize, Serialize};

use crate::data::EpochSet;
use crate::error::{Error, Result};

pub const TARGET_FS: f64 = 250.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub decimate: bool,
    pub bandpass: bool,
    pub rereference: bool,
    pub f_lo: f64,
    pub f_hi: f64,
    /// Anti-alias taps; capped to what the epoch length can pad.
    pub decimate_taps: usize,
    /// Band-pass taps; capped the same way.
    pub bandpass_taps: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            decimate: true,
            bandpass: true,
            rereference: true,
            f_lo: 0.5,
            f_hi: 50.0,
            decimate_taps: 1001,
            bandpass_taps: 501,
        }
    }
}

fn capped_taps(requested: usize, len: usize) -> Result<usize> {
    let n = requested.min(max_taps_for_len(len));
    if n < 3 {
        return Err(Error::invalid(format!(
            "epochs of {len} samples are too short to filter"
        )));
    }
    Ok(n)
}

/// Apply one zero-phase filter to every trial and channel.
pub fn filter_epochs(e: &EpochSet, spec: &FilterSpec) -> Result<EpochSet> {
    e.ensure_valid()?;
    let taps = fir_design(spec, e.fs as f64)?;
    let fir = ZeroPhaseFir::new(&taps, e.n_samples)?;
    let mut out = e.clone();
    let mut buf = vec![0.0f64; e.n_samples];
    for t in 0..e.n_trials {
        for c in 0..e.n_channels {
            for (b, v) in buf.iter_mut().zip(e.signal(t, c)) {
                *b = *v as f64;
            }
            let y = fir.apply(&buf)?;
            for (o, v) in out.signal_mut(t, c).iter_mut().zip(&y) {
                *o = *v as f32;
            }
        }
    }
    Ok(out)
}

/// Anti-alias lowpass at 0.8 × the new Nyquist, then keep every
/// `factor`-th sample starting at 0.
pub fn decimate(e: &EpochSet, factor: usize) -> Result<EpochSet> {
    decimate_with_taps(e, factor, PreprocessConfig::default().decimate_taps)
}

pub fn decimate_with_taps(e: &EpochSet, factor: usize, n_taps: usize) -> Result<EpochSet> {
    e.ensure_valid()?;
    if factor == 0 {
        return Err(Error::invalid("decimation factor must be >= 1"));
    }
    if factor == 1 {
        return Ok(e.clone());
    }
    let fs = e.fs as f64;
    if fs % factor as f64 != 0.0 {
        return Err(Error::invalid(format!(
            "fs = {fs} Hz is not divisible by decimation factor {factor}"
        )));
    }
    let new_len = e.n_samples / factor;
    if new_len < 2 {
        return Err(Error::invalid(format!(
            "decimating {} samples by {factor} leaves fewer than 2",
            e.n_samples
        )));
    }
    let new_fs = fs / factor as f64;
    let cutoff = 0.8 * new_fs / 2.0;
    let spec = FilterSpec::lowpass(cutoff, capped_taps(n_taps, e.n_samples)?);
    let filtered = filter_epochs(e, &spec)?;

    let mut data = Vec::with_capacity(e.n_trials * e.n_channels * new_len);
    for t in 0..e.n_trials {
        for c in 0..e.n_channels {
            data.extend(filtered.signal(t, c).iter().step_by(factor).take(new_len));
        }
    }
    EpochSet::new(
        e.subject_id.clone(),
        new_fs as f32,
        e.n_trials,
        e.n_channels,
        new_len,
        data,
        e.labels.clone(),
        e.channel_names.clone(),
    )
}

/// Subtract the instantaneous across-channel mean from every sample.
pub fn rereference_average(e: &EpochSet) -> Result<EpochSet> {
    e.ensure_valid()?;
    if e.n_channels < 2 {
        return Err(Error::invalid(
            "average reference needs at least 2 channels",
        ));
    }
    let mut out = e.clone();
    let (nc, ns) = (e.n_channels, e.n_samples);
    let mut mean = vec![0.0f64; ns];
    for t in 0..e.n_trials {
        mean.iter_mut().for_each(|m| *m = 0.0);
        for c in 0..nc {
            for (m, v) in mean.iter_mut().zip(e.signal(t, c)) {
                *m += *v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nc as f64);
        for c in 0..nc {
            for (o, m) in out.signal_mut(t, c).iter_mut().zip(&mean) {
                *o = (*o as f64 - m) as f32;
            }
        }
    }
    Ok(out)
}

/// Decimate to 250 Hz, band-pass, re-reference, in that order. Input at
/// 250 Hz skips decimation; any other rate must be an integer multiple of
/// 250 Hz.
pub fn preprocess_pipeline(e: &EpochSet, cfg: &PreprocessConfig) -> Result<EpochSet> {
    e.ensure_valid()?;
    let fs = e.fs as f64;
    let mut cur = if fs == TARGET_FS || !cfg.decimate {
        e.clone()
    } else if fs > TARGET_FS && fs % TARGET_FS == 0.0 {
        decimate_with_taps(e, (fs / TARGET_FS) as usize, cfg.decimate_taps)?
    } else {
        return Err(Error::invalid(format!(
            "cannot bring fs = {fs} Hz to {TARGET_FS} Hz by integer decimation"
        )));
    };
    if cfg.bandpass {
        let n = capped_taps(cfg.bandpass_taps, cur.n_samples)?;
        cur = filter_epochs(&cur, &FilterSpec::bandpass(cfg.f_lo, cfg.f_hi, n))?;
    }
    if cfg.rereference {
        cur = rereference_average(&cur)?;
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone_set(fs: f32, n_samples: usize, n_channels: usize, freq: f64, offset: f32) -> EpochSet {
        let mut data = Vec::new();
        for _t in 0..2 {
            for c in 0..n_channels {
                data.extend((0..n_samples).map(|i| {
                    (2.0 * PI * freq * i as f64 / fs as f64 + c as f64).sin() as f32 + offset
                }));
            }
        }
        EpochSet::new(
            "tone",
            fs,
            2,
            n_channels,
            n_samples,
            data,
            vec![0, 1],
            (0..n_channels).map(|c| format!("C{c}")).collect(),
        )
        .unwrap()
    }

    fn fit_amplitude(y: &[f32], freq: f64, fs: f64, range: std::ops::Range<usize>) -> f64 {
        let (mut s, mut c, mut n) = (0.0, 0.0, 0.0);
        for i in range {
            let w = 2.0 * PI * freq * i as f64 / fs;
            s += y[i] as f64 * w.sin();
            c += y[i] as f64 * w.cos();
            n += 1.0;
        }
        2.0 * (s * s + c * c).sqrt() / n
    }

    #[test]
    fn decimate_1000_to_250() {
        let e = tone_set(1000.0, 2000, 2, 10.0, 0.0);
        let d = decimate(&e, 4).unwrap();
        assert_eq!(d.fs, 250.0);
        assert_eq!(d.n_samples, 500);
        let amp = fit_amplitude(d.signal(0, 0), 10.0, 250.0, 100..400);
        assert!((amp - 1.0).abs() < 0.02, "amp {amp}");
    }

    #[test]
    fn decimate_identity_and_errors() {
        let e = tone_set(1000.0, 64, 2, 10.0, 0.0);
        assert_eq!(decimate(&e, 1).unwrap(), e);
        assert!(decimate(&e, 3).is_err());
        assert!(decimate(&e, 0).is_err());
    }

    #[test]
    fn rereference_arithmetic() {
        let e = EpochSet::new(
            "r",
            250.0,
            1,
            3,
            2,
            vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0],
            vec![1],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        let r = rereference_average(&e).unwrap();
        assert_eq!(r.data, vec![-1.0, -1.0, 0.0, 0.0, 1.0, 1.0]);
        assert_eq!(rereference_average(&r).unwrap(), r);
    }

    #[test]
    fn rereference_zeroes_channel_mean() {
        let e = crate::data::epoch::toy_set(3, 7, 40);
        let r = rereference_average(&e).unwrap();
        for t in 0..3 {
            for s in 0..40 {
                let m: f64 = (0..7).map(|c| r.signal(t, c)[s] as f64).sum::<f64>() / 7.0;
                assert!(m.abs() < 1e-5);
            }
        }
        let rr = rereference_average(&r).unwrap();
        for (a, b) in rr.data.iter().zip(&r.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn single_channel_cannot_be_rereferenced() {
        let e = crate::data::epoch::toy_set(1, 1, 8);
        assert!(rereference_average(&e).is_err());
    }

    #[test]
    fn pipeline_from_1000_hz() {
        let e = tone_set(1000.0, 2000, 4, 10.0, 0.0);
        let p = preprocess_pipeline(&e, &PreprocessConfig::default()).unwrap();
        assert_eq!(p.fs, 250.0);
        assert_eq!(p.n_samples, 500);
        for s in 0..500 {
            let m: f32 = (0..4).map(|c| p.signal(1, c)[s]).sum::<f32>() / 4.0;
            assert!(m.abs() < 1e-5);
        }
    }

    #[test]
    fn pipeline_at_250_hz_skips_decimation() {
        let e = tone_set(250.0, 500, 3, 10.0, 0.0);
        let p = preprocess_pipeline(&e, &PreprocessConfig::default()).unwrap();
        assert_eq!(p.n_samples, 500);
        assert_eq!(p.fs, 250.0);
        assert!(preprocess_pipeline(
            &tone_set(300.0, 500, 3, 10.0, 0.0),
            &PreprocessConfig::default()
        )
        .is_err());
    }

    #[test]
    fn dc_offset_only_is_removed() {
        let mut e = tone_set(1000.0, 2000, 3, 10.0, 0.0);
        e.data.iter_mut().for_each(|v| *v = 40.0);
        let cfg = PreprocessConfig {
            rereference: false,
            ..PreprocessConfig::default()
        };
        let p = preprocess_pipeline(&e, &cfg).unwrap();
        let peak = p.data.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(peak < 1e-3 * 40.0, "peak {peak}");
    }
}
