//! Seeded synthetic cohorts whose classes differ by band-power signatures.
//!
//! Each channel of each trial is a sum of one sinusoid per band plus white
//! Gaussian noise:
//!
//! ```text
//! x(t) = Σ_b gain[class][b] · sin(2π f_b t + φ_{trial,channel,b}) + N(0, σ²)
//! ```
//!
//! `f_b` is the band center snapped to a whole number of cycles per epoch,
//! so every tone sits exactly on a periodogram bin and its band power does
//! not depend on the random phase.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{BandSet, ChannelLayout, EpochSet, FORGOTTEN, REMEMBERED};
use crate::error::{Error, Result};
use crate::rng::{seeded, sub_seed};

/// Per-class amplitude multipliers, one per band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassGains {
    pub forgotten: Vec<f64>,
    pub remembered: Vec<f64>,
}

impl ClassGains {
    pub fn uniform(n_bands: usize) -> Self {
        ClassGains {
            forgotten: vec![1.0; n_bands],
            remembered: vec![1.0; n_bands],
        }
    }

    fn for_label(&self, label: u8) -> &[f64] {
        if label == REMEMBERED {
            &self.remembered
        } else {
            &self.forgotten
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub trials_per_subject: usize,
    pub remembered_ratio: f64,
    pub fs: f64,
    pub epoch_seconds: f64,
    pub n_channels: usize,
    pub bands: BandSet,
    pub class_band_gains: ClassGains,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_subjects: 17,
            trials_per_subject: 60,
            remembered_ratio: 0.5,
            fs: 1000.0,
            epoch_seconds: 2.0,
            n_channels: 60,
            bands: BandSet::default(),
            class_band_gains: ClassGains::uniform(6),
            noise_sigma: 1.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Raise the remembered class's gain in one band by `db` decibels of
    /// band power.
    pub fn with_separation(mut self, band: &str, db: f64) -> Result<Self> {
        let i = self
            .bands
            .position(band)
            .ok_or_else(|| Error::invalid(format!("unknown band '{band}'")))?;
        self.class_band_gains.remembered[i] =
            self.class_band_gains.forgotten[i] * 10f64.powf(db / 20.0);
        Ok(self)
    }

    pub fn n_samples(&self) -> usize {
        (self.fs * self.epoch_seconds).round() as usize
    }

    pub fn n_remembered(&self) -> usize {
        (self.trials_per_subject as f64 * self.remembered_ratio).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.remembered_ratio > 0.0 && self.remembered_ratio < 1.0) {
            return Err(Error::invalid(format!(
                "remembered_ratio {} must lie in (0, 1)",
                self.remembered_ratio
            )));
        }
        if self.trials_per_subject < 2 {
            return Err(Error::invalid("trials_per_subject must be >= 2"));
        }
        let n1 = self.n_remembered();
        if n1 == 0 || n1 == self.trials_per_subject {
            return Err(Error::invalid(format!(
                "ratio {} over {} trials leaves a class empty",
                self.remembered_ratio, self.trials_per_subject
            )));
        }
        if !(self.fs > 0.0) || !(self.epoch_seconds > 0.0) || self.n_samples() < 2 {
            return Err(Error::invalid(
                "fs and epoch_seconds must give >= 2 samples",
            ));
        }
        if self.n_channels == 0 {
            return Err(Error::invalid("n_channels must be >= 1"));
        }
        let nb = self.bands.len();
        if self.class_band_gains.forgotten.len() != nb
            || self.class_band_gains.remembered.len() != nb
        {
            return Err(Error::invalid(format!(
                "class_band_gains need {nb} values per class"
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise_sigma must be >= 0"));
        }
        if self
            .bands
            .bands()
            .iter()
            .any(|b| b.center() >= self.fs / 2.0)
        {
            return Err(Error::invalid("a band center lies above Nyquist"));
        }
        Ok(())
    }

    /// Tone frequency of each band: its center rounded to a whole number
    /// of cycles per epoch (at least one).
    pub fn tone_frequencies(&self) -> Vec<f64> {
        let dur = self.n_samples() as f64 / self.fs;
        self.bands
            .bands()
            .iter()
            .map(|b| (b.center() * dur).round().max(1.0) / dur)
            .collect()
    }

    fn channel_names(&self) -> Vec<String> {
        let layout = ChannelLayout::default();
        if self.n_channels <= layout.len() {
            layout
                .names()
                .take(self.n_channels)
                .map(String::from)
                .collect()
        } else {
            (1..=self.n_channels).map(|i| format!("Ch{i}")).collect()
        }
    }
}

pub fn subject_id(index: usize) -> String {
    format!("S{:02}", index + 1)
}

/// Subject `subject_index` of the cohort, drawn from the stream seeded with
/// `splitmix64(seed ^ subject_index)`.
pub fn generate_subject(spec: &SynthSpec, subject_index: usize) -> Result<EpochSet> {
    spec.validate()?;
    let mut rng = seeded(sub_seed(spec.seed, subject_index as u64));
    let n_trials = spec.trials_per_subject;
    let n_ch = spec.n_channels;
    let n_s = spec.n_samples();

    let n1 = spec.n_remembered();
    let mut labels = vec![FORGOTTEN; n_trials];
    labels[..n1].iter_mut().for_each(|l| *l = REMEMBERED);
    labels.shuffle(&mut rng);

    let tables: Vec<(Vec<f64>, Vec<f64>)> = spec
        .tone_frequencies()
        .iter()
        .map(|f| {
            (0..n_s)
                .map(|i| {
                    let w = 2.0 * PI * f * i as f64 / spec.fs;
                    (w.sin(), w.cos())
                })
                .unzip()
        })
        .collect();

    let noise = Normal::new(0.0, spec.noise_sigma)
        .map_err(|e| Error::invalid(format!("noise_sigma: {e}")))?;
    let mut data = Vec::with_capacity(n_trials * n_ch * n_s);
    let mut sig = vec![0.0f64; n_s];
    for &label in &labels {
        let gains = spec.class_band_gains.for_label(label);
        for _ in 0..n_ch {
            sig.iter_mut().for_each(|v| *v = 0.0);
            for ((sin_t, cos_t), &g) in tables.iter().zip(gains) {
                let phi = rng.random::<f64>() * 2.0 * PI;
                let (a, b) = (g * phi.cos(), g * phi.sin());
                for ((v, s), c) in sig.iter_mut().zip(sin_t).zip(cos_t) {
                    *v += a * s + b * c;
                }
            }
            for v in &sig {
                data.push((v + noise.sample(&mut rng)) as f32);
            }
        }
    }

    EpochSet::new(
        subject_id(subject_index),
        spec.fs as f32,
        n_trials,
        n_ch,
        n_s,
        data,
        labels,
        spec.channel_names(),
    )
}

pub fn generate_cohort(spec: &SynthSpec) -> Result<Vec<EpochSet>> {
    if spec.n_subjects < 2 {
        return Err(Error::invalid(format!(
            "cohort needs >= 2 subjects for leave-one-subject-out, got {}",
            spec.n_subjects
        )));
    }
    (0..spec.n_subjects)
        .map(|k| generate_subject(spec, k))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::features;

    fn small() -> SynthSpec {
        SynthSpec {
            n_subjects: 3,
            trials_per_subject: 10,
            fs: 250.0,
            epoch_seconds: 1.0,
            n_channels: 4,
            noise_sigma: 0.1,
            seed: 7,
            ..SynthSpec::default()
        }
    }

    fn class_mean(
        t: &crate::spectral::FeatureTensor,
        labels: &[u8],
        band: usize,
        class: u8,
    ) -> f64 {
        let mut s = 0.0;
        let mut n = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            if l == class {
                for c in 0..t.n_channels() {
                    s += t.get(i, band, c);
                    n += 1.0;
                }
            }
        }
        s / n
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_subject(&small(), 0).unwrap();
        let b = generate_subject(&small(), 0).unwrap();
        assert_eq!(a, b);
        let c = generate_subject(&small(), 1).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn realized_ratio_is_exact() {
        let spec = SynthSpec {
            trials_per_subject: 100,
            remembered_ratio: 0.87,
            ..small()
        };
        let e = generate_subject(&spec, 0).unwrap();
        assert_eq!(e.count_label(REMEMBERED), 87);
        let spec = SynthSpec {
            trials_per_subject: 38,
            remembered_ratio: 0.21,
            ..small()
        };
        let e = generate_subject(&spec, 2).unwrap();
        assert_eq!(e.count_label(REMEMBERED), 8);
    }

    #[test]
    fn degenerate_ratio_errors() {
        let spec = SynthSpec {
            trials_per_subject: 4,
            remembered_ratio: 0.05,
            ..small()
        };
        assert!(generate_subject(&spec, 0).is_err());
        let spec = SynthSpec {
            remembered_ratio: 1.0,
            ..small()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn alpha_gain_shows_in_band_power() {
        let spec = SynthSpec {
            trials_per_subject: 20,
            ..small()
        };
        let spec = spec.with_separation("alpha", 20.0 * 2f64.log10()).unwrap();
        assert!((spec.class_band_gains.remembered[2] - 2.0).abs() < 1e-12);
        let e = generate_subject(&spec, 0).unwrap();
        let t = features(&e, &spec.bands).unwrap();
        let d = class_mean(&t, &e.labels, 2, 1) - class_mean(&t, &e.labels, 2, 0);
        assert!(d >= 5.0, "alpha difference {d} dB");
        assert!((d - 6.02).abs() < 1.0);
    }

    #[test]
    fn equal_gains_without_noise_give_equal_class_means() {
        let spec = SynthSpec {
            noise_sigma: 0.0,
            fs: 1000.0,
            epoch_seconds: 2.0,
            ..small()
        };
        let e = generate_subject(&spec, 1).unwrap();
        let t = features(&e, &spec.bands).unwrap();
        for b in 0..6 {
            let d = class_mean(&t, &e.labels, b, 1) - class_mean(&t, &e.labels, b, 0);
            assert!(d.abs() < 1e-6, "band {b}: {d}");
        }
    }

    #[test]
    fn cohort_sizes_and_ids() {
        let spec = SynthSpec {
            n_subjects: 17,
            trials_per_subject: 4,
            fs: 250.0,
            epoch_seconds: 0.2,
            n_channels: 2,
            ..SynthSpec::default()
        };
        let c = generate_cohort(&spec).unwrap();
        assert_eq!(c.len(), 17);
        let mut ids: Vec<_> = c.iter().map(|e| e.subject_id.clone()).collect();
        ids.dedup();
        assert_eq!(ids.len(), 17);
        assert_eq!(c, generate_cohort(&spec).unwrap());
        let one = SynthSpec {
            n_subjects: 1,
            ..spec
        };
        assert!(generate_cohort(&one).is_err());
    }

    #[test]
    fn tones_land_on_whole_cycles() {
        let f = SynthSpec::default().tone_frequencies();
        assert_eq!(f, vec![2.5, 5.5, 9.5, 13.5, 22.5, 40.0]);
    }
}
