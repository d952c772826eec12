use serde::Serialize;

use crate::error::{Error, Result};

pub const FORGOTTEN: u8 = 0;
pub const REMEMBERED: u8 = 1;

/// One subject's epoched recording: `n_trials × n_channels × n_samples`
/// microvolt samples stored trial-major, channel-major, sample-minor.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSet {
    pub subject_id: String,
    pub fs: f32,
    pub n_trials: usize,
    pub n_channels: usize,
    pub n_samples: usize,
    pub data: Vec<f32>,
    pub labels: Vec<u8>,
    pub channel_names: Vec<String>,
}

impl EpochSet {
    /// Build and validate in one step.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        subject_id: impl Into<String>,
        fs: f32,
        n_trials: usize,
        n_channels: usize,
        n_samples: usize,
        data: Vec<f32>,
        labels: Vec<u8>,
        channel_names: Vec<String>,
    ) -> Result<Self> {
        let e = EpochSet {
            subject_id: subject_id.into(),
            fs,
            n_trials,
            n_channels,
            n_samples,
            data,
            labels,
            channel_names,
        };
        e.ensure_valid()?;
        Ok(e)
    }

    pub fn signal(&self, trial: usize, channel: usize) -> &[f32] {
        let start = (trial * self.n_channels + channel) * self.n_samples;
        &self.data[start..start + self.n_samples]
    }

    pub fn signal_mut(&mut self, trial: usize, channel: usize) -> &mut [f32] {
        let start = (trial * self.n_channels + channel) * self.n_samples;
        &mut self.data[start..start + self.n_samples]
    }

    pub fn trial(&self, trial: usize) -> &[f32] {
        let len = self.n_channels * self.n_samples;
        &self.data[trial * len..(trial + 1) * len]
    }

    pub fn count_label(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Turn a failing [`validate`] report into an error.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = validate(self);
        match report.first_failure() {
            None => Ok(()),
            Some(c) => Err(Error::invalid(format!(
                "epoch set '{}': {}: {}",
                self.subject_id, c.name, c.detail
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

fn check(name: &'static str, failure: Option<String>) -> Check {
    Check {
        name,
        passed: failure.is_none(),
        detail: failure.unwrap_or_else(|| "ok".to_string()),
    }
}

/// Check every [`EpochSet`] invariant and report each one separately.
pub fn validate(e: &EpochSet) -> ValidationReport {
    let mut checks = Vec::new();

    let dims = if e.n_trials < 1 {
        Some(format!("n_trials = {} (need >= 1)", e.n_trials))
    } else if e.n_channels < 1 {
        Some(format!("n_channels = {} (need >= 1)", e.n_channels))
    } else if e.n_samples < 2 {
        Some(format!("n_samples = {} (need >= 2)", e.n_samples))
    } else {
        None
    };
    checks.push(check("dimensions", dims));

    let expected = e
        .n_trials
        .checked_mul(e.n_channels)
        .and_then(|v| v.checked_mul(e.n_samples));
    let data_len = match expected {
        Some(n) if n == e.data.len() => None,
        Some(n) => Some(format!(
            "data holds {} values, dimensions need {n}",
            e.data.len()
        )),
        None => Some("dimension product overflows".to_string()),
    };
    checks.push(check("data_length", data_len));

    let labels = if e.labels.len() != e.n_trials {
        Some(format!(
            "labels length {} != n_trials {}",
            e.labels.len(),
            e.n_trials
        ))
    } else {
        e.labels
            .iter()
            .position(|&l| l > 1)
            .map(|i| format!("label {} at trial {i} is not 0 or 1", e.labels[i]))
    };
    checks.push(check("labels", labels));

    let names = if e.channel_names.len() != e.n_channels {
        Some(format!(
            "{} channel names for {} channels",
            e.channel_names.len(),
            e.n_channels
        ))
    } else {
        None
    };
    checks.push(check("channel_names", names));

    let fs = if e.fs > 0.0 && e.fs.is_finite() {
        None
    } else {
        Some(format!("fs = {} (need finite > 0)", e.fs))
    };
    checks.push(check("fs", fs));

    let finite = e.data.iter().position(|v| !v.is_finite()).map(|i| {
        let per_trial = (e.n_channels * e.n_samples).max(1);
        let t = i / per_trial;
        let c = (i % per_trial) / e.n_samples.max(1);
        let s = i % e.n_samples.max(1);
        format!(
            "non-finite sample {} at (trial={t}, channel={c}, sample={s})",
            e.data[i]
        )
    });
    checks.push(check("finite", finite));

    ValidationReport { checks }
}

#[cfg(test)]
pub(crate) fn toy_set(n_trials: usize, n_channels: usize, n_samples: usize) -> EpochSet {
    let data = (0..n_trials * n_channels * n_samples)
        .map(|i| ((i * 37 % 101) as f32 - 50.0) * 0.25)
        .collect();
    EpochSet::new(
        "toy",
        250.0,
        n_trials,
        n_channels,
        n_samples,
        data,
        (0..n_trials).map(|t| (t % 2) as u8).collect(),
        (0..n_channels).map(|c| format!("C{c}")).collect(),
    )
    .unwrap()
}
