//! End-to-end runs driven by a JSON configuration, and the stage commands
//! behind the `memtrace` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{load_epochs, save_epochs, BandSet, ChannelLayout, EpochSet};
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport, LosoOptions, ModelReport, ModelSpec, ReportFormat};
use crate::nn::{CnnConfig, MlpConfig, ModelConfig, TrainConfig};
use crate::preprocess::{preprocess_pipeline, PreprocessConfig};
use crate::rng::sub_seed;
use crate::spectral::{self, FeatureTensor, MeshMap};
use crate::svm::SvmConfig;
use crate::synth::{generate_subject, SynthSpec};

pub const SEED_ENV: &str = "MEMTRACE_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Svm,
    Mlp,
    Cnn,
}

impl ModelKind {
    fn seed_stream(self) -> u64 {
        match self {
            ModelKind::Svm => 1,
            ModelKind::Mlp => 2,
            ModelKind::Cnn => 3,
        }
    }
}

/// Where the trials come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum Input {
    /// Generate a cohort; its seed is replaced by the run seed.
    Synth(SynthSpec),
    /// Directory of raw `.epo` files, preprocessed on the fly.
    Epochs(PathBuf),
    /// Directory of `.epo` files that are already preprocessed.
    Preprocessed(PathBuf),
    /// Directory of `<subject>.features.csv` files.
    Features(PathBuf),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub rebalance: bool,
    pub best_epoch: bool,
    pub save_models: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Label written into reports, e.g. `picture` or `location`.
    pub task: String,
    pub input: Input,
    pub preprocess: PreprocessConfig,
    pub bands: BandSet,
    /// Channel layout JSON; the built-in 60-channel layout when absent.
    pub layout: Option<PathBuf>,
    pub models: Vec<ModelKind>,
    pub svm: SvmConfig,
    pub mlp: MlpConfig,
    pub cnn: CnnConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            task: "picture".to_string(),
            input: Input::Synth(SynthSpec::default()),
            preprocess: PreprocessConfig::default(),
            bands: BandSet::default(),
            layout: None,
            models: vec![ModelKind::Svm, ModelKind::Mlp, ModelKind::Cnn],
            svm: SvmConfig::default(),
            mlp: MlpConfig::default(),
            cnn: CnnConfig::default(),
            train: TrainConfig::default(),
            eval: EvalOptions::default(),
            output_dir: PathBuf::from("memtrace_out"),
        }
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Reads a JSON config; unknown keys are rejected by name.
pub fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// `MEMTRACE_SEED` if set.
pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}='{s}' is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        parse_json(path)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.models.is_empty() {
            return bad("at least one model is required".to_string());
        }
        for (i, m) in self.models.iter().enumerate() {
            if self.models[..i].contains(m) {
                return bad(format!("model {m:?} listed twice"));
            }
        }
        if let Some(p) = &self.layout {
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "layout file not found"),
                ));
            }
        }
        match &self.input {
            Input::Synth(s) => s.validate()?,
            Input::Epochs(p) | Input::Preprocessed(p) | Input::Features(p) => {
                if !p.is_dir() {
                    return Err(Error::io(
                        p,
                        std::io::Error::new(
                            std::io::ErrorKind::NotFound,
                            "input directory not found",
                        ),
                    ));
                }
            }
        }
        self.train.validate()?;
        Ok(())
    }

    fn layout(&self) -> Result<ChannelLayout> {
        match &self.layout {
            Some(p) => ChannelLayout::load(p),
            None => Ok(ChannelLayout::default()),
        }
    }
}

/// Per-subject features ready for evaluation.
pub struct SubjectFeatures {
    pub subject_id: String,
    pub features: FeatureTensor,
    pub labels: Vec<u8>,
}

fn subject_features(
    e: &EpochSet,
    cfg: &PreprocessConfig,
    bands: &BandSet,
    raw: bool,
) -> Result<SubjectFeatures> {
    let clean = if raw {
        preprocess_pipeline(e, cfg)?
    } else {
        e.clone()
    };
    Ok(SubjectFeatures {
        subject_id: e.subject_id.clone(),
        features: spectral::features(&clean, bands)?,
        labels: e.labels.clone(),
    })
}

/// Sorted files in `dir` whose names end in `suffix`.
pub fn list_files(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.ends_with(suffix))
        {
            out.push(p);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::invalid(format!(
            "no *{suffix} files in {}",
            dir.display()
        )));
    }
    Ok(out)
}

fn stem(path: &Path, suffix: &str) -> String {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default();
    name.strip_suffix(suffix).unwrap_or(name).to_string()
}

/// Loads or generates every subject and reduces each to band powers,
/// one subject at a time so raw signals never pile up.
pub fn cohort_features(cfg: &RunConfig) -> Result<Vec<SubjectFeatures>> {
    match &cfg.input {
        Input::Synth(spec) => {
            let spec = SynthSpec {
                seed: cfg.seed,
                ..spec.clone()
            };
            (0..spec.n_subjects)
                .into_par_iter()
                .map(|k| {
                    let e = generate_subject(&spec, k)?;
                    subject_features(&e, &cfg.preprocess, &cfg.bands, true)
                })
                .collect()
        }
        Input::Epochs(dir) | Input::Preprocessed(dir) => {
            let raw = matches!(cfg.input, Input::Epochs(_));
            list_files(dir, ".epo")?
                .par_iter()
                .map(|p| subject_features(&load_epochs(p)?, &cfg.preprocess, &cfg.bands, raw))
                .collect()
        }
        Input::Features(dir) => list_files(dir, ".features.csv")?
            .par_iter()
            .map(|p| {
                let (features, labels) = spectral::read_features_csv(p, &cfg.bands)?;
                Ok(SubjectFeatures {
                    subject_id: stem(p, ".features.csv"),
                    features,
                    labels,
                })
            })
            .collect(),
    }
}

/// Fills in the input sizes the data dictates and applies the run seed.
pub fn resolve(cfg: &RunConfig, n_channels: usize) -> RunConfig {
    let mut r = cfg.clone();
    let nb = r.bands.len();
    r.mlp.input_dim = nb * n_channels;
    r.cnn.in_channels = nb;
    r.train.seed = r.seed;
    r.svm.seed = r.seed;
    if let Input::Synth(s) = &mut r.input {
        s.seed = r.seed;
    }
    r
}

pub fn model_spec(cfg: &RunConfig, kind: ModelKind) -> ModelSpec {
    match kind {
        ModelKind::Svm => ModelSpec::Svm(cfg.svm.clone()),
        ModelKind::Mlp => ModelSpec::Net(ModelConfig::Mlp(cfg.mlp.clone()), cfg.train.clone()),
        ModelKind::Cnn => ModelSpec::Net(ModelConfig::Cnn(cfg.cnn.clone()), cfg.train.clone()),
    }
}

pub struct RunOutput {
    pub config: RunConfig,
    pub report: EvalReport,
}

/// Features → LOSO for every configured model. Pure computation; see
/// [`write_outputs`] for the files.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let subjects = cohort_features(cfg)?;
    let first = subjects
        .first()
        .ok_or_else(|| Error::invalid("cohort is empty".to_string()))?;
    let names = first.features.channel_names.clone();
    if let Some(s) = subjects.iter().find(|s| s.features.channel_names != names) {
        return Err(Error::invalid(format!(
            "subject {} has a different channel list",
            s.subject_id
        )));
    }
    let resolved = resolve(cfg, names.len());
    let needs_mesh = resolved.models.contains(&ModelKind::Cnn);
    let mesh = if needs_mesh {
        Some(MeshMap::new(
            resolved.bands.len(),
            &names,
            &resolved.layout()?,
        )?)
    } else {
        None
    };
    let parts = subjects
        .into_iter()
        .map(|s| (s.subject_id, spectral::flatten(&s.features), s.labels))
        .collect();
    let data = eval::Dataset::from_subjects(parts, mesh)?;

    let mut reports = Vec::new();
    for &kind in &resolved.models {
        let opts = LosoOptions {
            seed: sub_seed(resolved.seed, kind.seed_stream()),
            rebalance: resolved.eval.rebalance,
            best_epoch: resolved.eval.best_epoch,
            keep_models: resolved.eval.save_models,
        };
        log::info!("LOSO for {kind:?} over {} subjects", data.n_subjects());
        reports.push(eval::loso(
            &data,
            &model_spec(&resolved, kind),
            &resolved.task,
            &opts,
        )?);
    }
    Ok(RunOutput {
        config: resolved,
        report: EvalReport::new(reports),
    })
}

fn loss_curves_csv(reports: &[ModelReport]) -> String {
    let mut s = String::from("model,fold,subject,epoch,loss\n");
    for m in reports {
        for f in &m.folds {
            for (e, l) in f.loss_curve.iter().enumerate() {
                let _ = writeln!(s, "{},{},{},{},{:.9}", m.model, f.fold, f.subject, e + 1, l);
            }
        }
    }
    s
}

pub const REPORT_JSON: &str = "report.json";

/// Writes `resolved_config.json`, `report.json`, `folds.csv`,
/// `pooled_confusion.json`, `loss_curves.csv`, `summary.txt` and, when
/// asked for, `models/<model>_<subject>.bin`.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write(
        &dir.join("resolved_config.json"),
        serde_json::to_string_pretty(&out.config)? + "\n",
    )?;
    write(
        &dir.join(REPORT_JSON),
        eval::render(&out.report, ReportFormat::Json)?,
    )?;
    write(
        &dir.join("folds.csv"),
        eval::render(&out.report, ReportFormat::Csv)?,
    )?;
    write(
        &dir.join("summary.txt"),
        eval::render(&out.report, ReportFormat::Text)?,
    )?;
    write(
        &dir.join("pooled_confusion.json"),
        eval::report::pooled_json(&out.report)?,
    )?;
    write(
        &dir.join("loss_curves.csv"),
        loss_curves_csv(&out.report.reports),
    )?;
    if out.config.eval.save_models {
        let models = dir.join("models");
        create_dir(&models)?;
        for m in &out.report.reports {
            for f in &m.folds {
                if let Some(bytes) = &f.model_bytes {
                    write(
                        &models.join(format!("{}_{}.bin", m.model, f.subject)),
                        bytes,
                    )?;
                }
            }
        }
    }
    Ok(())
}

/// Runs `f` on a pool of `jobs` threads.
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Command-line adjustments applied on top of a loaded run config.
#[derive(Debug, Clone, Default)]
pub struct LosoOverrides {
    pub output_dir: Option<PathBuf>,
    pub best_epoch: bool,
    pub rebalance: bool,
}

/// `loso` subcommand: load config, apply `MEMTRACE_SEED` and overrides,
/// run on `jobs` threads and write outputs.
pub fn cmd_loso(config: &Path, over: &LosoOverrides, jobs: usize) -> Result<RunOutput> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(seed) = seed_from_env()? {
        cfg.seed = seed;
    }
    if let Some(d) = &over.output_dir {
        cfg.output_dir = d.clone();
    }
    cfg.eval.best_epoch |= over.best_epoch;
    cfg.eval.rebalance |= over.rebalance;
    let out = with_jobs(jobs, || run(&cfg))??;
    write_outputs(&out, &cfg.output_dir)?;
    Ok(out)
}

/// `synth` subcommand: one `<id>.epo` (plus sidecar) per subject.
pub fn cmd_synth(spec: &SynthSpec, out_dir: &Path) -> Result<Vec<PathBuf>> {
    spec.validate()?;
    if spec.n_subjects < 1 {
        return Err(Error::invalid("n_subjects must be at least 1".to_string()));
    }
    create_dir(out_dir)?;
    (0..spec.n_subjects)
        .into_par_iter()
        .map(|k| {
            let e = generate_subject(spec, k)?;
            let p = out_dir.join(format!("{}.epo", e.subject_id));
            save_epochs(&e, &p)?;
            Ok(p)
        })
        .collect()
}

/// `preprocess` subcommand: every `.epo` in `in_dir` to 250 Hz, filtered
/// and re-referenced, under the same name in `out_dir`.
pub fn cmd_preprocess(
    in_dir: &Path,
    out_dir: &Path,
    cfg: &PreprocessConfig,
) -> Result<Vec<PathBuf>> {
    let files = list_files(in_dir, ".epo")?;
    create_dir(out_dir)?;
    files
        .par_iter()
        .map(|p| {
            let e = preprocess_pipeline(&load_epochs(p)?, cfg)?;
            let dst = out_dir.join(p.file_name().expect("listed files have names"));
            save_epochs(&e, &dst)?;
            Ok(dst)
        })
        .collect()
}

/// `features` subcommand: `<id>.features.csv` and `<id>.mesh.bin` per
/// preprocessed `.epo` file.
pub fn cmd_features(
    in_dir: &Path,
    out_dir: &Path,
    bands: &BandSet,
    layout: &ChannelLayout,
) -> Result<Vec<PathBuf>> {
    let files = list_files(in_dir, ".epo")?;
    create_dir(out_dir)?;
    files
        .par_iter()
        .map(|p| {
            let e = load_epochs(p)?;
            let t = spectral::features(&e, bands)?;
            let csv = out_dir.join(format!("{}.features.csv", e.subject_id));
            spectral::write_features_csv(&csv, &t, &e.labels)?;
            spectral::write_mesh_blob(
                &out_dir.join(format!("{}.mesh.bin", e.subject_id)),
                &t,
                layout,
            )?;
            Ok(csv)
        })
        .collect()
}

/// `report` subcommand: re-render a finished run.
pub fn cmd_report(results_dir: &Path, format: ReportFormat) -> Result<String> {
    let path = results_dir.join(REPORT_JSON);
    let report: EvalReport = serde_json::from_str(&read_to_string(&path)?)?;
    eval::render(&report, format)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dir: &Path) -> RunConfig {
        RunConfig {
            seed: 5,
            input: Input::Synth(SynthSpec {
                n_subjects: 3,
                trials_per_subject: 12,
                fs: 250.0,
                ..SynthSpec::default().with_separation("alpha", 6.0).unwrap()
            }),
            models: vec![ModelKind::Svm, ModelKind::Mlp],
            train: TrainConfig {
                epochs: 2,
                ..TrainConfig::default()
            },
            output_dir: dir.to_path_buf(),
            ..RunConfig::default()
        }
    }

    #[test]
    fn unknown_key_names_the_key() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        fs::write(&p, r#"{"train": {"learning_rte": 0.1}}"#).unwrap();
        let e = RunConfig::load(&p).unwrap_err();
        assert!(e.to_string().contains("learning_rte"));
        assert_eq!(e.exit_code(), 1);
        let missing = RunConfig::load(&dir.path().join("nope.json")).unwrap_err();
        assert_eq!(missing.exit_code(), 2);
    }

    #[test]
    fn validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small(dir.path());
        c.models.clear();
        assert!(c.validate().is_err());
        c.models = vec![ModelKind::Mlp, ModelKind::Mlp];
        assert!(c.validate().is_err());
        c.models = vec![ModelKind::Mlp];
        c.input = Input::Epochs(dir.path().join("missing"));
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn small_run_writes_everything() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        let out = run(&cfg).unwrap();
        assert_eq!(out.report.reports.len(), 2);
        assert_eq!(out.config.mlp.input_dim, 360);
        write_outputs(&out, dir.path()).unwrap();
        for f in [
            "resolved_config.json",
            "report.json",
            "folds.csv",
            "summary.txt",
            "pooled_confusion.json",
            "loss_curves.csv",
        ] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        let back: RunConfig = parse_json(&dir.path().join("resolved_config.json")).unwrap();
        assert_eq!(back, out.config);
        let text = cmd_report(dir.path(), ReportFormat::Text).unwrap();
        assert!(text.contains("svm"));
    }
}
