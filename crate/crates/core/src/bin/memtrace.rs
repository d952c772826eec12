use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use memtrace::data::{BandSet, ChannelLayout};
use memtrace::eval::ReportFormat;
use memtrace::pipeline::{self, parse_json};
use memtrace::preprocess::PreprocessConfig;
use memtrace::synth::SynthSpec;
use memtrace::Result;

#[derive(Parser)]
#[command(
    name = "memtrace",
    version,
    about = "EEG band-power memory-outcome prediction"
)]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort as EPO1 files.
    Synth {
        /// JSON synthesis spec; defaults apply to omitted keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Overrides the spec's subject count.
        #[arg(long)]
        subjects: Option<usize>,
        /// Overrides the spec and MEMTRACE_SEED.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for `<subject>.epo` and sidecars.
        #[arg(long, default_value = "synth")]
        out: PathBuf,
    },
    /// Decimate, band-pass and re-reference every .epo file in a directory.
    Preprocess {
        /// Directory of raw .epo files.
        #[arg(long)]
        input: PathBuf,
        /// Output directory for preprocessed .epo files.
        #[arg(long)]
        out: PathBuf,
        /// JSON preprocessing options.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Band-power features (CSV) and scalp meshes for preprocessed epochs.
    Features {
        /// Directory of preprocessed .epo files.
        #[arg(long)]
        input: PathBuf,
        /// Output directory for `.features.csv` and `.mesh.bin` files.
        #[arg(long)]
        out: PathBuf,
        /// Channel layout JSON; the built-in 60-channel layout by default.
        #[arg(long)]
        layout: Option<PathBuf>,
        /// JSON list of bands.
        #[arg(long)]
        bands: Option<PathBuf>,
    },
    /// Leave-one-subject-out evaluation from a run config.
    Loso {
        /// JSON run config.
        #[arg(long)]
        config: PathBuf,
        /// Overrides output_dir from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Folds evaluated in parallel; results do not depend on it.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Score each fold at the training epoch with the best held-out kappa.
        #[arg(long)]
        best_epoch: bool,
        /// Oversample the minority class in every training split.
        #[arg(long)]
        rebalance: bool,
    },
    /// Print the report of a finished run.
    Report {
        /// Output directory of a `loso` run.
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

/// Writes to stdout, treating a closed pipe as success.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth {
            spec,
            subjects,
            seed,
            out,
        } => {
            let mut s: SynthSpec = match spec {
                Some(p) => parse_json(&p)?,
                None => SynthSpec::default(),
            };
            if let Some(n) = subjects {
                s.n_subjects = n;
            }
            if let Some(env) = pipeline::seed_from_env()? {
                s.seed = env;
            }
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let files = pipeline::cmd_synth(&s, &out)?;
            emit(&format!(
                "wrote {} subjects to {}\n",
                files.len(),
                out.display()
            ));
        }
        Command::Preprocess { input, out, config } => {
            let cfg: PreprocessConfig = match config {
                Some(p) => parse_json(&p)?,
                None => PreprocessConfig::default(),
            };
            let files = pipeline::cmd_preprocess(&input, &out, &cfg)?;
            emit(&format!(
                "preprocessed {} files into {}\n",
                files.len(),
                out.display()
            ));
        }
        Command::Features {
            input,
            out,
            layout,
            bands,
        } => {
            let layout = match layout {
                Some(p) => ChannelLayout::load(&p)?,
                None => ChannelLayout::default(),
            };
            let bands: BandSet = match bands {
                Some(p) => parse_json(&p)?,
                None => BandSet::default(),
            };
            let files = pipeline::cmd_features(&input, &out, &bands, &layout)?;
            emit(&format!(
                "wrote features for {} subjects to {}\n",
                files.len(),
                out.display()
            ));
        }
        Command::Loso {
            config,
            out,
            jobs,
            best_epoch,
            rebalance,
        } => {
            let over = pipeline::LosoOverrides {
                output_dir: out,
                best_epoch,
                rebalance,
            };
            let result = pipeline::cmd_loso(&config, &over, jobs)?;
            emit(&memtrace::eval::render(&result.report, ReportFormat::Text)?);
            emit(&format!(
                "outputs in {}\n",
                result.config.output_dir.display()
            ));
        }
        Command::Report { results, format } => {
            let f = match format {
                Format::Text => ReportFormat::Text,
                Format::Csv => ReportFormat::Csv,
                Format::Json => ReportFormat::Json,
            };
            emit(&pipeline::cmd_report(&results, f)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
