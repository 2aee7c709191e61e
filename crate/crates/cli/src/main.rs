//! `delaycast`: correct reported incident count series for reporting delays.
//!
//! Subcommands mirror the pipeline stages (`ingest`, `debias`, `fit`,
//! `correct`), plus `synth` for ground-truth scenarios and `run` for the
//! whole chain. Each stage reads its predecessor's artifacts from the
//! output directory. Exit codes: 0 success, 2 validation error, 3 data
//! error, 4 fit failure.

use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use delaycast::correct::AgeReference;
use delaycast::dates::Month;
use delaycast::ingest::DefaultDatePolicy;

use delaycast_cli::artifacts::ArtifactLog;
use delaycast_cli::config::PipelineConfig;
use delaycast_cli::error::StageError;
use delaycast_cli::stages::{self, RunInput};

#[derive(Parser)]
#[command(
    name = "delaycast",
    version,
    about = "Correct reported incident counts for reporting delays"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, validate, de-duplicate and adjust raw event records
    Ingest {
        /// Delimited event file (entity, occurrence date, report date);
        /// repeatable, shards are merged before de-duplication
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Build rolling windows and debiased delay distributions
    Debias {
        /// Debias a single dumped histogram file to stdout instead
        #[arg(long)]
        histogram: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Fit the delay mixture for every window
    Fit {
        #[command(flatten)]
        common: Common,
    },
    /// Produce corrected and year-ahead-corrected monthly counts
    Correct {
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic event set with known ground truth
    Synth {
        /// Scenario description (TOML)
        #[arg(long)]
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the full pipeline: ingest, debias, fit, correct
    Run {
        /// Delimited event file to process; repeatable
        #[arg(long, conflicts_with = "scenario")]
        input: Vec<PathBuf>,
        /// Generate events from a scenario first, then process them
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Output directory for stage artifacts
    #[arg(long)]
    out: PathBuf,
    /// Configuration file (TOML); flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Clone, Copy, ValueEnum)]
enum Jan1Arg {
    Redistribute,
    Exclude,
    Keep,
}

impl From<Jan1Arg> for DefaultDatePolicy {
    fn from(value: Jan1Arg) -> Self {
        match value {
            Jan1Arg::Redistribute => Self::Redistribute,
            Jan1Arg::Exclude => Self::Exclude,
            Jan1Arg::Keep => Self::Keep,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AgeRefArg {
    MidMonth,
    MonthEnd,
}

impl From<AgeRefArg> for AgeReference {
    fn from(value: AgeRefArg) -> Self {
        match value {
            AgeRefArg::MidMonth => Self::MidMonth,
            AgeRefArg::MonthEnd => Self::MonthEnd,
        }
    }
}

fn parse_weight_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected W1,W2 but got {s:?}"))?;
    let w1: f64 = a
        .trim()
        .parse()
        .map_err(|e| format!("bad first weight: {e}"))?;
    let w2: f64 = b
        .trim()
        .parse()
        .map_err(|e| format!("bad second weight: {e}"))?;
    Ok((w1, w2))
}

/// Command-line overrides applied on top of the config file and defaults.
#[derive(Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    /// January-1 default-date policy
    #[arg(long, value_enum)]
    jan1: Option<Jan1Arg>,
    /// Window length in calendar months
    #[arg(long)]
    window_months: Option<u32>,
    #[arg(long)]
    step_months: Option<u32>,
    /// End month (YYYY-MM) of the first window
    #[arg(long)]
    first_end: Option<Month>,
    /// End month (YYYY-MM) of the last window
    #[arg(long)]
    last_end: Option<Month>,
    /// Lag bin width in days
    #[arg(long)]
    lag_resolution: Option<u32>,
    #[arg(long)]
    min_window_events: Option<u64>,
    #[arg(long)]
    max_generations: Option<u32>,
    #[arg(long)]
    population: Option<usize>,
    #[arg(long)]
    initial_step: Option<f64>,
    #[arg(long)]
    stall_generations: Option<u32>,
    #[arg(long)]
    stall_tolerance: Option<f64>,
    /// Extra weight pair for the two matching terms, as "W1,W2"
    #[arg(long, value_parser = parse_weight_pair)]
    stability_weights: Option<(f64, f64)>,
    /// Reference day for a month's age
    #[arg(long, value_enum)]
    age_reference: Option<AgeRefArg>,
    /// Days in the year-ahead horizon
    #[arg(long)]
    year_days: Option<u32>,
    /// Also dump per-window histograms
    #[arg(long)]
    emit_histograms: bool,
    /// Record per-generation optimizer traces
    #[arg(long)]
    trace: bool,
    /// Cap the worker thread count
    #[arg(long)]
    threads: Option<usize>,
    /// Input column delimiter
    #[arg(long)]
    delimiter: Option<char>,
    #[arg(long)]
    col_entity: Option<String>,
    #[arg(long)]
    col_occurred: Option<String>,
    #[arg(long)]
    col_reported: Option<String>,
}

impl Overrides {
    fn apply(&self, config: &mut PipelineConfig) {
        macro_rules! set {
            ($field:ident) => {
                if let Some(value) = self.$field {
                    config.$field = Some(value);
                }
            };
            ($field:ident, direct) => {
                if let Some(value) = self.$field {
                    config.$field = value;
                }
            };
        }
        set!(seed, direct);
        set!(window_months, direct);
        set!(step_months, direct);
        set!(first_end);
        set!(last_end);
        set!(lag_resolution, direct);
        set!(min_window_events, direct);
        set!(max_generations, direct);
        set!(population);
        set!(initial_step, direct);
        set!(stall_generations, direct);
        set!(stall_tolerance, direct);
        set!(year_days, direct);
        set!(threads);
        if let Some(policy) = self.jan1 {
            config.jan1 = policy.into();
        }
        if let Some(weights) = self.stability_weights {
            config.stability_weights = Some(weights);
        }
        if let Some(reference) = self.age_reference {
            config.age_reference = reference.into();
        }
        if self.emit_histograms {
            config.emit_histograms = true;
        }
        if self.trace {
            config.trace = true;
        }
        if let Some(delimiter) = self.delimiter {
            config.schema.delimiter = delimiter;
        }
        if let Some(ref name) = self.col_entity {
            config.schema.entity = name.clone();
        }
        if let Some(ref name) = self.col_occurred {
            config.schema.occurred = name.clone();
        }
        if let Some(ref name) = self.col_reported {
            config.schema.reported = name.clone();
        }
    }
}

fn effective_config(common: &Common) -> Result<PipelineConfig, StageError> {
    let mut config = PipelineConfig::load(common.config.as_deref())?;
    common.overrides.apply(&mut config);
    config.validate()?;
    if let Some(threads) = config.threads {
        // Ignore the error if a pool already exists (e.g. repeated calls in
        // tests); thread count never affects output bytes.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    Ok(config)
}

fn dispatch(cli: Cli) -> Result<(), StageError> {
    match cli.command {
        Command::Ingest { input, common } => {
            let config = effective_config(&common)?;
            let sources: Vec<stages::InputSource> =
                input.iter().map(|p| stages::InputSource::new(p)).collect();
            let mut log = ArtifactLog::new(&common.out);
            stages::stage_ingest(&config, &sources, &mut log)
                .map(|(_, summary)| {
                    eprintln!(
                        "ingest: {} records ({} rejected), cutoff {}",
                        summary.records_final, summary.rows_rejected, summary.cutoff
                    );
                })
                .map_err(|e| {
                    log.cleanup();
                    e.in_stage("ingest")
                })
        }
        Command::Debias { histogram, common } => {
            let config = effective_config(&common)?;
            if let Some(histogram) = histogram {
                let rendered = stages::debias_histogram_file(&config, &histogram)
                    .map_err(|e| e.in_stage("debias"))?;
                std::io::stdout().write_all(&rendered)?;
                return Ok(());
            }
            let mut log = ArtifactLog::new(&common.out);
            stages::stage_debias(&config, &mut log)
                .map(|(_, _, summary)| {
                    eprintln!(
                        "debias: {} windows ({} sparse, {} degenerate)",
                        summary.count,
                        summary.sparse.len(),
                        summary.degenerate.len()
                    );
                })
                .map_err(|e| {
                    log.cleanup();
                    e.in_stage("debias")
                })
        }
        Command::Fit { common } => {
            let config = effective_config(&common)?;
            let mut log = ArtifactLog::new(&common.out);
            stages::stage_fit(&config, &mut log)
                .map(|(_, summary)| {
                    eprintln!(
                        "fit: {} windows fitted ({} converged, {} failed)",
                        summary.fitted,
                        summary.converged,
                        summary.failed.len()
                    );
                })
                .map_err(|e| {
                    log.cleanup();
                    e.in_stage("fit")
                })
        }
        Command::Correct { common } => {
            let config = effective_config(&common)?;
            let mut log = ArtifactLog::new(&common.out);
            stages::stage_correct(&config, &mut log)
                .map(|(_, summary)| {
                    eprintln!("correct: {} months", summary.months);
                })
                .map_err(|e| {
                    log.cleanup();
                    e.in_stage("correct")
                })
        }
        Command::Synth { scenario, common } => {
            let config = effective_config(&common)?;
            let mut log = ArtifactLog::new(&common.out);
            stages::stage_synth(&config, &scenario, &mut log)
                .map(|summary| {
                    eprintln!(
                        "synth: {} observed of {} generated events",
                        summary.events_observed, summary.events_total
                    );
                })
                .map_err(|e| {
                    log.cleanup();
                    e.in_stage("synth")
                })
        }
        Command::Run {
            input,
            scenario,
            common,
        } => {
            let config = effective_config(&common)?;
            let run_input = match (input.is_empty(), &scenario) {
                (false, None) => RunInput::Events(&input),
                (true, Some(path)) => RunInput::Scenario(path),
                _ => {
                    return Err(StageError::validation(
                        "run needs exactly one of --input or --scenario",
                    ))
                }
            };
            let mut log = ArtifactLog::new(&common.out);
            stages::run_pipeline(&config, run_input, &mut log)
                .map(|_| ())
                .map_err(|e| {
                    log.cleanup();
                    e
                })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("delaycast: error: {error}");
            ExitCode::from(error.exit_code() as u8)
        }
    }
}
