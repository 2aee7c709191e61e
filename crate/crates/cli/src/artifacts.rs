//! Artifact files written and read by the pipeline stages.
//!
//! Every file is written atomically (temp file + rename) and numeric output
//! uses round-trip decimal formatting, so identical runs produce identical
//! bytes. The one exception is `timings.toml`, which records wall-clock
//! stage timings and is documented as outside the determinism contract.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use delaycast::correct::CorrectedSeries;
use delaycast::dates::Month;
use delaycast::debias::DebiasedDistribution;
use delaycast::fit::{GenerationTrace, WindowFit};
use delaycast::ingest::{ColumnSchema, EventSet, Reject};
use delaycast::mixture::MixtureParams;
use delaycast::pipeline::WindowAnalysis;
use delaycast::synth::GroundTruth;
use delaycast::windows::{DelayHistograms, Window};

use crate::config::PipelineConfig;
use crate::error::StageError;

pub const EVENTS_FILE: &str = "events.csv";
pub const REJECTS_FILE: &str = "rejects.csv";
pub const DATASET_FILE: &str = "dataset.toml";
pub const WINDOWS_FILE: &str = "windows.csv";
pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const CORRECTED_FILE: &str = "corrected.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const TIMINGS_FILE: &str = "timings.toml";
pub const DEBIAS_DIR: &str = "debias";
pub const HISTOGRAMS_DIR: &str = "histograms";
pub const TRACES_DIR: &str = "traces";
pub const TRUTH_DIR: &str = "truth";
pub const TRUTH_TOTALS_FILE: &str = "truth/monthly_totals.csv";
pub const TRUTH_EVENTS_FILE: &str = "truth/events_full.csv";

/// Tracks files written under one output directory so a failing stage can
/// remove its partial outputs.
pub struct ArtifactLog {
    root: PathBuf,
    files: Vec<PathBuf>,
}

impl ArtifactLog {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: impl AsRef<Path>) -> PathBuf {
        self.root.join(name)
    }

    /// Writes `bytes` atomically and records the file for cleanup.
    pub fn write(&mut self, name: impl AsRef<Path>, bytes: &[u8]) -> Result<PathBuf, StageError> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("tmp-partial");
        {
            let mut file = fs::File::create(&tmp)?;
            file.write_all(bytes)?;
            file.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        self.files.push(path.clone());
        Ok(path)
    }

    /// Removes everything written through this log, then prunes empty
    /// artifact subdirectories.
    pub fn cleanup(&self) {
        for file in &self.files {
            let _ = fs::remove_file(file);
        }
        for dir in [DEBIAS_DIR, HISTOGRAMS_DIR, TRACES_DIR, TRUTH_DIR] {
            let _ = fs::remove_dir(self.root.join(dir));
        }
    }
}

fn require(path: &Path, producer: &str) -> Result<(), StageError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(StageError::missing_artifact(path, producer))
    }
}

// ---------------------------------------------------------------------------
// events / rejects
// ---------------------------------------------------------------------------

pub fn render_events(events: &EventSet, schema: &ColumnSchema) -> Result<Vec<u8>, StageError> {
    let mut buf = Vec::new();
    delaycast::ingest::write_events(&mut buf, events, schema)
        .map_err(|e| StageError::data(format!("rendering events: {e}")))?;
    Ok(buf)
}

/// Rejects from every input shard, tagged with the shard they came from.
pub fn render_rejects(per_source: &[(String, Vec<Reject>)]) -> Result<Vec<u8>, StageError> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record([
        "source",
        "line",
        "entity_id",
        "occurred_on",
        "reported_on",
        "reason",
    ])?;
    for (source, rejects) in per_source {
        for r in rejects {
            wtr.write_record([
                source.as_str(),
                &r.line.to_string(),
                &r.entity_id,
                &r.occurred_on,
                &r.reported_on,
                r.reason.code(),
            ])?;
        }
    }
    wtr.into_inner()
        .map_err(|e| StageError::data(format!("rendering rejects: {e}")))
}

pub fn read_events(path: &Path, schema: &ColumnSchema) -> Result<EventSet, StageError> {
    require(path, "ingest")?;
    let file = fs::File::open(path)?;
    let outcome = delaycast::ingest::parse_events(file, schema)
        .map_err(|e| StageError::data(format!("{}: {e}", path.display())))?;
    if !outcome.rejects.is_empty() {
        return Err(StageError::data(format!(
            "{}: {} invalid rows in a pipeline artifact",
            path.display(),
            outcome.rejects.len()
        )));
    }
    Ok(outcome.events)
}

// ---------------------------------------------------------------------------
// dataset metadata
// ---------------------------------------------------------------------------

/// Global facts the fit and correct stages need from the debias stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub cutoff: NaiveDate,
    /// Largest observed delay in the whole data set, in days.
    pub delta_fix: u32,
    pub resolution: u32,
    pub n_events: u64,
    pub window_months: u32,
}

pub fn render_dataset(meta: &DatasetMeta) -> Vec<u8> {
    toml::to_string_pretty(meta)
        .expect("dataset metadata serializes")
        .into_bytes()
}

pub fn read_dataset(path: &Path) -> Result<DatasetMeta, StageError> {
    require(path, "debias")?;
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| StageError::data(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// windows index
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct WindowIndexRow {
    pub window: Window,
    pub n_events: u64,
    pub a_max: u32,
    pub delta_max: u32,
    pub sparse: bool,
    pub degenerate: bool,
}

pub fn render_windows_index(analyses: &[WindowAnalysis]) -> Vec<u8> {
    let mut out = String::from("window_end,start,end,n_events,a_max,delta_max,sparse,degenerate\n");
    for a in analyses {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            a.window.end_month,
            a.window.start,
            a.window.end,
            a.histograms.n_events(),
            a.histograms.a_max(),
            a.histograms.delta_max(),
            a.sparse,
            a.distribution.degenerate()
        ));
    }
    out.into_bytes()
}

pub fn read_windows_index(path: &Path) -> Result<Vec<WindowIndexRow>, StageError> {
    require(path, "debias")?;
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| -> Result<&str, StageError> {
            record
                .get(i)
                .ok_or_else(|| StageError::data(format!("{}: short row", path.display())))
        };
        let parse_err =
            |what: &str, e: String| StageError::data(format!("{}: {what}: {e}", path.display()));
        let end_month: Month = field(0)?
            .parse()
            .map_err(|e: delaycast::dates::MonthError| parse_err("window_end", e.to_string()))?;
        let start: NaiveDate = field(1)?
            .parse()
            .map_err(|e: chrono::ParseError| parse_err("start", e.to_string()))?;
        let end: NaiveDate = field(2)?
            .parse()
            .map_err(|e: chrono::ParseError| parse_err("end", e.to_string()))?;
        let n_events: u64 = field(3)?
            .parse()
            .map_err(|e: std::num::ParseIntError| parse_err("n_events", e.to_string()))?;
        let a_max: u32 = field(4)?
            .parse()
            .map_err(|e: std::num::ParseIntError| parse_err("a_max", e.to_string()))?;
        let delta_max: u32 = field(5)?
            .parse()
            .map_err(|e: std::num::ParseIntError| parse_err("delta_max", e.to_string()))?;
        let sparse: bool = field(6)?
            .parse()
            .map_err(|e: std::str::ParseBoolError| parse_err("sparse", e.to_string()))?;
        let degenerate: bool = field(7)?
            .parse()
            .map_err(|e: std::str::ParseBoolError| parse_err("degenerate", e.to_string()))?;
        rows.push(WindowIndexRow {
            window: Window {
                start,
                end,
                end_month,
            },
            n_events,
            a_max,
            delta_max,
            sparse,
            degenerate,
        });
    }
    if rows.is_empty() {
        return Err(StageError::data(format!(
            "{}: no windows recorded",
            path.display()
        )));
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// per-window histograms and debiased distributions
// ---------------------------------------------------------------------------

pub fn window_file(dir: &str, end_month: Month) -> String {
    format!("{dir}/{end_month}.csv")
}

pub fn render_histograms(h: &DelayHistograms) -> Vec<u8> {
    let mut out = String::from("lag,h_A,h_delta\n");
    for (lag, age, delay) in h.rows() {
        out.push_str(&format!("{lag},{age},{delay}\n"));
    }
    out.into_bytes()
}

/// Reads a `lag,h_A,h_delta` dump back into histograms.
pub fn read_histograms(path: &Path, resolution: u32) -> Result<DelayHistograms, StageError> {
    require(path, "debias")?;
    let mut reader = csv::Reader::from_path(path)?;
    let mut ages = Vec::new();
    let mut delays = Vec::new();
    for record in reader.records() {
        let record = record?;
        let lag: u32 = parse_field(&record, 0, path, "lag")?;
        let age: u64 = parse_field(&record, 1, path, "h_A")?;
        let delay: u64 = parse_field(&record, 2, path, "h_delta")?;
        if age > 0 {
            ages.push((lag, age));
        }
        if delay > 0 {
            delays.push((lag, delay));
        }
    }
    DelayHistograms::from_counts(resolution, &ages, &delays)
        .map_err(|e| StageError::data(format!("{}: {e}", path.display())))
}

pub fn render_debias(dist: &DebiasedDistribution) -> Vec<u8> {
    let mut out = String::from("lag,f,F,degenerate_flag\n");
    let flag = dist.degenerate();
    for (lag, f, cdf) in dist.rows() {
        out.push_str(&format!("{lag},{f},{cdf},{flag}\n"));
    }
    out.into_bytes()
}

pub fn read_debias(path: &Path, resolution: u32) -> Result<DebiasedDistribution, StageError> {
    require(path, "debias")?;
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    let mut degenerate = false;
    for record in reader.records() {
        let record = record?;
        let lag: u32 = parse_field(&record, 0, path, "lag")?;
        let f: f64 = parse_field(&record, 1, path, "f")?;
        let cdf: f64 = parse_field(&record, 2, path, "F")?;
        let flag: bool = parse_field(&record, 3, path, "degenerate")?;
        degenerate |= flag;
        rows.push((lag, f, cdf));
    }
    DebiasedDistribution::from_rows(resolution, &rows, degenerate)
        .map_err(|e| StageError::data(format!("{}: {e}", path.display())))
}

fn parse_field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    index: usize,
    path: &Path,
    name: &str,
) -> Result<T, StageError>
where
    T::Err: std::fmt::Display,
{
    record
        .get(index)
        .ok_or_else(|| StageError::data(format!("{}: missing column {name}", path.display())))?
        .parse()
        .map_err(|e| StageError::data(format!("{}: bad {name}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// fit outputs
// ---------------------------------------------------------------------------

pub fn render_trajectories(fits: &[WindowFit]) -> Vec<u8> {
    let mut out = String::from("window_end,alpha,scale,mu,sigma,objective,converged\n");
    for fit in fits {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            fit.window.end_month,
            fit.theta.alpha(),
            fit.theta.scale(),
            fit.theta.mu(),
            fit.theta.sigma(),
            fit.objective,
            fit.converged
        ));
    }
    out.into_bytes()
}

pub fn read_trajectories(path: &Path, window_months: u32) -> Result<Vec<WindowFit>, StageError> {
    require(path, "fit")?;
    let mut reader = csv::Reader::from_path(path)?;
    let mut fits = Vec::new();
    for record in reader.records() {
        let record = record?;
        let end_month: Month = parse_field(&record, 0, path, "window_end")?;
        let alpha: f64 = parse_field(&record, 1, path, "alpha")?;
        let scale: f64 = parse_field(&record, 2, path, "scale")?;
        let mu: f64 = parse_field(&record, 3, path, "mu")?;
        let sigma: f64 = parse_field(&record, 4, path, "sigma")?;
        let objective: f64 = parse_field(&record, 5, path, "objective")?;
        let converged: bool = parse_field(&record, 6, path, "converged")?;
        let theta = MixtureParams::new(alpha, scale, mu, sigma)
            .map_err(|e| StageError::data(format!("{}: {e}", path.display())))?;
        fits.push(WindowFit {
            window: Window::ending_at(end_month, window_months),
            theta,
            objective,
            evaluations: 0,
            generations: 0,
            converged,
            sparse: false,
            degenerate: false,
            trace: Vec::new(),
        });
    }
    if fits.is_empty() {
        return Err(StageError::data(format!(
            "{}: no window fits recorded",
            path.display()
        )));
    }
    Ok(fits)
}

pub fn render_trace(trace: &[GenerationTrace]) -> Vec<u8> {
    let mut out = String::from("generation,best_objective,alpha,scale,mu,sigma\n");
    for t in trace {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            t.generation,
            t.best_objective,
            t.params.alpha(),
            t.params.scale(),
            t.params.mu(),
            t.params.sigma()
        ));
    }
    out.into_bytes()
}

// ---------------------------------------------------------------------------
// corrected series
// ---------------------------------------------------------------------------

pub fn render_corrected(series: &CorrectedSeries) -> Vec<u8> {
    let mut out =
        String::from("month,reported,age_days,cdf,corrected,year_ahead_factor,year_ahead\n");
    for row in &series.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.month,
            row.reported,
            row.age_days,
            row.cdf,
            row.corrected,
            row.year_ahead_factor,
            row.year_ahead
        ));
    }
    out.into_bytes()
}

/// Reads back `month,reported,...,year_ahead` rows (used by tests and the
/// validation workflow).
pub fn read_corrected(path: &Path) -> Result<Vec<CorrectedCsvRow>, StageError> {
    require(path, "correct")?;
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        rows.push(CorrectedCsvRow {
            month: parse_field(&record, 0, path, "month")?,
            reported: parse_field(&record, 1, path, "reported")?,
            age_days: parse_field(&record, 2, path, "age_days")?,
            cdf: parse_field(&record, 3, path, "cdf")?,
            corrected: parse_field(&record, 4, path, "corrected")?,
            year_ahead_factor: parse_field(&record, 5, path, "year_ahead_factor")?,
            year_ahead: parse_field(&record, 6, path, "year_ahead")?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct CorrectedCsvRow {
    pub month: Month,
    pub reported: u64,
    pub age_days: u32,
    pub cdf: f64,
    pub corrected: f64,
    pub year_ahead_factor: f64,
    pub year_ahead: f64,
}

// ---------------------------------------------------------------------------
// synthetic ground truth
// ---------------------------------------------------------------------------

pub fn render_truth_totals(truth: &GroundTruth) -> Vec<u8> {
    let mut out = String::from("month,count\n");
    for (month, count) in &truth.monthly_totals {
        out.push_str(&format!("{month},{count}\n"));
    }
    out.into_bytes()
}

pub fn read_truth_totals(path: &Path) -> Result<BTreeMap<Month, u64>, StageError> {
    require(path, "synth")?;
    let mut reader = csv::Reader::from_path(path)?;
    let mut totals = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let month: Month = parse_field(&record, 0, path, "month")?;
        let count: u64 = parse_field(&record, 1, path, "count")?;
        totals.insert(month, count);
    }
    Ok(totals)
}

// ---------------------------------------------------------------------------
// manifest and timings
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub run: RunInfo,
    pub config: PipelineConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ingest: Option<IngestSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub windows: Option<WindowsSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correct: Option<CorrectSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunInfo {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
}

impl Manifest {
    pub fn new(command: &str, config: &PipelineConfig) -> Self {
        Self {
            run: RunInfo {
                tool: "delaycast".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                command: command.into(),
                seed: config.seed,
            },
            config: config.clone(),
            ingest: None,
            windows: None,
            fit: None,
            correct: None,
            synth: None,
        }
    }

    pub fn render(&self) -> Vec<u8> {
        toml::to_string_pretty(self)
            .expect("manifest serializes")
            .into_bytes()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestSummary {
    pub inputs: Vec<String>,
    pub rows_parsed: u64,
    pub rows_rejected: u64,
    pub records_after_dedupe: u64,
    pub records_final: u64,
    pub cutoff: NaiveDate,
}

#[derive(Debug, Clone, Serialize)]
pub struct WindowsSummary {
    pub count: u64,
    pub delta_fix: u32,
    pub sparse: Vec<Month>,
    pub degenerate: Vec<Month>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub fitted: u64,
    pub converged: u64,
    pub failed: Vec<Month>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrectSummary {
    pub months: u64,
    pub extrapolated: Vec<Month>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthSummary {
    pub scenario: String,
    pub events_observed: u64,
    pub events_total: u64,
}

/// Wall-clock stage timings. Deliberately kept out of the manifest: timing
/// is the one output that legitimately differs between identical runs.
pub fn render_timings(timings: &BTreeMap<String, u128>) -> Vec<u8> {
    let mut out =
        String::from("# wall-clock milliseconds; not covered by the determinism contract\n");
    for (stage, millis) in timings {
        out.push_str(&format!("{stage} = {millis}\n"));
    }
    out.into_bytes()
}
