//! Stage implementations. Each stage reads the previous stage's artifacts
//! from the output directory and writes its own; `run` chains them through
//! the same files, so a chained run and stage-by-stage invocations produce
//! identical artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use delaycast::correct::{correct_series, monthly_reported_counts, CorrectedSeries};
use delaycast::fit::{fit_all_windows, WindowDistribution, WindowFit};
use delaycast::ingest::{adjust_default_dates, dedupe, parse_records, EventSet};
use delaycast::pipeline::{analyze_windows, PipelineError, WindowAnalysis};
use delaycast::synth::{generate, ScenarioSpec, SynthError};
use delaycast::windows::WindowError;

use crate::artifacts::{
    self, ArtifactLog, CorrectSummary, DatasetMeta, FitSummary, IngestSummary, Manifest,
    SynthSummary, WindowsSummary, CORRECTED_FILE, DATASET_FILE, DEBIAS_DIR, EVENTS_FILE,
    HISTOGRAMS_DIR, MANIFEST_FILE, REJECTS_FILE, TIMINGS_FILE, TRACES_DIR, TRAJECTORIES_FILE,
    TRUTH_EVENTS_FILE, TRUTH_TOTALS_FILE, WINDOWS_FILE,
};
use crate::config::PipelineConfig;
use crate::error::StageError;

/// One input shard: the file to open and the label recorded in the rejects
/// report and manifest (normally the path as given on the command line).
pub struct InputSource {
    pub path: std::path::PathBuf,
    pub label: String,
}

impl InputSource {
    pub fn new(path: &Path) -> Self {
        Self {
            path: path.to_path_buf(),
            label: path.display().to_string(),
        }
    }
}

/// Parses all input shards, merges them, then de-duplicates and applies the
/// default-date policy on the merged set.
pub fn stage_ingest(
    config: &PipelineConfig,
    sources: &[InputSource],
    log: &mut ArtifactLog,
) -> Result<(EventSet, IngestSummary), StageError> {
    if sources.is_empty() {
        return Err(StageError::validation(
            "at least one input file is required",
        ));
    }
    let mut merged = Vec::new();
    let mut rejects_by_source = Vec::new();
    for source in sources {
        let file = fs::File::open(&source.path).map_err(|e| {
            StageError::data(format!("cannot open input {}: {e}", source.path.display()))
        })?;
        let (records, rejects) = parse_records(file, &config.schema)
            .map_err(|e| StageError::data(format!("{}: {e}", source.path.display())))?;
        merged.extend(records);
        rejects_by_source.push((source.label.clone(), rejects));
    }
    let rows_parsed = merged.len() as u64;
    let rows_rejected: u64 = rejects_by_source.iter().map(|(_, r)| r.len() as u64).sum();
    if merged.is_empty() {
        return Err(StageError::data(format!(
            "no valid event records in {} input file(s) ({rows_rejected} rejected)",
            sources.len()
        )));
    }
    let events = EventSet::new(merged).map_err(|e| StageError::data(e.to_string()))?;

    let deduped = dedupe(events);
    let records_after_dedupe = deduped.len() as u64;
    let events = adjust_default_dates(deduped, config.jan1, config.seed);

    log.write(
        REJECTS_FILE,
        &artifacts::render_rejects(&rejects_by_source)?,
    )?;
    log.write(
        EVENTS_FILE,
        &artifacts::render_events(&events, &config.schema)?,
    )?;

    let summary = IngestSummary {
        inputs: sources.iter().map(|s| s.label.clone()).collect(),
        rows_parsed,
        rows_rejected,
        records_after_dedupe,
        records_final: events.len() as u64,
        cutoff: events.cutoff(),
    };
    Ok((events, summary))
}

fn map_pipeline_error(e: PipelineError) -> StageError {
    match &e {
        PipelineError::Window(
            WindowError::EndAfterCutoff { .. }
            | WindowError::EmptyRange { .. }
            | WindowError::ZeroLength
            | WindowError::ZeroResolution,
        ) => StageError::validation(e.to_string()),
        _ => StageError::data(e.to_string()),
    }
}

pub fn stage_debias(
    config: &PipelineConfig,
    log: &mut ArtifactLog,
) -> Result<(Vec<WindowAnalysis>, DatasetMeta, WindowsSummary), StageError> {
    let events = artifacts::read_events(&log.path(EVENTS_FILE), &config.schema)?;
    let analyses = analyze_windows(
        &events,
        &config.window_config(),
        config.lag_resolution,
        config.min_window_events,
    )
    .map_err(map_pipeline_error)?;

    let meta = DatasetMeta {
        cutoff: events.cutoff(),
        delta_fix: events.max_delay_days() as u32,
        resolution: config.lag_resolution,
        n_events: events.len() as u64,
        window_months: config.window_months,
    };
    log.write(DATASET_FILE, &artifacts::render_dataset(&meta))?;
    log.write(WINDOWS_FILE, &artifacts::render_windows_index(&analyses))?;
    for analysis in &analyses {
        log.write(
            artifacts::window_file(DEBIAS_DIR, analysis.window.end_month),
            &artifacts::render_debias(&analysis.distribution),
        )?;
        if config.emit_histograms {
            log.write(
                artifacts::window_file(HISTOGRAMS_DIR, analysis.window.end_month),
                &artifacts::render_histograms(&analysis.histograms),
            )?;
        }
    }

    let summary = WindowsSummary {
        count: analyses.len() as u64,
        delta_fix: meta.delta_fix,
        sparse: analyses
            .iter()
            .filter(|a| a.sparse)
            .map(|a| a.window.end_month)
            .collect(),
        degenerate: analyses
            .iter()
            .filter(|a| a.distribution.degenerate())
            .map(|a| a.window.end_month)
            .collect(),
    };
    Ok((analyses, meta, summary))
}

/// Standalone mode: debias a single dumped histogram file and return the
/// rendered distribution CSV.
pub fn debias_histogram_file(
    config: &PipelineConfig,
    histogram: &Path,
) -> Result<Vec<u8>, StageError> {
    let h = artifacts::read_histograms(histogram, config.lag_resolution)?;
    let dist =
        delaycast::compute_delay_distribution(&h).map_err(|e| StageError::data(e.to_string()))?;
    Ok(artifacts::render_debias(&dist))
}

pub fn stage_fit(
    config: &PipelineConfig,
    log: &mut ArtifactLog,
) -> Result<(Vec<WindowFit>, FitSummary), StageError> {
    let meta = artifacts::read_dataset(&log.path(DATASET_FILE))?;
    let index = artifacts::read_windows_index(&log.path(WINDOWS_FILE))?;

    let mut distributions = Vec::with_capacity(index.len());
    for row in &index {
        let path = log.path(artifacts::window_file(DEBIAS_DIR, row.window.end_month));
        let distribution = artifacts::read_debias(&path, meta.resolution)?;
        distributions.push(WindowDistribution {
            window: row.window,
            distribution,
            sparse: row.sparse,
        });
    }

    let outcome = fit_all_windows(&distributions, meta.delta_fix, &config.fit_config());
    if outcome.fits.is_empty() {
        let detail = outcome
            .failures
            .first()
            .map(|f| format!("{}: {}", f.window.end_month, f.error))
            .unwrap_or_else(|| "no windows".into());
        return Err(StageError::fit(format!(
            "no window could be fitted ({detail})"
        )));
    }

    log.write(
        TRAJECTORIES_FILE,
        &artifacts::render_trajectories(&outcome.fits),
    )?;
    if config.trace {
        for fit in &outcome.fits {
            log.write(
                artifacts::window_file(TRACES_DIR, fit.window.end_month),
                &artifacts::render_trace(&fit.trace),
            )?;
        }
    }

    let summary = FitSummary {
        fitted: outcome.fits.len() as u64,
        converged: outcome.fits.iter().filter(|f| f.converged).count() as u64,
        failed: outcome
            .failures
            .iter()
            .map(|f| f.window.end_month)
            .collect(),
    };
    Ok((outcome.fits, summary))
}

pub fn stage_correct(
    config: &PipelineConfig,
    log: &mut ArtifactLog,
) -> Result<(CorrectedSeries, CorrectSummary), StageError> {
    let events = artifacts::read_events(&log.path(EVENTS_FILE), &config.schema)?;
    let meta = artifacts::read_dataset(&log.path(DATASET_FILE))?;
    let fits = artifacts::read_trajectories(&log.path(TRAJECTORIES_FILE), meta.window_months)?;

    let counts = monthly_reported_counts(&events);
    let series = correct_series(&counts, &fits, events.cutoff(), &config.correction_config())
        .map_err(|e| StageError::data(e.to_string()))?;
    log.write(CORRECTED_FILE, &artifacts::render_corrected(&series))?;

    let summary = CorrectSummary {
        months: series.rows.len() as u64,
        extrapolated: series
            .rows
            .iter()
            .filter(|r| r.extrapolated)
            .map(|r| r.month)
            .collect(),
    };
    Ok((series, summary))
}

pub fn stage_synth(
    config: &PipelineConfig,
    scenario_path: &Path,
    log: &mut ArtifactLog,
) -> Result<SynthSummary, StageError> {
    let text = fs::read_to_string(scenario_path).map_err(|e| {
        StageError::validation(format!(
            "cannot read scenario {}: {e}",
            scenario_path.display()
        ))
    })?;
    let spec: ScenarioSpec = toml::from_str(&text).map_err(|e| {
        StageError::validation(format!("invalid scenario {}: {e}", scenario_path.display()))
    })?;
    let (events, truth) = generate(&spec).map_err(|e| match e {
        SynthError::InvalidSpec(_) => StageError::validation(e.to_string()),
        _ => StageError::data(e.to_string()),
    })?;

    log.write(
        EVENTS_FILE,
        &artifacts::render_events(&events, &config.schema)?,
    )?;
    log.write(TRUTH_TOTALS_FILE, &artifacts::render_truth_totals(&truth))?;
    let full_set =
        EventSet::new(truth.all_events.clone()).map_err(|e| StageError::data(e.to_string()))?;
    log.write(
        TRUTH_EVENTS_FILE,
        &artifacts::render_events(&full_set, &config.schema)?,
    )?;

    Ok(SynthSummary {
        scenario: scenario_path.display().to_string(),
        events_observed: events.len() as u64,
        events_total: truth.all_events.len() as u64,
    })
}

/// Input source for a full pipeline run.
pub enum RunInput<'a> {
    Events(&'a [std::path::PathBuf]),
    Scenario(&'a Path),
}

/// Runs the complete pipeline into `log`'s directory, writing the manifest
/// and stage timings last. On error every written artifact is removed by
/// the caller via `log.cleanup()`.
pub fn run_pipeline(
    config: &PipelineConfig,
    input: RunInput<'_>,
    log: &mut ArtifactLog,
) -> Result<Manifest, StageError> {
    let mut manifest = Manifest::new("run", config);
    let mut timings: BTreeMap<String, u128> = BTreeMap::new();

    let sources = match input {
        RunInput::Events(paths) => paths.iter().map(|p| InputSource::new(p)).collect(),
        RunInput::Scenario(scenario) => {
            let started = Instant::now();
            let summary = stage_synth(config, scenario, log).map_err(|e| e.in_stage("synth"))?;
            timings.insert("synth_ms".into(), started.elapsed().as_millis());
            eprintln!(
                "synth: {} observed of {} generated events",
                summary.events_observed, summary.events_total
            );
            manifest.synth = Some(summary);
            // The input is this run's own synth artifact; label it relative
            // so identical runs into different directories stay
            // byte-identical.
            vec![InputSource {
                path: log.path(EVENTS_FILE),
                label: EVENTS_FILE.to_string(),
            }]
        }
    };

    let started = Instant::now();
    let (_, ingest_summary) =
        stage_ingest(config, &sources, log).map_err(|e| e.in_stage("ingest"))?;
    timings.insert("ingest_ms".into(), started.elapsed().as_millis());
    eprintln!(
        "ingest: {} records ({} rejected), cutoff {}",
        ingest_summary.records_final, ingest_summary.rows_rejected, ingest_summary.cutoff
    );
    manifest.ingest = Some(ingest_summary);

    let started = Instant::now();
    let (_, _, windows_summary) = stage_debias(config, log).map_err(|e| e.in_stage("debias"))?;
    timings.insert("debias_ms".into(), started.elapsed().as_millis());
    eprintln!(
        "debias: {} windows ({} sparse, {} degenerate)",
        windows_summary.count,
        windows_summary.sparse.len(),
        windows_summary.degenerate.len()
    );
    manifest.windows = Some(windows_summary);

    let started = Instant::now();
    let (_, fit_summary) = stage_fit(config, log).map_err(|e| e.in_stage("fit"))?;
    timings.insert("fit_ms".into(), started.elapsed().as_millis());
    eprintln!(
        "fit: {} windows fitted ({} converged, {} failed)",
        fit_summary.fitted,
        fit_summary.converged,
        fit_summary.failed.len()
    );
    manifest.fit = Some(fit_summary);

    let started = Instant::now();
    let (_, correct_summary) = stage_correct(config, log).map_err(|e| e.in_stage("correct"))?;
    timings.insert("correct_ms".into(), started.elapsed().as_millis());
    eprintln!("correct: {} months", correct_summary.months);
    manifest.correct = Some(correct_summary);

    log.write(MANIFEST_FILE, &manifest.render())?;
    log.write(TIMINGS_FILE, &artifacts::render_timings(&timings))?;
    Ok(manifest)
}
