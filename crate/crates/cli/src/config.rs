//! Pipeline configuration: defaults, TOML config file, command-line
//! overrides, in that precedence order (flags win). The effective
//! configuration is echoed into the run manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use delaycast::correct::{AgeReference, CorrectionConfig};
use delaycast::dates::Month;
use delaycast::fit::{FitConfig, ParamBounds};
use delaycast::ingest::{ColumnSchema, DefaultDatePolicy};
use delaycast::windows::WindowConfig;

use crate::error::StageError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Input event file (ingest/run) or scenario file (synth).
    pub input: Option<PathBuf>,
    pub schema: ColumnSchema,
    /// Handling of January-1 default-dated occurrences.
    pub jan1: DefaultDatePolicy,
    pub seed: u64,
    pub window_months: u32,
    pub step_months: u32,
    pub first_end: Option<Month>,
    pub last_end: Option<Month>,
    /// Lag bin width in days.
    pub lag_resolution: u32,
    /// Windows with fewer events are flagged sparse.
    pub min_window_events: u64,
    pub max_generations: u32,
    pub population: Option<usize>,
    pub initial_step: f64,
    pub stall_generations: u32,
    pub stall_tolerance: f64,
    pub bounds: ParamBounds,
    /// Optional extra weight pair on the objective's two matching terms.
    pub stability_weights: Option<(f64, f64)>,
    pub age_reference: AgeReference,
    pub year_days: u32,
    pub emit_histograms: bool,
    pub trace: bool,
    pub threads: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let fit = FitConfig::default();
        Self {
            input: None,
            schema: ColumnSchema::default(),
            jan1: DefaultDatePolicy::Redistribute,
            seed: 0,
            window_months: 24,
            step_months: 1,
            first_end: None,
            last_end: None,
            lag_resolution: 1,
            min_window_events: 100,
            max_generations: fit.max_generations,
            population: fit.population,
            initial_step: fit.initial_step,
            stall_generations: fit.stall_generations,
            stall_tolerance: fit.stall_tolerance,
            bounds: ParamBounds::default(),
            stability_weights: None,
            age_reference: AgeReference::MidMonth,
            year_days: 365,
            emit_histograms: false,
            trace: false,
            threads: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, StageError> {
        match path {
            None => Ok(Self::default()),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    StageError::validation(format!("cannot read config {}: {e}", path.display()))
                })?;
                toml::from_str(&text).map_err(|e| {
                    StageError::validation(format!("invalid config {}: {e}", path.display()))
                })
            }
        }
    }

    pub fn validate(&self) -> Result<(), StageError> {
        if self.window_months == 0 || self.step_months == 0 {
            return Err(StageError::validation(
                "window-months and step-months must be at least 1",
            ));
        }
        if self.lag_resolution == 0 {
            return Err(StageError::validation("lag-resolution must be at least 1"));
        }
        if self.year_days == 0 {
            return Err(StageError::validation("year-days must be at least 1"));
        }
        if self.initial_step.is_nan() || self.initial_step <= 0.0 {
            return Err(StageError::validation("initial-step must be positive"));
        }
        if let Some((w1, w2)) = self.stability_weights {
            if !(w1.is_finite() && w2.is_finite()) || w1 < 0.0 || w2 < 0.0 {
                return Err(StageError::validation(
                    "stability-weights must be non-negative",
                ));
            }
        }
        if let (Some(first), Some(last)) = (self.first_end, self.last_end) {
            if first > last {
                return Err(StageError::validation(format!(
                    "first-end {first} is after last-end {last}"
                )));
            }
        }
        Ok(())
    }

    pub fn window_config(&self) -> WindowConfig {
        WindowConfig {
            length_months: self.window_months,
            step_months: self.step_months,
            first_end: self.first_end,
            last_end: self.last_end,
        }
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            seed: self.seed,
            max_generations: self.max_generations,
            population: self.population,
            initial_step: self.initial_step,
            stall_generations: self.stall_generations,
            stall_tolerance: self.stall_tolerance,
            bounds: self.bounds,
            stability_weights: self.stability_weights,
            trace: self.trace,
            ..FitConfig::default()
        }
    }

    pub fn correction_config(&self) -> CorrectionConfig {
        CorrectionConfig {
            age_reference: self.age_reference,
            year_days: self.year_days,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_roundtrip() {
        let config = PipelineConfig {
            seed: 9,
            first_end: Some("2014-06".parse().unwrap()),
            stability_weights: Some((1.0, 2.0)),
            ..PipelineConfig::default()
        };
        let text = toml::to_string_pretty(&config).unwrap();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.seed, 9);
        assert_eq!(back.first_end, config.first_end);
        assert_eq!(back.stability_weights, Some((1.0, 2.0)));
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = toml::from_str::<PipelineConfig>("not_a_setting = 1").unwrap_err();
        assert!(err.to_string().contains("not_a_setting"));
    }
}
