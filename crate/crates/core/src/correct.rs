//! Corrected monthly count series.
//!
//! Each month's reported count is divided by the fitted mixture's
//! renormalized CDF evaluated at the month's age (days from the month's
//! reference day to the cutoff): the CDF is the expected proportion of that
//! month's events already reported. The year-ahead variant divides by
//! `F(a) / F(a + 1y)` instead, predicting the count that will have been
//! reported one year past the cutoff rather than the eventual total.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dates::{days_between, Month};
use crate::fit::WindowFit;
use crate::ingest::EventSet;
use crate::mixture::MixtureError;

#[derive(Debug, Error)]
pub enum CorrectError {
    #[error("month {month} is after the cutoff {cutoff}")]
    MonthAfterCutoff { month: Month, cutoff: NaiveDate },
    #[error("no window fits available")]
    NoFits,
    #[error("correction factor {factor} at age {age_days} days is too small to divide by")]
    VanishingFactor { age_days: u32, factor: f64 },
    #[error(transparent)]
    Mixture(#[from] MixtureError),
}

/// Reference day within a month for its age.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgeReference {
    /// The 15th.
    MidMonth,
    /// The last day of the month.
    MonthEnd,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrectionConfig {
    pub age_reference: AgeReference,
    /// Days in the "year ahead" horizon.
    pub year_days: u32,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        Self {
            age_reference: AgeReference::MidMonth,
            year_days: 365,
        }
    }
}

/// Reported event counts by occurrence month. The set only ever holds events
/// reported by the cutoff, so this is the "as of cutoff" view.
pub fn monthly_reported_counts(events: &EventSet) -> BTreeMap<Month, u64> {
    let mut counts = BTreeMap::new();
    for record in events.records() {
        *counts
            .entry(Month::containing(record.occurred_on))
            .or_insert(0) += 1;
    }
    counts
}

/// Correction factor for counts of age `age_days` under `fit`: the
/// renormalized (full-domain) mixture CDF, not the window-truncated one.
pub fn correction_factor(fit: &WindowFit, age_days: u32) -> Result<f64, CorrectError> {
    Ok(fit.theta.renormalized_cdf(age_days as f64)?)
}

/// Year-ahead factor `F(a) / F(a + year)`; dividing a reported count by it
/// predicts the count reported one year past the cutoff.
pub fn year_ahead_factor(
    fit: &WindowFit,
    age_days: u32,
    year_days: u32,
) -> Result<f64, CorrectError> {
    let now = fit.theta.renormalized_cdf(age_days as f64)?;
    let later = fit.theta.renormalized_cdf((age_days + year_days) as f64)?;
    if later <= 0.0 {
        return Err(CorrectError::VanishingFactor {
            age_days: age_days + year_days,
            factor: later,
        });
    }
    Ok(now / later)
}

/// One corrected month.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrectedRow {
    pub month: Month,
    pub reported: u64,
    pub age_days: u32,
    /// Correction CDF at the month's age.
    pub cdf: f64,
    pub corrected: f64,
    pub year_ahead_factor: f64,
    pub year_ahead: f64,
    /// Month predates the earliest fitted window and reuses its fit.
    pub extrapolated: bool,
}

#[derive(Debug, Clone)]
pub struct CorrectedSeries {
    pub rows: Vec<CorrectedRow>,
    pub cutoff: NaiveDate,
}

/// Smallest correction CDF the series will divide by.
pub const FACTOR_FLOOR: f64 = 1e-12;

/// Corrects every month in `counts` (including zero-count months inside the
/// covered range) using, per month, the fit of the window ending at that
/// month; months with no exact window take the nearest earlier fit, and
/// months before the first window reuse the first fit, flagged extrapolated.
pub fn correct_series(
    counts: &BTreeMap<Month, u64>,
    fits: &[WindowFit],
    cutoff: NaiveDate,
    config: &CorrectionConfig,
) -> Result<CorrectedSeries, CorrectError> {
    if fits.is_empty() {
        return Err(CorrectError::NoFits);
    }
    let (first_month, last_month) = match (counts.keys().next(), counts.keys().next_back()) {
        (Some(first), Some(last)) => (*first, *last),
        _ => return Err(CorrectError::NoFits),
    };
    let cutoff_month = Month::containing(cutoff);
    if last_month > cutoff_month {
        return Err(CorrectError::MonthAfterCutoff {
            month: last_month,
            cutoff,
        });
    }

    let mut rows = Vec::new();
    let total_months = last_month.months_since(first_month);
    for offset in 0..=total_months {
        let month = first_month.plus_months(offset);
        let reported = counts.get(&month).copied().unwrap_or(0);

        let reference = match config.age_reference {
            AgeReference::MidMonth => month.mid_day(),
            AgeReference::MonthEnd => month.last_day(),
        };
        // The cutoff month's reference day may land past the cutoff itself.
        let reference = reference.min(cutoff);
        let age_days = days_between(reference, cutoff).max(0) as u32;

        let (fit, extrapolated) = select_fit(fits, month);
        let cdf = correction_factor(fit, age_days)?;
        if cdf < FACTOR_FLOOR {
            return Err(CorrectError::VanishingFactor {
                age_days,
                factor: cdf,
            });
        }
        let corrected = reported as f64 / cdf;
        let ahead_factor = year_ahead_factor(fit, age_days, config.year_days)?;
        let year_ahead = reported as f64 / ahead_factor;

        rows.push(CorrectedRow {
            month,
            reported,
            age_days,
            cdf,
            corrected,
            year_ahead_factor: ahead_factor,
            year_ahead,
            extrapolated,
        });
    }

    Ok(CorrectedSeries { rows, cutoff })
}

/// The fit whose window ends at `month`, else the nearest earlier end, else
/// the earliest fit (flagged extrapolated).
fn select_fit(fits: &[WindowFit], month: Month) -> (&WindowFit, bool) {
    let mut best: Option<&WindowFit> = None;
    for fit in fits {
        if fit.window.end_month <= month {
            best = Some(match best {
                Some(current) if current.window.end_month >= fit.window.end_month => current,
                _ => fit,
            });
        }
    }
    match best {
        Some(fit) => (fit, false),
        None => (&fits[0], true),
    }
}
