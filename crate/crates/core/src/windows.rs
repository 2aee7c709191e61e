//! Monthly-rolling occurrence windows and the per-window age/delay
//! histograms that feed the debiasing recursion.
//!
//! Window membership is decided by occurrence date alone; ages are always
//! measured against the single global cutoff (the latest report date in the
//! data set), never against per-window cutoffs.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dates::{days_between, Month};
use crate::ingest::{EventRecord, EventSet};

#[derive(Debug, Error)]
pub enum WindowError {
    #[error("event occurred {occurred_on} after cutoff {cutoff}")]
    AfterCutoff {
        occurred_on: NaiveDate,
        cutoff: NaiveDate,
    },
    #[error("last window end {last_end} is after the cutoff month {cutoff_month}")]
    EndAfterCutoff {
        last_end: Month,
        cutoff_month: Month,
    },
    #[error("first window end {first_end} is after last window end {last_end}")]
    EmptyRange { first_end: Month, last_end: Month },
    #[error("window ending {end_month} contains no events")]
    EmptyWindow { end_month: Month },
    #[error("window length and step must be at least one month")]
    ZeroLength,
    #[error("lag resolution must be at least one day")]
    ZeroResolution,
    #[error("histogram lag {lag} is not a multiple of the {resolution}-day resolution")]
    MisalignedLag { lag: u32, resolution: u32 },
    #[error("delay histogram extends to {delta_max} days beyond max age {a_max}")]
    DelayBeyondAge { delta_max: u32, a_max: u32 },
    #[error("age histogram holds {n_age} events but delay histogram holds {n_delay}")]
    CountMismatch { n_age: u64, n_delay: u64 },
    #[error("histogram has no events")]
    EmptyHistogram,
}

/// One rolling occurrence window, identified by the month it ends in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub end_month: Month,
}

impl Window {
    /// The window of `length_months` calendar months ending with `end_month`.
    pub fn ending_at(end_month: Month, length_months: u32) -> Self {
        let start_month = end_month.plus_months(-(length_months as i32 - 1));
        Self {
            start: start_month.first_day(),
            end: end_month.last_day(),
            end_month,
        }
    }

    pub fn contains(&self, occurred_on: NaiveDate) -> bool {
        occurred_on >= self.start && occurred_on <= self.end
    }
}

/// Window enumeration settings. `first_end`/`last_end` default to the first
/// full window end and the cutoff month respectively.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowConfig {
    pub length_months: u32,
    pub step_months: u32,
    pub first_end: Option<Month>,
    pub last_end: Option<Month>,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            length_months: 24,
            step_months: 1,
            first_end: None,
            last_end: None,
        }
    }
}

/// Whole days between an event's occurrence and the data cutoff.
pub fn compute_age(record: &EventRecord, cutoff: NaiveDate) -> Result<u32, WindowError> {
    if record.occurred_on > cutoff {
        return Err(WindowError::AfterCutoff {
            occurred_on: record.occurred_on,
            cutoff,
        });
    }
    Ok(days_between(record.occurred_on, cutoff) as u32)
}

/// Enumerates rolling windows whose end months run from `first_end` to
/// `last_end` inclusive, stepping by `step_months`.
pub fn enumerate_windows(
    events: &EventSet,
    config: &WindowConfig,
) -> Result<Vec<Window>, WindowError> {
    if config.length_months == 0 || config.step_months == 0 {
        return Err(WindowError::ZeroLength);
    }
    let cutoff_month = Month::containing(events.cutoff());
    let earliest = Month::containing(
        events
            .records()
            .iter()
            .map(|r| r.occurred_on)
            .min()
            .expect("event set is non-empty"),
    );
    let first_end = config
        .first_end
        .unwrap_or_else(|| earliest.plus_months(config.length_months as i32 - 1));
    let last_end = config.last_end.unwrap_or(cutoff_month);

    if last_end > cutoff_month {
        return Err(WindowError::EndAfterCutoff {
            last_end,
            cutoff_month,
        });
    }
    if first_end > last_end {
        return Err(WindowError::EmptyRange {
            first_end,
            last_end,
        });
    }

    let mut windows = Vec::new();
    let mut end = first_end;
    while end <= last_end {
        windows.push(Window::ending_at(end, config.length_months));
        end = end.plus_months(config.step_months as i32);
    }
    Ok(windows)
}

/// Paired age and delay histograms for one window, binned at a fixed day
/// resolution. Lags are stored by bin index; accessors report days.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayHistograms {
    resolution: u32,
    h_age: Vec<u64>,
    h_delay: Vec<u64>,
    n_events: u64,
}

impl DelayHistograms {
    /// Builds histograms from `(lag_days, count)` pairs, e.g. read back from
    /// a histogram dump. Lags must be multiples of the resolution.
    pub fn from_counts(
        resolution: u32,
        age_counts: &[(u32, u64)],
        delay_counts: &[(u32, u64)],
    ) -> Result<Self, WindowError> {
        if resolution == 0 {
            return Err(WindowError::ZeroResolution);
        }
        let to_bins = |pairs: &[(u32, u64)]| -> Result<Vec<u64>, WindowError> {
            let mut bins = Vec::new();
            for &(lag, count) in pairs {
                if lag % resolution != 0 {
                    return Err(WindowError::MisalignedLag { lag, resolution });
                }
                let bin = (lag / resolution) as usize;
                if bin >= bins.len() {
                    bins.resize(bin + 1, 0);
                }
                bins[bin] += count;
            }
            while bins.last() == Some(&0) {
                bins.pop();
            }
            Ok(bins)
        };
        let h_age = to_bins(age_counts)?;
        let h_delay = to_bins(delay_counts)?;
        if h_age.is_empty() || h_delay.is_empty() {
            return Err(WindowError::EmptyHistogram);
        }
        if h_delay.len() > h_age.len() {
            return Err(WindowError::DelayBeyondAge {
                delta_max: (h_delay.len() as u32 - 1) * resolution,
                a_max: (h_age.len() as u32 - 1) * resolution,
            });
        }
        let n_age: u64 = h_age.iter().sum();
        let n_delay: u64 = h_delay.iter().sum();
        if n_age != n_delay {
            return Err(WindowError::CountMismatch { n_age, n_delay });
        }
        Ok(Self {
            resolution,
            h_age,
            h_delay,
            n_events: n_age,
        })
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn n_events(&self) -> u64 {
        self.n_events
    }

    /// Largest age, in days (bin representative).
    pub fn a_max(&self) -> u32 {
        (self.h_age.len() as u32 - 1) * self.resolution
    }

    /// Largest observed delay, in days (bin representative).
    pub fn delta_max(&self) -> u32 {
        (self.h_delay.len() as u32 - 1) * self.resolution
    }

    pub fn age_bins(&self) -> &[u64] {
        &self.h_age
    }

    pub fn delay_bins(&self) -> &[u64] {
        &self.h_delay
    }

    pub fn age_count(&self, lag_days: u32) -> u64 {
        self.h_age
            .get((lag_days / self.resolution) as usize)
            .copied()
            .unwrap_or(0)
    }

    pub fn delay_count(&self, lag_days: u32) -> u64 {
        self.h_delay
            .get((lag_days / self.resolution) as usize)
            .copied()
            .unwrap_or(0)
    }

    /// `(lag_days, h_A, h_delta)` rows over the full age range.
    pub fn rows(&self) -> impl Iterator<Item = (u32, u64, u64)> + '_ {
        (0..self.h_age.len()).map(move |bin| {
            (
                bin as u32 * self.resolution,
                self.h_age[bin],
                self.h_delay.get(bin).copied().unwrap_or(0),
            )
        })
    }
}

/// Builds the age and delay histograms for the events occurring inside
/// `window`, regardless of when they were reported. Ages are measured
/// against the set's global cutoff.
pub fn build_histograms(
    events: &EventSet,
    window: &Window,
    resolution: u32,
) -> Result<DelayHistograms, WindowError> {
    if resolution == 0 {
        return Err(WindowError::ZeroResolution);
    }
    let cutoff = events.cutoff();
    let mut h_age: Vec<u64> = Vec::new();
    let mut h_delay: Vec<u64> = Vec::new();
    let mut n_events = 0u64;

    for record in events.records() {
        if !window.contains(record.occurred_on) {
            continue;
        }
        let age_bin = (compute_age(record, cutoff)? / resolution) as usize;
        let delay_bin = (record.delay_days() as u32 / resolution) as usize;
        if age_bin >= h_age.len() {
            h_age.resize(age_bin + 1, 0);
        }
        if delay_bin >= h_delay.len() {
            h_delay.resize(delay_bin + 1, 0);
        }
        h_age[age_bin] += 1;
        h_delay[delay_bin] += 1;
        n_events += 1;
    }

    if n_events == 0 {
        return Err(WindowError::EmptyWindow {
            end_month: window.end_month,
        });
    }
    Ok(DelayHistograms {
        resolution,
        h_age,
        h_delay,
        n_events,
    })
}
