//! Window-level orchestration shared by the CLI stages and tests: enumerate
//! windows, build histograms, debias each one. Windows are independent and
//! processed in parallel; results come back in window order.

use rayon::prelude::*;
use thiserror::Error;

use crate::debias::{compute_delay_distribution, DebiasError, DebiasedDistribution};
use crate::fit::WindowDistribution;
use crate::ingest::EventSet;
use crate::windows::{
    build_histograms, enumerate_windows, DelayHistograms, Window, WindowConfig, WindowError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Debias(#[from] DebiasError),
}

/// One analyzed window: histograms plus the debiased distribution.
#[derive(Debug, Clone)]
pub struct WindowAnalysis {
    pub window: Window,
    pub histograms: DelayHistograms,
    pub distribution: DebiasedDistribution,
    pub sparse: bool,
}

impl WindowAnalysis {
    pub fn to_window_distribution(&self) -> WindowDistribution {
        WindowDistribution {
            window: self.window,
            distribution: self.distribution.clone(),
            sparse: self.sparse,
        }
    }
}

/// Builds and debiases the histograms of every rolling window. Windows with
/// fewer than `min_window_events` events are flagged sparse (their fit is
/// still attempted downstream).
pub fn analyze_windows(
    events: &EventSet,
    config: &WindowConfig,
    resolution: u32,
    min_window_events: u64,
) -> Result<Vec<WindowAnalysis>, PipelineError> {
    let windows = enumerate_windows(events, config)?;
    windows
        .into_par_iter()
        .map(|window| {
            let histograms = build_histograms(events, &window, resolution)?;
            let distribution = compute_delay_distribution(&histograms)?;
            let sparse = histograms.n_events() < min_window_events;
            Ok(WindowAnalysis {
                window,
                histograms,
                distribution,
                sparse,
            })
        })
        .collect()
}
