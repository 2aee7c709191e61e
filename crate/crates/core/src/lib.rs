//! Correction of reported incident count series for reporting delays.
//!
//! Incident databases fill in slowly: an event that happened this quarter
//! may only be reported months or years from now, so recent reported counts
//! understate reality. This crate estimates the reporting-delay distribution
//! from the (right-truncated) data itself, fits a non-stationary parametric
//! mixture per rolling window, and divides reported monthly counts by the
//! fitted probability of having been reported by the cutoff.
//!
//! The pipeline stages, in order:
//!
//! - [`ingest`]: parse, validate, de-duplicate, and redistribute
//!   default-dated (January 1) occurrences.
//! - [`windows`]: enumerate monthly-rolling occurrence windows and build
//!   per-window age/delay histograms.
//! - [`debias`]: recover the debiased empirical delay distribution per
//!   window with an outside-in recursion.
//! - [`mixture`] and [`fit`]: match an exponential+normal mixture CDF to
//!   each window's empirical CDF with a derivative-free optimizer, coupling
//!   consecutive windows through their tail survival curves.
//! - [`correct`]: turn the fitted mixtures into corrected and
//!   year-ahead-corrected monthly count series.
//! - [`synth`]: generate synthetic scenarios with known ground truth for
//!   testing and validation.

pub mod cmaes;
pub mod correct;
pub mod dates;
pub mod debias;
pub mod fit;
pub mod ingest;
pub mod mixture;
pub mod pipeline;
mod seeding;
pub mod synth;
pub mod windows;

pub use correct::{CorrectedRow, CorrectedSeries, CorrectionConfig};
pub use dates::Month;
pub use debias::{compute_delay_distribution, DebiasedDistribution};
pub use fit::{fit_all_windows, FitConfig, WindowFit};
pub use ingest::{EventRecord, EventSet};
pub use mixture::MixtureParams;
pub use synth::ScenarioSpec;
pub use windows::{build_histograms, enumerate_windows, DelayHistograms, Window, WindowConfig};
