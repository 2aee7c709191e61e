//! Per-window objective and its derivative-free minimization.
//!
//! Each rolling window is fitted by matching the mixture's truncated CDF to
//! the window's debiased empirical CDF in log10 space over the observed
//! delay range, plus a coupling term that keeps consecutive windows' tail
//! survival curves close beyond that range:
//!
//! ```text
//! score = (δ_max/δ_Fix) · mean[(log10 F'_θ - log10 F_Δ)²]      δ ∈ [δ_lo, δ_max]
//!       + (1 - δ_max/δ_Fix) · mean[(log10 S_θ' - log10 S_θ)²]  δ ∈ (δ_max, δ_Fix]
//!       + F_N(0, μ, σ)²                                         (negative-delay penalty)
//!       + S_θ(10y)²                                             (tail penalty)
//! ```
//!
//! The coupling term is zero for the first window, which has no predecessor.
//! Search runs in a transformed space (logit α, ln scale, μ/δ_Fix, ln σ)
//! with box bounds enforced by resampling.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmaes::{self, CmaesConfig, CmaesError};
use crate::debias::DebiasedDistribution;
use crate::mixture::{normal_cdf, MixtureError, MixtureParams};
use crate::seeding::derive_seed;
use crate::windows::Window;

/// Floor applied to CDF/survival values before taking log10.
pub const LOG_FLOOR: f64 = 1e-300;

/// Penalty horizon: survival mass beyond ten years is penalized.
pub const PENALTY_HORIZON_DAYS: f64 = 3650.0;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("empirical CDF has no usable grid points up to {delta_max} days")]
    EmptyGrid { delta_max: u32 },
    #[error("window delta_max {delta_max} exceeds dataset delta_fix {delta_fix}")]
    DeltaMaxExceedsFix { delta_max: u32, delta_fix: u32 },
    #[error("optimizer failed: {0}")]
    Optimizer(#[from] CmaesError),
    #[error(transparent)]
    Mixture(#[from] MixtureError),
}

/// Box bounds on the mixture parameters. `mu` bounds are expressed relative
/// to `δ_Fix` so they scale with the data set.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ParamBounds {
    pub alpha: (f64, f64),
    pub scale: (f64, f64),
    pub mu_rel: (f64, f64),
    pub sigma: (f64, f64),
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self {
            alpha: (0.01, 0.99),
            scale: (1.0, 2000.0),
            mu_rel: (-1.0, 2.0),
            sigma: (1.0, 2000.0),
        }
    }
}

impl ParamBounds {
    fn contains(&self, theta: &MixtureParams, delta_fix: f64) -> bool {
        let (mu_lo, mu_hi) = (self.mu_rel.0 * delta_fix, self.mu_rel.1 * delta_fix);
        theta.alpha() >= self.alpha.0
            && theta.alpha() <= self.alpha.1
            && theta.scale() >= self.scale.0
            && theta.scale() <= self.scale.1
            && theta.mu() >= mu_lo
            && theta.mu() <= mu_hi
            && theta.sigma() >= self.sigma.0
            && theta.sigma() <= self.sigma.1
    }

    fn clamp(&self, theta: &MixtureParams, delta_fix: f64) -> MixtureParams {
        MixtureParams::new(
            theta.alpha().clamp(self.alpha.0, self.alpha.1),
            theta.scale().clamp(self.scale.0, self.scale.1),
            theta
                .mu()
                .clamp(self.mu_rel.0 * delta_fix, self.mu_rel.1 * delta_fix),
            theta.sigma().clamp(self.sigma.0, self.sigma.1),
        )
        .expect("clamped parameters are valid")
    }
}

/// Optimizer settings for one run of the window-fitting stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub seed: u64,
    pub max_generations: u32,
    pub population: Option<usize>,
    pub initial_step: f64,
    pub stall_generations: u32,
    pub stall_tolerance: f64,
    pub max_resamples: u32,
    pub invalid_generation_limit: u32,
    pub bounds: ParamBounds,
    pub penalty_horizon_days: f64,
    /// Optional extra weight pair multiplied onto the two matching terms.
    pub stability_weights: Option<(f64, f64)>,
    /// Record a per-generation trace on each fit.
    pub trace: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_generations: 500,
            population: None,
            initial_step: 0.3,
            stall_generations: 30,
            stall_tolerance: 1e-10,
            max_resamples: 100,
            invalid_generation_limit: 10,
            bounds: ParamBounds::default(),
            penalty_horizon_days: PENALTY_HORIZON_DAYS,
            stability_weights: None,
            trace: false,
        }
    }
}

/// Everything the objective needs for one window, with the empirical grid
/// and the predecessor's survival curve precomputed.
pub struct ObjectiveContext<'a> {
    empirical: &'a DebiasedDistribution,
    delta_max: f64,
    delta_fix: f64,
    theta_prev: Option<MixtureParams>,
    penalty_horizon: f64,
    stability_weights: (f64, f64),
    /// `(δ, log10 F_Δ(δ))` over the matching range.
    cdf_grid: Vec<(f64, f64)>,
    /// `(δ, log10 S_θ'(δ))` over the coupling range; empty without a
    /// predecessor.
    coupling_grid: Vec<(f64, f64)>,
}

impl<'a> ObjectiveContext<'a> {
    pub fn new(
        empirical: &'a DebiasedDistribution,
        delta_fix_days: u32,
        theta_prev: Option<MixtureParams>,
        config: &FitConfig,
    ) -> Result<Self, FitError> {
        let delta_max_days = empirical.delta_max();
        if delta_max_days > delta_fix_days {
            return Err(FitError::DeltaMaxExceedsFix {
                delta_max: delta_max_days,
                delta_fix: delta_fix_days,
            });
        }
        let resolution = empirical.resolution();

        // Matching grid: lags with positive empirical CDF, at the histogram
        // resolution. Lag 0 is excluded: the truncated model CDF is
        // identically zero there, so the point cannot discriminate between
        // parameters (same rationale as excluding empirical zeros).
        let delta_lo = empirical.first_positive_lag().unwrap_or(0).max(resolution);
        let mut cdf_grid = Vec::new();
        let mut lag = delta_lo;
        while lag <= delta_max_days {
            let cdf = empirical.cdf_at(lag);
            if cdf > 0.0 {
                cdf_grid.push((lag as f64, cdf.log10()));
            }
            lag += resolution;
        }
        if cdf_grid.is_empty() {
            return Err(FitError::EmptyGrid {
                delta_max: delta_max_days,
            });
        }

        let mut coupling_grid = Vec::new();
        if let Some(prev) = &theta_prev {
            let mut lag = delta_max_days + resolution;
            while lag <= delta_fix_days {
                let survival = prev.survival(lag as f64)?;
                coupling_grid.push((lag as f64, survival.max(LOG_FLOOR).log10()));
                lag += resolution;
            }
        }

        Ok(Self {
            empirical,
            delta_max: delta_max_days as f64,
            delta_fix: delta_fix_days as f64,
            theta_prev,
            penalty_horizon: config.penalty_horizon_days,
            stability_weights: config.stability_weights.unwrap_or((1.0, 1.0)),
            cdf_grid,
            coupling_grid,
        })
    }

    pub fn delta_max(&self) -> f64 {
        self.delta_max
    }

    pub fn delta_fix(&self) -> f64 {
        self.delta_fix
    }

    pub fn theta_prev(&self) -> Option<&MixtureParams> {
        self.theta_prev.as_ref()
    }

    pub fn empirical(&self) -> &DebiasedDistribution {
        self.empirical
    }

    /// Convex weight pair `(δ_max/δ_Fix, 1 - δ_max/δ_Fix)`.
    pub fn term_weights(&self) -> (f64, f64) {
        let w1 = self.delta_max / self.delta_fix;
        (w1, 1.0 - w1)
    }
}

/// The objective value split into its four terms.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveParts {
    pub total: f64,
    pub cdf_term: f64,
    pub coupling_term: f64,
    pub negative_delay_penalty: f64,
    pub tail_penalty: f64,
}

/// Evaluates the four-term score for `theta` against one window's context.
pub fn objective(
    theta: &MixtureParams,
    ctx: &ObjectiveContext,
) -> Result<ObjectiveParts, MixtureError> {
    let (w1, w2) = ctx.term_weights();
    let (u1, u2) = ctx.stability_weights;

    let mut cdf_term = 0.0;
    for &(delta, log_empirical) in &ctx.cdf_grid {
        let model = theta.truncated_cdf(delta, ctx.delta_max)?;
        let diff = model.max(LOG_FLOOR).log10() - log_empirical;
        cdf_term += diff * diff;
    }
    cdf_term /= ctx.cdf_grid.len() as f64;

    let coupling_term = if ctx.coupling_grid.is_empty() {
        0.0
    } else {
        let mut acc = 0.0;
        for &(delta, log_prev) in &ctx.coupling_grid {
            let survival = theta.survival(delta)?;
            let diff = log_prev - survival.max(LOG_FLOOR).log10();
            acc += diff * diff;
        }
        acc / ctx.coupling_grid.len() as f64
    };

    let fn0 = normal_cdf(0.0, theta.mu(), theta.sigma());
    let negative_delay_penalty = fn0 * fn0;
    let tail_survival = theta.survival(ctx.penalty_horizon)?;
    let tail_penalty = tail_survival * tail_survival;

    let total =
        w1 * u1 * cdf_term + w2 * u2 * coupling_term + negative_delay_penalty + tail_penalty;
    Ok(ObjectiveParts {
        total,
        cdf_term,
        coupling_term,
        negative_delay_penalty,
        tail_penalty,
    })
}

/// Search-space transform: `(logit α, ln scale, μ/δ_Fix, ln σ)`.
fn encode(theta: &MixtureParams, delta_fix: f64) -> [f64; 4] {
    [
        (theta.alpha() / (1.0 - theta.alpha())).ln(),
        theta.scale().ln(),
        theta.mu() / delta_fix,
        theta.sigma().ln(),
    ]
}

fn decode(x: &[f64], delta_fix: f64) -> Result<MixtureParams, MixtureError> {
    let alpha = 1.0 / (1.0 + (-x[0]).exp());
    MixtureParams::new(alpha, x[1].exp(), x[2] * delta_fix, x[3].exp())
}

/// One per-generation trace entry for a window fit.
#[derive(Debug, Clone)]
pub struct GenerationTrace {
    pub generation: u32,
    pub best_objective: f64,
    pub params: MixtureParams,
    /// Largest coupling term seen in any evaluation of this generation.
    pub coupling_term_max: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta: MixtureParams,
    pub objective: f64,
    pub evaluations: u64,
    pub generations: u32,
    pub converged: bool,
    pub trace: Vec<GenerationTrace>,
}

/// Minimizes the window objective with CMA-ES from `init`.
pub fn minimize(
    ctx: &ObjectiveContext,
    init: &MixtureParams,
    config: &FitConfig,
) -> Result<FitResult, FitError> {
    let delta_fix = ctx.delta_fix;
    let bounds = config.bounds;
    let start = bounds.clamp(init, delta_fix);

    let cmaes_config = CmaesConfig {
        population: config.population,
        initial_step: config.initial_step,
        max_generations: config.max_generations,
        stall_generations: config.stall_generations,
        stall_tolerance: config.stall_tolerance,
        max_resamples: config.max_resamples,
        invalid_generation_limit: config.invalid_generation_limit,
        seed: config.seed,
    };

    let is_valid = |x: &[f64]| match decode(x, delta_fix) {
        Ok(theta) => bounds.contains(&theta, delta_fix),
        Err(_) => false,
    };
    // Coupling-term side channel: max over every evaluation, drained once
    // per generation. Max is order-free, so parallel evaluation cannot
    // perturb it.
    let coupling_max = Mutex::new(0.0f64);
    let evaluate = |x: &[f64]| -> f64 {
        let theta = match decode(x, delta_fix) {
            Ok(theta) => theta,
            Err(_) => return f64::INFINITY,
        };
        match objective(&theta, ctx) {
            Ok(parts) => {
                let mut guard = coupling_max.lock().unwrap();
                if parts.coupling_term > *guard {
                    *guard = parts.coupling_term;
                }
                parts.total
            }
            Err(_) => f64::INFINITY,
        }
    };

    let mut trace = Vec::new();
    let record = config.trace;
    let outcome = cmaes::run(
        &encode(&start, delta_fix),
        &cmaes_config,
        is_valid,
        evaluate,
        |stats| {
            let drained = {
                let mut guard = coupling_max.lock().unwrap();
                std::mem::replace(&mut *guard, 0.0)
            };
            if record {
                if let Ok(params) = decode(&stats.best_point, delta_fix) {
                    trace.push(GenerationTrace {
                        generation: stats.generation,
                        best_objective: stats.best_value,
                        params,
                        coupling_term_max: drained,
                    });
                }
            }
        },
    )?;

    let theta = decode(&outcome.best_point, delta_fix)?;
    Ok(FitResult {
        theta,
        objective: outcome.best_value,
        evaluations: outcome.evaluations,
        generations: outcome.generations,
        converged: outcome.converged,
        trace,
    })
}

/// Moment-based starting point for the first window: short-delay mass sets
/// `alpha` and `scale`, long-delay moments set `mu` and `sigma`.
pub fn initial_params(
    empirical: &DebiasedDistribution,
    delta_fix_days: u32,
    bounds: &ParamBounds,
) -> MixtureParams {
    const ALPHA_CUT: u32 = 30;
    const COMPONENT_CUT: u32 = 90;

    let mut alpha_mass = 0.0;
    let mut short_mass = 0.0;
    let mut short_mean = 0.0;
    let mut long_mass = 0.0;
    let mut long_mean = 0.0;
    let mut long_sq = 0.0;
    for (lag, f, _) in empirical.rows() {
        if f <= 0.0 {
            continue;
        }
        let d = lag as f64;
        if lag < ALPHA_CUT {
            alpha_mass += f;
        }
        if lag < COMPONENT_CUT {
            short_mass += f;
            short_mean += d * f;
        } else {
            long_mass += f;
            long_mean += d * f;
            long_sq += d * d * f;
        }
    }

    let delta_max = empirical.delta_max() as f64;
    let alpha = alpha_mass.clamp(bounds.alpha.0, bounds.alpha.1);
    let scale = if short_mass > 0.0 {
        (short_mean / short_mass).clamp(bounds.scale.0, bounds.scale.1)
    } else {
        (COMPONENT_CUT as f64 / 3.0).clamp(bounds.scale.0, bounds.scale.1)
    };
    let delta_fix = delta_fix_days as f64;
    let (mu, sigma) = if long_mass > 1e-12 {
        let mean = long_mean / long_mass;
        let var = (long_sq / long_mass - mean * mean).max(0.0);
        (mean, var.sqrt())
    } else {
        (delta_max / 2.0, delta_max / 6.0)
    };
    let mu = mu.clamp(bounds.mu_rel.0 * delta_fix, bounds.mu_rel.1 * delta_fix);
    let sigma = sigma.clamp(bounds.sigma.0, bounds.sigma.1);

    MixtureParams::new(alpha, scale, mu, sigma).expect("clamped moments are valid parameters")
}

/// One fitted window. `sparse` and `degenerate` echo the input flags so
/// downstream outputs can carry them.
#[derive(Debug, Clone)]
pub struct WindowFit {
    pub window: Window,
    pub theta: MixtureParams,
    pub objective: f64,
    pub evaluations: u64,
    pub generations: u32,
    pub converged: bool,
    pub sparse: bool,
    pub degenerate: bool,
    pub trace: Vec<GenerationTrace>,
}

/// A window whose fit could not be produced.
#[derive(Debug)]
pub struct WindowFailure {
    pub window: Window,
    pub error: FitError,
}

#[derive(Debug, Default)]
pub struct FitOutcome {
    pub fits: Vec<WindowFit>,
    pub failures: Vec<WindowFailure>,
}

/// A window's debiased distribution plus flags, ready for fitting.
#[derive(Debug, Clone)]
pub struct WindowDistribution {
    pub window: Window,
    pub distribution: DebiasedDistribution,
    pub sparse: bool,
}

/// Fits windows in chronological order. Window `k` couples to window
/// `k-1`'s optimum both through the objective's coupling term and as the
/// starting mean; the first window starts from moment estimates and carries
/// no coupling term. A failed window is recorded and the next window couples
/// to the last successful optimum.
pub fn fit_all_windows(
    windows: &[WindowDistribution],
    delta_fix_days: u32,
    config: &FitConfig,
) -> FitOutcome {
    let mut outcome = FitOutcome::default();
    let mut theta_prev: Option<MixtureParams> = None;

    for (index, wd) in windows.iter().enumerate() {
        let window_config = FitConfig {
            seed: derive_seed(config.seed, index as u64),
            ..config.clone()
        };
        let result =
            ObjectiveContext::new(&wd.distribution, delta_fix_days, theta_prev, &window_config)
                .and_then(|ctx| {
                    let init = theta_prev.unwrap_or_else(|| {
                        initial_params(&wd.distribution, delta_fix_days, &window_config.bounds)
                    });
                    minimize(&ctx, &init, &window_config)
                });

        match result {
            Ok(fit) => {
                theta_prev = Some(fit.theta);
                outcome.fits.push(WindowFit {
                    window: wd.window,
                    theta: fit.theta,
                    objective: fit.objective,
                    evaluations: fit.evaluations,
                    generations: fit.generations,
                    converged: fit.converged,
                    sparse: wd.sparse,
                    degenerate: wd.distribution.degenerate(),
                    trace: fit.trace,
                });
            }
            Err(error) => outcome.failures.push(WindowFailure {
                window: wd.window,
                error,
            }),
        }
    }
    outcome
}
