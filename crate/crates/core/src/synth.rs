//! Synthetic event sets with known ground truth.
//!
//! Scenarios pin a monthly occurrence rate, a true delay mixture (optionally
//! shifting over time), a cutoff and a seed. Generation draws per-month
//! counts, places occurrences uniformly within each month, samples each
//! delay by inverting the renormalized mixture CDF, and withholds events
//! whose report date lands past the cutoff — exactly the right-truncation
//! mechanism the rest of the pipeline exists to undo. The untruncated set
//! and the true monthly totals are retained so tests can compare against
//! truth directly instead of re-deriving it from samples.
//!
//! Month streams use independently derived seeds, so generation order (or
//! parallelism) cannot change the output.

use std::collections::BTreeMap;

use chrono::{Days, NaiveDate};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dates::Month;
use crate::ingest::{EventRecord, EventSet, IngestError};
use crate::mixture::{MixtureError, MixtureParams};
use crate::seeding::derive_seed;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("no events observable at cutoff {0}")]
    EmptyObservedSet(NaiveDate),
    #[error(transparent)]
    Mixture(#[from] MixtureError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// Monthly occurrence rate across the horizon.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RateFn {
    Constant {
        value: f64,
    },
    /// Linear ramp from the first to the last horizon month.
    Linear {
        start: f64,
        end: f64,
    },
    /// Step function: the latest point at or before the month applies.
    Piecewise {
        points: Vec<RatePoint>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatePoint {
    pub month: Month,
    pub rate: f64,
}

impl RateFn {
    pub fn at(&self, index: u32, total_months: u32, month: Month) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::Linear { start, end } => {
                if total_months <= 1 {
                    *start
                } else {
                    start + (end - start) * index as f64 / (total_months - 1) as f64
                }
            }
            Self::Piecewise { points } => points
                .iter()
                .rfind(|p| p.month <= month)
                .or_else(|| points.first())
                .map(|p| p.rate)
                .unwrap_or(0.0),
        }
    }
}

/// Per-month count draw mode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountMode {
    /// Round the rate to the nearest integer.
    #[default]
    Deterministic,
    Poisson,
}

/// True delay mixture, optionally shifting at given months.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthSpec {
    #[serde(flatten)]
    pub base: MixtureParams,
    #[serde(default)]
    pub segments: Vec<TruthSegment>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthSegment {
    pub from: Month,
    #[serde(flatten)]
    pub params: MixtureParams,
}

impl TruthSpec {
    pub fn stationary(params: MixtureParams) -> Self {
        Self {
            base: params,
            segments: Vec::new(),
        }
    }

    /// Parameters in force for `month`: the latest segment at or before it,
    /// else the base.
    pub fn params_for(&self, month: Month) -> MixtureParams {
        self.segments
            .iter()
            .rfind(|s| s.from <= month)
            .map(|s| s.params)
            .unwrap_or(self.base)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Horizon {
    pub start: Month,
    pub months: u32,
}

/// A complete synthetic scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub cutoff: NaiveDate,
    #[serde(default)]
    pub count_mode: CountMode,
    pub horizon: Horizon,
    pub rate: RateFn,
    pub truth: TruthSpec,
}

/// Everything the generator knew: the full untruncated event set, the true
/// per-month totals, and the true delay mixture.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub all_events: Vec<EventRecord>,
    pub monthly_totals: BTreeMap<Month, u64>,
    pub truth: TruthSpec,
}

/// Generates the observed (right-truncated) event set and its ground truth.
pub fn generate(spec: &ScenarioSpec) -> Result<(EventSet, GroundTruth), SynthError> {
    if spec.horizon.months == 0 {
        return Err(SynthError::InvalidSpec(
            "horizon must span at least one month".into(),
        ));
    }
    if spec.cutoff < spec.horizon.start.first_day() {
        return Err(SynthError::InvalidSpec(format!(
            "cutoff {} precedes horizon start {}",
            spec.cutoff, spec.horizon.start
        )));
    }

    let mut all_events = Vec::new();
    let mut monthly_totals = BTreeMap::new();

    for index in 0..spec.horizon.months {
        let month = spec.horizon.start.plus_months(index as i32);
        let rate = spec.rate.at(index, spec.horizon.months, month);
        if rate.is_nan() || rate < 0.0 {
            return Err(SynthError::InvalidSpec(format!(
                "rate {rate} for {month} is not a non-negative number"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, index as u64));
        let count = match spec.count_mode {
            CountMode::Deterministic => rate.round() as u64,
            CountMode::Poisson => {
                if rate == 0.0 {
                    0
                } else {
                    let poisson = Poisson::new(rate)
                        .map_err(|e| SynthError::InvalidSpec(format!("poisson rate: {e}")))?;
                    poisson.sample(&mut rng) as u64
                }
            }
        };
        let theta = spec.truth.params_for(month);
        let days = month.days_in_month();
        for j in 0..count {
            let occurred_on = month.first_day() + Days::new(rng.random_range(0..days) as u64);
            let u: f64 = rng.random();
            let delay = sample_delay(&theta, u)?;
            let reported_on = occurred_on + Days::new(delay.round().max(0.0) as u64);
            all_events.push(EventRecord {
                entity_id: format!("e{index:03}-{j:06}"),
                occurred_on,
                reported_on,
            });
        }
        monthly_totals.insert(month, count);
    }

    let events = truncate_events(&all_events, spec.cutoff)?;
    Ok((
        events,
        GroundTruth {
            all_events,
            monthly_totals,
            truth: spec.truth.clone(),
        },
    ))
}

/// The subset of `all` visible at `cutoff`: occurred and reported by then.
pub fn truncate_events(all: &[EventRecord], cutoff: NaiveDate) -> Result<EventSet, SynthError> {
    let observed: Vec<EventRecord> = all
        .iter()
        .filter(|r| r.reported_on <= cutoff)
        .cloned()
        .collect();
    if observed.is_empty() {
        return Err(SynthError::EmptyObservedSet(cutoff));
    }
    Ok(EventSet::new(observed)?)
}

/// Inverse-CDF sampling of the renormalized mixture by bisection to 1e-9
/// days. Returns the continuous delay; callers round to whole days.
pub fn sample_delay(theta: &MixtureParams, u: f64) -> Result<f64, MixtureError> {
    let u = u.clamp(0.0, 1.0 - 1e-12);
    if u == 0.0 {
        return Ok(0.0);
    }
    let mut hi = (theta.mu() + 10.0 * theta.sigma())
        .max(10.0 * theta.scale())
        .max(1.0);
    while theta.renormalized_cdf(hi)? < u && hi < 1e12 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if theta.renormalized_cdf(mid)? < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Kolmogorov-Smirnov distance between two CDFs sampled on the same grid.
pub fn ks_distance(f1: &[f64], f2: &[f64]) -> f64 {
    debug_assert_eq!(f1.len(), f2.len(), "CDFs must share a grid");
    f1.iter()
        .zip(f2)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theta_star() -> MixtureParams {
        MixtureParams::new(0.15, 60.0, 400.0, 80.0).unwrap()
    }

    fn small_spec() -> ScenarioSpec {
        ScenarioSpec {
            seed: 42,
            cutoff: NaiveDate::from_ymd_opt(2015, 12, 31).unwrap(),
            count_mode: CountMode::Deterministic,
            horizon: Horizon {
                start: "2014-01".parse().unwrap(),
                months: 24,
            },
            rate: RateFn::Constant { value: 200.0 },
            truth: TruthSpec::stationary(theta_star()),
        }
    }

    #[test]
    fn inverse_sampling_matches_cdf() {
        let theta = theta_star();
        for u in [0.05, 0.15, 0.5, 0.9, 0.999] {
            let d = sample_delay(&theta, u).unwrap();
            let back = theta.renormalized_cdf(d).unwrap();
            assert!((back - u).abs() < 1e-6, "u={u} d={d} back={back}");
        }
        assert_eq!(sample_delay(&theta, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let (a, _) = generate(&small_spec()).unwrap();
        let (b, _) = generate(&small_spec()).unwrap();
        assert_eq!(a.records(), b.records());
        let different = ScenarioSpec {
            seed: 43,
            ..small_spec()
        };
        let (c, _) = generate(&different).unwrap();
        assert_ne!(a.records(), c.records());
    }

    #[test]
    fn truncation_is_consistent() {
        let (observed, truth) = generate(&small_spec()).unwrap();
        let cutoff = small_spec().cutoff;
        let visible = truth
            .all_events
            .iter()
            .filter(|r| r.reported_on <= cutoff)
            .count();
        assert_eq!(observed.len(), visible);
        for r in observed.records() {
            assert!(r.reported_on <= cutoff);
        }
        for r in &truth.all_events {
            if r.reported_on > cutoff {
                assert!(r.delay_days() > crate::dates::days_between(r.occurred_on, cutoff));
            }
        }
    }

    #[test]
    fn deterministic_counts_match_rate_exactly() {
        let (_, truth) = generate(&small_spec()).unwrap();
        assert_eq!(truth.monthly_totals.len(), 24);
        for &count in truth.monthly_totals.values() {
            assert_eq!(count, 200);
        }
    }

    #[test]
    fn poisson_counts_within_noise() {
        let spec = ScenarioSpec {
            count_mode: CountMode::Poisson,
            rate: RateFn::Constant { value: 400.0 },
            ..small_spec()
        };
        let (_, truth) = generate(&spec).unwrap();
        for &count in truth.monthly_totals.values() {
            let sd = 400.0f64.sqrt();
            assert!(
                (count as f64 - 400.0).abs() < 3.0 * sd,
                "count {count} outside 3 sigma"
            );
        }
    }

    #[test]
    fn near_zero_delays_escape_truncation() {
        let spec = ScenarioSpec {
            truth: TruthSpec::stationary(MixtureParams::new(0.999, 1.0, 5.0, 1.0).unwrap()),
            ..small_spec()
        };
        let (observed, truth) = generate(&spec).unwrap();
        let total: u64 = truth.monthly_totals.values().sum();
        assert!(observed.len() as u64 >= total * 99 / 100);
    }

    #[test]
    fn observed_fraction_of_last_month_tracks_cdf() {
        // With ~15 days of mean age, the observed share of the final month
        // approaches F(15).
        let spec = ScenarioSpec {
            rate: RateFn::Constant { value: 50_000.0 },
            horizon: Horizon {
                start: "2015-12".parse().unwrap(),
                months: 1,
            },
            ..small_spec()
        };
        let (observed, truth) = generate(&spec).unwrap();
        let observed_fraction = observed.len() as f64 / truth.all_events.len() as f64;
        let expected = theta_star().renormalized_cdf(15.0).unwrap(); // 0.03318...
        assert!(
            (observed_fraction - expected).abs() < 0.005,
            "fraction {observed_fraction} vs expected {expected}"
        );
    }

    #[test]
    fn rate_functions_evaluate() {
        let linear = RateFn::Linear {
            start: 500.0,
            end: 1500.0,
        };
        let m: Month = "2014-01".parse().unwrap();
        assert_eq!(linear.at(0, 48, m), 500.0);
        assert_eq!(linear.at(47, 48, m), 1500.0);
        let piecewise = RateFn::Piecewise {
            points: vec![
                RatePoint {
                    month: "2014-01".parse().unwrap(),
                    rate: 100.0,
                },
                RatePoint {
                    month: "2014-06".parse().unwrap(),
                    rate: 300.0,
                },
            ],
        };
        assert_eq!(piecewise.at(0, 48, "2014-03".parse().unwrap()), 100.0);
        assert_eq!(piecewise.at(0, 48, "2014-08".parse().unwrap()), 300.0);
    }

    #[test]
    fn truth_segments_shift_parameters() {
        let later = MixtureParams::new(0.3, 120.0, 380.0, 70.0).unwrap();
        let truth = TruthSpec {
            base: theta_star(),
            segments: vec![TruthSegment {
                from: "2015-01".parse().unwrap(),
                params: later,
            }],
        };
        assert_eq!(truth.params_for("2014-06".parse().unwrap()), theta_star());
        assert_eq!(truth.params_for("2015-01".parse().unwrap()), later);
        assert_eq!(truth.params_for("2015-09".parse().unwrap()), later);
    }

    #[test]
    fn ks_distance_extremes() {
        let zero = vec![1.0, 1.0, 1.0];
        assert_eq!(ks_distance(&zero, &zero), 0.0);
        let step_at_zero = vec![1.0, 1.0, 1.0, 1.0];
        let step_at_end = vec![0.0, 0.0, 0.0, 1.0];
        assert_eq!(ks_distance(&step_at_zero, &step_at_end), 1.0);
    }

    #[test]
    fn scenario_roundtrips_through_toml_shape() {
        // Serde shape sanity without depending on a TOML crate here: the
        // segments and rate kinds survive a JSON-style value roundtrip.
        let spec = ScenarioSpec {
            rate: RateFn::Linear {
                start: 500.0,
                end: 1500.0,
            },
            truth: TruthSpec {
                base: theta_star(),
                segments: vec![TruthSegment {
                    from: "2015-01".parse().unwrap(),
                    params: MixtureParams::new(0.2, 80.0, 420.0, 90.0).unwrap(),
                }],
            },
            ..small_spec()
        };
        let json = serde_json::to_string(&spec).unwrap();
        let back: ScenarioSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back.truth.base, spec.truth.base);
        assert_eq!(back.truth.segments.len(), 1);
    }
}
