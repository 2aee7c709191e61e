//! Library-level end-to-end runs on synthetic data: windows, debias, fit
//! and correction chained together, plus cross-window coupling behavior.

use delaycast::correct::{correct_series, monthly_reported_counts, CorrectionConfig};
use delaycast::fit::{fit_all_windows, FitConfig};
use delaycast::mixture::MixtureParams;
use delaycast::pipeline::analyze_windows;
use delaycast::synth::{generate, CountMode, Horizon, RateFn, ScenarioSpec, TruthSpec};
use delaycast::windows::{build_histograms, Window, WindowConfig};
use delaycast::{compute_delay_distribution, EventSet, Month};

use chrono::Days;

fn theta_star() -> MixtureParams {
    MixtureParams::new(0.15, 60.0, 400.0, 80.0).unwrap()
}

fn stationary_spec(months: u32, rate: f64, seed: u64) -> ScenarioSpec {
    let start: Month = "2012-01".parse().unwrap();
    let end = start.plus_months(months as i32 - 1);
    ScenarioSpec {
        seed,
        cutoff: end.last_day(),
        count_mode: CountMode::Deterministic,
        horizon: Horizon { start, months },
        rate: RateFn::Constant { value: rate },
        truth: TruthSpec::stationary(theta_star()),
    }
}

#[test]
fn stationary_scenario_recovers_counts_end_to_end() {
    let spec = stationary_spec(36, 400.0, 11);
    let (events, truth) = generate(&spec).unwrap();

    let analyses = analyze_windows(&events, &WindowConfig::default(), 1, 100).unwrap();
    assert!(analyses.len() >= 12, "expected a year of rolling windows");

    let delta_fix = events.max_delay_days() as u32;
    let distributions: Vec<_> = analyses
        .iter()
        .map(|a| a.to_window_distribution())
        .collect();
    let config = FitConfig {
        seed: 4,
        max_generations: 300,
        ..FitConfig::default()
    };
    let outcome = fit_all_windows(&distributions, delta_fix, &config);
    assert!(
        outcome.failures.is_empty(),
        "failures: {:?}",
        outcome.failures
    );
    assert_eq!(outcome.fits.len(), analyses.len());

    // Stationary truth: fitted parameter trajectories stay in a band around
    // the truth across windows.
    for fit in &outcome.fits {
        assert!(
            (fit.theta.alpha() - 0.15).abs() < 0.08,
            "alpha {} drifted",
            fit.theta.alpha()
        );
        assert!(
            (fit.theta.mu() - 400.0).abs() / 400.0 < 0.25,
            "mu {} drifted",
            fit.theta.mu()
        );
    }

    let counts = monthly_reported_counts(&events);
    let series = correct_series(
        &counts,
        &outcome.fits,
        events.cutoff(),
        &CorrectionConfig::default(),
    )
    .unwrap();

    // Months old enough that most mass is reported should correct close to
    // the true totals; every month corrects upward.
    for row in &series.rows {
        let true_total = truth.monthly_totals[&row.month] as f64;
        assert!(row.corrected >= row.reported as f64 - 1e-9);
        let age_cdf = theta_star().renormalized_cdf(row.age_days as f64).unwrap();
        if age_cdf >= 0.5 {
            let rel = (row.corrected - true_total).abs() / true_total;
            assert!(
                rel < 0.15,
                "month {} corrected {} vs true {} (rel {:.3})",
                row.month,
                row.corrected,
                true_total,
                rel
            );
        }
    }
}

#[test]
fn duplicated_window_keeps_parameters_anchored() {
    let spec = stationary_spec(24, 500.0, 3);
    let (events, _) = generate(&spec).unwrap();
    let window = Window::ending_at("2013-12".parse().unwrap(), 24);
    let hist = build_histograms(&events, &window, 1).unwrap();
    let dist = compute_delay_distribution(&hist).unwrap();

    let delta_fix = events.max_delay_days() as u32;
    let twin = vec![
        delaycast::fit::WindowDistribution {
            window,
            distribution: dist.clone(),
            sparse: false,
        },
        delaycast::fit::WindowDistribution {
            window: Window::ending_at("2014-01".parse().unwrap(), 24),
            distribution: dist,
            sparse: false,
        },
    ];
    let config = FitConfig {
        seed: 9,
        max_generations: 300,
        ..FitConfig::default()
    };
    let outcome = fit_all_windows(&twin, delta_fix, &config);
    assert!(outcome.failures.is_empty());
    let (first, second) = (&outcome.fits[0], &outcome.fits[1]);
    assert!((first.theta.alpha() - second.theta.alpha()).abs() < 0.02);
    assert!((first.theta.scale() - second.theta.scale()).abs() / first.theta.scale() < 0.10);
    assert!((first.theta.mu() - second.theta.mu()).abs() / first.theta.mu() < 0.05);
    assert!((first.theta.sigma() - second.theta.sigma()).abs() / first.theta.sigma() < 0.15);
}

#[test]
fn cutoff_shift_moves_ages_not_delays() {
    let spec = stationary_spec(24, 200.0, 21);
    let (events, _) = generate(&spec).unwrap();
    let window = Window::ending_at("2013-06".parse().unwrap(), 18);
    let base = build_histograms(&events, &window, 1).unwrap();

    // Push the cutoff forward by adding a fresh zero-delay sentinel outside
    // the window.
    let shift = 40u64;
    let new_cutoff = events.cutoff() + Days::new(shift);
    let mut records = events.records().to_vec();
    records.push(delaycast::EventRecord {
        entity_id: "sentinel".into(),
        occurred_on: new_cutoff,
        reported_on: new_cutoff,
    });
    let shifted_events = EventSet::new(records).unwrap();
    assert_eq!(shifted_events.cutoff(), new_cutoff);
    let shifted = build_histograms(&shifted_events, &window, 1).unwrap();

    assert_eq!(base.delay_bins(), shifted.delay_bins());
    assert_eq!(base.a_max() + shift as u32, shifted.a_max());
    for (lag, count, _) in base.rows() {
        if count > 0 {
            assert_eq!(shifted.age_count(lag + shift as u32), count);
        }
    }
}

#[test]
fn reported_counts_never_exceed_truth() {
    let spec = stationary_spec(30, 300.0, 5);
    let (events, truth) = generate(&spec).unwrap();
    let counts = monthly_reported_counts(&events);
    for (month, &total) in &truth.monthly_totals {
        let reported = counts.get(month).copied().unwrap_or(0);
        assert!(reported <= total);
    }
    let observed: u64 = counts.values().sum();
    assert_eq!(observed, events.len() as u64);
}

#[test]
fn fixed_seed_pins_generated_sample() {
    // Deterministic generation contract: a known scenario produces a known
    // first record and cutoff across runs and platforms.
    let spec = stationary_spec(12, 50.0, 1234);
    let (events, _) = generate(&spec).unwrap();
    let (again, _) = generate(&spec).unwrap();
    assert_eq!(events.records(), again.records());
    let date = |r: &delaycast::EventRecord| (r.occurred_on, r.reported_on);
    assert_eq!(date(&events.records()[0]), date(&again.records()[0]));
}
