//! The exponential + normal delay mixture and its truncated variants.
//!
//! The raw mixture combines an exponential CDF (mean `scale`) for delays
//! discovered essentially immediately with a normal CDF (`mu`, `sigma`) for
//! delays driven by discovery plus disclosure time. Because the normal is
//! defined on all reals the mixture is renormalized onto `[0, ∞)` for
//! modeling, and further truncated onto `[0, δ_max]` when compared against
//! an empirical distribution that cannot see past its own largest delay.
//!
//! Normal CDF values go through `erfc` (double-precision accurate), and the
//! survival function is evaluated from the complement side so log-scale tail
//! comparisons do not dissolve into cancellation noise.

use libm::erfc;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use std::f64::consts::SQRT_2;

/// Smallest admissible renormalization denominator.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum MixtureError {
    #[error("invalid mixture parameter {field}: {value}")]
    InvalidParam { field: &'static str, value: f64 },
    #[error("degenerate mixture: renormalization denominator {0} below floor")]
    DegenerateDenominator(f64),
    #[error("delay {delta} outside truncation domain [0, {delta_max}]")]
    OutOfDomain { delta: f64, delta_max: f64 },
}

/// Parameters of the delay mixture: mixing weight `alpha` on the exponential
/// component, exponential mean `scale` (days), and normal `mu`/`sigma`
/// (days). Validated at construction: `0 < alpha < 1`, `scale > 0`,
/// `sigma > 0`, `mu` free in sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixtureParams")]
pub struct MixtureParams {
    alpha: f64,
    scale: f64,
    mu: f64,
    sigma: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
struct RawMixtureParams {
    alpha: f64,
    scale: f64,
    mu: f64,
    sigma: f64,
}

impl TryFrom<RawMixtureParams> for MixtureParams {
    type Error = MixtureError;

    fn try_from(raw: RawMixtureParams) -> Result<Self, Self::Error> {
        MixtureParams::new(raw.alpha, raw.scale, raw.mu, raw.sigma)
    }
}

impl MixtureParams {
    pub fn new(alpha: f64, scale: f64, mu: f64, sigma: f64) -> Result<Self, MixtureError> {
        let invalid = |field: &'static str, value: f64| MixtureError::InvalidParam { field, value };
        if !alpha.is_finite() || alpha <= 0.0 || alpha >= 1.0 {
            return Err(invalid("alpha", alpha));
        }
        if !scale.is_finite() || scale <= 0.0 {
            return Err(invalid("scale", scale));
        }
        if !mu.is_finite() {
            return Err(invalid("mu", mu));
        }
        if !sigma.is_finite() || sigma <= 0.0 {
            return Err(invalid("sigma", sigma));
        }
        Ok(Self {
            alpha,
            scale,
            mu,
            sigma,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Untruncated mixture CDF: `alpha F_Exp(δ) + (1 - alpha) F_N(δ)`,
    /// defined for any real `δ`.
    pub fn raw_cdf(&self, delta: f64) -> f64 {
        self.alpha * exponential_cdf(delta, self.scale)
            + (1.0 - self.alpha) * normal_cdf(delta, self.mu, self.sigma)
    }

    /// Numerator shared by the renormalized and truncated CDFs:
    /// `alpha F_Exp(δ) + (1 - alpha) (F_N(δ) - F_N(0))`.
    fn truncated_numerator(&self, delta: f64) -> f64 {
        self.alpha * exponential_cdf(delta, self.scale)
            + (1.0 - self.alpha)
                * (normal_cdf(delta, self.mu, self.sigma) - normal_cdf(0.0, self.mu, self.sigma))
    }

    fn renormalization_denominator(&self) -> f64 {
        self.alpha + (1.0 - self.alpha) * (1.0 - normal_cdf(0.0, self.mu, self.sigma))
    }

    /// Mixture CDF truncated to `[0, ∞)` and renormalized; the modeling
    /// distribution used for count correction.
    pub fn renormalized_cdf(&self, delta: f64) -> Result<f64, MixtureError> {
        let den = self.renormalization_denominator();
        if den < DENOMINATOR_FLOOR {
            return Err(MixtureError::DegenerateDenominator(den));
        }
        Ok(self.truncated_numerator(delta.max(0.0)) / den)
    }

    /// Mixture CDF truncated to `[0, delta_max]`; used when matching an
    /// empirical distribution that saw no delay beyond `delta_max`. Equals 1
    /// at `delta_max` by construction.
    pub fn truncated_cdf(&self, delta: f64, delta_max: f64) -> Result<f64, MixtureError> {
        if delta < 0.0 || delta > delta_max {
            return Err(MixtureError::OutOfDomain { delta, delta_max });
        }
        let den = self.truncated_numerator(delta_max);
        if den < DENOMINATOR_FLOOR {
            return Err(MixtureError::DegenerateDenominator(den));
        }
        Ok(self.truncated_numerator(delta) / den)
    }

    /// Survival of the renormalized mixture, `1 - F`, evaluated from the
    /// complement side so deep tails keep relative accuracy.
    pub fn survival(&self, delta: f64) -> Result<f64, MixtureError> {
        let den = self.renormalization_denominator();
        if den < DENOMINATOR_FLOOR {
            return Err(MixtureError::DegenerateDenominator(den));
        }
        let delta = delta.max(0.0);
        let tail = self.alpha * exponential_survival(delta, self.scale)
            + (1.0 - self.alpha) * normal_survival(delta, self.mu, self.sigma);
        Ok(tail / den)
    }
}

/// Exponential CDF with mean `scale`; 0 for negative arguments.
pub fn exponential_cdf(x: f64, scale: f64) -> f64 {
    if x < 0.0 {
        0.0
    } else {
        -(-x / scale).exp_m1()
    }
}

fn exponential_survival(x: f64, scale: f64) -> f64 {
    if x < 0.0 {
        1.0
    } else {
        (-x / scale).exp()
    }
}

/// Normal CDF via the complementary error function.
pub fn normal_cdf(x: f64, mu: f64, sigma: f64) -> f64 {
    0.5 * erfc(-(x - mu) / (sigma * SQRT_2))
}

fn normal_survival(x: f64, mu: f64, sigma: f64) -> f64 {
    0.5 * erfc((x - mu) / (sigma * SQRT_2))
}

#[cfg(test)]
#[allow(clippy::excessive_precision)] // reference constants keep oracle digits
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn theta() -> MixtureParams {
        MixtureParams::new(0.5, 100.0, 300.0, 50.0).unwrap()
    }

    // Reference values computed with 50-digit arithmetic from the closed
    // forms (erfc for the normal component, expm1 for the exponential).
    #[test]
    fn erfc_reference_points() {
        let cases = [
            (-3.5, 1.999999256901627658587),
            (-1.0, 1.842700792949714869341),
            (-0.25, 1.276326390168236932985),
            (0.5, 0.4795001221869534623173),
            (1.0, 0.1572992070502851306588),
            (2.0, 0.004677734981047265837931),
            (4.0, 1.541725790028001885216e-8),
            (6.5, 3.842148327120647469876e-20),
            (9.0, 4.137031746513810238054e-37),
        ];
        for (x, expected) in cases {
            assert_abs_diff_eq!(erfc(x), expected, epsilon = 1e-13);
            let rel = (erfc(x) - expected).abs() / expected.abs();
            assert!(rel < 1e-12, "erfc({x}) relative error {rel}");
        }
    }

    #[test]
    fn raw_cdf_matches_oracle() {
        assert_abs_diff_eq!(theta().raw_cdf(300.0), 0.72510646581606803, epsilon = 1e-12);
        // Normal symmetry at its mean dominates when alpha is tiny.
        let near_normal = MixtureParams::new(1e-9, 100.0, 300.0, 50.0).unwrap();
        assert_abs_diff_eq!(near_normal.raw_cdf(300.0), 0.5, epsilon = 1e-8);
        // CDF limit at large delta.
        assert_abs_diff_eq!(theta().raw_cdf(1e9), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn renormalized_cdf_matches_oracle() {
        let f = |d| theta().renormalized_cdf(d).unwrap();
        assert_eq!(f(0.0), 0.0);
        assert_abs_diff_eq!(f(300.0), 0.72510646568046475, epsilon = 1e-12);
        assert_abs_diff_eq!(f(50.0), 0.19673481307322347, epsilon = 1e-12);
        assert_abs_diff_eq!(f(1e9), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn truncated_cdf_matches_oracle() {
        let t = theta();
        assert_abs_diff_eq!(
            t.truncated_cdf(150.0, 600.0).unwrap(),
            0.38959272073494123,
            epsilon = 1e-12
        );
        assert_eq!(t.truncated_cdf(600.0, 600.0).unwrap(), 1.0);
        assert_eq!(t.truncated_cdf(0.0, 600.0).unwrap(), 0.0);
        assert!(matches!(
            t.truncated_cdf(601.0, 600.0),
            Err(MixtureError::OutOfDomain { .. })
        ));
    }

    #[test]
    fn survival_matches_oracle_in_deep_tail() {
        let t = theta();
        assert_eq!(t.survival(0.0).unwrap(), 1.0);
        let s = t.survival(3650.0).unwrap();
        assert!(s < 1e-15);
        let rel = (s - 7.0343085657007148e-17).abs() / 7.0343085657007148e-17;
        assert!(rel < 1e-9, "relative error {rel}");
        // Complement route agrees with 1 - F where both are representable.
        for d in [1.0, 50.0, 200.0, 350.0, 500.0] {
            let direct = 1.0 - t.renormalized_cdf(d).unwrap();
            assert_abs_diff_eq!(t.survival(d).unwrap(), direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn negative_mu_pushes_mass_below_zero() {
        // Used by the objective's negative-delay penalty.
        let fn0 = normal_cdf(0.0, -200.0, 50.0);
        assert_abs_diff_eq!(fn0, 0.99996832875816688, epsilon = 1e-12);
        assert_abs_diff_eq!(fn0 * fn0, 0.99993665851940132, epsilon = 1e-12);
        let well_positive = normal_cdf(0.0, 300.0, 50.0);
        assert_abs_diff_eq!(well_positive, 9.865876450376981e-10, epsilon = 1e-21);
    }

    #[test]
    fn renormalized_approaches_raw_when_normal_mass_positive() {
        // mu = 6 sigma: the renormalization correction is below 1e-6.
        let t = theta();
        let mut sup = 0.0f64;
        for i in 0..=2000 {
            let d = i as f64;
            let diff = (t.renormalized_cdf(d).unwrap() - t.raw_cdf(d)).abs();
            sup = sup.max(diff);
        }
        assert!(sup < 1e-6, "sup difference {sup}");
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(MixtureParams::new(0.0, 100.0, 300.0, 50.0).is_err());
        assert!(MixtureParams::new(1.0, 100.0, 300.0, 50.0).is_err());
        assert!(MixtureParams::new(0.5, 0.0, 300.0, 50.0).is_err());
        assert!(MixtureParams::new(0.5, 100.0, f64::NAN, 50.0).is_err());
        assert!(MixtureParams::new(0.5, 100.0, 300.0, -1.0).is_err());
    }

    #[test]
    fn vanishing_renormalizer_is_an_error() {
        // Nearly all weight on a normal far below zero: the mass on [0, inf)
        // collapses and the renormalization denominator underflows the floor.
        let theta = MixtureParams::new(1e-13, 100.0, -300.0, 1.0).unwrap();
        assert!(matches!(
            theta.renormalized_cdf(10.0),
            Err(MixtureError::DegenerateDenominator(_))
        ));
        assert!(matches!(
            theta.survival(10.0),
            Err(MixtureError::DegenerateDenominator(_))
        ));
    }

    #[test]
    fn truncated_dominates_renormalized_on_shared_domain() {
        let t = theta();
        for i in 0..=60 {
            let d = i as f64 * 10.0;
            let trunc = t.truncated_cdf(d, 600.0).unwrap();
            let renorm = t.renormalized_cdf(d).unwrap();
            assert!(
                trunc >= renorm - 1e-15,
                "trunc {trunc} < renorm {renorm} at {d}"
            );
        }
    }
}
