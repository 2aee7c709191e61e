//! Debiased empirical delay distribution.
//!
//! Raw delay samples are biased short: an event of age `a` is visible only
//! if its delay is at most `a`. The outside-in recursion here walks lags
//! from the oldest age down to zero, dividing each delay count by the best
//! running estimate of how many events were old enough to show that delay:
//!
//! ```text
//! f(δ) = h_Δ(δ) / Σ_{a=δ}^{A_max} h_A(a) / F(a),   F(A_max) = 1,
//! F(δ-1) = F(δ) - f(δ)
//! ```
//!
//! Sparse tails can drive the running CDF to zero or below while ages with
//! mass still reference it; the recursion then clamps (`CDF_FLOOR` inside
//! the denominator, and `f` so `F` never goes negative) and flags the result
//! degenerate instead of failing.

use thiserror::Error;

use crate::windows::DelayHistograms;

/// Positivity floor applied to the running CDF inside the denominator sum.
pub const CDF_FLOOR: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DebiasError {
    #[error("cannot debias an empty histogram")]
    Empty,
}

/// Discrete delay distribution recovered from right-truncated observations.
///
/// `f` and `F` are stored densely per lag bin from 0 to the maximum age;
/// `F` is right-continuous (`F(δ) = P(Δ ≤ δ)`) and reaches 1 at the maximum
/// age by construction.
#[derive(Debug, Clone)]
pub struct DebiasedDistribution {
    resolution: u32,
    pdf: Vec<f64>,
    cdf: Vec<f64>,
    delta_max: u32,
    degenerate: bool,
}

impl DebiasedDistribution {
    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    /// Largest lag carrying probability mass, in days.
    pub fn delta_max(&self) -> u32 {
        self.delta_max
    }

    /// Largest stored lag (the maximum age), in days.
    pub fn a_max(&self) -> u32 {
        (self.pdf.len() as u32 - 1) * self.resolution
    }

    /// Set when the recursion had to clamp the CDF away from zero or below.
    pub fn degenerate(&self) -> bool {
        self.degenerate
    }

    /// Probability mass at the bin containing `lag_days`; 0 beyond the
    /// stored range.
    pub fn pdf_at(&self, lag_days: u32) -> f64 {
        self.pdf
            .get((lag_days / self.resolution) as usize)
            .copied()
            .unwrap_or(0.0)
    }

    /// CDF at the largest stored lag at or below `lag_days` (right-continuous
    /// step lookup); 1 beyond the stored range.
    pub fn cdf_at(&self, lag_days: u32) -> f64 {
        let bin = (lag_days / self.resolution) as usize;
        if bin >= self.cdf.len() {
            1.0
        } else {
            self.cdf[bin]
        }
    }

    /// Smallest lag (days) with positive CDF, if any.
    pub fn first_positive_lag(&self) -> Option<u32> {
        self.cdf
            .iter()
            .position(|&v| v > 0.0)
            .map(|bin| bin as u32 * self.resolution)
    }

    pub fn total_mass(&self) -> f64 {
        self.pdf.iter().sum()
    }

    /// `(lag_days, f, F)` rows over the full stored range.
    pub fn rows(&self) -> impl Iterator<Item = (u32, f64, f64)> + '_ {
        self.pdf
            .iter()
            .zip(&self.cdf)
            .enumerate()
            .map(move |(bin, (&f, &cdf))| (bin as u32 * self.resolution, f, cdf))
    }

    /// Rebuilds a distribution from dumped `(lag_days, f, F)` rows.
    pub fn from_rows(
        resolution: u32,
        rows: &[(u32, f64, f64)],
        degenerate: bool,
    ) -> Result<Self, DebiasError> {
        if rows.is_empty() || resolution == 0 {
            return Err(DebiasError::Empty);
        }
        let bins = (rows.last().unwrap().0 / resolution) as usize + 1;
        let mut pdf = vec![0.0; bins];
        let mut cdf = vec![0.0; bins];
        for &(lag, f, cum) in rows {
            let bin = (lag / resolution) as usize;
            pdf[bin] = f;
            cdf[bin] = cum;
        }
        let delta_max = rows
            .iter()
            .rev()
            .find(|&&(_, f, _)| f > 0.0)
            .map(|&(lag, _, _)| lag)
            .unwrap_or(0);
        Ok(Self {
            resolution,
            pdf,
            cdf,
            delta_max,
            degenerate,
        })
    }
}

/// Runs the outside-in recursion on one window's histograms.
///
/// The denominator is accumulated incrementally: walking δ downward, the
/// term `h_A(δ) / F(δ)` joins the running sum exactly when the range
/// `[δ, A_max]` grows to include it, and every `F` value is final before it
/// is referenced.
pub fn compute_delay_distribution(
    h: &DelayHistograms,
) -> Result<DebiasedDistribution, DebiasError> {
    if h.n_events() == 0 {
        return Err(DebiasError::Empty);
    }
    let bins = h.age_bins().len();
    let mut pdf = vec![0.0; bins];
    let mut cdf = vec![0.0; bins];
    let mut degenerate = false;

    cdf[bins - 1] = 1.0;
    let mut denominator = 0.0;
    for bin in (0..bins).rev() {
        let age_count = h.age_bins()[bin];
        if age_count > 0 {
            let cdf_here = cdf[bin];
            if cdf_here < CDF_FLOOR {
                degenerate = true;
            }
            denominator += age_count as f64 / cdf_here.max(CDF_FLOOR);
        }

        let delay_count = h.delay_bins().get(bin).copied().unwrap_or(0);
        if delay_count > 0 {
            let mass = delay_count as f64 / denominator;
            // Clamp so the CDF never goes negative. Roundoff overshoots the
            // remaining CDF by an ulp at the last positive bin; only a
            // material overshoot marks degeneracy.
            if mass > cdf[bin] {
                if mass - cdf[bin] > CDF_FLOOR {
                    degenerate = true;
                }
                pdf[bin] = cdf[bin];
            } else {
                pdf[bin] = mass;
            }
        }
        if bin > 0 {
            cdf[bin - 1] = cdf[bin] - pdf[bin];
        }
    }

    let delta_max = pdf
        .iter()
        .rposition(|&f| f > 0.0)
        .map(|bin| bin as u32 * h.resolution())
        .unwrap_or(0);

    Ok(DebiasedDistribution {
        resolution: h.resolution(),
        pdf,
        cdf,
        delta_max,
        degenerate,
    })
}
