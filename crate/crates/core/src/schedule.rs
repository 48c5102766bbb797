//! Variance-preserving noise schedule on `t ∈ [0, 1]`.
//!
//! The instantaneous noise rate is linear, `β(t) = β_min + t·(β_max − β_min)`,
//! which gives the closed-form marginal coefficients
//!
//! ```text
//! α_t = exp(−½ ∫₀ᵗ β(u) du),   σ_t = sqrt(1 − α_t²),   λ_t = log(α_t / σ_t).
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest time at which log-SNR and solver steps are evaluated. `λ` diverges
/// at `t = 0`; solvers reach `t = 0` with the first-order update instead.
pub const T_MIN_CLIP: f64 = 1e-5;

/// Linear-β variance-preserving schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSchedule {
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            beta_min: 0.1,
            beta_max: 20.0,
        }
    }
}

fn check_unit(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Domain(format!("time {t} outside [0, 1]")))
    }
}

impl NoiseSchedule {
    pub fn new(beta_min: f64, beta_max: f64) -> Result<Self> {
        let s = Self { beta_min, beta_max };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta_min.is_finite() && self.beta_max.is_finite()) {
            return Err(Error::Argument("schedule betas must be finite".into()));
        }
        if self.beta_min <= 0.0 || self.beta_max <= self.beta_min {
            return Err(Error::Argument(format!(
                "schedule requires 0 < beta_min < beta_max, got ({}, {})",
                self.beta_min, self.beta_max
            )));
        }
        Ok(())
    }

    /// `β(t)`.
    pub fn beta(&self, t: f64) -> f64 {
        self.beta_min + t * (self.beta_max - self.beta_min)
    }

    /// `∫₀ᵗ β(u) du`.
    fn integrated_beta(&self, t: f64) -> f64 {
        self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t
    }

    /// Returns `(α_t, σ_t)`.
    pub fn alpha_sigma(&self, t: f64) -> Result<(f64, f64)> {
        check_unit(t)?;
        Ok(self.alpha_sigma_unchecked(t))
    }

    pub(crate) fn alpha_sigma_unchecked(&self, t: f64) -> (f64, f64) {
        let b = self.integrated_beta(t);
        let alpha = (-0.5 * b).exp();
        // 1 − α² = −expm1(−∫β), accurate for small t.
        let sigma = (-(-b).exp_m1()).sqrt();
        (alpha, sigma)
    }

    /// Log signal-to-noise ratio `λ_t = log(α_t/σ_t)` for `t ∈ (0, 1]`.
    pub fn lambda_of_t(&self, t: f64) -> Result<f64> {
        if t == 0.0 {
            return Err(Error::Domain("log-SNR is infinite at t = 0".into()));
        }
        check_unit(t)?;
        Ok(self.lambda_unchecked(t))
    }

    fn lambda_unchecked(&self, t: f64) -> f64 {
        let b = self.integrated_beta(t);
        -0.5 * b - 0.5 * (-(-b).exp_m1()).ln()
    }

    /// Inverse of [`lambda_of_t`](Self::lambda_of_t) on `[T_MIN_CLIP, 1]`,
    /// by bisection.
    pub fn t_of_lambda(&self, lam: f64) -> Result<f64> {
        let (lam_lo, lam_hi) = self.lambda_range();
        if !(lam_lo..=lam_hi).contains(&lam) {
            return Err(Error::Range(format!(
                "log-SNR {lam} outside [{lam_lo}, {lam_hi}]"
            )));
        }
        if lam == lam_lo {
            return Ok(1.0);
        }
        if lam == lam_hi {
            return Ok(T_MIN_CLIP);
        }
        // λ is decreasing: λ(lo) ≥ lam ≥ λ(hi).
        let (mut lo, mut hi) = (T_MIN_CLIP, 1.0_f64);
        loop {
            let mid = 0.5 * (lo + hi);
            // Run to the resolution of f64; a fixed 1e-12 tolerance in t is
            // too coarse near T_MIN_CLIP where |dλ/dt| ~ 1/(2t).
            if mid <= lo || mid >= hi {
                break;
            }
            if self.lambda_unchecked(mid) > lam {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (dl, dh) = (
            (self.lambda_unchecked(lo) - lam).abs(),
            (self.lambda_unchecked(hi) - lam).abs(),
        );
        Ok(if dl <= dh { lo } else { hi })
    }

    /// `(λ(1), λ(T_MIN_CLIP))`, the domain of [`t_of_lambda`](Self::t_of_lambda).
    pub fn lambda_range(&self) -> (f64, f64) {
        (
            self.lambda_unchecked(1.0),
            self.lambda_unchecked(T_MIN_CLIP),
        )
    }

    /// Drift and diffusion coefficients of the forward SDE:
    /// `f(x, t) = f_coeff·x` with `f_coeff = −½β(t)`, and `g(t) = sqrt(β(t))`.
    pub fn drift_diffusion(&self, t: f64) -> Result<(f64, f64)> {
        check_unit(t)?;
        let beta = self.beta(t);
        Ok((-0.5 * beta, beta.sqrt()))
    }
}
