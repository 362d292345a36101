use nalgebra::{DMatrix, DVector};

use crate::special::{digamma, tetragamma, trigamma};
use crate::{Error, Result};

/// First and second moments of the state vector at one time point.
///
/// Holds either a posterior (mₜ, Cₜ) or an evolved prior (aₜ, Rₜ).
#[derive(Debug, Clone, PartialEq)]
pub struct StateBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub time_index: usize,
}

impl StateBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, time_index: usize) -> Self {
        StateBelief {
            mean,
            cov,
            time_index,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Mean and variance of the log-rate λₜ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictorMoments {
    pub f: f64,
    pub q: f64,
}

/// Gamma distribution Ga(r, c) for a Poisson rate: shape r, rate c.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaBelief {
    pub r: f64,
    pub c: f64,
}

impl GammaBelief {
    pub fn new(r: f64, c: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite() && c > 0.0 && c.is_finite()) {
            return Err(Error::Numerical(format!("invalid gamma belief ({r}, {c})")));
        }
        Ok(GammaBelief { r, c })
    }

    pub fn mean(&self) -> f64 {
        self.r / self.c
    }

    pub fn variance(&self) -> f64 {
        self.r / (self.c * self.c)
    }

    /// Moments of log φ under this gamma: (ψ(r) − ln c, ψ′(r)).
    pub fn log_moments(&self) -> PredictorMoments {
        PredictorMoments {
            f: digamma(self.r) - self.c.ln(),
            q: trigamma(self.r),
        }
    }
}

/// Smallest gamma shape the moment match will return.
pub(crate) const MIN_SHAPE: f64 = 1e-8;
const MAX_ITERATIONS: usize = 100;

/// Gamma belief whose log-moments equal `fm`.
///
/// Solves ψ′(r) = q by Newton iteration on ln ψ′ as a function of ln r,
/// which is smooth, monotone and nearly linear (slope between −2 and −1),
/// then sets c = exp(ψ(r) − f).
pub fn gamma_match(fm: PredictorMoments) -> Result<GammaBelief> {
    let PredictorMoments { f, q } = fm;
    if !(q > 0.0) || !q.is_finite() || !f.is_finite() {
        return Err(Error::DegeneratePrior(q));
    }
    if q >= trigamma(MIN_SHAPE) {
        return Err(Error::OutOfRange(q));
    }

    // Asymptotic inverse of ψ′(r) ≈ 1/r + 1/(2r²).
    let r0 = (1.0 + (1.0 + 4.0 * q).sqrt()) / (2.0 * q);
    let ln_q = q.ln();
    let mut u = r0.ln();
    let mut converged = false;
    for _ in 0..MAX_ITERATIONS {
        let r = u.exp();
        let t1 = trigamma(r);
        let h = t1.ln() - ln_q;
        let slope = r * tetragamma(r) / t1;
        let step = h / slope;
        u -= step;
        if step.abs() <= 4.0 * f64::EPSILON * u.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    let r = u.exp();
    let residual = (trigamma(r) - q).abs();
    if !converged && residual > 1e-10 * q.max(1.0) {
        return Err(Error::Numerical(format!(
            "trigamma inversion did not converge for q = {q} (residual {residual:e})"
        )));
    }
    if r < MIN_SHAPE {
        return Err(Error::OutOfRange(q));
    }
    let c = (digamma(r) - f).exp();
    GammaBelief::new(r, c)
}
