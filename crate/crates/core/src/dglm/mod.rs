//! Single-series Poisson DGLM.
//!
//! The latent log-rate λₜ = Fᵀθₜ follows a linear state evolution
//! θₜ = Gθₜ₋₁ + ωₜ. The evolution innovation ωₜ ~ [0, Wₜ] is never
//! materialized: Wₜ is implied by a single discount factor δ through
//! Rₜ = G Cₜ₋₁ Gᵀ / δ. Each step of [`filter_series`] runs
//!
//! 1. [`evolve_state`]: (mₜ₋₁, Cₜ₋₁) → (aₜ, Rₜ)
//! 2. [`predictor_moments`]: (fₜ, qₜ) = (Fᵀaₜ, FᵀRₜF)
//! 3. [`gamma_match`]: Ga(rₜ, cₜ) with matching log-moments
//! 4. [`forecast_negbin`]: negative binomial one-step predictive
//! 5. [`conjugate_update`]: Ga(rₜ + xₜ, cₜ + mₜ) and its log-moments
//! 6. [`linear_bayes_update`]: (aₜ, Rₜ) → (mₜ, Cₜ)

mod belief;
mod filter;
mod model;
mod negbin;

pub use belief::{gamma_match, GammaBelief, PredictorMoments, StateBelief};
pub use filter::{
    conjugate_update, evolve_state, filter_series, linear_bayes_update, predictor_moments,
    FilterOutput, FilterStep, LinearBayesOutcome, Observation,
};
pub use model::{ModelForm, ModelSpec};
pub use negbin::{forecast_negbin, NegBinPredictive};

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Absolute tolerance for negative eigenvalues in covariance inputs.
pub const PSD_TOLERANCE: f64 = 1e-10;

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub(crate) fn check_psd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidState(format!(
            "{what} has non-finite entries"
        )));
    }
    let scale = m.diagonal().iter().fold(1.0f64, |a, d| a.max(d.abs()));
    if (m - m.transpose()).amax() > 1e-9 * scale {
        return Err(Error::InvalidState(format!("{what} is not symmetric")));
    }
    let min = min_eigenvalue(m);
    if min < -PSD_TOLERANCE {
        return Err(Error::InvalidState(format!(
            "{what} is not positive semidefinite (min eigenvalue {min:e})"
        )));
    }
    Ok(())
}

/// Clips negative eigenvalues of a symmetric matrix at zero.
pub(crate) fn clip_eigenvalues(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&clipped) * v.transpose()))
}
