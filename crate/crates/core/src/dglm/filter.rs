use log::warn;
use nalgebra::DMatrix;

use super::{
    check_psd, clip_eigenvalues, forecast_negbin, gamma_match, min_eigenvalue, symmetrize,
    GammaBelief, ModelSpec, NegBinPredictive, PredictorMoments, StateBelief,
};
use crate::{Error, Result};

/// One observed count together with its exposure (occupancy ratio).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub count: u64,
    pub exposure: f64,
}

impl Observation {
    pub fn new(count: u64, exposure: f64) -> Self {
        Observation { count, exposure }
    }
}

/// Prior (aₜ, Rₜ) = (G mₜ₋₁, G Cₜ₋₁ Gᵀ / δ).
pub fn evolve_state(post: &StateBelief, spec: &ModelSpec) -> Result<StateBelief> {
    check_psd(&post.cov, "posterior covariance")?;
    let g = &spec.transition;
    let mean = g * &post.mean;
    let cov = symmetrize(&(g * &post.cov * g.transpose() / spec.discount));
    Ok(StateBelief::new(mean, cov, post.time_index + 1))
}

/// (fₜ, qₜ) = (Fᵀaₜ, FᵀRₜF).
pub fn predictor_moments(prior: &StateBelief, spec: &ModelSpec) -> Result<PredictorMoments> {
    let f_vec = &spec.regression;
    let f = f_vec.dot(&prior.mean);
    let q = (&prior.cov * f_vec).dot(f_vec);
    if !(q > 0.0) || !q.is_finite() {
        return Err(Error::DegeneratePrior(q));
    }
    Ok(PredictorMoments { f, q })
}

/// Gamma posterior Ga(r + x, c + m) and its log-moments (f*, q*).
pub fn conjugate_update(
    g: GammaBelief,
    count: u64,
    exposure: f64,
) -> Result<(GammaBelief, PredictorMoments)> {
    let post = GammaBelief::new(g.r + count as f64, g.c + exposure)?;
    Ok((post, post.log_moments()))
}

/// Result of [`linear_bayes_update`]; `repaired` is set when tiny negative
/// eigenvalues of Cₜ had to be clipped.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBayesOutcome {
    pub belief: StateBelief,
    pub repaired: bool,
}

/// Linear Bayes correction of the state moments.
///
/// With adaptive vector A = RF/q: mₜ = a + A (f* − f) and
/// Cₜ = R − A Aᵀ (q − q*).
pub fn linear_bayes_update(
    prior: &StateBelief,
    spec: &ModelSpec,
    fm: PredictorMoments,
    post_lm: PredictorMoments,
) -> Result<LinearBayesOutcome> {
    let adaptive = &prior.cov * &spec.regression / fm.q;
    let mean = &prior.mean + &adaptive * (post_lm.f - fm.f);
    let shrink: DMatrix<f64> = &adaptive * adaptive.transpose() * (fm.q - post_lm.q);
    let cov = symmetrize(&(&prior.cov - shrink));

    let min = min_eigenvalue(&cov);
    if min >= 0.0 {
        return Ok(LinearBayesOutcome {
            belief: StateBelief::new(mean, cov, prior.time_index),
            repaired: false,
        });
    }
    let trace = cov.trace();
    if min > -1e-8 * trace.abs() {
        warn!(
            "clipping min eigenvalue {min:e} of posterior covariance at t = {}",
            prior.time_index
        );
        return Ok(LinearBayesOutcome {
            belief: StateBelief::new(mean, clip_eigenvalues(&cov), prior.time_index),
            repaired: true,
        });
    }
    Err(Error::Numerical(format!(
        "posterior covariance indefinite (min eigenvalue {min:e}, trace {trace:e})"
    )))
}

/// Everything computed at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterStep {
    pub observation: Observation,
    pub prior: StateBelief,
    pub prior_moments: PredictorMoments,
    pub prior_gamma: GammaBelief,
    pub predictive: NegBinPredictive,
    pub log_predictive_density: f64,
    pub posterior_gamma: GammaBelief,
    pub posterior_moments: PredictorMoments,
    pub posterior: StateBelief,
}

/// Forward-filtering record for a whole series; `steps[k]` is time k + 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    pub initial: StateBelief,
    pub steps: Vec<FilterStep>,
    pub repairs: usize,
}

impl FilterOutput {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn posterior(&self, t: usize) -> &StateBelief {
        &self.steps[t - 1].posterior
    }

    /// Filtered posterior means E[φₜ | Dₜ] = (r + x)/(c + m).
    pub fn filtered_rate_means(&self) -> Vec<f64> {
        self.steps
            .iter()
            .map(|s| s.posterior_gamma.mean())
            .collect()
    }

    pub fn total_log_predictive_density(&self) -> f64 {
        self.steps.iter().map(|s| s.log_predictive_density).sum()
    }
}

/// Runs the evolve / predict / update cycle over `observations`.
pub fn filter_series(spec: &ModelSpec, observations: &[Observation]) -> Result<FilterOutput> {
    if observations.is_empty() {
        return Err(Error::InvalidModel("observation series is empty".into()));
    }
    let initial = StateBelief::new(spec.prior_mean.clone(), spec.prior_cov.clone(), 0);
    let mut steps = Vec::with_capacity(observations.len());
    let mut repairs = 0;
    let mut current = initial.clone();
    for (k, &obs) in observations.iter().enumerate() {
        let t = k + 1;
        let step = filter_step(&current, spec, obs).map_err(|e| e.at_time(t))?;
        repairs += usize::from(step.1);
        current = step.0.posterior.clone();
        steps.push(step.0);
    }
    Ok(FilterOutput {
        initial,
        steps,
        repairs,
    })
}

fn filter_step(
    current: &StateBelief,
    spec: &ModelSpec,
    obs: Observation,
) -> Result<(FilterStep, bool)> {
    if !(obs.exposure > 0.0) || !obs.exposure.is_finite() {
        return Err(Error::InvalidModel(format!(
            "exposure {} must be positive",
            obs.exposure
        )));
    }
    let prior = evolve_state(current, spec)?;
    let prior_moments = predictor_moments(&prior, spec)?;
    let prior_gamma = gamma_match(prior_moments)?;
    let predictive = forecast_negbin(prior_gamma, obs.exposure);
    let log_predictive_density = predictive.ln_pmf(obs.count);
    let (posterior_gamma, posterior_moments) =
        conjugate_update(prior_gamma, obs.count, obs.exposure)?;
    let outcome = linear_bayes_update(&prior, spec, prior_moments, posterior_moments)?;
    Ok((
        FilterStep {
            observation: obs,
            prior,
            prior_moments,
            prior_gamma,
            predictive,
            log_predictive_density,
            posterior_gamma,
            posterior_moments,
            posterior: outcome.belief,
        },
        outcome.repaired,
    ))
}
