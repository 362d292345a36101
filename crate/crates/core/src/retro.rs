//! Retrospective backward sampling of state trajectories.
//!
//! Under single-discount evolution the conditional θₜ | θₜ₊₁, D_T is
//! approximated by N((1−δ)mₜ + δG⁻¹θₜ₊₁, (1−δ)Cₜ), so each trajectory is
//! drawn from N(m_T, C_T) at t = T and then recursed back to t = 1.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dglm::{check_psd, clip_eigenvalues, symmetrize, FilterOutput, ModelSpec};
use crate::rng::stream_rng;
use crate::stats::{sort_values, sorted_quantile, Summary};
use crate::{Error, Result};

/// Log rates are clamped to ±this before exponentiation.
pub const LOG_RATE_CLAMP: f64 = 700.0;

/// One sampled trajectory; row t−1 of `states` holds θₜ.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub states: DMatrix<f64>,
    pub seed: u64,
    pub stream: u64,
    pub index: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEnsemble {
    pub samples: Vec<TrajectorySample>,
    len: usize,
    dim: usize,
}

impl TrajectoryEnsemble {
    pub fn new(samples: Vec<TrajectorySample>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidModel("empty trajectory ensemble".into()))?;
        let (len, dim) = first.states.shape();
        if samples.iter().any(|s| s.states.shape() != (len, dim)) {
            return Err(Error::InvalidModel("trajectories disagree in shape".into()));
        }
        Ok(TrajectoryEnsemble { samples, len, dim })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    /// Sampled values of state component `k` at time `t` (1-based).
    pub fn component(&self, t: usize, k: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.states[(t - 1, k)]).collect()
    }

    pub fn mean(&self, t: usize) -> DVector<f64> {
        let mut acc = DVector::zeros(self.dim);
        for s in &self.samples {
            acc += s.states.row(t - 1).transpose();
        }
        acc / self.samples.len() as f64
    }

    /// Nearest-rank quantiles of component `k` at time `t`.
    pub fn quantiles(&self, t: usize, k: usize, levels: &[f64]) -> Vec<f64> {
        let mut v = self.component(t, k);
        sort_values(&mut v);
        levels.iter().map(|&l| sorted_quantile(&v, l)).collect()
    }

    pub fn summary(&self, t: usize, k: usize) -> Summary {
        Summary::from_values(self.component(t, k))
    }

    /// Linear predictor λₜ = Fᵀθₜ, indexed `[sample][t−1]`.
    pub fn log_rates(&self, spec: &ModelSpec) -> Vec<Vec<f64>> {
        self.samples
            .iter()
            .map(|s| (&s.states * &spec.regression).iter().copied().collect())
            .collect()
    }
}

/// Sampled rates φₜ = exp(Fᵀθₜ), indexed `[sample][t−1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateEnsemble {
    pub rates: Vec<Vec<f64>>,
    /// Number of log rates that hit the ±700 clamp.
    pub clamped: usize,
}

impl RateEnsemble {
    pub fn at(&self, t: usize) -> Vec<f64> {
        self.rates.iter().map(|r| r[t - 1]).collect()
    }

    pub fn summary(&self, t: usize) -> Summary {
        Summary::from_values(self.at(t))
    }
}

pub(crate) fn clamp_log_rate(lambda: f64, clamped: &mut usize) -> f64 {
    if lambda.abs() > LOG_RATE_CLAMP {
        *clamped += 1;
        lambda.clamp(-LOG_RATE_CLAMP, LOG_RATE_CLAMP)
    } else {
        lambda
    }
}

pub fn rate_trajectories(ens: &TrajectoryEnsemble, spec: &ModelSpec) -> RateEnsemble {
    let mut clamped = 0;
    let rates = ens
        .log_rates(spec)
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|l| clamp_log_rate(l, &mut clamped).exp())
                .collect()
        })
        .collect();
    if clamped > 0 {
        warn!("{clamped} sampled log rates clamped at ±{LOG_RATE_CLAMP}");
    }
    RateEnsemble { rates, clamped }
}

/// Square-root factor L with L Lᵀ = cov: Cholesky, falling back to a
/// clipped eigendecomposition when cov is only semidefinite.
pub(crate) fn covariance_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_psd(cov, "sampling covariance")?;
    if let Some(chol) = cov.clone().cholesky() {
        return Ok(chol.l());
    }
    let eig = clip_eigenvalues(cov).symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

struct BackwardPlan {
    g_inv: DMatrix<f64>,
    discount: f64,
    means: Vec<DVector<f64>>,
    factors: Vec<DMatrix<f64>>,
}

impl BackwardPlan {
    fn new(out: &FilterOutput, spec: &ModelSpec, discount: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&discount) {
            return Err(Error::InvalidModel(format!(
                "discount {discount} outside [0, 1]"
            )));
        }
        if out.is_empty() {
            return Err(Error::InvalidModel("empty filter output".into()));
        }
        let g_inv = spec.transition_inverse()?;
        let n = out.len();
        let means = out.steps.iter().map(|s| s.posterior.mean.clone()).collect();
        let factors = out
            .steps
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let scale = if k + 1 == n { 1.0 } else { 1.0 - discount };
                covariance_factor(&symmetrize(&(&s.posterior.cov * scale)))
                    .map_err(|e| e.at_time(k + 1))
            })
            .collect::<Result<_>>()?;
        Ok(BackwardPlan {
            g_inv,
            discount,
            means,
            factors,
        })
    }

    fn draw(&self, seed: u64, stream: u64, index: u64) -> TrajectorySample {
        let mut rng = stream_rng(seed, stream, index);
        let n = self.means.len();
        let p = self.means[0].len();
        let mut states = DMatrix::zeros(n, p);
        let mut next: Option<DVector<f64>> = None;
        for k in (0..n).rev() {
            let z = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
            let centre = match &next {
                None => self.means[k].clone(),
                Some(theta) => {
                    &self.means[k] * (1.0 - self.discount) + &self.g_inv * theta * self.discount
                }
            };
            let theta = centre + &self.factors[k] * z;
            states.set_row(k, &theta.transpose());
            next = Some(theta);
        }
        TrajectorySample {
            states,
            seed,
            stream,
            index,
        }
    }
}

/// Draws `n_samples` trajectories using the model's own discount.
pub fn backward_sample(
    out: &FilterOutput,
    spec: &ModelSpec,
    n_samples: usize,
    seed: u64,
) -> Result<TrajectoryEnsemble> {
    backward_sample_stream(out, spec, spec.discount, n_samples, seed, 0)
}

/// Backward sampler with an explicit discount in [0, 1] and random stream.
/// Sample `s` always uses the generator keyed by `(seed, stream, s)`.
pub fn backward_sample_stream(
    out: &FilterOutput,
    spec: &ModelSpec,
    discount: f64,
    n_samples: usize,
    seed: u64,
    stream: u64,
) -> Result<TrajectoryEnsemble> {
    if n_samples == 0 {
        return Err(Error::InvalidModel("n_samples must be at least 1".into()));
    }
    let plan = BackwardPlan::new(out, spec, discount)?;
    let samples = (0..n_samples as u64)
        .into_par_iter()
        .map(|s| plan.draw(seed, stream, s))
        .collect();
    TrajectoryEnsemble::new(samples)
}

/// Closed-form mean of the backward sampler:
/// ã_T = m_T, ãₜ = (1−δ)mₜ + δG⁻¹ãₜ₊₁.
pub fn backward_mean_recursion(
    out: &FilterOutput,
    spec: &ModelSpec,
    discount: f64,
) -> Result<Vec<DVector<f64>>> {
    let g_inv = spec.transition_inverse()?;
    let n = out.len();
    let mut means = vec![DVector::zeros(spec.dim()); n];
    means[n - 1] = out.steps[n - 1].posterior.mean.clone();
    for k in (0..n - 1).rev() {
        means[k] =
            &out.steps[k].posterior.mean * (1.0 - discount) + &g_inv * &means[k + 1] * discount;
    }
    Ok(means)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dglm::{filter_series, Observation};

    fn fitted(delta: f64) -> (ModelSpec, FilterOutput) {
        let spec = ModelSpec::llgm(2.0, 0.1, delta.max(0.5)).unwrap();
        let obs: Vec<_> = (0..25)
            .map(|t| Observation::new(5 + (t % 4) as u64 * 3, 1.0))
            .collect();
        let out = filter_series(&spec, &obs).unwrap();
        (spec, out)
    }

    #[test]
    fn unit_discount_is_deterministic_given_the_end_state() {
        let (spec, out) = fitted(0.9);
        let ens = backward_sample_stream(&out, &spec, 1.0, 20, 3, 0).unwrap();
        let g_inv = spec.transition_inverse().unwrap();
        for s in &ens.samples {
            for k in 0..out.len() - 1 {
                let next = s.states.row(k + 1).transpose();
                let expect = &g_inv * next;
                let got = s.states.row(k).transpose();
                assert!((got - expect).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_discount_draws_filtered_marginals() {
        let (spec, out) = fitted(0.9);
        let n = 4000;
        let ens = backward_sample_stream(&out, &spec, 0.0, n, 11, 0).unwrap();
        for t in [1, 10, 25] {
            let post = out.posterior(t);
            let mean = ens.mean(t);
            for k in 0..2 {
                let se = (post.cov[(k, k)] / n as f64).sqrt();
                assert!((mean[k] - post.mean[k]).abs() < 4.0 * se);
            }
        }
    }

    #[test]
    fn ensemble_is_seed_reproducible() {
        let (spec, out) = fitted(0.9);
        let a = backward_sample(&out, &spec, 30, 5).unwrap();
        let b = backward_sample(&out, &spec, 30, 5).unwrap();
        let c = backward_sample(&out, &spec, 30, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), out.len());
        assert_eq!(a.dim(), 2);
    }

    #[test]
    fn recursion_ends_at_filtered_mean() {
        let (spec, out) = fitted(0.9);
        let rec = backward_mean_recursion(&out, &spec, 0.9).unwrap();
        assert_eq!(
            rec.last().unwrap(),
            &out.steps.last().unwrap().posterior.mean
        );
    }

    #[test]
    fn singular_transition_is_rejected() {
        let (mut spec, out) = fitted(0.9);
        spec.transition = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            backward_sample(&out, &spec, 5, 1),
            Err(Error::Unsupported(_))
        ));
        assert!(backward_sample(&fitted(0.9).1, &fitted(0.9).0, 0, 1).is_err());
    }

    #[test]
    fn rate_examples() {
        let spec = ModelSpec::llgm(0.0, 0.1, 0.9).unwrap();
        let mk = |lam: f64| TrajectorySample {
            states: DMatrix::from_row_slice(3, 2, &[lam, 0.0, lam, 1.0, lam, -1.0]),
            seed: 0,
            stream: 0,
            index: 0,
        };
        let ens = TrajectoryEnsemble::new(vec![mk(0.0), mk(3f64.ln())]).unwrap();
        let rates = rate_trajectories(&ens, &spec);
        assert_eq!(rates.rates[0], vec![1.0, 1.0, 1.0]);
        assert!(rates.rates[1].iter().all(|&r| (r - 3.0).abs() < 1e-12));

        let huge = TrajectoryEnsemble::new(vec![mk(800.0)]).unwrap();
        let rates = rate_trajectories(&huge, &spec);
        assert_eq!(rates.clamped, 3);
        assert!(rates.rates[0].iter().all(|r| r.is_finite()));
    }

    #[test]
    fn rate_quantiles_are_exp_of_log_rate_quantiles() {
        let (spec, out) = fitted(0.9);
        let ens = backward_sample(&out, &spec, 101, 9).unwrap();
        let rates = rate_trajectories(&ens, &spec);
        let levels = [0.025, 0.5, 0.975];
        for t in [1, 12, 25] {
            let lq = ens.quantiles(t, 0, &levels);
            let mut phi = rates.at(t);
            sort_values(&mut phi);
            for (l, q) in levels.iter().zip(&lq) {
                assert_eq!(sorted_quantile(&phi, *l), q.exp());
            }
        }
    }
}
