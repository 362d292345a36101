//! One-step-ahead forecast scoring and the discount-gamma baseline.
//!
//! The baseline is a steady Poisson-gamma model: between steps the rate
//! belief Ga(r, c) is power-discounted to Ga(δr, δc), which keeps the mean
//! and inflates the variance by 1/δ, then updated conjugately.

use serde::Serialize;

use crate::dglm::{
    forecast_negbin, gamma_match, FilterOutput, GammaBelief, NegBinPredictive, Observation,
    PredictorMoments,
};
use crate::{Error, Result};

/// Default first scored time point; earlier forecasts belong to burn-in.
pub const DEFAULT_SCORING_START: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastRecord {
    pub t: usize,
    pub observed: u64,
    pub predictive: NegBinPredictive,
    pub mean: f64,
    pub lo95: u64,
    pub hi95: u64,
    pub log_density: f64,
}

impl ForecastRecord {
    pub fn new(t: usize, observed: u64, predictive: NegBinPredictive) -> Self {
        let (lo95, hi95) = predictive.interval(0.95);
        ForecastRecord {
            t,
            observed,
            predictive,
            mean: predictive.mean(),
            lo95,
            hi95,
            log_density: predictive.ln_pmf(observed),
        }
    }
}

/// Forecast records of a DGLM filter run.
pub fn forecast_records(out: &FilterOutput) -> Vec<ForecastRecord> {
    out.steps
        .iter()
        .enumerate()
        .map(|(k, s)| ForecastRecord::new(k + 1, s.observation.count, s.predictive))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineSpec {
    pub discount: f64,
    pub initial: GammaBelief,
}

impl BaselineSpec {
    pub fn new(discount: f64, initial: GammaBelief) -> Result<Self> {
        if !(discount > 0.0 && discount <= 1.0) {
            return Err(Error::InvalidModel(format!(
                "baseline discount {discount} outside (0, 1]"
            )));
        }
        Ok(BaselineSpec { discount, initial })
    }

    /// Initial gamma matched to a log-rate prior with the given mean and
    /// variance, so the baseline starts where the DGLM starts.
    pub fn matched(level: f64, variance: f64, discount: f64) -> Result<Self> {
        Self::new(
            discount,
            gamma_match(PredictorMoments {
                f: level,
                q: variance,
            })?,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineStep {
    pub observation: Observation,
    pub prior: GammaBelief,
    pub predictive: NegBinPredictive,
    pub log_predictive_density: f64,
    pub posterior: GammaBelief,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOutput {
    pub steps: Vec<BaselineStep>,
}

impl BaselineOutput {
    pub fn forecast_records(&self) -> Vec<ForecastRecord> {
        self.steps
            .iter()
            .enumerate()
            .map(|(k, s)| ForecastRecord::new(k + 1, s.observation.count, s.predictive))
            .collect()
    }
}

/// Ga(r, c) → Ga(δr, δc).
pub fn discount_gamma(g: GammaBelief, discount: f64) -> Result<GammaBelief> {
    GammaBelief::new(discount * g.r, discount * g.c)
}

pub fn baseline_filter(
    spec: &BaselineSpec,
    observations: &[Observation],
) -> Result<BaselineOutput> {
    let mut current = spec.initial;
    let mut steps = Vec::with_capacity(observations.len());
    for (k, &obs) in observations.iter().enumerate() {
        let prior = discount_gamma(current, spec.discount).map_err(|e| e.at_time(k + 1))?;
        let predictive = forecast_negbin(prior, obs.exposure);
        let posterior = GammaBelief::new(prior.r + obs.count as f64, prior.c + obs.exposure)
            .map_err(|e| e.at_time(k + 1))?;
        steps.push(BaselineStep {
            observation: obs,
            prior,
            predictive,
            log_predictive_density: predictive.ln_pmf(obs.count),
            posterior,
        });
        current = posterior;
    }
    Ok(BaselineOutput { steps })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapeResult {
    pub value: f64,
    /// Running MAPE after each record (NaN until the first scored point).
    pub running: Vec<f64>,
    pub scored: usize,
    pub excluded: usize,
}

/// Mean of |x − mean|/x over records with x > 0; zero counts are excluded
/// and reported.
pub fn mape(records: &[ForecastRecord]) -> Result<MapeResult> {
    let observed: Vec<u64> = records.iter().map(|r| r.observed).collect();
    let means: Vec<f64> = records.iter().map(|r| r.mean).collect();
    mape_values(&observed, &means)
}

/// [`mape`] on bare count and forecast-mean sequences.
pub fn mape_values(observed: &[u64], means: &[f64]) -> Result<MapeResult> {
    if observed.len() != means.len() {
        return Err(Error::InvalidModel(format!(
            "{} observations against {} forecasts",
            observed.len(),
            means.len()
        )));
    }
    if observed.is_empty() {
        return Err(Error::UndefinedMetric("MAPE of an empty record set".into()));
    }
    let mut sum = 0.0;
    let mut scored = 0;
    let mut excluded = 0;
    let mut running = Vec::with_capacity(observed.len());
    for (&x, &mean) in observed.iter().zip(means) {
        if x == 0 {
            excluded += 1;
        } else {
            let x = x as f64;
            sum += (x - mean).abs() / x;
            scored += 1;
        }
        running.push(if scored > 0 {
            sum / scored as f64
        } else {
            f64::NAN
        });
    }
    if scored == 0 {
        return Err(Error::UndefinedMetric(
            "MAPE with every observation zero".into(),
        ));
    }
    Ok(MapeResult {
        value: sum / scored as f64,
        running,
        scored,
        excluded,
    })
}

/// Fraction of records whose count lies in the equal-tailed predictive
/// interval at `level`, endpoints included.
pub fn coverage(records: &[ForecastRecord], level: f64) -> f64 {
    if records.is_empty() {
        return f64::NAN;
    }
    let hits = records
        .iter()
        .filter(|r| {
            let (lo, hi) = if level == 0.95 {
                (r.lo95, r.hi95)
            } else {
                r.predictive.interval(level)
            };
            (lo..=hi).contains(&r.observed)
        })
        .count();
    hits as f64 / records.len() as f64
}

/// One row of a model comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Score {
    pub first_t: usize,
    pub last_t: usize,
    pub scored: usize,
    pub excluded: usize,
    pub mape: f64,
    pub coverage95: f64,
    pub log_score: f64,
}

/// Scores records with t ≥ `start`. MAPE is NaN when every count is zero.
pub fn score(records: &[ForecastRecord], start: usize) -> Result<Score> {
    let window: Vec<ForecastRecord> = records.iter().filter(|r| r.t >= start).copied().collect();
    if window.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "no forecasts at or after t = {start}"
        )));
    }
    let (value, scored, excluded) = match mape(&window) {
        Ok(m) => (m.value, m.scored, m.excluded),
        Err(Error::UndefinedMetric(_)) => (f64::NAN, 0, window.len()),
        Err(e) => return Err(e),
    };
    Ok(Score {
        first_t: window[0].t,
        last_t: window[window.len() - 1].t,
        scored,
        excluded,
        mape: value,
        coverage95: coverage(&window, 0.95),
        log_score: window.iter().map(|r| r.log_density).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dglm::{filter_series, ModelSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, Poisson};

    fn record(t: usize, x: u64, mean: f64) -> ForecastRecord {
        // Ga(mean, 1) with unit exposure has predictive mean `mean`.
        let pred = forecast_negbin(GammaBelief::new(mean, 1.0).unwrap(), 1.0);
        ForecastRecord::new(t, x, pred)
    }

    #[test]
    fn mape_examples() {
        let perfect = [record(1, 4, 4.0), record(2, 9, 9.0)];
        assert_eq!(mape(&perfect).unwrap().value, 0.0);
        assert!((mape(&[record(1, 10, 12.0)]).unwrap().value - 0.2).abs() < 1e-15);
        let m = mape(&[record(1, 0, 5.0), record(2, 10, 10.0)]).unwrap();
        assert_eq!((m.value, m.excluded, m.scored), (0.0, 1, 1));
        assert!(m.running[0].is_nan());
        assert!(matches!(
            mape(&[record(1, 0, 1.0)]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(mape(&[]).is_err());
    }

    #[test]
    fn mape_is_scale_invariant_in_counts_and_means() {
        let a = [record(1, 3, 4.5), record(2, 7, 6.0), record(3, 2, 1.0)];
        let b = [
            record(1, 30, 45.0),
            record(2, 70, 60.0),
            record(3, 20, 10.0),
        ];
        assert!((mape(&a).unwrap().value - mape(&b).unwrap().value).abs() < 1e-14);
    }

    #[test]
    fn coverage_extremes() {
        // A predictive concentrated at zero covers a zero count.
        let degenerate = forecast_negbin(GammaBelief::new(1.0, 1e12).unwrap(), 1.0);
        let hit = ForecastRecord::new(1, 0, degenerate);
        assert_eq!(coverage(&[hit, hit], 0.95), 1.0);
        let miss = ForecastRecord::new(1, 1000, degenerate);
        assert_eq!(coverage(&[miss], 0.95), 0.0);
    }

    #[test]
    fn undiscounted_baseline_is_conjugate_accumulation() {
        let init = GammaBelief::new(2.0, 0.5).unwrap();
        let spec = BaselineSpec::new(1.0, init).unwrap();
        let xs = [3u64, 0, 7, 2, 9];
        let obs: Vec<_> = xs.iter().map(|&x| Observation::new(x, 1.0)).collect();
        let out = baseline_filter(&spec, &obs).unwrap();
        let last = out.steps.last().unwrap().posterior;
        assert_eq!(last.r, 2.0 + 21.0);
        assert_eq!(last.c, 0.5 + 5.0);
    }

    #[test]
    fn discounting_preserves_mean_and_shrinks_shape() {
        let g = GammaBelief::new(12.0, 3.0).unwrap();
        let d = discount_gamma(g, 0.8).unwrap();
        assert!((d.mean() - g.mean()).abs() < 1e-15);
        assert!((d.r - 0.8 * g.r).abs() < 1e-15);
        assert!((d.variance() - g.variance() / 0.8).abs() < 1e-12);
    }

    #[test]
    fn log_densities_are_finite() {
        let spec = ModelSpec::llgm(1.0, 0.1, 0.9).unwrap();
        let obs: Vec<_> = (0..50)
            .map(|t| Observation::new((t % 9) as u64, 1.0))
            .collect();
        let recs = forecast_records(&filter_series(&spec, &obs).unwrap());
        assert!(recs
            .iter()
            .all(|r| r.log_density.is_finite() && r.log_density <= 0.0));
        assert!(recs.iter().all(|r| r.lo95 <= r.hi95));
        let base = baseline_filter(&BaselineSpec::matched(1.0, 0.1, 0.9).unwrap(), &obs).unwrap();
        assert!(base
            .forecast_records()
            .iter()
            .all(|r| r.log_density.is_finite()));
    }

    #[test]
    fn well_specified_coverage_is_near_nominal() {
        // Slow random walk in log rate around e^4; local-level DGLM.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let step = Normal::new(0.0, 0.02).unwrap();
        let mut lam: f64 = 4.0;
        let obs: Vec<_> = (0..10_000)
            .map(|_| {
                lam += step.sample(&mut rng);
                lam = lam.clamp(3.0, 5.0);
                Observation::new(
                    Poisson::new(lam.exp()).unwrap().sample(&mut rng) as u64,
                    1.0,
                )
            })
            .collect();
        let spec = ModelSpec::local_level(4.0, 0.1, 0.9).unwrap();
        let recs = forecast_records(&filter_series(&spec, &obs).unwrap());
        let cov = coverage(&recs[DEFAULT_SCORING_START - 1..], 0.95);
        assert!((0.93..=0.97).contains(&cov), "coverage {cov}");
    }

    #[test]
    fn score_windows() {
        let recs: Vec<_> = (1..=5).map(|t| record(t, t as u64, t as f64)).collect();
        let s = score(&recs, 3).unwrap();
        assert_eq!((s.first_t, s.last_t, s.scored), (3, 5, 3));
        assert!(score(&recs, 9).is_err());
    }
}
