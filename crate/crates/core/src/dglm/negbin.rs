use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;

use super::GammaBelief;

/// Negative binomial one-step predictive of a Poisson count with
/// Ga(r, c) rate and exposure m: r successes, success probability c/(c+m).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegBinPredictive {
    pub r: f64,
    pub c: f64,
    pub exposure: f64,
}

pub fn forecast_negbin(g: GammaBelief, exposure: f64) -> NegBinPredictive {
    debug_assert!(exposure > 0.0);
    NegBinPredictive {
        r: g.r,
        c: g.c,
        exposure,
    }
}

impl NegBinPredictive {
    pub fn success_probability(&self) -> f64 {
        self.c / (self.c + self.exposure)
    }

    pub fn mean(&self) -> f64 {
        self.r * self.exposure / self.c
    }

    pub fn variance(&self) -> f64 {
        self.r * self.exposure * (self.c + self.exposure) / (self.c * self.c)
    }

    pub fn ln_pmf(&self, x: u64) -> f64 {
        let x = x as f64;
        let ln_p = -(self.exposure / self.c).ln_1p();
        let ln_q = self.exposure.ln() - (self.c + self.exposure).ln();
        let tail = if x > 0.0 { x * ln_q } else { 0.0 };
        ln_gamma(self.r + x) - ln_gamma(self.r) - ln_gamma(x + 1.0) + self.r * ln_p + tail
    }

    pub fn pmf(&self, x: u64) -> f64 {
        self.ln_pmf(x).exp()
    }

    /// P(X ≤ x) = I_p(r, x + 1).
    pub fn cdf(&self, x: u64) -> f64 {
        beta_reg(self.r, x as f64 + 1.0, self.success_probability()).clamp(0.0, 1.0)
    }

    /// Smallest x with P(X ≤ x) ≥ level.
    pub fn quantile(&self, level: f64) -> u64 {
        assert!(
            (0.0..1.0).contains(&level),
            "quantile level {level} outside [0, 1)"
        );
        if self.cdf(0) >= level {
            return 0;
        }
        // Bracket: cdf(lo) < level <= cdf(hi).
        let mut lo = 0u64;
        let mut hi = (self.mean() + 4.0 * self.variance().sqrt()).ceil().max(1.0) as u64;
        while self.cdf(hi) < level && hi < u64::MAX / 2 {
            lo = hi;
            hi *= 2;
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.cdf(mid) >= level {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    /// Equal-tailed interval (inclusive endpoints) at the given coverage.
    pub fn interval(&self, level: f64) -> (u64, u64) {
        let tail = 0.5 * (1.0 - level);
        (self.quantile(tail), self.quantile(1.0 - tail))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Gamma, Poisson};

    fn nb(r: f64, c: f64, m: f64) -> NegBinPredictive {
        forecast_negbin(GammaBelief::new(r, c).unwrap(), m)
    }

    #[test]
    fn geometric_case() {
        let d = nb(1.0, 1.0, 1.0);
        assert!((d.pmf(0) - 0.5).abs() < 1e-14);
        assert!((d.pmf(3) - 0.0625).abs() < 1e-14);
        assert_eq!(d.mean(), 1.0);
    }

    #[test]
    fn moment_formulas() {
        let d = nb(2.0, 4.0, 2.0);
        assert_eq!(d.mean(), 1.0);
        assert_eq!(d.variance(), 1.5);
    }

    #[test]
    fn cdf_agrees_with_summed_pmf() {
        let d = nb(3.7, 0.4, 2.5);
        let mut acc = 0.0;
        for x in 0..60 {
            acc += d.pmf(x);
            assert!((d.cdf(x) - acc).abs() < 1e-12, "x = {x}");
        }
    }

    #[test]
    fn quantile_is_smallest_reaching_level() {
        let d = nb(5.0, 0.2, 1.0);
        for &level in &[0.01, 0.025, 0.5, 0.9, 0.975] {
            let x = d.quantile(level);
            assert!(d.cdf(x) >= level);
            if x > 0 {
                assert!(d.cdf(x - 1) < level);
            }
        }
        // Degenerate-at-zero predictive.
        assert_eq!(nb(1.0, 1e12, 1.0).interval(0.95), (0, 0));
    }

    #[test]
    fn pmf_matches_gamma_poisson_mixture() {
        // r = 5, c = 2, m = 1: draw φ ~ Ga(5, 2) then x ~ Poisson(φ).
        let d = nb(5.0, 2.0, 1.0);
        let n = 1_000_000usize;
        let gamma = Gamma::new(5.0, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut freq = [0usize; 11];
        for _ in 0..n {
            let phi: f64 = gamma.sample(&mut rng);
            let x = Poisson::new(phi).unwrap().sample(&mut rng) as usize;
            if x <= 10 {
                freq[x] += 1;
            }
        }
        for (x, &count) in freq.iter().enumerate() {
            let p = d.pmf(x as u64);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            let emp = count as f64 / n as f64;
            assert!((emp - p).abs() < 3.0 * se, "x = {x}: {emp} vs {p}");
        }
    }

    proptest! {
        #[test]
        fn pmf_sums_to_one(lr in (0.05f64).ln()..(200f64).ln(), lc in (0.05f64).ln()..(20f64).ln(), m in 0.2f64..5.0) {
            let d = nb(lr.exp(), lc.exp(), m);
            let top = d.quantile(1.0 - 1e-10);
            let total: f64 = (0..=top).map(|x| d.pmf(x)).sum();
            prop_assert!((total - 1.0).abs() < 1e-9, "total {}", total);
        }
    }
}
