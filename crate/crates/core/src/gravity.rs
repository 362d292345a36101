//! Dynamic gravity decomposition of edge rates.
//!
//! For within-network origins i ∈ 1..=I and destinations j ∈ 0..=I the log
//! rates f = ln φ split as f_ij = h + a_i + b_j + g_ij under the zero-sum
//! constraints Σa = Σb = 0 and zero row/column sums of g. On the rate scale
//! that is φ = μ·α·β·γ (baseline, origin, destination, affinity).

use rayon::prelude::*;

use crate::network::{with_pool, EdgeKey, ImputePolicy, LogRateCube, NetworkPosterior};
use crate::stats::Summary;
use crate::{Error, Result};

/// Log-scale gravity components for one sample at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct GravitySlice {
    /// h = ln μ
    pub baseline: f64,
    /// a_i = ln α_i, i = 1..=I (stored at i − 1)
    pub origin: Vec<f64>,
    /// b_j = ln β_j, j = 0..=I
    pub destination: Vec<f64>,
    /// g_ij = ln γ_ij, row-major I×(I+1)
    pub affinity: Vec<f64>,
}

impl GravitySlice {
    pub fn nodes(&self) -> usize {
        self.origin.len()
    }

    pub fn affinity(&self, origin: usize, destination: usize) -> f64 {
        self.affinity[(origin - 1) * (self.nodes() + 1) + destination]
    }

    pub fn origin_effect(&self, origin: usize) -> f64 {
        self.origin[origin - 1]
    }

    /// h + a_i + b_j + g_ij.
    pub fn log_rate(&self, origin: usize, destination: usize) -> f64 {
        self.baseline
            + self.origin_effect(origin)
            + self.destination[destination]
            + self.affinity(origin, destination)
    }
}

/// Decomposes one I×(I+1) row-major log-rate array.
pub fn decompose(nodes: usize, log_rates: &[f64]) -> Result<GravitySlice> {
    let cols = nodes + 1;
    if nodes == 0 || log_rates.len() != nodes * cols {
        return Err(Error::InvalidModel(format!(
            "gravity decomposition needs a {nodes}x{cols} log-rate array, got {} values",
            log_rates.len()
        )));
    }
    if log_rates.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "non-finite log rate in gravity decomposition".into(),
        ));
    }
    let mut row_sums = vec![0.0; nodes];
    let mut col_sums = vec![0.0; cols];
    for i in 0..nodes {
        for j in 0..cols {
            let f = log_rates[i * cols + j];
            row_sums[i] += f;
            col_sums[j] += f;
        }
    }
    let total: f64 = row_sums.iter().sum();
    let baseline = total / (nodes * cols) as f64;
    let origin: Vec<f64> = row_sums
        .iter()
        .map(|s| s / cols as f64 - baseline)
        .collect();
    let destination: Vec<f64> = col_sums
        .iter()
        .map(|s| s / nodes as f64 - baseline)
        .collect();
    let mut affinity = Vec::with_capacity(nodes * cols);
    for i in 0..nodes {
        for j in 0..cols {
            affinity.push(log_rates[i * cols + j] - baseline - origin[i] - destination[j]);
        }
    }
    Ok(GravitySlice {
        baseline,
        origin,
        destination,
        affinity,
    })
}

/// Gravity components for every (sample, t).
#[derive(Debug, Clone, PartialEq)]
pub struct GravityDecomposition {
    pub nodes: usize,
    pub len: usize,
    pub samples: usize,
    slices: Vec<GravitySlice>,
}

impl GravityDecomposition {
    pub fn slice(&self, sample: usize, t: usize) -> &GravitySlice {
        &self.slices[(t - 1) * self.samples + sample]
    }

    fn at_time(&self, t: usize) -> &[GravitySlice] {
        &self.slices[(t - 1) * self.samples..t * self.samples]
    }

    fn summarize(&self, t: usize, pick: impl Fn(&GravitySlice) -> f64) -> Summary {
        Summary::from_values(self.at_time(t).iter().map(|s| pick(s).exp()).collect())
    }

    /// Posterior summary of μₜ.
    pub fn baseline_summary(&self, t: usize) -> Summary {
        self.summarize(t, |s| s.baseline)
    }

    pub fn origin_summary(&self, origin: usize, t: usize) -> Summary {
        self.summarize(t, |s| s.origin_effect(origin))
    }

    pub fn destination_summary(&self, destination: usize, t: usize) -> Summary {
        self.summarize(t, |s| s.destination[destination])
    }

    pub fn affinity_summary(&self, edge: EdgeKey, t: usize) -> Summary {
        self.summarize(t, |s| s.affinity(edge.origin, edge.destination))
    }

    /// Sampled log affinities g_ijt for one time.
    pub fn affinity_samples(&self, edge: EdgeKey, t: usize) -> Vec<f64> {
        self.at_time(t)
            .iter()
            .map(|s| s.affinity(edge.origin, edge.destination))
            .collect()
    }
}

/// Applies [`decompose`] to every (sample, t) slice of a log-rate cube.
pub fn decompose_cube(cube: &LogRateCube, workers: usize) -> Result<GravityDecomposition> {
    let (len, samples, nodes) = (cube.len, cube.samples, cube.nodes);
    let slices = with_pool(workers, || {
        (0..len * samples)
            .into_par_iter()
            .map(|k| decompose(nodes, cube.slice(k % samples, k / samples + 1)))
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(GravityDecomposition {
        nodes,
        len,
        samples,
        slices,
    })
}

pub fn decompose_ensemble(
    post: &NetworkPosterior,
    policy: ImputePolicy,
    workers: usize,
) -> Result<GravityDecomposition> {
    decompose_cube(&post.log_rate_cube(policy)?, workers)
}

/// Two-sided tail mass cvₜ = 2·min(P(γ > 1), P(γ < 1)) for one edge.
/// Values near 1 are consistent with γ = 1; values near 0 indicate a
/// clear interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct CredibleValueSeries {
    pub edge: EdgeKey,
    /// Index t − 1.
    pub values: Vec<f64>,
}

/// Minimum ensemble size for credible values.
pub const MIN_CREDIBLE_SAMPLES: usize = 100;

pub fn credible_value(log_affinities: &[f64]) -> f64 {
    let n = log_affinities.len() as f64;
    let above = log_affinities.iter().filter(|g| **g > 0.0).count() as f64;
    let below = log_affinities.iter().filter(|g| **g < 0.0).count() as f64;
    (2.0 * (above / n).min(below / n)).min(1.0)
}

pub fn credible_values(dec: &GravityDecomposition, edge: EdgeKey) -> Result<CredibleValueSeries> {
    if dec.samples < MIN_CREDIBLE_SAMPLES {
        return Err(Error::InvalidModel(format!(
            "credible values need at least {MIN_CREDIBLE_SAMPLES} samples, have {}",
            dec.samples
        )));
    }
    if edge.origin == 0 || edge.origin > dec.nodes || edge.destination > dec.nodes {
        return Err(Error::InvalidModel(format!("edge {edge} has no affinity")));
    }
    let values = (1..=dec.len)
        .map(|t| credible_value(&dec.affinity_samples(edge, t)))
        .collect();
    Ok(CredibleValueSeries { edge, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn check_identities(nodes: usize, f: &[f64], s: &GravitySlice, tol: f64) {
        let cols = nodes + 1;
        assert!(s.origin.iter().sum::<f64>().abs() < tol);
        assert!(s.destination.iter().sum::<f64>().abs() < tol);
        for i in 1..=nodes {
            let row: f64 = (0..cols).map(|j| s.affinity(i, j)).sum();
            assert!(row.abs() < tol);
        }
        for j in 0..cols {
            let col: f64 = (1..=nodes).map(|i| s.affinity(i, j)).sum();
            assert!(col.abs() < tol);
        }
        for i in 1..=nodes {
            for j in 0..cols {
                assert!((s.log_rate(i, j) - f[(i - 1) * cols + j]).abs() < tol);
            }
        }
    }

    #[test]
    fn two_cell_example() {
        let s = decompose(1, &[2f64.ln(), 8f64.ln()]).unwrap();
        assert!((s.baseline - 4f64.ln()).abs() < 1e-15);
        assert!(s.origin[0].abs() < 1e-15);
        assert!((s.destination[0] + 2f64.ln()).abs() < 1e-15);
        assert!((s.destination[1] - 2f64.ln()).abs() < 1e-15);
        assert!(s.affinity.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn constant_array() {
        let s = decompose(3, &[1.7; 12]).unwrap();
        assert!((s.baseline - 1.7).abs() < 1e-15);
        assert!(s
            .origin
            .iter()
            .chain(&s.destination)
            .chain(&s.affinity)
            .all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn random_five_by_six() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f: Vec<f64> = (0..30).map(|_| rng.random_range(-4.0..6.0)).collect();
        let s = decompose(5, &f).unwrap();
        check_identities(5, &f, &s, 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(decompose(2, &[0.0; 5]).is_err());
        assert!(decompose(1, &[0.0, f64::NAN]).is_err());
    }

    fn dec_from_affinities(samples: &[f64]) -> GravityDecomposition {
        // One node, one time; put the affinity into cell (1,1) directly.
        let slices = samples
            .iter()
            .map(|&g| GravitySlice {
                baseline: 0.0,
                origin: vec![0.0],
                destination: vec![0.0, 0.0],
                affinity: vec![-g, g],
            })
            .collect();
        GravityDecomposition {
            nodes: 1,
            len: 1,
            samples: samples.len(),
            slices,
        }
    }

    #[test]
    fn credible_value_examples() {
        let edge = EdgeKey::new(1, 1);
        let all_above = dec_from_affinities(&[0.3; 200]);
        assert_eq!(credible_values(&all_above, edge).unwrap().values, vec![0.0]);

        let split: Vec<f64> = (0..200)
            .map(|k| if k % 2 == 0 { 0.1 } else { -0.1 })
            .collect();
        assert_eq!(
            credible_values(&dec_from_affinities(&split), edge)
                .unwrap()
                .values,
            vec![1.0]
        );

        assert!(credible_values(&dec_from_affinities(&[0.1; 50]), edge).is_err());
    }

    #[test]
    fn credible_value_of_lognormal_with_two_and_a_half_percent_below_one() {
        // ln γ ~ N(1.96σ, σ²) puts 2.5 % of the mass below γ = 1.
        let sigma = 0.4;
        let normal = Normal::new(1.959964 * sigma, sigma).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let draws: Vec<f64> = (0..200_000).map(|_| normal.sample(&mut rng)).collect();
        let cv = credible_value(&draws);
        assert!((cv - 0.05).abs() < 0.003, "cv = {cv}");
    }

    proptest! {
        #[test]
        fn decomposition_is_linear(
            a in proptest::collection::vec(-5.0f64..5.0, 12),
            b in proptest::collection::vec(-5.0f64..5.0, 12)
        ) {
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let (sa, sb, ss) = (decompose(3, &a).unwrap(), decompose(3, &b).unwrap(), decompose(3, &sum).unwrap());
            prop_assert!((ss.baseline - sa.baseline - sb.baseline).abs() < 1e-12);
            for k in 0..12 {
                prop_assert!((ss.affinity[k] - sa.affinity[k] - sb.affinity[k]).abs() < 1e-12);
            }
            for k in 0..3 {
                prop_assert!((ss.origin[k] - sa.origin[k] - sb.origin[k]).abs() < 1e-12);
            }
            for k in 0..4 {
                prop_assert!((ss.destination[k] - sa.destination[k] - sb.destination[k]).abs() < 1e-12);
            }
        }

        #[test]
        fn global_scale_moves_only_the_baseline(
            f in proptest::collection::vec(-5.0f64..5.0, 12),
            k in 0.01f64..100.0
        ) {
            let shifted: Vec<f64> = f.iter().map(|v| v + k.ln()).collect();
            let (s0, s1) = (decompose(3, &f).unwrap(), decompose(3, &shifted).unwrap());
            prop_assert!((s1.baseline - s0.baseline - k.ln()).abs() < 1e-12);
            for (x, y) in s0.affinity.iter().zip(&s1.affinity) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            for (x, y) in s0.origin.iter().chain(&s0.destination).zip(s1.origin.iter().chain(&s1.destination)) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn credible_value_depends_only_on_signs(
            g in proptest::collection::vec(-3.0f64..3.0, 100..200),
            scale in 0.1f64..10.0
        ) {
            let stretched: Vec<f64> = g.iter().map(|v| v * scale + v.powi(3)).collect();
            prop_assert_eq!(credible_value(&g), credible_value(&stretched));
            let cv = credible_value(&g);
            prop_assert!((0.0..=1.0).contains(&cv));
        }
    }
}
