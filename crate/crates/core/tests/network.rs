use std::time::Instant;

use netflow_core::dglm::{filter_series, ModelSpec, Observation};
use netflow_core::gravity::decompose_ensemble;
use netflow_core::network::{
    filter_network, smooth_network, EdgeKey, FlowPanel, ImputePolicy, NetworkFilter, PriorSettings,
    SpecMap,
};
use netflow_core::retro::backward_sample;
use netflow_core::simulate::{build_truth, simulate_panel, ScenarioSpec};
use proptest::prelude::*;

fn small_panel(nodes: usize, len: usize, seed: u64) -> FlowPanel {
    let mut spec = ScenarioSpec::default_day(nodes, seed);
    spec.len = len;
    simulate_panel(build_truth(&spec).unwrap(), &spec)
        .unwrap()
        .panel
}

fn filtered(panel: &FlowPanel, workers: usize) -> NetworkFilter {
    filter_network(panel, &SpecMap::new(PriorSettings::default()), 1, workers).unwrap()
}

#[test]
fn worker_count_does_not_change_the_posterior() {
    let panel = small_panel(5, 50, 7);
    let one = smooth_network(filtered(&panel, 1), 40, 3, 1).unwrap();
    let eight = smooth_network(filtered(&panel, 8), 40, 3, 8).unwrap();
    assert_eq!(one.filter.fits, eight.filter.fits);
    assert_eq!(one.ensembles, eight.ensembles);
    let g1 = decompose_ensemble(&one, ImputePolicy::PriorMean, 1).unwrap();
    let g8 = decompose_ensemble(&eight, ImputePolicy::PriorMean, 8).unwrap();
    assert_eq!(g1, g8);
}

#[test]
fn deleting_an_edge_leaves_the_others_untouched() {
    let panel = small_panel(4, 40, 2);
    let full = filtered(&panel, 2);
    let victim = EdgeKey::new(2, 3);
    assert!(full.fits.contains_key(&victim));
    let mut cut = panel.clone();
    for t in 0..=cut.len() {
        cut.set_flow(victim, t, 0).unwrap();
    }
    let partial = filtered(&cut, 2);
    assert!(!partial.fits.contains_key(&victim));
    for (edge, fit) in &partial.fits {
        assert_eq!(fit, &full.fits[edge], "edge {edge} changed");
    }
    assert_eq!(partial.fits.len() + 1, full.fits.len());
}

#[test]
fn single_active_edge_is_the_only_one_that_moves() {
    let (nodes, len) = (3, 30);
    let mut panel = FlowPanel::new(nodes, len);
    let active = EdgeKey::new(1, 2);
    panel.set_flow(active, 0, 0).unwrap();
    for t in 1..=len {
        panel.set_flow(active, t, 25).unwrap();
    }
    let specs = SpecMap::new(PriorSettings::default());
    let net = filter_network(&panel, &specs, 0, 2).unwrap();
    for (edge, fit) in &net.fits {
        let prior_rate = fit.spec.prior_mean[0].exp();
        let last = fit.output.steps.last().unwrap().posterior_gamma.mean();
        if *edge == active {
            assert!(last > 10.0 * prior_rate, "{last} vs {prior_rate}");
        } else {
            assert!(
                last <= prior_rate * 1.01,
                "edge {edge}: {last} vs {prior_rate}"
            );
        }
    }
}

#[test]
fn end_state_samples_match_the_filtered_posterior() {
    let spec = ModelSpec::llgm(2.5, 0.1, 0.9).unwrap();
    let obs: Vec<Observation> = (0..40)
        .map(|t| Observation::new(12 + (t % 5) as u64 * 2, 1.0))
        .collect();
    let out = filter_series(&spec, &obs).unwrap();
    let n = 40_000;
    let ens = backward_sample(&out, &spec, n, 5).unwrap();
    let last = out.steps.last().unwrap();
    let t = out.len();
    let cols: Vec<Vec<f64>> = (0..2).map(|k| ens.component(t, k)).collect();
    let means: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().sum::<f64>() / n as f64)
        .collect();
    for a in 0..2 {
        for b in 0..2 {
            let cov = cols[a]
                .iter()
                .zip(&cols[b])
                .map(|(x, y)| (x - means[a]) * (y - means[b]))
                .sum::<f64>()
                / (n - 1) as f64;
            let exact = last.posterior.cov[(a, b)];
            let scale = (last.posterior.cov[(a, a)] * last.posterior.cov[(b, b)]).sqrt();
            assert!(
                (cov - exact).abs() < 0.03 * scale,
                "({a},{b}): {cov} vs {exact}"
            );
        }
    }
}

/// Wall-clock benchmark of the embarrassingly parallel filter and
/// smoother. Only meaningful with at least four idle cores.
#[test]
#[ignore = "timing benchmark; run with --ignored on a machine with 4+ cores"]
fn four_workers_halve_the_runtime() {
    let panel = small_panel(10, 288, 1);
    let time = |workers| {
        let start = Instant::now();
        let post = smooth_network(filtered(&panel, workers), 200, 1, workers).unwrap();
        (start.elapsed().as_secs_f64(), post)
    };
    let (t1, p1) = time(1);
    let (t4, p4) = time(4);
    assert_eq!(p1.ensembles, p4.ensembles);
    assert!(t4 <= 0.5 * t1, "K=1 {t1:.2} s, K=4 {t4:.2} s");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn arbitrary_panels_filter_identically_across_workers(
        nodes in 1usize..4,
        len in 1usize..12,
        counts in proptest::collection::vec(0u64..40, 200),
        workers in 2usize..6,
    ) {
        let mut panel = FlowPanel::new(nodes, len);
        let mut k = 0;
        for t in 0..=len {
            for i in 0..=nodes {
                for j in 0..=nodes {
                    if i == 0 && j == 0 {
                        continue;
                    }
                    panel.set_flow(EdgeKey::new(i, j), t, counts[k % counts.len()]).unwrap();
                    k += 1;
                }
            }
        }
        let a = filtered(&panel, 1);
        let b = filtered(&panel, workers);
        prop_assert_eq!(&a.fits, &b.fits);
        prop_assert_eq!(a.dropped.keys().collect::<Vec<_>>(), b.dropped.keys().collect::<Vec<_>>());
    }
}
