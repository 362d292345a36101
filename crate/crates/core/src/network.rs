//! Network data model, decoupled per-edge filtering and recoupling.
//!
//! Node 0 is the world outside the network: edges (0, j) are inflows and
//! edges (i, 0) are exits. Every edge is filtered as an independent Poisson
//! DGLM with exposure mᵢₜ = nᵢ,ₜ₋₁ / nᵢ,ₜ₋₂ (unit exposure for inflows), and
//! sampled rates are recoupled into multinomial transition probabilities.

use std::collections::BTreeMap;
use std::fmt;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dglm::{filter_series, FilterOutput, ModelForm, ModelSpec, Observation};
use crate::retro::{backward_sample_stream, clamp_log_rate, TrajectoryEnsemble};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeKey {
    pub origin: usize,
    pub destination: usize,
}

impl EdgeKey {
    pub fn new(origin: usize, destination: usize) -> Self {
        EdgeKey {
            origin,
            destination,
        }
    }

    pub fn is_inflow(&self) -> bool {
        self.origin == 0
    }

    /// Stable random-stream id for this edge in a network of `nodes` nodes.
    pub fn stream_id(&self, nodes: usize) -> u64 {
        (self.origin * (nodes + 1) + self.destination) as u64
    }

    fn validate(&self, nodes: usize) -> Result<()> {
        if self.origin > nodes || self.destination > nodes {
            return Err(Error::InvalidModel(format!(
                "edge {self} outside 0..={nodes}"
            )));
        }
        if self.origin == 0 && self.destination == 0 {
            return Err(Error::InvalidModel(
                "edge (0,0) is not part of the network".into(),
            ));
        }
        Ok(())
    }
}

impl fmt::Display for EdgeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.origin, self.destination)
    }
}

/// All modelled edges: (i, j) for i ∈ 1..=I, j ∈ 0..=I, then inflows (0, j).
pub fn edge_universe(nodes: usize) -> Vec<EdgeKey> {
    let mut edges = Vec::with_capacity((nodes + 1) * (nodes + 1) - 1);
    for j in 1..=nodes {
        edges.push(EdgeKey::new(0, j));
    }
    for i in 1..=nodes {
        for j in 0..=nodes {
            edges.push(EdgeKey::new(i, j));
        }
    }
    edges.sort();
    edges
}

/// Edge counts xᵢⱼₜ and node occupancies nᵢₜ.
///
/// Flow series are stored sparsely with index 0 holding the optional
/// pre-series bin and indices 1..=T the analysed period. Occupancies are
/// stored densely for t = −1..=T. Equality ignores how zeros are stored.
#[derive(Debug, Clone)]
pub struct FlowPanel {
    nodes: usize,
    len: usize,
    flows: BTreeMap<EdgeKey, Vec<u64>>,
    has_pre_series: bool,
    occupancy: Vec<Vec<u64>>,
}

impl PartialEq for FlowPanel {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
            && self.len == other.len
            && self.has_pre_series == other.has_pre_series
            && self.occupancy == other.occupancy
            && self
                .flows
                .keys()
                .chain(other.flows.keys())
                .all(|&e| (0..=self.len).all(|t| self.flow(e, t) == other.flow(e, t)))
    }
}

impl Eq for FlowPanel {}

impl FlowPanel {
    pub fn new(nodes: usize, len: usize) -> Self {
        FlowPanel {
            nodes,
            len,
            flows: BTreeMap::new(),
            has_pre_series: false,
            occupancy: vec![vec![0; len + 2]; nodes],
        }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn has_pre_series(&self) -> bool {
        self.has_pre_series
    }

    /// Sets x for `edge` at time `t` (0 = pre-series bin).
    pub fn set_flow(&mut self, edge: EdgeKey, t: usize, count: u64) -> Result<()> {
        edge.validate(self.nodes)?;
        if t > self.len {
            return Err(Error::InvalidModel(format!(
                "time {t} beyond series length {}",
                self.len
            )));
        }
        if t == 0 {
            self.has_pre_series = true;
        }
        let len = self.len;
        let series = self.flows.entry(edge).or_insert_with(|| vec![0; len + 1]);
        series[t] = count;
        Ok(())
    }

    pub fn flow(&self, edge: EdgeKey, t: usize) -> u64 {
        self.flows.get(&edge).map_or(0, |s| s[t])
    }

    /// Counts for t = 1..=T.
    pub fn series(&self, edge: EdgeKey) -> Vec<u64> {
        match self.flows.get(&edge) {
            Some(s) => s[1..].to_vec(),
            None => vec![0; self.len],
        }
    }

    pub fn pre_series_count(&self, edge: EdgeKey) -> Option<u64> {
        self.has_pre_series.then(|| self.flow(edge, 0))
    }

    pub fn total_traffic(&self, edge: EdgeKey) -> u64 {
        self.flows.get(&edge).map_or(0, |s| s[1..].iter().sum())
    }

    /// Edges with at least one stored count (including zeros that were set).
    pub fn stored_edges(&self) -> impl Iterator<Item = EdgeKey> + '_ {
        self.flows.keys().copied()
    }

    /// Sets nᵢₜ for node `i` ∈ 1..=I and `t` ∈ −1..=T.
    pub fn set_occupancy(&mut self, node: usize, t: i64, count: u64) -> Result<()> {
        let idx = self.occupancy_index(node, t)?;
        self.occupancy[node - 1][idx] = count;
        Ok(())
    }

    pub fn occupancy(&self, node: usize, t: i64) -> u64 {
        self.occupancy_index(node, t)
            .map(|idx| self.occupancy[node - 1][idx])
            .unwrap_or(0)
    }

    fn occupancy_index(&self, node: usize, t: i64) -> Result<usize> {
        if node == 0 || node > self.nodes {
            return Err(Error::InvalidModel(format!(
                "occupancy node {node} outside 1..={}",
                self.nodes
            )));
        }
        if t < -1 || t > self.len as i64 {
            return Err(Error::InvalidModel(format!(
                "occupancy time {t} outside -1..={}",
                self.len
            )));
        }
        Ok((t + 1) as usize)
    }

    /// Fills missing pre-series occupancies so that mᵢ₁ = mᵢ₂ = 1 where
    /// nothing was supplied.
    pub fn synthesize_pre_series(&mut self, node: usize, have_minus_one: bool, have_zero: bool) {
        let row = &mut self.occupancy[node - 1];
        match (have_minus_one, have_zero) {
            (true, true) => {}
            (true, false) => row[1] = row[2],
            (false, true) => row[0] = row[1],
            (false, false) => {
                row[1] = row[2];
                row[0] = row[2];
            }
        }
    }
}

/// Exposures mᵢₜ for i ∈ 0..=I, t ∈ 1..=T; m₀ₜ ≡ 1.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyRatios {
    ratios: Vec<Vec<f64>>,
}

impl OccupancyRatios {
    pub fn get(&self, node: usize, t: usize) -> f64 {
        self.ratios[node][t - 1]
    }

    pub fn node(&self, node: usize) -> &[f64] {
        &self.ratios[node]
    }
}

/// mᵢₜ = nᵢ,ₜ₋₁ / nᵢ,ₜ₋₂; 1 when the denominator is zero, and an empty
/// numerator is floored at half an occupant so exposures stay positive.
pub fn occupancy_ratio(previous: u64, before_previous: u64) -> f64 {
    if before_previous == 0 {
        1.0
    } else {
        (previous as f64).max(0.5) / before_previous as f64
    }
}

pub fn occupancy_ratios(panel: &FlowPanel) -> OccupancyRatios {
    let mut ratios = vec![vec![1.0; panel.len]];
    for i in 1..=panel.nodes {
        ratios.push(
            (1..=panel.len as i64)
                .map(|t| occupancy_ratio(panel.occupancy(i, t - 1), panel.occupancy(i, t - 2)))
                .collect(),
        );
    }
    OccupancyRatios { ratios }
}

/// Default prior construction for every edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSettings {
    pub form: ModelForm,
    pub discount: f64,
    pub variance: f64,
    /// Floor on the pre-series count used for the prior level, ln(max(x̄, floor)).
    pub level_floor: f64,
}

impl Default for PriorSettings {
    fn default() -> Self {
        PriorSettings {
            form: ModelForm::Llgm,
            discount: 0.9,
            variance: 0.1,
            level_floor: 0.5,
        }
    }
}

impl PriorSettings {
    pub fn spec_for(&self, pre_series_count: f64) -> Result<ModelSpec> {
        let level = pre_series_count.max(self.level_floor).ln();
        ModelSpec::builtin(self.form, level, self.variance, self.discount)
    }

    /// Prior spec for `edge`: its pre-series count, or x₁ when the panel
    /// has no pre-series bin.
    pub fn spec_for_edge(&self, panel: &FlowPanel, edge: EdgeKey) -> Result<ModelSpec> {
        let anchor = match panel.pre_series_count(edge) {
            Some(c) => c,
            None if panel.len > 0 => panel.flow(edge, 1),
            None => 0,
        };
        self.spec_for(anchor as f64)
    }
}

/// Per-edge model specifications: a default prior with explicit overrides.
#[derive(Debug, Clone, Default)]
pub struct SpecMap {
    pub prior: PriorSettings,
    pub overrides: BTreeMap<EdgeKey, ModelSpec>,
}

impl SpecMap {
    pub fn new(prior: PriorSettings) -> Self {
        SpecMap {
            prior,
            overrides: BTreeMap::new(),
        }
    }

    pub fn spec(&self, panel: &FlowPanel, edge: EdgeKey) -> Result<ModelSpec> {
        match self.overrides.get(&edge) {
            Some(s) => Ok(s.clone()),
            None => self.prior.spec_for_edge(panel, edge),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFit {
    pub spec: ModelSpec,
    pub output: FilterOutput,
}

/// Filtered state of every modelled edge.
#[derive(Debug)]
pub struct NetworkFilter {
    pub nodes: usize,
    pub len: usize,
    pub ratios: OccupancyRatios,
    pub fits: BTreeMap<EdgeKey, EdgeFit>,
    /// Edges below the traffic threshold, with the prior they would have had.
    pub dropped: BTreeMap<EdgeKey, ModelSpec>,
    pub failures: Vec<(EdgeKey, Error)>,
}

pub(crate) fn with_pool<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    Ok(pool.install(job))
}

fn edge_error(edge: EdgeKey, e: Error) -> Error {
    Error::AtEdge {
        origin: edge.origin,
        destination: edge.destination,
        source: Box::new(e),
    }
}

/// Filters every edge whose total traffic reaches `threshold`, using
/// `workers` threads. Output does not depend on `workers`.
pub fn filter_network(
    panel: &FlowPanel,
    specs: &SpecMap,
    threshold: u64,
    workers: usize,
) -> Result<NetworkFilter> {
    let ratios = occupancy_ratios(panel);
    let mut active = Vec::new();
    let mut dropped = BTreeMap::new();
    let mut failures = Vec::new();
    for edge in edge_universe(panel.nodes) {
        let spec = match specs.spec(panel, edge) {
            Ok(s) => s,
            Err(e) => {
                failures.push((edge, edge_error(edge, e)));
                continue;
            }
        };
        if panel.total_traffic(edge) < threshold {
            dropped.insert(edge, spec);
        } else {
            active.push((edge, spec));
        }
    }

    let results: Vec<(EdgeKey, ModelSpec, Result<FilterOutput>)> = with_pool(workers, || {
        active
            .into_par_iter()
            .map(|(edge, spec)| {
                let exposures = ratios.node(edge.origin);
                let obs: Vec<Observation> = panel
                    .series(edge)
                    .into_iter()
                    .zip(exposures)
                    .map(|(x, &m)| Observation::new(x, m))
                    .collect();
                let out = filter_series(&spec, &obs);
                (edge, spec, out)
            })
            .collect()
    })?;

    let mut fits = BTreeMap::new();
    for (edge, spec, out) in results {
        match out {
            Ok(output) => {
                fits.insert(edge, EdgeFit { spec, output });
            }
            Err(e) => {
                warn!("edge {edge} failed: {e}");
                failures.push((edge, edge_error(edge, e)));
            }
        }
    }
    failures.sort_by_key(|(e, _)| *e);
    Ok(NetworkFilter {
        nodes: panel.nodes,
        len: panel.len,
        ratios,
        fits,
        dropped,
        failures,
    })
}

/// How dropped edges enter recoupling steps that need a complete array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImputePolicy {
    /// Use the edge's prior predictive mean of λₜ.
    #[default]
    PriorMean,
    /// Refuse to recouple when any edge is missing.
    Strict,
}

/// Network filter plus jointly seeded trajectory ensembles.
#[derive(Debug)]
pub struct NetworkPosterior {
    pub filter: NetworkFilter,
    pub ensembles: BTreeMap<EdgeKey, TrajectoryEnsemble>,
    pub n_samples: usize,
    pub seed: u64,
    pub failures: Vec<(EdgeKey, Error)>,
}

/// Backward-samples every fitted edge. Sample s of edge e uses the stream
/// keyed by (seed, e, s), so cross-edge sample s is a coherent joint draw.
pub fn smooth_network(
    filter: NetworkFilter,
    n_samples: usize,
    seed: u64,
    workers: usize,
) -> Result<NetworkPosterior> {
    let nodes = filter.nodes;
    let jobs: Vec<(&EdgeKey, &EdgeFit)> = filter.fits.iter().collect();
    let results: Vec<(EdgeKey, Result<TrajectoryEnsemble>)> = with_pool(workers, || {
        jobs.into_par_iter()
            .map(|(edge, fit)| {
                let ens = backward_sample_stream(
                    &fit.output,
                    &fit.spec,
                    fit.spec.discount,
                    n_samples,
                    seed,
                    edge.stream_id(nodes),
                );
                (*edge, ens)
            })
            .collect()
    })?;
    let mut ensembles = BTreeMap::new();
    let mut failures = Vec::new();
    for (edge, ens) in results {
        match ens {
            Ok(e) => {
                ensembles.insert(edge, e);
            }
            Err(e) => failures.push((edge, edge_error(edge, e))),
        }
    }
    Ok(NetworkPosterior {
        filter,
        ensembles,
        n_samples,
        seed,
        failures,
    })
}

/// Sampled log rates fᵢⱼₜ for the within-network origins i ∈ 1..=I and all
/// destinations j ∈ 0..=I. Each (sample, t) slice is a row-major I×(I+1)
/// array.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRateCube {
    pub nodes: usize,
    pub len: usize,
    pub samples: usize,
    data: Vec<f64>,
    pub clamped: usize,
}

impl LogRateCube {
    pub fn new(nodes: usize, len: usize, samples: usize) -> Self {
        LogRateCube {
            nodes,
            len,
            samples,
            data: vec![0.0; nodes * (nodes + 1) * len * samples],
            clamped: 0,
        }
    }

    fn width(&self) -> usize {
        self.nodes * (self.nodes + 1)
    }

    fn offset(&self, sample: usize, t: usize) -> usize {
        (sample * self.len + (t - 1)) * self.width()
    }

    /// I×(I+1) log-rate array for one sample at time t (1-based).
    pub fn slice(&self, sample: usize, t: usize) -> &[f64] {
        let o = self.offset(sample, t);
        &self.data[o..o + self.width()]
    }

    pub fn slice_mut(&mut self, sample: usize, t: usize) -> &mut [f64] {
        let o = self.offset(sample, t);
        let w = self.width();
        &mut self.data[o..o + w]
    }

    pub fn get(&self, sample: usize, t: usize, origin: usize, destination: usize) -> f64 {
        self.slice(sample, t)[(origin - 1) * (self.nodes + 1) + destination]
    }
}

impl NetworkPosterior {
    /// Log-rate samples `[sample][t−1]` for one edge; dropped edges get
    /// their prior predictive mean under [`ImputePolicy::PriorMean`].
    pub fn edge_log_rates(&self, edge: EdgeKey, policy: ImputePolicy) -> Result<Vec<Vec<f64>>> {
        if let Some(ens) = self.ensembles.get(&edge) {
            let spec = &self.filter.fits[&edge].spec;
            return Ok(ens.log_rates(spec));
        }
        match (self.filter.dropped.get(&edge), policy) {
            (Some(spec), ImputePolicy::PriorMean) => {
                let path = prior_mean_path(spec, self.filter.len);
                Ok(vec![path; self.n_samples])
            }
            _ => Err(edge_error(
                edge,
                Error::InvalidModel("no posterior samples for this edge".into()),
            )),
        }
    }

    /// All within-network origin log rates, aligned by sample index.
    pub fn log_rate_cube(&self, policy: ImputePolicy) -> Result<LogRateCube> {
        let nodes = self.filter.nodes;
        let mut cube = LogRateCube::new(nodes, self.filter.len, self.n_samples);
        let mut clamped = 0;
        for i in 1..=nodes {
            for j in 0..=nodes {
                let rates = self.edge_log_rates(EdgeKey::new(i, j), policy)?;
                for (s, row) in rates.iter().enumerate() {
                    for (k, &lam) in row.iter().enumerate() {
                        cube.slice_mut(s, k + 1)[(i - 1) * (nodes + 1) + j] =
                            clamp_log_rate(lam, &mut clamped);
                    }
                }
            }
        }
        cube.clamped = clamped;
        Ok(cube)
    }

    /// Transition probability samples θᵢⱼₜ, indexed `[sample][j]`.
    pub fn transition_samples(
        &self,
        origin: usize,
        t: usize,
        policy: ImputePolicy,
    ) -> Result<Vec<Vec<f64>>> {
        let nodes = self.filter.nodes;
        let rows: Vec<Vec<Vec<f64>>> = (0..=nodes)
            .map(|j| self.edge_log_rates(EdgeKey::new(origin, j), policy))
            .collect::<Result<_>>()?;
        (0..self.n_samples)
            .map(|s| {
                let log_row: Vec<f64> = rows.iter().map(|r| r[s][t - 1]).collect();
                recouple_log_rates(&log_row)
            })
            .collect()
    }
}

/// Prior predictive mean of λₜ = Fᵀ Gᵗ m₀ for t = 1..=len.
pub fn prior_mean_path(spec: &ModelSpec, len: usize) -> Vec<f64> {
    let mut state = spec.prior_mean.clone();
    (0..len)
        .map(|_| {
            state = &spec.transition * &state;
            spec.regression.dot(&state)
        })
        .collect()
}

/// θⱼ = mφⱼ / Σⱼ′ mφⱼ′. The common exposure cancels.
pub fn recouple_multinomial(rates: &[f64], exposure: f64) -> Result<Vec<f64>> {
    let scaled: Vec<f64> = rates.iter().map(|r| exposure * r).collect();
    let total: f64 = scaled.iter().sum();
    if !(total > 0.0) || !total.is_finite() || scaled.iter().any(|v| *v < 0.0) {
        return Err(Error::Internal(format!(
            "cannot normalize transition row with total {total}"
        )));
    }
    Ok(scaled.into_iter().map(|v| v / total).collect())
}

/// Normalization on the log scale, for rows whose rates may overflow.
pub fn recouple_log_rates(log_rates: &[f64]) -> Result<Vec<f64>> {
    let max = log_rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Internal("non-finite log rate row".into()));
    }
    let rel: Vec<f64> = log_rates.iter().map(|l| (l - max).exp()).collect();
    recouple_multinomial(&rel, 1.0)
}
