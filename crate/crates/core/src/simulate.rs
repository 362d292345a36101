//! Generative simulator for the full network flow model.
//!
//! Ground-truth gravity components are laid out on a grid of times, mapped
//! to rates φᵢⱼₜ = μₜαᵢₜβⱼₜγᵢⱼₜ, and the panel is generated forward in time:
//! Poisson inflows from node 0 and multinomial moves of every occupant of
//! node i with cell probabilities θᵢₜ ∝ φᵢ·ₜ.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::gravity::{decompose, GravitySlice};
use crate::network::{EdgeKey, FlowPanel};
use crate::rng::stream_rng;
use crate::{Error, Result};

/// Baseline μₜ generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BaselinePath {
    /// μₜ = level.
    Constant { level: f64 },
    /// ln μₜ = ln level + amplitude · sin(2π(t − phase)/period).
    Sinusoid {
        level: f64,
        amplitude: f64,
        period: f64,
        phase: f64,
    },
    /// ln μₜ linearly interpolated between `(t, ln μ)` knots, flat outside.
    Piecewise { knots: Vec<(f64, f64)> },
}

impl BaselinePath {
    pub fn log_level(&self, t: f64) -> f64 {
        match self {
            BaselinePath::Constant { level } => level.ln(),
            BaselinePath::Sinusoid {
                level,
                amplitude,
                period,
                phase,
            } => level.ln() + amplitude * (std::f64::consts::TAU * (t - phase) / period).sin(),
            BaselinePath::Piecewise { knots } => piecewise(knots, t),
        }
    }
}

fn piecewise(knots: &[(f64, f64)], t: f64) -> f64 {
    match knots {
        [] => 0.0,
        [(_, v)] => *v,
        _ => {
            if t <= knots[0].0 {
                return knots[0].1;
            }
            for w in knots.windows(2) {
                let ((t0, v0), (t1, v1)) = (w[0], w[1]);
                if t <= t1 {
                    return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
                }
            }
            knots[knots.len() - 1].1
        }
    }
}

/// Gaussian-shaped excursion of ln γᵢⱼ around `center`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityBump {
    pub origin: usize,
    pub destination: usize,
    pub center: f64,
    pub width: f64,
    pub height: f64,
}

impl AffinityBump {
    fn at(&self, t: f64) -> f64 {
        self.height * (-0.5 * ((t - self.center) / self.width).powi(2)).exp()
    }
}

/// How inflow rates φ₀ⱼₜ are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InflowSpec {
    /// Fixed rate per destination node 1..=I.
    Constant { rates: Vec<f64> },
    /// Rates that keep expected occupancy E[nᵢ,ₜ₋₂] equal to the row total
    /// Σⱼφᵢⱼₜ, so the multinomial panel agrees with the decoupled Poisson
    /// form in expectation. Never below `floor` times the target.
    Balanced { floor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub nodes: usize,
    pub len: usize,
    #[serde(default)]
    pub seed: u64,
    pub baseline: BaselinePath,
    /// Raw ln αᵢ for i = 1..=I; empty means all zero.
    #[serde(default)]
    pub origin_effects: Vec<f64>,
    /// Raw ln βⱼ for j = 0..=I; empty means all zero.
    #[serde(default)]
    pub destination_effects: Vec<f64>,
    #[serde(default)]
    pub affinity_bumps: Vec<AffinityBump>,
    pub inflow: InflowSpec,
    /// nᵢ,₋₁ for i = 1..=I; defaults to the balanced expectation.
    #[serde(default)]
    pub initial_occupancy: Option<Vec<u64>>,
}

impl ScenarioSpec {
    /// Five-minute bins over a day: diurnal baseline, graded node effects,
    /// a dominant exit and two affinity bumps.
    pub fn default_day(nodes: usize, seed: u64) -> Self {
        let len = 288;
        let spread = |k: usize, n: usize, width: f64| {
            if n <= 1 {
                0.0
            } else {
                width * (2.0 * k as f64 / (n - 1) as f64 - 1.0)
            }
        };
        let origin_effects = (0..nodes).map(|k| spread(k, nodes, 0.4)).collect();
        // Busy origins are also popular destinations, which keeps the
        // balanced inflows off their floor.
        let mut destination_effects: Vec<f64> = (0..nodes).map(|k| spread(k, nodes, 0.5)).collect();
        destination_effects.insert(0, 8f64.ln());
        let mut affinity_bumps = Vec::new();
        if nodes >= 2 {
            affinity_bumps.push(AffinityBump {
                origin: 1,
                destination: 2,
                center: 100.0,
                width: 15.0,
                height: 1.0,
            });
            affinity_bumps.push(AffinityBump {
                origin: nodes.min(3),
                destination: nodes.min(3),
                center: 200.0,
                width: 20.0,
                height: 0.8,
            });
        }
        ScenarioSpec {
            nodes,
            len,
            seed,
            baseline: BaselinePath::Sinusoid {
                level: 8.0,
                amplitude: 0.5,
                period: len as f64,
                phase: 72.0,
            },
            origin_effects,
            destination_effects,
            affinity_bumps,
            inflow: InflowSpec::Balanced { floor: 0.05 },
            initial_occupancy: None,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("scenario: {m}")));
        if self.nodes == 0 || self.len == 0 {
            return bad("nodes and len must be positive".into());
        }
        if !self.origin_effects.is_empty() && self.origin_effects.len() != self.nodes {
            return bad(format!("expected {} origin effects", self.nodes));
        }
        if !self.destination_effects.is_empty() && self.destination_effects.len() != self.nodes + 1
        {
            return bad(format!("expected {} destination effects", self.nodes + 1));
        }
        for b in &self.affinity_bumps {
            if b.origin == 0
                || b.origin > self.nodes
                || b.destination > self.nodes
                || !(b.width > 0.0)
            {
                return bad(format!("invalid affinity bump {b:?}"));
            }
        }
        match &self.inflow {
            InflowSpec::Constant { rates }
                if rates.len() != self.nodes || rates.iter().any(|r| !(*r >= 0.0)) =>
            {
                return bad(format!("expected {} non-negative inflow rates", self.nodes));
            }
            InflowSpec::Balanced { floor } if !(*floor > 0.0) => {
                return bad("balanced inflow floor must be positive".into());
            }
            _ => {}
        }
        if let Some(init) = &self.initial_occupancy {
            if init.len() != self.nodes {
                return bad(format!("expected {} initial occupancies", self.nodes));
            }
        }
        Ok(())
    }
}

/// True component paths and rates for t = 0..=len + 2 (t = 0 is the
/// pre-series bin; the two trailing times feed balanced inflows).
#[derive(Debug, Clone, PartialEq)]
pub struct TruthPaths {
    pub nodes: usize,
    pub len: usize,
    components: Vec<GravitySlice>,
    /// φ₀ⱼₜ at index [t][j − 1].
    inflow: Vec<Vec<f64>>,
    /// Number of (t, j), t ≤ len, where a balanced inflow hit its floor.
    /// Occupancy then runs above the row totals.
    pub floored: usize,
}

impl TruthPaths {
    pub fn components(&self, t: usize) -> &GravitySlice {
        &self.components[t]
    }

    /// True φᵢⱼₜ for within-network origins.
    pub fn rate(&self, t: usize, origin: usize, destination: usize) -> f64 {
        self.components[t].log_rate(origin, destination).exp()
    }

    pub fn inflow_rate(&self, t: usize, destination: usize) -> f64 {
        self.inflow[t][destination - 1]
    }

    /// True rate of any edge: inflow rate for origin 0, φᵢⱼₜ otherwise.
    pub fn edge_rate(&self, edge: EdgeKey, t: usize) -> f64 {
        if edge.is_inflow() {
            self.inflow_rate(t, edge.destination)
        } else {
            self.rate(t, edge.origin, edge.destination)
        }
    }

    /// Row total Σⱼ φᵢⱼₜ.
    pub fn row_total(&self, t: usize, origin: usize) -> f64 {
        (0..=self.nodes).map(|j| self.rate(t, origin, j)).sum()
    }

    /// θᵢⱼₜ = φᵢⱼₜ / Σⱼ′ φᵢⱼ′ₜ.
    pub fn transition(&self, t: usize, origin: usize) -> Vec<f64> {
        let total = self.row_total(t, origin);
        (0..=self.nodes)
            .map(|j| self.rate(t, origin, j) / total)
            .collect()
    }
}

/// Builds zero-sum-normalized components from the raw scenario paths.
pub fn build_truth(spec: &ScenarioSpec) -> Result<TruthPaths> {
    spec.validate()?;
    let (nodes, cols) = (spec.nodes, spec.nodes + 1);
    let effect = |v: &Vec<f64>, k: usize| v.get(k).copied().unwrap_or(0.0);
    let mut components = Vec::with_capacity(spec.len + 3);
    for t in 0..=spec.len + 2 {
        let tf = t as f64;
        let h = spec.baseline.log_level(tf);
        let mut raw = vec![0.0; nodes * cols];
        for i in 0..nodes {
            for j in 0..cols {
                raw[i * cols + j] =
                    h + effect(&spec.origin_effects, i) + effect(&spec.destination_effects, j);
            }
        }
        for b in &spec.affinity_bumps {
            raw[(b.origin - 1) * cols + b.destination] += b.at(tf);
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!(
                "scenario produces non-finite log rates at t = {t}"
            )));
        }
        components.push(decompose(nodes, &raw)?);
    }
    let mut truth = TruthPaths {
        nodes,
        len: spec.len,
        components,
        inflow: Vec::new(),
        floored: 0,
    };
    let mut floored = 0;
    truth.inflow = (0..=spec.len + 2)
        .map(|t| {
            let (rates, hits) = inflow_rates(&truth, &spec.inflow, t);
            if t <= spec.len {
                floored += hits;
            }
            rates
        })
        .collect();
    truth.floored = floored;
    Ok(truth)
}

fn inflow_rates(truth: &TruthPaths, inflow: &InflowSpec, t: usize) -> (Vec<f64>, usize) {
    match inflow {
        InflowSpec::Constant { rates } => (rates.clone(), 0),
        InflowSpec::Balanced { floor } => {
            let last = truth.len + 2;
            let target_t = (t + 2).min(last);
            let source_t = (t + 1).min(last);
            let mut hits = 0;
            let rates = (1..=truth.nodes)
                .map(|j| {
                    let target = truth.row_total(target_t, j);
                    let internal: f64 = (1..=truth.nodes)
                        .map(|i| truth.row_total(source_t, i) * truth.transition(t, i)[j])
                        .sum();
                    if target - internal < floor * target {
                        hits += 1;
                        floor * target
                    } else {
                        target - internal
                    }
                })
                .collect();
            (rates, hits)
        }
    }
}

/// A simulated panel together with the truth that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedTruth {
    pub panel: FlowPanel,
    pub truth: TruthPaths,
}

/// Draws one occupancy-consistent panel from `truth`, seeded by `spec.seed`.
pub fn simulate_panel(truth: TruthPaths, spec: &ScenarioSpec) -> Result<SimulatedTruth> {
    spec.validate()?;
    let nodes = truth.nodes;
    let mut rng = stream_rng(spec.seed, u64::MAX, 0);
    let mut panel = FlowPanel::new(nodes, truth.len);

    let mut occupancy: Vec<u64> = match &spec.initial_occupancy {
        Some(init) => init.clone(),
        None => (1..=nodes)
            .map(|i| truth.row_total(1, i).round() as u64)
            .collect(),
    };
    for (i, &n) in occupancy.iter().enumerate() {
        panel.set_occupancy(i + 1, -1, n)?;
    }

    for t in 0..=truth.len {
        let mut next = vec![0u64; nodes];
        for j in 1..=nodes {
            let rate = truth.inflow_rate(t, j);
            let x = if rate > 0.0 {
                Poisson::new(rate)
                    .map_err(|e| Error::Numerical(format!("inflow rate {rate}: {e}")))?
                    .sample(&mut rng) as u64
            } else {
                0
            };
            panel.set_flow(EdgeKey::new(0, j), t, x)?;
            next[j - 1] += x;
        }
        for i in 1..=nodes {
            let moves = multinomial(&mut rng, occupancy[i - 1], &truth.transition(t, i))?;
            for (j, &x) in moves.iter().enumerate() {
                panel.set_flow(EdgeKey::new(i, j), t, x)?;
                if j > 0 {
                    next[j - 1] += x;
                }
            }
        }
        for (j, &n) in next.iter().enumerate() {
            panel.set_occupancy(j + 1, t as i64, n)?;
        }
        occupancy = next;
    }
    Ok(SimulatedTruth { panel, truth })
}

/// Multinomial draw by sequential conditional binomials.
pub fn multinomial<R: Rng>(rng: &mut R, trials: u64, probs: &[f64]) -> Result<Vec<u64>> {
    let mut out = vec![0u64; probs.len()];
    let mut remaining = trials;
    let mut mass: f64 = probs.iter().sum();
    for (k, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if k + 1 == probs.len() {
            out[k] = remaining;
            break;
        }
        let cond = if mass > 0.0 {
            (p / mass).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let x = Binomial::new(remaining, cond)
            .map_err(|e| Error::Numerical(format!("binomial({remaining}, {cond}): {e}")))?
            .sample(rng);
        out[k] = x;
        remaining -= x;
        mass -= p;
    }
    Ok(out)
}
