//! Pipeline stages: simulate → filter → smooth → gravity → evaluate → report.
//!
//! Each stage writes long-format CSV tables and a `manifest_<stage>.json`
//! into the output directory. Downstream stages check that the upstream
//! manifest exists and was produced from the same config and input bytes,
//! then rebuild the upstream state in memory; every stage is deterministic,
//! so the rebuilt state is identical to the one behind the upstream tables.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use statrs::distribution::{ContinuousCDF, Gamma};

use crate::config::RunConfig;
use crate::dglm::{FilterOutput, GammaBelief, Observation};
use crate::evaluation::{baseline_filter, forecast_records, score, BaselineSpec, ForecastRecord};
use crate::gravity::{credible_values, decompose_ensemble, MIN_CREDIBLE_SAMPLES};
use crate::io::{
    input_hash, num, parse_panel, read_table, write_panel, Manifest, PanelShape, Table,
};
use crate::network::{
    filter_network, recouple_log_rates, smooth_network, EdgeKey, FlowPanel, NetworkFilter,
    NetworkPosterior, SpecMap,
};
use crate::retro::rate_trajectories;
use crate::simulate::{build_truth, simulate_panel};
use crate::stats::Summary;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Command {
    Simulate,
    Filter,
    Smooth,
    Gravity,
    Evaluate,
    Report,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::Simulate,
        Command::Filter,
        Command::Smooth,
        Command::Gravity,
        Command::Evaluate,
        Command::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Filter => "filter",
            Command::Smooth => "smooth",
            Command::Gravity => "gravity",
            Command::Evaluate => "evaluate",
            Command::Report => "report",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown command `{s}`")))
    }
}

pub const FLOWS_FILE: &str = "flows.csv";
pub const OCCUPANCY_FILE: &str = "occupancy.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const TRUTH_GRAVITY_FILE: &str = "truth_gravity.csv";
pub const FILTERED_FILE: &str = "filtered.csv";
pub const SMOOTHED_FILE: &str = "smoothed.csv";
pub const TRANSITIONS_FILE: &str = "transitions.csv";
pub const GRAVITY_FILE: &str = "gravity.csv";
pub const CREDIBLE_FILE: &str = "credible.csv";
pub const FORECASTS_FILE: &str = "forecasts.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const REPORT_FILE: &str = "report.csv";

/// Outcome of one stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageOutput {
    pub command: Command,
    pub manifest: Manifest,
}

/// Runs one stage with `workers` threads. Outputs do not depend on
/// `workers`.
pub fn run_pipeline(cmd: Command, cfg: &RunConfig, workers: usize) -> Result<StageOutput> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out)?;
    info!("{cmd}: writing to {}", cfg.out.display());
    let manifest = match cmd {
        Command::Simulate => simulate(cfg)?,
        Command::Filter => filter(cfg, workers)?,
        Command::Smooth => smooth(cfg, workers)?,
        Command::Gravity => gravity(cfg, workers)?,
        Command::Evaluate => evaluate(cfg, workers)?,
        Command::Report => report(cfg)?,
    };
    Ok(StageOutput {
        command: cmd,
        manifest,
    })
}

fn simulate(cfg: &RunConfig) -> Result<Manifest> {
    let spec = cfg.simulate.scenario(cfg.seed);
    let truth = build_truth(&spec)?;
    let sim = simulate_panel(truth, &spec)?;
    let out = &cfg.out;
    write_panel(&sim.panel, &out.join(FLOWS_FILE), &out.join(OCCUPANCY_FILE))?;

    let (nodes, len) = (spec.nodes, spec.len);
    let truth = &sim.truth;
    let mut w = Table::create(
        &out.join(TRUTH_FILE),
        &["origin", "destination", "t", "rate"],
    )?;
    for i in 0..=nodes {
        for j in 0..=nodes {
            if i == 0 && j == 0 {
                continue;
            }
            let e = EdgeKey::new(i, j);
            for t in 1..=len {
                w.row([
                    i.to_string(),
                    j.to_string(),
                    t.to_string(),
                    num(truth.edge_rate(e, t)),
                ])?;
            }
        }
    }
    w.finish()?;

    let mut w = Table::create(
        &out.join(TRUTH_GRAVITY_FILE),
        &["t", "component", "index_i", "index_j", "value"],
    )?;
    for t in 1..=len {
        let c = truth.components(t);
        let ts = t.to_string();
        w.row([ts.as_str(), "baseline", "", "", &num(c.baseline.exp())])?;
        for i in 1..=nodes {
            w.row([
                ts.as_str(),
                "origin",
                &i.to_string(),
                "",
                &num(c.origin_effect(i).exp()),
            ])?;
        }
        for j in 0..=nodes {
            w.row([
                ts.as_str(),
                "destination",
                "",
                &j.to_string(),
                &num(c.destination[j].exp()),
            ])?;
        }
        for i in 1..=nodes {
            for j in 0..=nodes {
                w.row([
                    ts.as_str(),
                    "affinity",
                    &i.to_string(),
                    &j.to_string(),
                    &num(c.affinity(i, j).exp()),
                ])?;
            }
        }
    }
    w.finish()?;
    Manifest::write(
        out,
        Command::Simulate.name(),
        cfg.content_hash(),
        input_hash([]),
        cfg.seed,
        &[FLOWS_FILE, OCCUPANCY_FILE, TRUTH_FILE, TRUTH_GRAVITY_FILE],
    )
}

struct LoadedPanel {
    panel: FlowPanel,
    input_hash: String,
}

fn load_panel(cfg: &RunConfig) -> Result<LoadedPanel> {
    let flows = match &cfg.panel.flows {
        Some(p) => p.clone(),
        None => {
            let p = cfg.out.join(FLOWS_FILE);
            if !p.exists() {
                return Err(Error::Dependency {
                    path: p,
                    command: Command::Simulate.name().into(),
                });
            }
            p
        }
    };
    let occupancy: Option<PathBuf> = match &cfg.panel.occupancy {
        Some(p) => Some(p.clone()),
        None if cfg.panel.flows.is_none() => {
            Some(cfg.out.join(OCCUPANCY_FILE)).filter(|p| p.exists())
        }
        None => None,
    };
    let flow_bytes = std::fs::read(&flows).map_err(|e| io_context(&flows, e))?;
    let occ_bytes = match &occupancy {
        Some(p) => Some(std::fs::read(p).map_err(|e| io_context(p, e))?),
        None => None,
    };
    let shape = PanelShape {
        nodes: cfg.panel.nodes,
        len: cfg.panel.len,
    };
    let panel = parse_panel(&flows, occupancy.as_deref(), shape)?;
    let hash = match &occ_bytes {
        Some(o) => input_hash([flow_bytes.as_slice(), o.as_slice()]),
        None => input_hash([flow_bytes.as_slice()]),
    };
    Ok(LoadedPanel {
        panel,
        input_hash: hash,
    })
}

fn io_context(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

/// Requires a manifest from `upstream` matching this config and input.
fn require(cfg: &RunConfig, upstream: Command, input: &str) -> Result<()> {
    let path = Manifest::path(&cfg.out, upstream.name());
    let stale = match Manifest::read(&cfg.out, upstream.name())? {
        None => true,
        Some(m) => m.config_hash != cfg.content_hash() || m.input_hash != input,
    };
    if stale {
        return Err(Error::Dependency {
            path,
            command: upstream.name().into(),
        });
    }
    Ok(())
}

fn run_filter(cfg: &RunConfig, panel: &FlowPanel, workers: usize) -> Result<NetworkFilter> {
    let specs = SpecMap::new(cfg.model.prior());
    let mut filtered = filter_network(panel, &specs, cfg.model.threshold, workers)?;
    if !filtered.failures.is_empty() {
        let (_, e) = filtered.failures.swap_remove(0);
        return Err(e);
    }
    Ok(filtered)
}

fn run_smooth(cfg: &RunConfig, panel: &FlowPanel, workers: usize) -> Result<NetworkPosterior> {
    let filtered = run_filter(cfg, panel, workers)?;
    let mut post = smooth_network(filtered, cfg.smooth.samples, cfg.seed, workers)?;
    if !post.failures.is_empty() {
        let (_, e) = post.failures.swap_remove(0);
        return Err(e);
    }
    Ok(post)
}

fn filter(cfg: &RunConfig, workers: usize) -> Result<Manifest> {
    let loaded = load_panel(cfg)?;
    let filtered = run_filter(cfg, &loaded.panel, workers)?;
    let mut w = Table::create(
        &cfg.out.join(FILTERED_FILE),
        &[
            "origin",
            "destination",
            "t",
            "x",
            "f",
            "q",
            "r",
            "c",
            "forecast_mean",
            "lo95",
            "hi95",
            "rate_mean",
            "rate_lo95",
            "rate_hi95",
        ],
    )?;
    for (edge, fit) in &filtered.fits {
        write_filtered_edge(&mut w, *edge, &fit.output)?;
    }
    w.finish()?;
    Manifest::write(
        &cfg.out,
        Command::Filter.name(),
        cfg.content_hash(),
        loaded.input_hash,
        cfg.seed,
        &[FILTERED_FILE],
    )
}

/// Equal-tailed 95% interval of a gamma rate belief.
fn gamma_interval(g: GammaBelief) -> Result<(f64, f64)> {
    let d = Gamma::new(g.r, g.c)
        .map_err(|e| Error::Numerical(format!("gamma({}, {}): {e}", g.r, g.c)))?;
    Ok((d.inverse_cdf(0.025), d.inverse_cdf(0.975)))
}

fn write_filtered_edge(w: &mut Table, edge: EdgeKey, out: &FilterOutput) -> Result<()> {
    for (k, step) in out.steps.iter().enumerate() {
        let rec = ForecastRecord::new(k + 1, step.observation.count, step.predictive);
        let (lo, hi) = gamma_interval(step.posterior_gamma)?;
        w.row([
            edge.origin.to_string(),
            edge.destination.to_string(),
            (k + 1).to_string(),
            step.observation.count.to_string(),
            num(step.prior_moments.f),
            num(step.prior_moments.q),
            num(step.prior_gamma.r),
            num(step.prior_gamma.c),
            num(rec.mean),
            rec.lo95.to_string(),
            rec.hi95.to_string(),
            num(step.posterior_gamma.mean()),
            num(lo),
            num(hi),
        ])?;
    }
    Ok(())
}

fn summary_fields(s: &Summary) -> [String; 4] {
    [num(s.mean), num(s.lo95), num(s.median), num(s.hi95)]
}

fn smooth(cfg: &RunConfig, workers: usize) -> Result<Manifest> {
    let loaded = load_panel(cfg)?;
    require(cfg, Command::Filter, &loaded.input_hash)?;
    let post = run_smooth(cfg, &loaded.panel, workers)?;

    let mut w = Table::create(
        &cfg.out.join(SMOOTHED_FILE),
        &[
            "origin",
            "destination",
            "t",
            "mean",
            "lo95",
            "median",
            "hi95",
        ],
    )?;
    for (edge, ens) in &post.ensembles {
        let rates = rate_trajectories(ens, &post.filter.fits[edge].spec);
        for t in 1..=post.filter.len {
            let [mean, lo, med, hi] = summary_fields(&rates.summary(t));
            w.row([
                edge.origin.to_string(),
                edge.destination.to_string(),
                t.to_string(),
                mean,
                lo,
                med,
                hi,
            ])?;
        }
    }
    w.finish()?;

    let mut w = Table::create(
        &cfg.out.join(TRANSITIONS_FILE),
        &[
            "origin",
            "destination",
            "t",
            "mean",
            "lo95",
            "median",
            "hi95",
        ],
    )?;
    let nodes = post.filter.nodes;
    for i in 1..=nodes {
        // [j][sample][t − 1]
        let rows: Vec<Vec<Vec<f64>>> = (0..=nodes)
            .map(|j| post.edge_log_rates(EdgeKey::new(i, j), cfg.smooth.impute))
            .collect::<Result<_>>()?;
        for t in 1..=post.filter.len {
            let mut theta = vec![Vec::with_capacity(post.n_samples); nodes + 1];
            for s in 0..post.n_samples {
                let log_row: Vec<f64> = rows.iter().map(|r| r[s][t - 1]).collect();
                for (j, p) in recouple_log_rates(&log_row)?.into_iter().enumerate() {
                    theta[j].push(p);
                }
            }
            for (j, values) in theta.into_iter().enumerate() {
                let [mean, lo, med, hi] = summary_fields(&Summary::from_values(values));
                w.row([
                    i.to_string(),
                    j.to_string(),
                    t.to_string(),
                    mean,
                    lo,
                    med,
                    hi,
                ])?;
            }
        }
    }
    w.finish()?;
    Manifest::write(
        &cfg.out,
        Command::Smooth.name(),
        cfg.content_hash(),
        loaded.input_hash,
        cfg.seed,
        &[SMOOTHED_FILE, TRANSITIONS_FILE],
    )
}

fn gravity(cfg: &RunConfig, workers: usize) -> Result<Manifest> {
    let loaded = load_panel(cfg)?;
    require(cfg, Command::Smooth, &loaded.input_hash)?;
    let post = run_smooth(cfg, &loaded.panel, workers)?;
    let dec = decompose_ensemble(&post, cfg.smooth.impute, workers)?;
    let nodes = dec.nodes;

    let mut w = Table::create(
        &cfg.out.join(GRAVITY_FILE),
        &[
            "t",
            "component",
            "index_i",
            "index_j",
            "mean",
            "lo95",
            "median",
            "hi95",
        ],
    )?;
    for t in 1..=dec.len {
        let ts = t.to_string();
        let mut put = |component: &str, i: String, j: String, s: Summary| -> Result<()> {
            let [mean, lo, med, hi] = summary_fields(&s);
            w.row([ts.clone(), component.to_string(), i, j, mean, lo, med, hi])
        };
        put(
            "baseline",
            String::new(),
            String::new(),
            dec.baseline_summary(t),
        )?;
        for i in 1..=nodes {
            put(
                "origin",
                i.to_string(),
                String::new(),
                dec.origin_summary(i, t),
            )?;
        }
        for j in 0..=nodes {
            put(
                "destination",
                String::new(),
                j.to_string(),
                dec.destination_summary(j, t),
            )?;
        }
        for i in 1..=nodes {
            for j in 0..=nodes {
                put(
                    "affinity",
                    i.to_string(),
                    j.to_string(),
                    dec.affinity_summary(EdgeKey::new(i, j), t),
                )?;
            }
        }
    }
    w.finish()?;

    let mut w = Table::create(
        &cfg.out.join(CREDIBLE_FILE),
        &["origin", "destination", "t", "cv"],
    )?;
    if dec.samples >= MIN_CREDIBLE_SAMPLES {
        for i in 1..=nodes {
            for j in 0..=nodes {
                let series = credible_values(&dec, EdgeKey::new(i, j))?;
                for (k, v) in series.values.iter().enumerate() {
                    w.row([i.to_string(), j.to_string(), (k + 1).to_string(), num(*v)])?;
                }
            }
        }
    } else {
        log::warn!(
            "credible values skipped: {} samples, need {MIN_CREDIBLE_SAMPLES}",
            dec.samples
        );
    }
    w.finish()?;
    Manifest::write(
        &cfg.out,
        Command::Gravity.name(),
        cfg.content_hash(),
        loaded.input_hash,
        cfg.seed,
        &[GRAVITY_FILE, CREDIBLE_FILE],
    )
}

fn evaluate(cfg: &RunConfig, workers: usize) -> Result<Manifest> {
    let loaded = load_panel(cfg)?;
    require(cfg, Command::Filter, &loaded.input_hash)?;
    let filtered = run_filter(cfg, &loaded.panel, workers)?;
    let start = cfg.evaluate.scoring_start;

    let mut forecasts = Table::create(
        &cfg.out.join(FORECASTS_FILE),
        &[
            "model",
            "origin",
            "destination",
            "t",
            "x",
            "mean",
            "lo95",
            "hi95",
            "log_density",
        ],
    )?;
    let mut scores = Table::create(
        &cfg.out.join(SCORES_FILE),
        &[
            "model",
            "origin",
            "destination",
            "first_t",
            "last_t",
            "scored",
            "excluded",
            "mape",
            "coverage95",
            "log_score",
        ],
    )?;
    let model_name = format!("{:?}", cfg.model.form).to_lowercase();
    let mut pooled: [(String, Vec<ForecastRecord>); 2] = [
        (model_name, Vec::new()),
        ("baseline".to_string(), Vec::new()),
    ];

    for (edge, fit) in &filtered.fits {
        let obs: Vec<Observation> = fit.output.steps.iter().map(|s| s.observation).collect();
        let base_spec = BaselineSpec::matched(
            fit.spec.prior_mean[0],
            fit.spec.prior_cov[(0, 0)],
            cfg.evaluate.baseline_discount,
        )?;
        let per_model = [
            forecast_records(&fit.output),
            baseline_filter(&base_spec, &obs)?.forecast_records(),
        ];
        for (k, recs) in per_model.into_iter().enumerate() {
            let name = pooled[k].0.clone();
            for r in &recs {
                forecasts.row([
                    name.clone(),
                    edge.origin.to_string(),
                    edge.destination.to_string(),
                    r.t.to_string(),
                    r.observed.to_string(),
                    num(r.mean),
                    r.lo95.to_string(),
                    r.hi95.to_string(),
                    num(r.log_density),
                ])?;
            }
            write_score(
                &mut scores,
                &name,
                &edge.origin.to_string(),
                &edge.destination.to_string(),
                &recs,
                start,
            )?;
            pooled[k].1.extend(recs);
        }
    }
    for (name, recs) in &pooled {
        if !recs.is_empty() {
            write_score(&mut scores, name, "all", "all", recs, start)?;
        }
    }
    forecasts.finish()?;
    scores.finish()?;
    Manifest::write(
        &cfg.out,
        Command::Evaluate.name(),
        cfg.content_hash(),
        loaded.input_hash,
        cfg.seed,
        &[FORECASTS_FILE, SCORES_FILE],
    )
}

fn write_score(
    w: &mut Table,
    model: &str,
    origin: &str,
    destination: &str,
    recs: &[ForecastRecord],
    start: usize,
) -> Result<()> {
    let s = score(recs, start)?;
    w.row([
        model.to_string(),
        origin.to_string(),
        destination.to_string(),
        s.first_t.to_string(),
        s.last_t.to_string(),
        s.scored.to_string(),
        s.excluded.to_string(),
        num(s.mape),
        num(s.coverage95),
        num(s.log_score),
    ])
}

/// Columns of an upstream table, by name.
struct Columns {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Columns {
    fn load(cfg: &RunConfig, file: &str, producer: Command) -> Result<Self> {
        let path = cfg.out.join(file);
        if !path.exists() {
            return Err(Error::Dependency {
                path,
                command: producer.name().into(),
            });
        }
        let (header, rows) = read_table(&path)?;
        Ok(Columns { header, rows })
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                path: name.to_string(),
                line: 1,
                message: format!("missing column `{name}`"),
            })
    }
}

/// Plot-ready long table: one row per (figure, series, edge or index, t).
fn report(cfg: &RunConfig) -> Result<Manifest> {
    let filtered = Columns::load(cfg, FILTERED_FILE, Command::Filter)?;
    let smoothed = Columns::load(cfg, SMOOTHED_FILE, Command::Smooth)?;
    let transitions = Columns::load(cfg, TRANSITIONS_FILE, Command::Smooth)?;
    let gravity = Columns::load(cfg, GRAVITY_FILE, Command::Gravity)?;
    let credible = Columns::load(cfg, CREDIBLE_FILE, Command::Gravity)?;

    let mut w = Table::create(
        &cfg.out.join(REPORT_FILE),
        &[
            "figure", "series", "index_i", "index_j", "t", "value", "lo95", "hi95",
        ],
    )?;
    let emit = |w: &mut Table,
                tab: &Columns,
                figure: &str,
                series: Option<&str>,
                cols: [&str; 6]|
     -> Result<()> {
        let idx: Vec<Option<usize>> = cols
            .iter()
            .map(|c| {
                if c.is_empty() {
                    Ok(None)
                } else {
                    tab.col(c).map(Some)
                }
            })
            .collect::<Result<_>>()?;
        let series_col = match series {
            Some(_) => None,
            None => Some(tab.col("component")?),
        };
        for row in &tab.rows {
            let get = |k: usize| idx[k].map_or(String::new(), |c| row[c].clone());
            let name = match (series, series_col) {
                (Some(s), _) => s.to_string(),
                (None, Some(c)) => row[c].clone(),
                _ => unreachable!(),
            };
            w.row([
                figure.to_string(),
                name,
                get(0),
                get(1),
                get(2),
                get(3),
                get(4),
                get(5),
            ])?;
        }
        Ok(())
    };
    emit(
        &mut w,
        &filtered,
        "rates",
        Some("observed"),
        ["origin", "destination", "t", "x", "", ""],
    )?;
    emit(
        &mut w,
        &filtered,
        "rates",
        Some("filtered"),
        [
            "origin",
            "destination",
            "t",
            "rate_mean",
            "rate_lo95",
            "rate_hi95",
        ],
    )?;
    emit(
        &mut w,
        &filtered,
        "forecast",
        Some("one_step"),
        [
            "origin",
            "destination",
            "t",
            "forecast_mean",
            "lo95",
            "hi95",
        ],
    )?;
    emit(
        &mut w,
        &smoothed,
        "rates",
        Some("smoothed"),
        ["origin", "destination", "t", "mean", "lo95", "hi95"],
    )?;
    emit(
        &mut w,
        &transitions,
        "transitions",
        Some("smoothed"),
        ["origin", "destination", "t", "mean", "lo95", "hi95"],
    )?;
    emit(
        &mut w,
        &gravity,
        "gravity",
        None,
        ["index_i", "index_j", "t", "mean", "lo95", "hi95"],
    )?;
    emit(
        &mut w,
        &credible,
        "credible",
        Some("cv"),
        ["origin", "destination", "t", "cv", "", ""],
    )?;
    w.finish()?;

    let mut inputs = Vec::new();
    for f in [
        FILTERED_FILE,
        SMOOTHED_FILE,
        TRANSITIONS_FILE,
        GRAVITY_FILE,
        CREDIBLE_FILE,
    ] {
        inputs.push(std::fs::read(cfg.out.join(f))?);
    }
    Manifest::write(
        &cfg.out,
        Command::Report.name(),
        cfg.content_hash(),
        input_hash(inputs.iter().map(Vec::as_slice)),
        cfg.seed,
        &[REPORT_FILE],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(out: &Path) -> RunConfig {
        let mut cfg = RunConfig {
            out: out.to_path_buf(),
            ..RunConfig::default()
        };
        cfg.simulate.nodes = 3;
        cfg.smooth.samples = 120;
        let mut s = crate::simulate::ScenarioSpec::default_day(3, 0);
        s.len = 40;
        cfg.simulate.scenario = Some(s);
        cfg
    }

    #[test]
    fn command_names_roundtrip() {
        for c in Command::ALL {
            assert_eq!(c.name().parse::<Command>().unwrap(), c);
        }
        assert!("plot".parse::<Command>().is_err());
    }

    #[test]
    fn downstream_without_upstream_is_a_dependency_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        for cmd in [
            Command::Filter,
            Command::Smooth,
            Command::Gravity,
            Command::Evaluate,
            Command::Report,
        ] {
            let err = run_pipeline(cmd, &cfg, 1).unwrap_err();
            assert_eq!(err.exit_code(), 4, "{cmd}: {err}");
        }
        run_pipeline(Command::Simulate, &cfg, 1).unwrap();
        match run_pipeline(Command::Smooth, &cfg, 1).unwrap_err() {
            Error::Dependency { command, .. } => assert_eq!(command, "filter"),
            e => panic!("{e}"),
        }
        run_pipeline(Command::Filter, &cfg, 1).unwrap();
        match run_pipeline(Command::Gravity, &cfg, 1).unwrap_err() {
            Error::Dependency { command, .. } => assert_eq!(command, "smooth"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn stale_upstream_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path());
        run_pipeline(Command::Simulate, &cfg, 1).unwrap();
        run_pipeline(Command::Filter, &cfg, 1).unwrap();
        cfg.model.discount = 0.95;
        assert_eq!(
            run_pipeline(Command::Smooth, &cfg, 1)
                .unwrap_err()
                .exit_code(),
            4
        );
    }

    #[test]
    fn filter_writes_one_row_per_edge_and_time() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        run_pipeline(Command::Simulate, &cfg, 1).unwrap();
        run_pipeline(Command::Filter, &cfg, 1).unwrap();
        run_pipeline(Command::Smooth, &cfg, 1).unwrap();
        let (_, filtered) = read_table(&dir.path().join(FILTERED_FILE)).unwrap();
        let (_, smoothed) = read_table(&dir.path().join(SMOOTHED_FILE)).unwrap();
        let (_, transitions) = read_table(&dir.path().join(TRANSITIONS_FILE)).unwrap();
        let edges: std::collections::BTreeSet<(String, String)> = filtered
            .iter()
            .map(|r| (r[0].clone(), r[1].clone()))
            .collect();
        assert_eq!(filtered.len(), edges.len() * 40);
        assert_eq!(smoothed.len(), filtered.len());
        assert_eq!(transitions.len(), 3 * 4 * 40);
    }

    #[test]
    fn evaluate_aligns_models() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        run_pipeline(Command::Simulate, &cfg, 1).unwrap();
        run_pipeline(Command::Filter, &cfg, 1).unwrap();
        run_pipeline(Command::Evaluate, &cfg, 1).unwrap();
        let (header, rows) = read_table(&dir.path().join(SCORES_FILE)).unwrap();
        assert_eq!(header[0], "model");
        let pooled: Vec<_> = rows.iter().filter(|r| r[1] == "all").collect();
        assert_eq!(pooled.len(), 2);
        assert_eq!(pooled[0][0], "llgm");
        assert_eq!(pooled[1][0], "baseline");
        // Same scored window for both models.
        assert_eq!(pooled[0][3..7], pooled[1][3..7]);
    }
}
