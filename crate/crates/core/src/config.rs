//! Run configuration, read from TOML.
//!
//! ```toml
//! seed = 11
//! out = "run"
//!
//! [model]
//! form = "llgm"
//! discount = 0.9
//! prior_variance = 0.1
//!
//! [smooth]
//! samples = 500
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dglm::ModelForm;
use crate::evaluation::DEFAULT_SCORING_START;
use crate::network::{ImputePolicy, PriorSettings};
use crate::simulate::ScenarioSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub form: ModelForm,
    pub discount: f64,
    pub prior_variance: f64,
    pub level_floor: f64,
    /// Edges with fewer total counts than this are not filtered.
    pub threshold: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let p = PriorSettings::default();
        ModelConfig {
            form: p.form,
            discount: p.discount,
            prior_variance: p.variance,
            level_floor: p.level_floor,
            threshold: 1,
        }
    }
}

impl ModelConfig {
    pub fn prior(&self) -> PriorSettings {
        PriorSettings {
            form: self.form,
            discount: self.discount,
            variance: self.prior_variance,
            level_floor: self.level_floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothConfig {
    pub samples: usize,
    pub impute: ImputePolicy,
}

impl Default for SmoothConfig {
    fn default() -> Self {
        SmoothConfig {
            samples: 500,
            impute: ImputePolicy::PriorMean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub scoring_start: usize,
    pub baseline_discount: f64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            scoring_start: DEFAULT_SCORING_START,
            baseline_discount: 0.9,
        }
    }
}

/// Where `filter` reads its panel. Relative paths resolve against the
/// config file; unset paths default to the simulator's output.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PanelConfig {
    pub flows: Option<PathBuf>,
    pub occupancy: Option<PathBuf>,
    /// Declared node count; inferred from the largest index when absent.
    pub nodes: Option<usize>,
    /// Declared series length; inferred from the largest t when absent.
    pub len: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub nodes: usize,
    /// Full scenario; overrides `nodes` and the built-in day scenario.
    /// Its seed is replaced by the run seed.
    pub scenario: Option<ScenarioSpec>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            nodes: 10,
            scenario: None,
        }
    }
}

impl SimulateConfig {
    pub fn scenario(&self, seed: u64) -> ScenarioSpec {
        match &self.scenario {
            Some(s) => ScenarioSpec { seed, ..s.clone() },
            None => ScenarioSpec::default_day(self.nodes, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; falls back to the environment default, then 1.
    pub workers: Option<usize>,
    pub out: PathBuf,
    pub model: ModelConfig,
    pub smooth: SmoothConfig,
    pub evaluate: EvaluateConfig,
    pub panel: PanelConfig,
    pub simulate: SimulateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            workers: None,
            out: PathBuf::from("out"),
            model: ModelConfig::default(),
            smooth: SmoothConfig::default(),
            evaluate: EvaluateConfig::default(),
            panel: PanelConfig::default(),
            simulate: SimulateConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.out);
        if let Some(p) = cfg.panel.flows.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.panel.occupancy.as_mut() {
            resolve(p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if !(m.discount > 0.0 && m.discount <= 1.0) {
            return Err(Error::Config(format!(
                "model.discount {} outside (0, 1]",
                m.discount
            )));
        }
        if !(m.prior_variance > 0.0 && m.prior_variance.is_finite()) {
            return Err(Error::Config(
                "model.prior_variance must be positive".into(),
            ));
        }
        if !(m.level_floor > 0.0 && m.level_floor.is_finite()) {
            return Err(Error::Config("model.level_floor must be positive".into()));
        }
        if self.smooth.samples < 1 {
            return Err(Error::Config("smooth.samples must be at least 1".into()));
        }
        let b = self.evaluate.baseline_discount;
        if !(b > 0.0 && b <= 1.0) {
            return Err(Error::Config(format!(
                "evaluate.baseline_discount {b} outside (0, 1]"
            )));
        }
        if self.evaluate.scoring_start < 1 {
            return Err(Error::Config(
                "evaluate.scoring_start must be at least 1".into(),
            ));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.simulate.nodes < 1 {
            return Err(Error::Config("simulate.nodes must be at least 1".into()));
        }
        Ok(())
    }

    /// SHA-256 of everything that can change results. Worker count and
    /// output location are excluded.
    pub fn content_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.workers = None;
        canonical.out = PathBuf::new();
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex_digest(json.as_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
