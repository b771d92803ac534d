//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engines::{ConsensusConfig, EngineConfig, EngineKind};
use crate::error::{Error, Result};
use crate::objectives::{LinregParams, LogregParams};
use crate::topology::ErParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Consensus,
    Linreg,
    Logreg,
    Spectra,
    Theory,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Consensus => "consensus",
            ExperimentKind::Linreg => "linreg",
            ExperimentKind::Logreg => "logreg",
            ExperimentKind::Spectra => "spectra",
            ExperimentKind::Theory => "theory",
        }
    }
}

fn default_one() -> usize {
    1
}

fn default_scale() -> f64 {
    1.0
}

/// Random digraph sequence. Without a horizon, snapshots are generated on
/// demand for as long as the run needs them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub nodes: usize,
    pub p: f64,
    #[serde(default)]
    pub drop: usize,
    #[serde(default = "default_one")]
    pub window: usize,
    #[serde(default)]
    pub horizon: Option<usize>,
}

impl TopologySpec {
    pub fn er_params(&self) -> ErParams {
        ErParams::new(self.nodes, self.p, self.drop)
    }
}

fn default_noise() -> f64 {
    0.01
}

fn default_reg() -> f64 {
    1e-3
}

fn default_flip() -> f64 {
    0.1
}

/// Synthetic data and initial states. Consensus runs only read `dim` and
/// `init_scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub dim: usize,
    #[serde(default)]
    pub samples_per_node: usize,
    #[serde(default = "default_noise")]
    pub noise_variance: f64,
    #[serde(default = "default_reg")]
    pub reg: f64,
    #[serde(default = "default_flip")]
    pub label_flip: f64,
    #[serde(default = "default_scale")]
    pub init_scale: f64,
}

fn default_windows() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectraSpec {
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default = "default_windows")]
    pub windows: usize,
}

fn default_gamma() -> f64 {
    0.05
}

fn default_q() -> f64 {
    1.0
}

fn default_fraction() -> f64 {
    0.25
}

fn default_calibration() -> usize {
    5000
}

fn default_ensemble() -> usize {
    100
}

/// Constants report plus the error-recursion check on an SVRG ensemble.
/// The ensemble step size is `alpha_fraction` times the largest step size
/// for which the error system is stated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheorySpec {
    #[serde(default = "default_fraction")]
    pub alpha_fraction: f64,
    #[serde(default = "default_calibration")]
    pub calibration_windows: usize,
    #[serde(default = "default_ensemble")]
    pub ensemble: usize,
}

impl Default for TheorySpec {
    fn default() -> Self {
        TheorySpec {
            alpha_fraction: default_fraction(),
            calibration_windows: default_calibration(),
            ensemble: default_ensemble(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_one")]
    pub repeat: usize,
    /// Output directory; the `DICS_OUT` environment variable overrides it.
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub topology: TopologySpec,
    #[serde(default)]
    pub data: Option<DataSpec>,
    #[serde(default)]
    pub consensus: Option<ConsensusConfig>,
    #[serde(default)]
    pub engine: Option<EngineConfig>,
    #[serde(default)]
    pub spectra: Option<SpectraSpec>,
    #[serde(default)]
    pub theory: Option<TheorySpec>,
}

fn missing(kind: ExperimentKind, section: &str) -> Error {
    Error::invalid(format!("{} experiments need a `{section}` section", kind.name()))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| e.in_stage("config"))
    }

    pub fn data(&self) -> Result<&DataSpec> {
        self.data.as_ref().ok_or_else(|| missing(self.kind, "data"))
    }

    pub fn engine(&self) -> Result<&EngineConfig> {
        self.engine.as_ref().ok_or_else(|| missing(self.kind, "engine"))
    }

    pub fn linreg_params(&self) -> Result<LinregParams> {
        let data = self.data()?;
        Ok(LinregParams::new(self.topology.nodes, data.samples_per_node, data.dim, data.noise_variance))
    }

    pub fn logreg_params(&self) -> Result<LogregParams> {
        let data = self.data()?;
        Ok(LogregParams {
            label_flip: data.label_flip,
            ..LogregParams::new(self.topology.nodes, data.samples_per_node, data.dim, data.reg)
        })
    }

    /// Checks every field a run of this kind will read.
    pub fn validate(&self) -> Result<()> {
        let t = &self.topology;
        if t.nodes == 0 || t.window == 0 {
            return Err(Error::invalid("topology needs positive `nodes` and `window`"));
        }
        if !(t.p > 0.0 && t.p <= 1.0) {
            return Err(Error::invalid(format!("edge probability {} outside (0, 1]", t.p)));
        }
        if t.horizon == Some(0) {
            return Err(Error::invalid("topology horizon must be positive"));
        }
        if self.repeat == 0 {
            return Err(Error::invalid("repeat must be at least 1"));
        }
        if let Some(data) = &self.data {
            if data.dim == 0 {
                return Err(Error::invalid("data dimension must be positive"));
            }
            if !(data.init_scale.is_finite() && data.init_scale >= 0.0) {
                return Err(Error::invalid("init_scale must be finite and nonnegative"));
            }
        }
        match self.kind {
            ExperimentKind::Consensus => {
                self.data()?;
                let c = self.consensus.as_ref().ok_or_else(|| missing(self.kind, "consensus"))?;
                if !(c.gamma > 0.0 && c.gamma < 1.0) || !(c.q > 0.0 && c.q <= 1.0) || c.record_stride == Some(0) {
                    return Err(Error::invalid("consensus needs gamma in (0, 1), q in (0, 1] and a positive stride"));
                }
            }
            ExperimentKind::Linreg | ExperimentKind::Logreg => {
                let data = self.data()?;
                if data.samples_per_node == 0 {
                    return Err(Error::invalid("`samples_per_node` must be positive"));
                }
                self.check_engine()?;
            }
            ExperimentKind::Spectra => {
                self.data()?;
                let s = self.spectra.as_ref().ok_or_else(|| missing(self.kind, "spectra"))?;
                if !(s.gamma > 0.0 && s.gamma < 1.0) || !(s.q > 0.0 && s.q <= 1.0) || s.windows == 0 {
                    return Err(Error::invalid("spectra needs gamma in (0, 1), q in (0, 1] and windows > 0"));
                }
            }
            ExperimentKind::Theory => {
                if self.data()?.samples_per_node == 0 {
                    return Err(Error::invalid("`samples_per_node` must be positive"));
                }
                let engine = self.check_engine()?;
                if engine.kind != EngineKind::Svrg {
                    return Err(Error::invalid("theory experiments run the svrg engine"));
                }
                let th = self.theory.clone().unwrap_or_default();
                if !(th.alpha_fraction > 0.0 && th.alpha_fraction <= 1.0) || th.calibration_windows == 0 || th.ensemble == 0 {
                    return Err(Error::invalid(
                        "theory needs alpha_fraction in (0, 1] and positive calibration_windows and ensemble",
                    ));
                }
            }
        }
        Ok(())
    }

    fn check_engine(&self) -> Result<&EngineConfig> {
        let engine = self.engine()?;
        engine.validate()?;
        if engine.window != self.topology.window {
            return Err(Error::invalid(format!(
                "engine window {} differs from the topology window {}",
                engine.window, self.topology.window
            )));
        }
        Ok(engine)
    }
}
