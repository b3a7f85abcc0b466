//! JSON experiment configuration. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::averaging::RateMethod;
use crate::error::{Error, Result};
use crate::riccati::TimeGrid;
use crate::spatial::{assemble_family, DiffusionField, OperatorFamily, ProblemData, Scenario, SpatialGrid};

/// Discretization and problem data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub nt: usize,
    pub a0: f64,
    pub cbar: f64,
    pub qdec: f64,
    pub smax: usize,
    pub actuators: Vec<[f64; 2]>,
    pub q_obs: f64,
    pub p_ter: f64,
    pub scenario: Scenario,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n: 64,
            horizon: 1.0,
            nt: 64,
            a0: 0.1,
            cbar: 0.05,
            qdec: 2.0,
            smax: 64,
            actuators: vec![[0.2, 0.4], [0.6, 0.8]],
            q_obs: 1.0,
            p_ter: 0.1,
            scenario: Scenario::Homogeneous,
        }
    }
}

impl ModelConfig {
    pub fn family(&self) -> Result<OperatorFamily<f64>> {
        let grid = SpatialGrid::new(self.n)?;
        let field = DiffusionField::new(self.a0, self.cbar, self.qdec, self.smax)?;
        let acts: Vec<(f64, f64)> = self.actuators.iter().map(|&[l, r]| (l, r)).collect();
        assemble_family(grid, field, &acts, self.q_obs, self.p_ter)
    }

    pub fn data(&self, fam: &OperatorFamily<f64>) -> ProblemData<f64> {
        ProblemData::for_scenario(self.scenario, fam.grid(), self.horizon)
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon, self.nt)
    }

    /// Same model with `n` and `nt` multiplied by `factor`.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            n: self.n * factor,
            nt: self.nt * factor,
            ..self.clone()
        }
    }
}

/// Point-set method names accepted by `qmc.method`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointMethod {
    Lattice,
    Shifted,
    Folded,
    Centered,
    Interlaced,
    Mc,
}

impl PointMethod {
    pub fn rate_method(self) -> Option<RateMethod> {
        match self {
            PointMethod::Shifted => Some(RateMethod::Shifted),
            PointMethod::Folded => Some(RateMethod::Folded),
            PointMethod::Interlaced => Some(RateMethod::Interlaced),
            PointMethod::Mc => Some(RateMethod::Mc),
            PointMethod::Lattice | PointMethod::Centered => None,
        }
    }
}

/// Averaged quantity in rate studies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QoiKind {
    #[default]
    Feedback,
    Cost,
}

fn default_alpha() -> usize {
    2
}

fn default_repeats() -> usize {
    16
}

fn default_b_scale() -> f64 {
    0.1
}

fn default_b_decay() -> f64 {
    2.0
}

/// Cubature settings. The weight sequence `b_j = b_scale · j^(−b_decay)`
/// drives the CBC constructions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QmcConfig {
    pub method: PointMethod,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(rename = "N_list", default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    pub s: usize,
    #[serde(default = "default_alpha")]
    pub alpha: usize,
    #[serde(rename = "R", default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub qoi: QoiKind,
    #[serde(default = "default_b_scale")]
    pub b_scale: f64,
    #[serde(default = "default_b_decay")]
    pub b_decay: f64,
}

impl QmcConfig {
    pub fn bseq(&self, s: usize) -> Vec<f64> {
        crate::qmc::WeightSpec::power_decay(self.b_scale, self.b_decay, s)
    }

    pub fn sizes(&self) -> Result<Vec<usize>> {
        match (&self.n_list, self.n) {
            (Some(list), _) if !list.is_empty() => Ok(list.clone()),
            (_, Some(n)) => Ok(vec![n]),
            _ => Err(Error::Config("qmc block needs \"N\" or a nonempty \"N_list\"".into())),
        }
    }
}

fn default_levels() -> usize {
    2
}

fn default_s_list() -> Vec<usize> {
    vec![4, 8, 16, 32]
}

fn default_s_ref() -> usize {
    64
}

fn default_j_list() -> Vec<usize> {
    vec![1, 2, 4, 8, 16]
}

fn default_delta() -> f64 {
    1e-3
}

fn default_c_list() -> Vec<f64> {
    vec![1e-3, 1e-2, 1e-1]
}

fn default_sigma_count() -> usize {
    5
}

/// Study selection with its own parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StudyConfig {
    /// Riccati cost against the all-at-once optimum, on `levels` grids.
    RiccatiCheck {
        #[serde(default = "default_levels")]
        levels: usize,
    },
    /// Feedback law evaluated on the open-loop optimum.
    OracleCheck {
        #[serde(default = "default_levels")]
        levels: usize,
    },
    QmcRate,
    McRate,
    Truncation {
        #[serde(default = "default_s_list")]
        s_list: Vec<usize>,
        #[serde(default = "default_s_ref")]
        s_ref: usize,
    },
    Propagation {
        #[serde(default = "default_c_list")]
        c_list: Vec<f64>,
        #[serde(default = "default_sigma_count")]
        sigma_count: usize,
    },
    DerivativeDecay {
        #[serde(default = "default_j_list")]
        j_list: Vec<usize>,
        #[serde(default = "default_delta")]
        delta: f64,
    },
    Points,
}

impl StudyConfig {
    /// File stem of the study's CSV output.
    pub fn name(&self) -> &'static str {
        match self {
            StudyConfig::RiccatiCheck { .. } => "riccati-check",
            StudyConfig::OracleCheck { .. } => "oracle-check",
            StudyConfig::QmcRate => "qmc-rate",
            StudyConfig::McRate => "mc-rate",
            StudyConfig::Truncation { .. } => "truncation",
            StudyConfig::Propagation { .. } => "propagation",
            StudyConfig::DerivativeDecay { .. } => "derivative-decay",
            StudyConfig::Points => "points",
        }
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_cache() -> PathBuf {
    PathBuf::from("cache")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qmc: Option<QmcConfig>,
    pub study: StudyConfig,
    /// Seed for parameter samples outside the qmc block.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default = "default_cache")]
    pub cache_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks that the selected study has what it needs.
    pub fn validate(&self) -> Result<()> {
        let needs_qmc = matches!(
            self.study,
            StudyConfig::QmcRate | StudyConfig::McRate | StudyConfig::Points
        );
        if needs_qmc && self.qmc.is_none() {
            return Err(Error::Config(format!("study {} needs a \"qmc\" block", self.study.name())));
        }
        if let Some(q) = &self.qmc {
            q.sizes()?;
            if q.s == 0 {
                return Err(Error::Config("qmc.s must be positive".into()));
            }
            if matches!(self.study, StudyConfig::QmcRate) && q.method.rate_method().is_none() {
                return Err(Error::Config(format!(
                    "qmc-rate supports shifted, folded, interlaced and mc, not {:?}",
                    q.method
                )));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON serialization, without the output
    /// and cache locations.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output");
            map.remove("cache_dir");
        }
        digest_hex(value.to_string().as_bytes())
    }
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn digest_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
