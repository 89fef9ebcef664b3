//! TOML configuration for each subcommand. Unknown keys are rejected and
//! relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use mlpsel::identifiability::GramReport;
use mlpsel::optimizer::ParamSpace;
use mlpsel::selection::SelectMode;
use mlpsel::{Dataset, FitConfig, InputDistribution, MlpParams, NoiseModel, ParamFile, Penalty, TransferFunction};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub fn load<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// A parameter file given by path or inline.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamSource {
    Path(PathBuf),
    Inline(ParamFile),
}

impl ParamSource {
    pub fn load(&self, base: &Path) -> CliResult<(MlpParams, TransferFunction)> {
        let file = match self {
            ParamSource::Inline(f) => f.clone(),
            ParamSource::Path(p) => {
                let path = resolve(base, p);
                let text = std::fs::read_to_string(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                ParamFile::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
        };
        Ok((file.params()?, file.transfer))
    }
}

pub fn load_dataset(base: &Path, p: &Path) -> CliResult<Dataset> {
    let path = resolve(base, p);
    let file = std::fs::File::open(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Dataset::read_csv(file).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn default_box() -> f64 {
    ParamSpace::DEFAULT_BOX_BOUND
}

fn default_eta() -> f64 {
    ParamSpace::DEFAULT_ETA
}

fn default_mc() -> usize {
    100_000
}

fn default_threshold() -> f64 {
    GramReport::DEFAULT_THRESHOLD
}

pub fn noise(sigma2: f64) -> CliResult<NoiseModel> {
    Ok(NoiseModel::new(sigma2)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub theta0: ParamSource,
    pub noise_sd: f64,
    pub input: InputDistribution,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitCommandConfig {
    pub data: PathBuf,
    pub k: usize,
    #[serde(default)]
    pub transfer: TransferFunction,
    pub sigma2: f64,
    #[serde(default = "default_box")]
    pub box_bound: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub fit: FitConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectConfig {
    pub data: PathBuf,
    pub max_units: usize,
    pub penalty: Penalty,
    #[serde(default)]
    pub transfer: TransferFunction,
    pub sigma2: f64,
    #[serde(default = "default_box")]
    pub box_bound: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub mode: SelectMode,
    #[serde(default)]
    pub fit: FitConfig,
}

/// Experiment plan; the transfer function comes from the θ⁰ file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub theta0: ParamSource,
    pub sigma2: f64,
    pub data_sd: Option<f64>,
    pub input: InputDistribution,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub max_units: usize,
    pub penalty: Penalty,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default = "default_box")]
    pub box_bound: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub master_seed: u64,
}

impl PlanConfig {
    pub fn plan(&self, base: &Path) -> CliResult<mlpsel::ExperimentPlan> {
        let (theta0, transfer) = self.theta0.load(base)?;
        let plan = mlpsel::ExperimentPlan {
            theta0,
            transfer,
            noise: noise(self.sigma2)?,
            data_sd: self.data_sd,
            input: self.input.clone(),
            n_grid: self.n_grid.clone(),
            replications: self.replications,
            max_units: self.max_units,
            penalty: self.penalty.clone(),
            fit: self.fit.clone(),
            box_bound: self.box_bound,
            eta: self.eta,
            master_seed: self.master_seed,
        };
        plan.validate()?;
        Ok(plan)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrsConfig {
    #[serde(flatten)]
    pub plan: PlanConfig,
    pub k_over: usize,
    pub loose_factor: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpandCheckConfig {
    pub theta0: ParamSource,
    pub theta: ParamSource,
    pub sigma2: f64,
    pub cluster_tol: f64,
    pub input: InputDistribution,
    /// Direction in Φ space; rescaled to unit length.
    pub direction: Vec<f64>,
    pub hs: Vec<f64>,
    #[serde(default = "default_mc")]
    pub mc_samples: usize,
    pub points: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GramConfig {
    pub theta0: ParamSource,
    pub input: InputDistribution,
    #[serde(default = "default_mc")]
    pub mc_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyConfig {
    pub penalty: Penalty,
    pub k_max: usize,
    pub n_grid: Vec<usize>,
    #[serde(default = "one")]
    pub d: usize,
}

fn one() -> usize {
    1
}
