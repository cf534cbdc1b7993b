//! TOML run configuration.
//!
//! The operator is a tree of constructor nodes tagged by `type`:
//!
//! ```toml
//! [model.operator]
//! type = "tensor"
//! [model.operator.outer]
//! type = "ar1"
//! n = 10
//! [model.operator.inner]
//! type = "matern"
//! mesh = { n = 20, start = 0.0, end = 1.0 }
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use llngm::distributions::{NoiseFamily, NoiseSpec};
use llngm::gradients::Estimator;
use llngm::inference::{FitOptions, SgldOptions};
use llngm::mesh::{build_interval_mesh, Mesh1D};
use llngm::model::{Prior, PriorSet};
use llngm::operators::{
    advdiff_operator, ar1_operator, bivariate_operator, matern_operator, ou_operator, pinned_rw_operator,
    replicate_operator, tensor_operator, LatentOperator,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub inference: InferenceConfig,
    #[serde(default)]
    pub prediction: PredictionConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub operator: OperatorConfig,
    pub process: NoiseConfig,
    pub measurement: NoiseConfig,
    /// Starting (or, for `simulate`, true) fixed-effect coefficients.
    #[serde(default)]
    pub beta: Vec<f64>,
    #[serde(default)]
    pub priors: BTreeMap<String, PriorConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeshConfig {
    Uniform { n: usize, start: f64, end: f64 },
    Nodes { nodes: Vec<f64> },
}

impl MeshConfig {
    fn build(&self, key: &str) -> Result<Mesh1D, CliError> {
        match self {
            MeshConfig::Uniform { n, start, end } => Mesh1D::uniform(*n, *start, *end),
            MeshConfig::Nodes { nodes } => build_interval_mesh(nodes.clone()),
        }
        .map_err(|e| CliError::config(key, e))
    }
}

fn default_rho() -> f64 {
    0.5
}
fn default_one() -> f64 {
    1.0
}
fn default_zero() -> f64 {
    0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum OperatorConfig {
    Ar1 {
        n: usize,
        #[serde(default = "default_rho")]
        rho: f64,
    },
    /// Random walk with the first `order` nodes pinned.
    Rw {
        order: usize,
        mesh: MeshConfig,
    },
    Ou {
        mesh: MeshConfig,
        #[serde(default = "default_one")]
        theta: f64,
    },
    Matern {
        mesh: MeshConfig,
        #[serde(default = "default_one")]
        kappa: f64,
    },
    Advdiff {
        mesh: MeshConfig,
        steps: usize,
        #[serde(default = "default_one")]
        kappa: f64,
        #[serde(default = "default_zero")]
        gamma: f64,
        #[serde(default = "default_one")]
        c: f64,
    },
    Tensor {
        outer: Box<OperatorConfig>,
        inner: Box<OperatorConfig>,
    },
    Bivariate {
        first: Box<OperatorConfig>,
        second: Box<OperatorConfig>,
        #[serde(default = "default_zero")]
        zeta: f64,
        #[serde(default = "default_zero")]
        rho: f64,
    },
    Replicate {
        base: Box<OperatorConfig>,
        copies: usize,
    },
}

impl OperatorConfig {
    pub fn build(&self) -> Result<LatentOperator, CliError> {
        self.build_at("model.operator")
    }

    fn build_at(&self, key: &str) -> Result<LatentOperator, CliError> {
        let mesh_key = format!("{key}.mesh");
        let op = match self {
            OperatorConfig::Ar1 { n, rho } => ar1_operator(*rho, *n),
            OperatorConfig::Rw { order, mesh } => pinned_rw_operator(*order, &mesh.build(&mesh_key)?),
            OperatorConfig::Ou { mesh, theta } => ou_operator(*theta, &mesh.build(&mesh_key)?),
            OperatorConfig::Matern { mesh, kappa } => matern_operator(*kappa, &mesh.build(&mesh_key)?),
            OperatorConfig::Advdiff { mesh, steps, kappa, gamma, c } => {
                advdiff_operator(*kappa, *gamma, *c, &mesh.build(&mesh_key)?, *steps)
            }
            OperatorConfig::Tensor { outer, inner } => {
                tensor_operator(&outer.build_at(&format!("{key}.outer"))?, &inner.build_at(&format!("{key}.inner"))?)
            }
            OperatorConfig::Bivariate { first, second, zeta, rho } => bivariate_operator(
                &first.build_at(&format!("{key}.first"))?,
                &second.build_at(&format!("{key}.second"))?,
                *zeta,
                *rho,
            ),
            OperatorConfig::Replicate { base, copies } => {
                replicate_operator(&base.build_at(&format!("{key}.base"))?, *copies)
            }
        };
        op.map_err(|e| CliError::config(key, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyConfig {
    Gaussian,
    Nig,
    Gal,
}

impl From<FamilyConfig> for NoiseFamily {
    fn from(f: FamilyConfig) -> Self {
        match f {
            FamilyConfig::Gaussian => NoiseFamily::Gaussian,
            FamilyConfig::Nig => NoiseFamily::Nig,
            FamilyConfig::Gal => NoiseFamily::Gal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub family: FamilyConfig,
    #[serde(default = "default_zero")]
    pub mu: f64,
    #[serde(default = "default_one")]
    pub sigma: f64,
    #[serde(default = "default_one")]
    pub nu: f64,
}

impl NoiseConfig {
    pub fn spec(&self, h: Vec<f64>) -> NoiseSpec {
        match self.family {
            FamilyConfig::Gaussian => NoiseSpec::gaussian(self.sigma, h),
            FamilyConfig::Nig => NoiseSpec::nig(self.mu, self.sigma, self.nu, h),
            FamilyConfig::Gal => NoiseSpec::gal(self.mu, self.sigma, self.nu, h),
        }
    }
}

/// Prior on the unconstrained scale of a named parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorConfig {
    Normal { mean: f64, var: f64 },
    InverseExponential { rate: f64 },
    Flat,
}

impl From<PriorConfig> for Prior {
    fn from(p: PriorConfig) -> Self {
        match p {
            PriorConfig::Normal { mean, var } => Prior::Normal { mean, var },
            PriorConfig::InverseExponential { rate } => Prior::InverseExponential { rate },
            PriorConfig::Flat => Prior::Flat,
        }
    }
}

impl ModelConfig {
    pub fn prior_set(&self) -> PriorSet {
        self.priors.iter().fold(PriorSet::defaults(), |s, (k, v)| s.with(k.clone(), (*v).into()))
    }
}

fn default_na() -> String {
    "NA".into()
}
fn default_index() -> String {
    "index".into()
}
fn default_response() -> String {
    "y".into()
}

/// Column roles of the data file. Each row observes latent node `index`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: String,
    #[serde(default = "default_index")]
    pub index: String,
    #[serde(default = "default_response")]
    pub response: String,
    #[serde(default)]
    pub covariates: Vec<String>,
    /// Adds a column of ones ahead of the covariates.
    #[serde(default)]
    pub intercept: bool,
    #[serde(default = "default_na")]
    pub na: String,
}

impl DataConfig {
    pub fn n_fixed(&self) -> usize {
        self.covariates.len() + usize::from(self.intercept)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorConfig {
    Rb,
    Mc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub chains: usize,
    pub max_iters: usize,
    pub checkpoint_every: usize,
    pub window: usize,
    pub k: usize,
    pub estimator: EstimatorConfig,
    pub lr0: f64,
    pub hold: usize,
    pub tau: f64,
    pub power: f64,
    pub sgld_samples: usize,
    pub sgld_step0: f64,
    pub sgld_tau: f64,
    pub sgld_thin: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        let o = FitOptions::default();
        InferenceConfig {
            chains: o.chains,
            max_iters: o.max_iters,
            checkpoint_every: o.checkpoint_every,
            window: o.window,
            k: o.k,
            estimator: EstimatorConfig::Rb,
            lr0: o.schedule.lr0,
            hold: o.schedule.hold,
            tau: o.schedule.tau,
            power: o.schedule.power,
            sgld_samples: o.sgld.n_samples,
            sgld_step0: o.sgld.step0,
            sgld_tau: o.sgld.tau,
            sgld_thin: o.sgld.thin,
        }
    }
}

impl InferenceConfig {
    pub fn fit_options(&self, seed: u64) -> FitOptions {
        let estimator = match self.estimator {
            EstimatorConfig::Rb => Estimator::Rb,
            EstimatorConfig::Mc => Estimator::Mc,
        };
        let base = FitOptions::default();
        FitOptions {
            chains: self.chains,
            max_iters: self.max_iters,
            checkpoint_every: self.checkpoint_every,
            window: self.window,
            k: self.k,
            estimator,
            schedule: llngm::inference::optimizer::StepSchedule {
                lr0: self.lr0,
                hold: self.hold,
                tau: self.tau,
                power: self.power,
            },
            seed,
            sgld: SgldOptions {
                n_samples: self.sgld_samples,
                step0: self.sgld_step0,
                tau: self.sgld_tau,
                thin: self.sgld_thin,
                k: self.k,
                estimator,
                seed: seed.wrapping_add(self.chains as u64),
                ..base.sgld
            },
            ..base
        }
    }
}

fn default_draws() -> usize {
    500
}
fn default_quantiles() -> Vec<f64> {
    vec![0.025, 0.5, 0.975]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionConfig {
    /// Target file with the index column, the covariates and, for
    /// scoring, the response.
    #[serde(default)]
    pub targets: Option<String>,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_quantiles")]
    pub quantiles: Vec<f64>,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        PredictionConfig { targets: None, draws: default_draws(), quantiles: default_quantiles() }
    }
}

fn default_dir() -> String {
    "out".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: default_dir() }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::parse(text).map_err(|e| CliError::config("<syntax>", e.message()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let key = if path == "." { "<root>".to_string() } else { path };
            CliError::config(key, e.into_inner().message())
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let i = &self.inference;
        let positive = [
            ("inference.chains", i.chains),
            ("inference.max_iters", i.max_iters),
            ("inference.checkpoint_every", i.checkpoint_every),
            ("inference.k", i.k),
            ("inference.sgld_thin", i.sgld_thin),
            ("prediction.draws", self.prediction.draws),
        ];
        if let Some((key, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(CliError::config(*key, "must be positive"));
        }
        if let Some(q) = self.prediction.quantiles.iter().find(|q| !(0.0..=1.0).contains(*q)) {
            return Err(CliError::config("prediction.quantiles", format!("{q} is not in [0, 1]")));
        }
        if self.model.beta.len() != self.data.n_fixed() && !self.model.beta.is_empty() {
            return Err(CliError::config(
                "model.beta",
                format!("{} coefficients for {} fixed effects", self.model.beta.len(), self.data.n_fixed()),
            ));
        }
        Ok(())
    }

    /// Coefficients, with zeros when none are configured.
    pub fn beta(&self) -> Vec<f64> {
        if self.model.beta.is_empty() {
            vec![0.0; self.data.n_fixed()]
        } else {
            self.model.beta.clone()
        }
    }
}
