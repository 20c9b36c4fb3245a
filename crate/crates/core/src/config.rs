//! Experiment configuration read from TOML. Every section is optional and
//! falls back to the preset of the chosen exemplar; the seed is mandatory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bbvi::{BbviConfig, Covariance};
use crate::datagen::{DataError, OuDataConfig, RegressionConfig, SchloglConfig};
use crate::io::hash_hex;
use crate::nets::{Activation, MlpSpec};
use crate::node::{DataModel, Observation};
use crate::optim::AdamConfig;
use crate::sampler::{GammaSchedule, SamplerConfig};
use crate::trainer::{data_initial_state, MleConfig, PriorCenter, ScoreInit, TrainConfig, Unroll, Variant};
use crate::trajectory::{Scaling, TrajectoryEnsemble};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config field `{field}`: {reason}")]
    Field { field: String, reason: String },
    #[error("cannot parse config: {0}")]
    Parse(String),
}

fn field(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Exemplar {
    #[default]
    Ou,
    Schlogl,
    Regression,
    /// A dataset directory written by `gen-data` or by hand.
    Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub exemplar: Exemplar,
    pub path: Option<PathBuf>,
    pub ou: OuDataConfig,
    pub schlogl: SchloglConfig,
    pub regression: RegressionConfig,
    /// Raw units per model unit.
    pub scale: f64,
    pub offset: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            exemplar: Exemplar::Ou,
            path: None,
            ou: OuDataConfig::default(),
            schlogl: SchloglConfig::default(),
            regression: RegressionConfig::default(),
            scale: 1.0,
            offset: 0.0,
        }
    }
}

impl DataSection {
    pub fn scaling(&self) -> Scaling {
        Scaling {
            offset: self.offset,
            scale: self.scale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// `dy/dt = W y + b`.
    Linear,
    /// Neural ODE on the observed state.
    Node,
    /// Static network of the inputs.
    Static,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub substeps: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::Linear,
            hidden: Vec::new(),
            activation: Activation::Tanh,
            substeps: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MleSection {
    pub epochs: usize,
    pub lr: f64,
    /// Second pass at a smaller rate, starting from the first.
    pub refine_epochs: usize,
    pub refine_lr: f64,
}

impl Default for MleSection {
    fn default() -> Self {
        Self {
            epochs: 2000,
            lr: 1e-2,
            refine_epochs: 0,
            refine_lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub variant: Variant,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub n_modes: usize,
    pub kl_weight: f64,
    pub score_hidden: Vec<usize>,
    pub score_activation: Activation,
    pub score_init: ScoreInit,
    pub prior_center: PriorCenter,
    /// Differentiate through only the last this-many sampler steps.
    pub unroll_last: Option<usize>,
    /// Write a checkpoint every this-many epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            variant: t.variant,
            epochs: t.epochs,
            lr: t.adam.lr,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            eps: t.adam.eps,
            n_modes: t.n_modes,
            kl_weight: t.kl_weight,
            score_hidden: t.score_hidden,
            score_activation: t.score_activation,
            score_init: t.score_init,
            prior_center: t.prior_center,
            unroll_last: None,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BbviSection {
    pub epochs: usize,
    pub lr: f64,
    pub n_samples: usize,
    pub covariance: Covariance,
    pub init_sigma: f64,
    pub prior_sigma: f64,
    pub n_report: usize,
    pub use_likelihood: bool,
}

impl Default for BbviSection {
    fn default() -> Self {
        let b = BbviConfig::default();
        Self {
            epochs: b.epochs,
            lr: b.adam.lr,
            n_samples: b.n_samples,
            covariance: b.covariance,
            init_sigma: b.init_sigma,
            prior_sigma: b.prior_sigma,
            n_report: b.n_report,
            use_likelihood: b.use_likelihood,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Points per KDE grid.
    pub kde_points: usize,
    /// Time indices with density tables; empty means first, middle and last.
    pub kde_times: Vec<usize>,
    /// Endpoint draws pooled by `train` for the summary, in addition to the
    /// training ensemble. Each draw reruns the trained sampler.
    pub extra_seeds: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            kde_points: 128,
            kde_times: Vec::new(),
            extra_seeds: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub data: DataSection,
    pub model: ModelSection,
    pub mle: MleSection,
    pub sampler: SamplerConfig,
    pub train: TrainSection,
    pub bbvi: BbviSection,
    pub eval: EvalSection,
}

impl ExperimentConfig {
    /// Settings used for the bundled examples of each exemplar.
    pub fn preset(exemplar: Exemplar) -> Self {
        let mut c = Self::default();
        c.data.exemplar = exemplar;
        match exemplar {
            Exemplar::Ou | Exemplar::Dataset => {
                c.mle = MleSection {
                    epochs: 3000,
                    lr: 0.05,
                    refine_epochs: 3000,
                    refine_lr: 1e-3,
                };
                c.train.epochs = 200;
                c.train.lr = 0.05;
                c.bbvi.covariance = Covariance::Full2;
                c.bbvi.lr = 0.02;
                c.bbvi.epochs = 2000;
            }
            Exemplar::Schlogl => {
                c.data.scale = 30.0;
                c.model = ModelSection {
                    kind: ModelKind::Node,
                    hidden: vec![16, 16],
                    activation: Activation::Tanh,
                    substeps: 1,
                };
                c.mle = MleSection {
                    epochs: 3000,
                    lr: 2e-2,
                    refine_epochs: 1000,
                    refine_lr: 1e-3,
                };
                c.sampler.n_steps = 1000;
                c.sampler.dtau = 1e-3;
                c.sampler.schedule = GammaSchedule {
                    gamma0: 2.0,
                    anneal_fraction: 0.2,
                };
                c.train.variant = Variant::BllReopt;
                c.train.n_modes = 2;
                c.train.score_hidden = vec![32, 32];
                // flat prior: no path-KL penalty
                c.train.kl_weight = 0.0;
                c.train.epochs = 100;
                c.train.lr = 2e-2;
                c.bbvi.lr = 1e-2;
            }
            Exemplar::Regression => {
                c.model = ModelSection {
                    kind: ModelKind::Static,
                    hidden: vec![8, 8],
                    activation: Activation::Tanh,
                    substeps: 1,
                };
                c.mle = MleSection {
                    epochs: 4000,
                    lr: 1e-2,
                    refine_epochs: 2000,
                    refine_lr: 1e-3,
                };
                c.data.regression.noise_std = 0.5;
                c.sampler.n_steps = 300;
                c.sampler.dtau = 1e-3;
                c.train.variant = Variant::BllReopt;
                c.train.score_hidden = vec![8, 8];
                c.train.epochs = 300;
                c.train.lr = 5e-2;
            }
        }
        c
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash of the canonical serialization.
    pub fn hash(&self) -> String {
        hash_hex(self.to_toml().as_bytes())
    }

    pub fn seed(&self) -> Result<u64, ConfigError> {
        self.seed.ok_or_else(|| field("seed", "missing; set it in the file or pass --seed"))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("lhn-out"))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.seed()?;
        let d = &self.data;
        let data_err = |prefix: &str, e: DataError| match e {
            DataError::Invalid { field: f, reason } => field(&format!("{prefix}.{f}"), reason),
            other => field(prefix, other.to_string()),
        };
        match d.exemplar {
            Exemplar::Ou => d.ou.validate().map_err(|e| data_err("data.ou", e))?,
            Exemplar::Schlogl => d.schlogl.validate().map_err(|e| data_err("data.schlogl", e))?,
            Exemplar::Regression => d.regression.validate().map_err(|e| data_err("data.regression", e))?,
            Exemplar::Dataset => match &d.path {
                None => return Err(field("data.path", "required for exemplar = \"dataset\"")),
                Some(p) if !p.is_dir() => {
                    return Err(field("data.path", format!("{} is not a directory", p.display())));
                }
                Some(_) => {}
            },
        }
        if !(d.scale > 0.0) || !d.scale.is_finite() || !d.offset.is_finite() {
            return Err(field("data.scale", "must be positive and finite"));
        }
        if self.model.substeps == 0 {
            return Err(field("model.substeps", "must be positive"));
        }
        if self.model.hidden.contains(&0) {
            return Err(field("model.hidden", "widths must be positive"));
        }
        if self.model.kind != ModelKind::Linear && self.model.hidden.is_empty() {
            return Err(field("model.hidden", "network models need at least one hidden layer"));
        }
        if !(self.mle.lr > 0.0) || !(self.mle.refine_lr > 0.0) {
            return Err(field("mle.lr", "must be positive"));
        }
        self.sampler.validate().map_err(|e| field("sampler", e.to_string()))?;
        let t = &self.train;
        if !(t.lr > 0.0) {
            return Err(field("train.lr", "must be positive"));
        }
        if !(1..=2).contains(&t.n_modes) {
            return Err(field("train.n_modes", "must be 1 or 2"));
        }
        if !(t.kl_weight >= 0.0) {
            return Err(field("train.kl_weight", "must be non-negative"));
        }
        if t.score_hidden.contains(&0) {
            return Err(field("train.score_hidden", "widths must be positive"));
        }
        if !self.train_config(0).adam.is_valid() {
            return Err(field("train", "Adam betas must lie in [0, 1) and eps be positive"));
        }
        if !(self.bbvi.lr > 0.0) || self.bbvi.n_samples == 0 {
            return Err(field("bbvi", "need a positive rate and at least one sample"));
        }
        if !(self.bbvi.init_sigma > 0.0) || !(self.bbvi.prior_sigma > 0.0) {
            return Err(field("bbvi", "scales must be positive"));
        }
        if self.eval.kde_points < 2 {
            return Err(field("eval.kde_points", "need at least 2"));
        }
        Ok(())
    }

    pub fn mle_configs(&self, seed: u64) -> Vec<MleConfig> {
        let mut v = vec![MleConfig {
            epochs: self.mle.epochs,
            adam: AdamConfig::with_lr(self.mle.lr),
            seed,
        }];
        if self.mle.refine_epochs > 0 {
            v.push(MleConfig {
                epochs: self.mle.refine_epochs,
                adam: AdamConfig::with_lr(self.mle.refine_lr),
                seed,
            });
        }
        v
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            variant: t.variant,
            epochs: t.epochs,
            adam: AdamConfig {
                lr: t.lr,
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
            },
            sampler: self.sampler.clone(),
            score_hidden: t.score_hidden.clone(),
            score_activation: t.score_activation,
            score_init: t.score_init,
            n_modes: t.n_modes,
            kl_weight: t.kl_weight,
            prior_center: t.prior_center,
            unroll: t.unroll_last.map_or(Unroll::Full, Unroll::Last),
            stochastic: None,
            seed,
        }
    }

    pub fn bbvi_config(&self, seed: u64) -> BbviConfig {
        let b = &self.bbvi;
        BbviConfig {
            epochs: b.epochs,
            adam: AdamConfig::with_lr(b.lr),
            n_samples: b.n_samples,
            covariance: b.covariance,
            init_sigma: b.init_sigma,
            prior_sigma: b.prior_sigma,
            n_modes: self.train.n_modes,
            use_likelihood: b.use_likelihood,
            stochastic: None,
            n_report: b.n_report,
            seed,
        }
    }

    /// Data model for a dataset already in model units.
    pub fn build_model(&self, data: &TrajectoryEnsemble) -> Result<DataModel, ConfigError> {
        let m = &self.model;
        let model = match m.kind {
            ModelKind::Linear => {
                if data.dim() != 1 || data.input_dim() != 0 {
                    return Err(field("model.kind", "linear model needs scalar data without inputs"));
                }
                DataModel {
                    substeps: m.substeps,
                    ..DataModel::linear_scalar(data_initial_state(data)[0])
                }
            }
            ModelKind::Node => {
                let dim = data.dim();
                let rhs = MlpSpec::with_hidden(dim + data.input_dim(), &m.hidden, dim, m.activation)
                    .map_err(|e| field("model.hidden", e.to_string()))?;
                DataModel {
                    rhs: Some(rhs),
                    obs: Observation::Identity,
                    hidden_dim: dim,
                    input_dim: data.input_dim(),
                    h0: data_initial_state(data),
                    substeps: m.substeps,
                }
            }
            ModelKind::Static => {
                if data.input_dim() == 0 {
                    return Err(field("model.kind", "static model needs a dataset with inputs"));
                }
                let obs = MlpSpec::with_hidden(data.input_dim(), &m.hidden, data.dim(), m.activation)
                    .map_err(|e| field("model.hidden", e.to_string()))?;
                DataModel::static_net(obs)
            }
        };
        model.validate().map_err(|e| field("model", e.to_string()))?;
        Ok(model)
    }
}

/// Read a config file; a missing file is a field error on `--config`.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| field("--config", format!("{}: {e}", path.display())))?;
    ExperimentConfig::from_toml(&text)
}
