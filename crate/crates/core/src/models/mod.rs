//! Underlying regressors behind one interface.
//!
//! - [`Mvnn`]: mean-variance network, two sigmoid MLP heads trained on the
//!   Gaussian negative log-likelihood.
//! - [`GaussianProcess`]: constant mean, RBF/ARD kernel, hyperparameters fitted
//!   by Adam on the log marginal likelihood.
//! - [`QuantileEnsemble`]: one gradient-boosted tree ensemble per quantile
//!   level, trained on the pinball loss.

use alloc::vec::Vec;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::stream;

mod adam;
pub mod gbqr;
pub mod gp;
pub mod mvnn;

pub use adam::Adam;
pub use gbqr::QuantileEnsemble;
pub use gp::{GaussianProcess, GpHyperparameters};
pub use mvnn::Mvnn;

/// Which regressor to fit.
#[derive(Debug, Clone, PartialEq)]
pub enum RegressorKind {
    Mvnn,
    Gp,
    /// Levels must be sorted and strictly inside (0, 1).
    Gbqr { levels: Vec<f64> },
}

impl RegressorKind {
    pub fn gbqr(levels: &[f64]) -> Result<Self> {
        validate_levels(levels)?;
        Ok(RegressorKind::Gbqr {
            levels: levels.to_vec(),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            RegressorKind::Mvnn => "nn",
            RegressorKind::Gp => "gp",
            RegressorKind::Gbqr { .. } => "qr",
        }
    }
}

pub(crate) fn validate_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::EmptyLevels);
    }
    for &l in levels {
        if !(l > 0.0 && l < 1.0) {
            return Err(Error::InvalidLevel(l));
        }
    }
    if levels.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("quantile levels must be sorted"));
    }
    Ok(())
}

/// Optimizer and model hyperparameters. None of these come with the method;
/// the defaults are moderate, untuned choices.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Adam step size for the mean-variance network.
    pub learning_rate: f64,
    /// Passes over the training set for the mean-variance network.
    pub epochs: usize,
    /// Mini-batch size for the mean-variance network; 0 means full batch.
    pub batch_size: usize,
    pub hidden_units: usize,
    /// Adam step size for the GP log-hyperparameters.
    pub gp_learning_rate: f64,
    pub gp_steps: usize,
    /// Initial diagonal jitter for the GP factorization.
    pub gp_jitter: f64,
    pub trees: usize,
    pub depth: usize,
    pub shrinkage: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 2000,
            batch_size: 32,
            hidden_units: 50,
            gp_learning_rate: 0.01,
            gp_steps: 500,
            gp_jitter: 1e-8,
            trees: 100,
            depth: 3,
            shrinkage: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.learning_rate > 0.0
            && self.gp_learning_rate > 0.0
            && self.shrinkage > 0.0
            && self.epochs > 0
            && self.hidden_units > 0
            && self.trees > 0
            && self.depth > 0;
        if !positive {
            return Err(Error::InvalidArgument("training hyperparameters must be positive"));
        }
        if !(self.gp_jitter >= 1e-10) {
            return Err(Error::InvalidArgument("GP jitter must be at least 1e-10"));
        }
        Ok(())
    }
}

/// What happened during fitting.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainingInfo {
    pub epochs_run: usize,
    pub final_loss: f64,
}

/// Per-point model output.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    /// Predictive mean and standard deviation.
    Gaussian { mean: f64, std: f64 },
    /// One value per level, nondecreasing in level.
    Quantiles(Vec<f64>),
}

impl Prediction {
    /// The point prediction: the mean, or the middle quantile.
    pub fn point(&self) -> f64 {
        match self {
            Prediction::Gaussian { mean, .. } => *mean,
            Prediction::Quantiles(q) => q[q.len() / 2],
        }
    }
}

/// A fitted regressor. Immutable after fitting.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Mvnn(Mvnn),
    Gp(GaussianProcess),
    Gbqr(QuantileEnsemble),
}

impl TrainedModel {
    pub fn kind(&self) -> RegressorKind {
        match self {
            TrainedModel::Mvnn(_) => RegressorKind::Mvnn,
            TrainedModel::Gp(_) => RegressorKind::Gp,
            TrainedModel::Gbqr(q) => RegressorKind::Gbqr {
                levels: q.levels().to_vec(),
            },
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            TrainedModel::Mvnn(m) => m.dim(),
            TrainedModel::Gp(m) => m.dim(),
            TrainedModel::Gbqr(m) => m.dim(),
        }
    }

    pub fn info(&self) -> TrainingInfo {
        match self {
            TrainedModel::Mvnn(m) => m.info(),
            TrainedModel::Gp(m) => m.info(),
            TrainedModel::Gbqr(m) => m.info(),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        self.check_dim(x)?;
        Ok(match self {
            TrainedModel::Mvnn(m) => {
                let (mean, std) = m.predict(x);
                Prediction::Gaussian { mean, std }
            }
            TrainedModel::Gp(m) => {
                let (mean, std) = m.predict(x);
                Prediction::Gaussian { mean, std }
            }
            TrainedModel::Gbqr(m) => Prediction::Quantiles(m.predict(x)),
        })
    }

    /// Point prediction only; skips the GP variance solve.
    pub fn predict_point(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(match self {
            TrainedModel::Mvnn(m) => m.predict(x).0,
            TrainedModel::Gp(m) => m.predict_mean(x),
            TrainedModel::Gbqr(m) => {
                let q = m.predict(x);
                q[q.len() / 2]
            }
        })
    }
}

/// Fits a regressor of the given kind on `train`.
pub fn fit(kind: &RegressorKind, train: &Dataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    fit_in_stream(kind, train, cfg, stream::MODEL_INIT)
}

pub(crate) fn fit_in_stream(
    kind: &RegressorKind,
    train: &Dataset,
    cfg: &TrainConfig,
    init_stream: u64,
) -> Result<TrainedModel> {
    cfg.validate()?;
    Ok(match kind {
        RegressorKind::Mvnn => TrainedModel::Mvnn(Mvnn::fit(train, cfg, init_stream)?),
        RegressorKind::Gp => TrainedModel::Gp(GaussianProcess::fit(train, cfg)?),
        RegressorKind::Gbqr { levels } => {
            TrainedModel::Gbqr(QuantileEnsemble::fit(train, cfg, levels)?)
        }
    })
}

/// Mean and population scale of `v`; a zero scale is replaced by one.
pub(crate) fn scaler(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let s = crate::math::sqrt(var);
    (mean, if s > 0.0 && s.is_finite() { s } else { 1.0 })
}
