//! End-to-end experiment: generate, split by identity, train, evaluate.

use serde::{Deserialize, Serialize};

use crate::data::{generate, Dataset, GenSpec};
use crate::error::{QanError, Result};
use crate::eval::{evaluate, EvalMethod, EvalReport};
use crate::model::{QanConfig, QanModel};
use crate::trainer::{train, TrainConfig, TrainLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub gen: GenSpec,
    /// Identities `0..train_identities` train; the rest are held out.
    pub train_identities: usize,
    /// `n_classes` and `d_in` are overwritten from the data.
    pub model: QanConfig,
    pub train: TrainConfig,
    pub model_seed: u64,
    pub pair_seed: u64,
}

impl ExperimentConfig {
    /// Default recipe with every seed derived from `seed`.
    pub fn with_seed(seed: u64) -> Self {
        ExperimentConfig {
            gen: GenSpec {
                seed,
                ..GenSpec::default()
            },
            train_identities: 100,
            model: QanConfig::default(),
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            model_seed: seed,
            pair_seed: seed,
        }
    }
}

pub struct ExperimentOutcome {
    pub model: QanModel,
    pub log: TrainLog,
    pub report: EvalReport,
    pub train_data: Dataset,
    pub test_data: Dataset,
}

pub fn split(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    if cfg.train_identities == 0 || cfg.train_identities >= cfg.gen.n_identities {
        return Err(QanError::InvalidConfig(format!(
            "train_identities {} must lie in 1..{}",
            cfg.train_identities, cfg.gen.n_identities
        )));
    }
    Ok(generate(&cfg.gen)?.split_by_identity(cfg.train_identities))
}

pub fn build_model(cfg: &ExperimentConfig) -> Result<QanModel> {
    let mut mc = cfg.model.clone();
    mc.d_in = cfg.gen.d_in;
    mc.n_classes = cfg.train_identities;
    QanModel::new(mc, cfg.model_seed)
}

pub fn run(cfg: &ExperimentConfig, methods: &[EvalMethod]) -> Result<ExperimentOutcome> {
    let (train_data, test_data) = split(cfg)?;
    let mut model = build_model(cfg)?;
    let log = train(&mut model, &train_data, &cfg.train, None)?;
    let report = evaluate(&model, &test_data, methods, cfg.pair_seed)?;
    Ok(ExperimentOutcome {
        model,
        log,
        report,
        train_data,
        test_data,
    })
}
