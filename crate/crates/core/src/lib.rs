//! Quality-aware set pooling for set-to-set recognition.
//!
//! Each sample in a set gets an embedding and a learned quality score; the
//! set representation is the quality-weighted mean of the embeddings. The
//! quality branch is trained only through the set-level triplet loss, with no
//! quality labels.
//!
//! - [`netcore`]: dense layers, parameters, SGD with momentum.
//! - [`model`]: the two-branch network and the pooling unit (forward and backward).
//! - [`losses`]: triplet loss over pooled sets and per-sample softmax.
//! - [`data`]: synthetic noisy-set generator and the `QANSET v1` format.
//! - [`trainer`]: pretraining and joint training.
//! - [`eval`]: CMC, ROC, baselines, quality agreement.
//! - [`gradcheck`]: finite-difference oracle.
//! - [`checkpoint`]: the `QANMODEL v1` format.
//! - [`pipeline`]: one-call generate/train/evaluate experiments.
//! - [`cli`]: the `qan` command line.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod netcore;
pub mod pipeline;
pub mod trainer;

pub use data::{Dataset, GenSpec};
pub use error::{QanError, Result};
pub use eval::{EvalMethod, EvalReport, Pooling};
pub use model::{ImageSet, QanConfig, QanModel, Sample, SetEmbedding};
pub use trainer::{TrainConfig, TrainLog};
