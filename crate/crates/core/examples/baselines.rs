//! Compare the set-matching baselines on a pretrained feature extractor:
//! average pooling, closest-pair distances and ground-truth quality weights.
//!
//! ```bash
//! cargo run --release -p qan --example baselines
//! ```

use qan::eval::{evaluate, EvalMethod};
use qan::pipeline::{build_model, split, ExperimentConfig};
use qan::trainer::{train, TrainConfig};

fn main() -> qan::Result<()> {
    let cfg = ExperimentConfig::with_seed(1);
    let (train_data, test_data) = split(&cfg)?;
    let mut model = build_model(&cfg)?;
    // classification pretraining only; the quality head stays at its init
    let pre = TrainConfig {
        epochs: 0,
        ..cfg.train.clone()
    };
    train(&mut model, &train_data, &pre, None)?;

    let methods = [
        EvalMethod::AvePool,
        EvalMethod::MinCos,
        EvalMethod::MinL2,
        EvalMethod::Oracle,
    ];
    let report = evaluate(&model, &test_data, &methods, cfg.pair_seed)?;
    print!("{}", report.render());
    Ok(())
}
