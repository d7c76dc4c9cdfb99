//! Generate the default noisy-set benchmark, train, and compare QAN pooling
//! against the baselines on held-out identities.
//!
//! ```bash
//! cargo run --release -p qan --example full_experiment -- 3
//! ```
//!
//! The argument is the seed (default 0). Prints the training log as CSV, then
//! the evaluation tables.

use qan::eval::{quality_agreement, EvalMethod};
use qan::pipeline::{run, ExperimentConfig};

fn main() -> qan::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let cfg = ExperimentConfig::with_seed(seed);

    let started = std::time::Instant::now();
    let out = run(&cfg, &EvalMethod::ALL)?;
    print!("{}", out.log.to_csv());
    println!();
    print!("{}", out.report.render());

    // quality learned on the training identities, for comparison with the
    // held-out agreement above
    let train_rho = quality_agreement(&out.model, &out.train_data)?.spearman_rho;
    println!("\ntrain-identity spearman {train_rho:.3}");
    println!("elapsed {:.1?}", started.elapsed());
    Ok(())
}
