//! Train with the quality head attached at each trunk depth and compare.
//!
//! ```bash
//! cargo run --release -p qan --example split_sweep -- 0
//! ```

use qan::eval::EvalMethod;
use qan::pipeline::{run, ExperimentConfig};

fn main() -> qan::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let depth = ExperimentConfig::with_seed(seed).model.trunk_dims.len();

    println!(
        "{:>5} {:>9} {:>9} {:>8} {:>8} {:>8}",
        "split", "mu_clean", "mu_corr", "rho", "qan@1", "ave@1"
    );
    for split in 1..=depth {
        let mut cfg = ExperimentConfig::with_seed(seed);
        cfg.model.split_index = split;
        let out = run(&cfg, &[EvalMethod::Qan, EvalMethod::AvePool])?;
        let last = out.log.last().copied().expect("at least one epoch");
        let rho = out.report.agreement.as_ref().map_or(f64::NAN, |a| a.spearman_rho);
        let at1 = |m| out.report.cmc_of(m).map_or(f64::NAN, |t| t.rate(1));
        println!(
            "{split:>5} {:>9.4} {:>9.4} {rho:>8.3} {:>8.2} {:>8.2}",
            last.mu_clean,
            last.mu_corrupt,
            at1(EvalMethod::Qan),
            at1(EvalMethod::AvePool)
        );
    }
    Ok(())
}
