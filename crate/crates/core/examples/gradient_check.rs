//! Finite-difference check of every parameter block on small random models.
//!
//! ```bash
//! cargo run --release -p qan --example gradient_check -- 20
//! ```

use qan::gradcheck::{tiny_config, TinyInstance, DEFAULT_STEP};

fn main() -> qan::Result<()> {
    let count: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);

    let first = TinyInstance::new(tiny_config(), 0)?.check(DEFAULT_STEP)?;
    println!("seed 0, loss {:.6}", first.loss);
    print!("{}", first.render());

    let mut worst = 0.0f64;
    let mut passed = 0;
    for seed in 0..count {
        let report = TinyInstance::new(tiny_config(), seed)?.check(DEFAULT_STEP)?;
        worst = report.blocks.iter().map(|b| b.max_rel).fold(worst, f64::max);
        passed += usize::from(report.passed());
    }
    println!("\n{passed}/{count} seeds pass, worst relative error {worst:.2e}");
    Ok(())
}
