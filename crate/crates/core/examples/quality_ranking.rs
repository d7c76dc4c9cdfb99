//! Train on the default benchmark, then list the held-out samples the model
//! trusts least and most, next to their true quality.
//!
//! ```bash
//! cargo run --release -p qan --example quality_ranking
//! ```

use qan::eval::EvalMethod;
use qan::pipeline::{run, ExperimentConfig};

fn main() -> qan::Result<()> {
    let out = run(&ExperimentConfig::with_seed(0), &[EvalMethod::Qan])?;

    let mut rows = Vec::new();
    for s in out.test_data.samples() {
        let (_, raw) = out.model.infer_sample(&s.x)?;
        rows.push((raw, s.q_true, s.identity));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));

    let show = |title: &str, part: &[(f64, f64, usize)]| {
        println!("{title}");
        for (raw, q, id) in part {
            println!("  identity {id:>3}  mu_raw {raw:.4}  q_true {q:.3}");
        }
    };
    show("lowest scores", &rows[..8]);
    show("highest scores", &rows[rows.len() - 8..]);

    if let Some(a) = &out.report.agreement {
        println!("\nmean mu_raw by true-quality decile");
        for (k, d) in a.deciles.iter().enumerate() {
            let close = if k + 1 == a.deciles.len() { ']' } else { ')' };
            println!(
                "  [{:.1}, {:.1}{close}  n={:>4}  {:.4}",
                d.lo, d.hi, d.count, d.mean_score
            );
        }
        println!(
            "spearman {:.3}, pairwise agreement {:.3}",
            a.spearman_rho, a.pairwise_agreement
        );
    }
    Ok(())
}
