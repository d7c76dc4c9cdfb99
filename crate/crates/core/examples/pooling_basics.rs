//! Quality-weighted pooling of one set by hand, forward and backward.
//!
//! ```bash
//! cargo run -p qan --example pooling_basics
//! ```

use qan::model::{normalize_qualities, normalize_qualities_backward, set_pool_backward, set_pool_forward};

fn main() -> qan::Result<()> {
    // three embeddings; the last one is an outlier with a low raw score
    let r = vec![vec![1.0, 0.0], vec![0.8, 0.2], vec![-1.0, 3.0]];
    let raw = [0.9, 0.8, 0.1];

    let mu = normalize_qualities(&raw)?;
    let ra = set_pool_forward(&r, &mu)?;
    let mean: Vec<f64> = (0..2).map(|j| r.iter().map(|v| v[j]).sum::<f64>() / 3.0).collect();
    println!("mu          {mu:.3?}");
    println!("pooled      {ra:.3?}");
    println!("plain mean  {mean:.3?}");

    // pretend the loss wants Ra to move along -x
    let g = [1.0, 0.0];
    let (dr, dmu) = set_pool_backward(&r, &mu, &ra, &g)?;
    let ds = normalize_qualities_backward(&raw, &mu, &dmu);
    println!(
        "\n{:>6} {:>10} {:>10} {:>16}",
        "sample", "dL/dmu", "dL/draw", "|dL/dR_i|"
    );
    for i in 0..r.len() {
        let norm = dr[i].iter().map(|x| x * x).sum::<f64>().sqrt();
        println!("{i:>6} {:>10.4} {:>10.4} {norm:>16.4}", dmu[i], ds[i]);
    }
    // a descent step lowers scores whose sample lies along g from Ra
    println!("\nsamples ahead of Ra along g lose quality on a descent step; the outlier's");
    println!("embedding gradient is scaled down by its small weight");
    Ok(())
}
