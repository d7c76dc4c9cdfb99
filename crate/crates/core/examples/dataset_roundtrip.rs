//! Generate a noisy-set dataset, write it, read it back and summarize it.
//!
//! ```bash
//! cargo run -p qan --example dataset_roundtrip
//! ```

use qan::data::{generate, Dataset, GenSpec};

fn main() -> qan::Result<()> {
    let spec = GenSpec {
        n_identities: 20,
        seed: 3,
        ..GenSpec::default()
    };
    let data = generate(&spec)?;

    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("noisy.qanset");
    data.save(&path)?;
    let back = Dataset::load(&path)?;
    assert_eq!(back, data);

    let n = data.sample_count();
    let corrupted: Vec<f64> = data.samples().filter(|s| s.q_true < 1.0).map(|s| s.q_true).collect();
    let bytes = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    println!(
        "{} sets, {n} samples, d_in {}, {bytes} bytes on disk",
        data.sets.len(),
        data.d_in
    );
    println!(
        "corrupted {} ({:.1}%), mean q_true of corrupted {:.3}",
        corrupted.len(),
        100.0 * corrupted.len() as f64 / n as f64,
        corrupted.iter().sum::<f64>() / corrupted.len().max(1) as f64
    );
    println!("\nfirst lines:");
    for line in std::fs::read_to_string(&path).unwrap_or_default().lines().take(3) {
        let short: String = line.chars().take(72).collect();
        println!("  {short}...");
    }
    Ok(())
}
