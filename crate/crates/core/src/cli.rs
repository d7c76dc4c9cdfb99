//! The `qan` command line.
//!
//! Subcommands `gen`, `train`, `eval`, `gradcheck` and `inspect`. Every run
//! writes a [`RunManifest`] (JSON) next to its outputs; `qan --from-manifest
//! <file>` replays the recorded command with the same resolved flags.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, MODEL_HEADER};
use crate::data::{generate, Dataset, GenSpec, DATASET_HEADER};
use crate::error::QanError;
use crate::eval::{evaluate, EvalMethod};
use crate::gradcheck::{tiny_config, TinyInstance, DEFAULT_STEP};
use crate::model::{QanConfig, QanModel};
use crate::trainer::{train, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "qan",
    version,
    about = "Quality-aware set pooling: generate, train, evaluate"
)]
#[command(args_conflicts_with_subcommands = true, arg_required_else_help = true)]
pub struct Cli {
    /// Replay the command recorded in a run manifest.
    #[arg(long, value_name = "PATH")]
    pub from_manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// Generate a synthetic noisy-set dataset (QANSET v1).
    Gen(GenArgs),
    /// Pretrain and jointly train a model; writes per-epoch checkpoints.
    Train(TrainArgs),
    /// CMC, ROC and quality agreement on a dataset.
    Eval(EvalArgs),
    /// Finite-difference check of every parameter gradient on tiny models.
    Gradcheck(GradcheckArgs),
    /// Per-sample quality scores, sorted by raw score.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GenArgs {
    #[arg(long, default_value_t = GenSpec::default().n_identities)]
    pub identities: usize,
    /// Sets per identity.
    #[arg(long, default_value_t = GenSpec::default().sets_per_identity)]
    pub sets: usize,
    /// Samples per set.
    #[arg(long, default_value_t = GenSpec::default().samples_per_set)]
    pub samples: usize,
    #[arg(long, default_value_t = GenSpec::default().d_in)]
    pub d_in: usize,
    /// Probability that a sample is corrupted.
    #[arg(long, default_value_t = GenSpec::default().corruption_rate)]
    pub rho: f64,
    #[arg(long, default_value_t = GenSpec::default().beta_lo)]
    pub beta_lo: f64,
    #[arg(long, default_value_t = GenSpec::default().beta_hi)]
    pub beta_hi: f64,
    /// Standard deviation of the additive Gaussian noise.
    #[arg(long, default_value_t = GenSpec::default().noise_sigma)]
    pub sigma: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(short, long, value_name = "PATH")]
    pub output: PathBuf,
    /// Identities with a label >= this go to `--holdout-out` instead.
    #[arg(long, value_name = "ID", requires = "holdout_out")]
    pub holdout_from: Option<usize>,
    #[arg(long, value_name = "PATH", requires = "holdout_from")]
    pub holdout_out: Option<PathBuf>,
    /// Manifest path [default: <output>.manifest.json]
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Receives checkpoints, train_log.csv and the manifest.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Seeds both the initialization and the training order.
    #[arg(long)]
    pub seed: u64,
    /// Joint-training epochs.
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    /// Softmax pretraining epochs.
    #[arg(long, default_value_t = TrainConfig::default().pretrain_epochs)]
    pub pretrain: usize,
    /// Triplets (optimizer steps) per joint epoch.
    #[arg(long, default_value_t = TrainConfig::default().triplets_per_epoch)]
    pub triplets: usize,
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    pub lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().pretrain_lr)]
    pub pretrain_lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().lr_decay)]
    pub lr_decay: f64,
    #[arg(long, default_value_t = TrainConfig::default().momentum)]
    pub momentum: f64,
    /// Use the raw triplet term without `max(0, .)` (diagnostic only).
    #[arg(long)]
    pub no_hinge: bool,
    /// Trunk widths, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = QanConfig::default().trunk_dims)]
    pub trunk: Vec<usize>,
    /// 1-based trunk layer feeding the quality head [default: middle layer]
    #[arg(long)]
    pub split_index: Option<usize>,
    #[arg(long, default_value_t = QanConfig::default().d_embed)]
    pub d_embed: usize,
    /// Quality-head hidden width; 0 for a single sigmoid layer.
    #[arg(long, default_value_t = QanConfig::default().quality_hidden)]
    pub quality_hidden: usize,
    #[arg(long, default_value_t = QanConfig::default().margin)]
    pub margin: f64,
    /// Weight of the per-sample softmax loss.
    #[arg(long, default_value_t = QanConfig::default().lambda_class)]
    pub lambda: f64,
    /// Manifest path [default: <out-dir>/manifest.json]
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Receives cmc.csv, roc.csv, agreement.csv, deciles.csv and the manifest.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Comma separated subset of qan, avepool, mincos, minl2, oracle.
    #[arg(long, value_delimiter = ',', default_values_t = EvalMethod::ALL.to_vec())]
    pub methods: Vec<EvalMethod>,
    /// Seed for drawing negative verification pairs.
    #[arg(long, default_value_t = 0)]
    pub pair_seed: u64,
    /// Manifest path [default: <out-dir>/manifest.json]
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GradcheckArgs {
    /// Seed of the first tiny instance.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds to check.
    #[arg(long, default_value_t = 1)]
    pub count: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = DEFAULT_STEP)]
    pub step: f64,
    #[arg(long, value_name = "PATH", default_value = "gradcheck.manifest.json")]
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct InspectArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// CSV destination [default: stdout]
    #[arg(short, long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// Manifest path [default: <output>.manifest.json, or inspect.manifest.json]
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub methods: Vec<EvalMethod>,
    pub pair_seed: u64,
}

/// Everything needed to reproduce one command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub dataset_format: String,
    pub checkpoint_format: String,
    /// The command with every flag resolved; replayed by `--from-manifest`.
    pub run: Command,
    pub seed: Option<u64>,
    pub gen: Option<GenSpec>,
    pub model: Option<QanConfig>,
    pub train: Option<TrainConfig>,
    pub eval: Option<EvalOptions>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

impl RunManifest {
    fn new(run: Command) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            dataset_format: DATASET_HEADER.to_string(),
            checkpoint_format: MODEL_HEADER.to_string(),
            run,
            seed: None,
            gen: None,
            model: None,
            train: None,
            eval: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
        }
    }

    pub fn load(path: &Path) -> crate::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| QanError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| QanError::parse(&path.display().to_string(), e.line(), e.to_string()))
    }

    fn save(&mut self, path: &Path) -> crate::Result<()> {
        self.finished_unix_ms = now_ms();
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_file(path, &(json + "\n"))
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(QanError),
}

impl From<QanError> for Failure {
    fn from(e: QanError) -> Self {
        Failure::Runtime(e)
    }
}

fn usage(e: QanError) -> Failure {
    Failure::Usage(e.to_string())
}

fn write_file(path: &Path, contents: &str) -> crate::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| QanError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| QanError::io(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let command = match (cli.from_manifest, cli.command) {
        (Some(path), _) => match RunManifest::load(&path) {
            Ok(m) => m.run,
            Err(e @ QanError::Io { .. }) => return report(Failure::Runtime(e)),
            Err(e) => return report(Failure::Usage(format!("bad manifest: {e}"))),
        },
        (None, Some(c)) => c,
        (None, None) => return report(Failure::Usage("no command given".into())),
    };
    match execute(&command) {
        Ok(()) => EXIT_OK,
        Err(f) => report(f),
    }
}

fn report(f: Failure) -> i32 {
    match f {
        Failure::Usage(msg) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Failure::Runtime(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

/// Runs one resolved command, including writing its manifest.
fn execute(command: &Command) -> Result<(), Failure> {
    let mut manifest = RunManifest::new(command.clone());
    let manifest_path = match command {
        Command::Gen(a) => {
            cmd_gen(a, &mut manifest)?;
            a.manifest
                .clone()
                .unwrap_or_else(|| with_suffix(&a.output, ".manifest.json"))
        }
        Command::Train(a) => {
            cmd_train(a, &mut manifest)?;
            a.manifest.clone().unwrap_or_else(|| a.out_dir.join("manifest.json"))
        }
        Command::Eval(a) => {
            cmd_eval(a, &mut manifest)?;
            a.manifest.clone().unwrap_or_else(|| a.out_dir.join("manifest.json"))
        }
        Command::Gradcheck(a) => {
            // the manifest is written even when the check fails
            let outcome = cmd_gradcheck(a, &mut manifest);
            manifest.save(&a.manifest)?;
            return outcome;
        }
        Command::Inspect(a) => {
            cmd_inspect(a, &mut manifest)?;
            a.manifest.clone().unwrap_or_else(|| match &a.output {
                Some(o) => with_suffix(o, ".manifest.json"),
                None => PathBuf::from("inspect.manifest.json"),
            })
        }
    };
    manifest.save(&manifest_path)?;
    Ok(())
}

fn cmd_gen(a: &GenArgs, manifest: &mut RunManifest) -> Result<(), Failure> {
    let spec = GenSpec {
        n_identities: a.identities,
        sets_per_identity: a.sets,
        samples_per_set: a.samples,
        d_in: a.d_in,
        corruption_rate: a.rho,
        beta_lo: a.beta_lo,
        beta_hi: a.beta_hi,
        noise_sigma: a.sigma,
        seed: a.seed,
    };
    spec.validate().map_err(usage)?;
    if let Some(b) = a.holdout_from {
        if b == 0 || b >= a.identities {
            return Err(Failure::Usage(format!(
                "--holdout-from {b} must lie in 1..{}",
                a.identities
            )));
        }
    }
    let data = generate(&spec)?;
    manifest.seed = Some(a.seed);
    manifest.gen = Some(spec);
    match (a.holdout_from, &a.holdout_out) {
        (Some(b), Some(path)) => {
            let (kept, held) = data.split_by_identity(b);
            kept.save(&a.output)?;
            held.save(path)?;
            manifest.outputs = vec![a.output.clone(), path.clone()];
            println!(
                "wrote {} sets to {} and {} held-out sets to {}",
                kept.sets.len(),
                a.output.display(),
                held.sets.len(),
                path.display()
            );
        }
        _ => {
            data.save(&a.output)?;
            manifest.outputs = vec![a.output.clone()];
            println!(
                "wrote {} sets ({} samples) to {}",
                data.sets.len(),
                data.sample_count(),
                a.output.display()
            );
        }
    }
    Ok(())
}

fn cmd_train(a: &TrainArgs, manifest: &mut RunManifest) -> Result<(), Failure> {
    let cfg = TrainConfig {
        epochs: a.epochs,
        triplets_per_epoch: a.triplets,
        lr: a.lr,
        pretrain_lr: a.pretrain_lr,
        lr_decay: a.lr_decay,
        momentum: a.momentum,
        pretrain_epochs: a.pretrain,
        seed: a.seed,
        hinge: !a.no_hinge,
    };
    cfg.validate().map_err(usage)?;
    let data = Dataset::load(&a.data)?;
    let model_cfg = QanConfig {
        d_in: data.d_in,
        trunk_dims: a.trunk.clone(),
        split_index: a.split_index.unwrap_or_else(|| QanConfig::middle_split(a.trunk.len())),
        d_embed: a.d_embed,
        quality_hidden: a.quality_hidden,
        n_classes: data.identities().len(),
        margin: a.margin,
        lambda_class: a.lambda,
    };
    model_cfg.validate().map_err(usage)?;

    let mut model = QanModel::new(model_cfg.clone(), a.seed)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| QanError::io(&a.out_dir, e))?;
    let log = train(&mut model, &data, &cfg, Some(&a.out_dir))?;

    let log_path = a.out_dir.join("train_log.csv");
    write_file(&log_path, &log.to_csv())?;
    let final_path = a.out_dir.join("final.qanmodel");
    checkpoint::save(&model, &final_path)?;

    manifest.seed = Some(a.seed);
    if let Command::Train(recorded) = &mut manifest.run {
        recorded.split_index = Some(model_cfg.split_index);
    }
    manifest.model = Some(model_cfg);
    manifest.train = Some(cfg);
    manifest.inputs = vec![a.data.clone()];
    manifest.outputs = (0..=log.records.len())
        .map(|e| a.out_dir.join(format!("ckpt_{e}.qanmodel")))
        .chain([final_path.clone(), log_path])
        .collect();
    match log.last() {
        Some(r) => println!(
            "epoch {}: l_veri {:.4} l_class {:.4} active {:.3} mu clean {:.4} corrupt {:.4}",
            r.epoch, r.l_veri, r.l_class, r.active_frac, r.mu_clean, r.mu_corrupt
        ),
        None => println!("no epochs run; initial model saved"),
    }
    println!("model written to {}", final_path.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs, manifest: &mut RunManifest) -> Result<(), Failure> {
    if a.methods.is_empty() {
        return Err(Failure::Usage("--methods needs at least one method".into()));
    }
    let model = checkpoint::load(&a.model)?;
    let data = Dataset::load(&a.data)?;
    let report = evaluate(&model, &data, &a.methods, a.pair_seed)?;

    let mut outputs = vec![a.out_dir.join("cmc.csv"), a.out_dir.join("roc.csv")];
    write_file(&outputs[0], &report.cmc_csv())?;
    write_file(&outputs[1], &report.roc_csv())?;
    if let (Some(agree), Some(deciles)) = (report.agreement_csv(), report.deciles_csv()) {
        let (pa, pd) = (a.out_dir.join("agreement.csv"), a.out_dir.join("deciles.csv"));
        write_file(&pa, &agree)?;
        write_file(&pd, &deciles)?;
        outputs.extend([pa, pd]);
    }
    print!("{}", report.render());

    manifest.model = Some(model.config.clone());
    manifest.eval = Some(EvalOptions {
        methods: a.methods.clone(),
        pair_seed: a.pair_seed,
    });
    manifest.inputs = vec![a.model.clone(), a.data.clone()];
    manifest.outputs = outputs;
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs, manifest: &mut RunManifest) -> Result<(), Failure> {
    if !(a.step > 0.0) || a.count == 0 {
        return Err(Failure::Usage("--step must be positive and --count at least 1".into()));
    }
    let config = tiny_config();
    manifest.seed = Some(a.seed);
    manifest.model = Some(config.clone());

    let mut failed = Vec::new();
    for seed in a.seed..a.seed + a.count {
        let report = TinyInstance::new(config.clone(), seed)?.check(a.step)?;
        let worst = report.blocks.iter().map(|b| b.max_rel).fold(0.0, f64::max);
        if a.count == 1 || !report.passed() {
            println!("seed {seed}: loss {:.6}", report.loss);
            print!("{}", report.render());
        }
        if !report.passed() {
            failed.push(seed);
        } else if a.count > 1 {
            log::info!("seed {seed}: pass, worst relative error {worst:.2e}");
        }
    }
    let passed = a.count - failed.len() as u64;
    println!("{passed}/{} instances passed", a.count);
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(QanError::Degenerate(format!(
            "gradient check failed for seeds {failed:?}"
        ))))
    }
}

fn cmd_inspect(a: &InspectArgs, manifest: &mut RunManifest) -> Result<(), Failure> {
    let model = checkpoint::load(&a.model)?;
    let data = Dataset::load(&a.data)?;
    if data.d_in != model.config.d_in {
        return Err(QanError::InvalidConfig(format!(
            "dataset d_in {} does not match model d_in {}",
            data.d_in, model.config.d_in
        ))
        .into());
    }
    let mut rows = Vec::with_capacity(data.sample_count());
    for set in &data.sets {
        let emb = model.embed_set(set)?;
        for (k, s) in set.samples.iter().enumerate() {
            rows.push((s.identity, set.set_id, s.q_true, emb.mu_raw[k], emb.mu[k]));
        }
    }
    rows.sort_by(|x, y| x.3.total_cmp(&y.3));
    let mut csv = String::from("identity,set_id,q_true,mu_raw,mu_normalized\n");
    for (id, set, q, raw, mu) in rows {
        let _ = writeln!(csv, "{id},{set},{q},{raw},{mu}");
    }
    match &a.output {
        Some(path) => {
            write_file(path, &csv)?;
            manifest.outputs = vec![path.clone()];
        }
        None => print!("{csv}"),
    }
    manifest.model = Some(model.config.clone());
    manifest.inputs = vec![a.model.clone(), a.data.clone()];
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn seed_is_mandatory_for_gen_and_train() {
        assert!(Cli::try_parse_from(["qan", "gen", "-o", "x"]).is_err());
        assert!(Cli::try_parse_from(["qan", "train", "--data", "d", "--out-dir", "o"]).is_err());
        assert!(Cli::try_parse_from(["qan", "gen", "-o", "x", "--seed", "1"]).is_ok());
    }

    #[test]
    fn methods_parse_from_list() {
        let cli = Cli::try_parse_from([
            "qan",
            "eval",
            "--model",
            "m",
            "--data",
            "d",
            "--out-dir",
            "o",
            "--methods",
            "avepool,min-cos",
        ])
        .unwrap();
        match cli.command {
            Some(Command::Eval(a)) => assert_eq!(a.methods, vec![EvalMethod::AvePool, EvalMethod::MinCos]),
            other => panic!("unexpected {other:?}"),
        }
        assert!(Cli::try_parse_from([
            "qan",
            "eval",
            "--model",
            "m",
            "--data",
            "d",
            "--out-dir",
            "o",
            "--methods",
            "best"
        ])
        .is_err());
    }

    #[test]
    fn command_round_trips_through_json() {
        let cli = Cli::try_parse_from([
            "qan",
            "train",
            "--data",
            "d",
            "--out-dir",
            "o",
            "--seed",
            "4",
            "--trunk",
            "8,4",
        ])
        .unwrap();
        let cmd = cli.command.unwrap();
        let json = serde_json::to_string(&cmd).unwrap();
        assert!(json.contains("\"command\":\"train\""), "{json}");
        let back: Command = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cmd);
    }

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(run(["qan", "gen", "-o", "x"]), EXIT_USAGE);
        assert_eq!(run(["qan", "frobnicate"]), EXIT_USAGE);
    }

    #[test]
    fn manifest_suffix_keeps_extension() {
        assert_eq!(
            with_suffix(Path::new("a/d.qanset"), ".manifest.json"),
            PathBuf::from("a/d.qanset.manifest.json")
        );
    }
}
