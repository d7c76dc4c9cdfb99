//! Central finite-difference oracle for the analytic gradients.
//!
//! The numeric side only ever calls forward-only code
//! ([`crate::trainer::triplet_total_loss`]); it never touches a backward
//! routine.

use std::fmt::Write as _;

use rand::Rng as _;

use crate::error::{QanError, Result};
use crate::losses::LossSettings;
use crate::model::{ImageSet, QanConfig, QanModel, Sample};
use crate::netcore::seeded_rng;
use crate::trainer::{accumulate_triplet_gradients, triplet_total_loss, ClassMap};

pub const DEFAULT_STEP: f64 = 1e-5;
/// Every block's worst coordinate must stay under this.
pub const MAX_REL_TOLERANCE: f64 = 1e-4;
/// Every block's median coordinate must stay under this.
pub const MEDIAN_REL_TOLERANCE: f64 = 1e-6;

/// `(f(p + h e_i) - f(p - h e_i)) / 2h` for every coordinate.
pub fn numeric_grad<F>(mut f: F, p: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(QanError::InvalidConfig(format!("step {h} must be positive")));
    }
    let mut x = p.to_vec();
    let mut out = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        x[i] = p[i] + h;
        let plus = f(&x)?;
        x[i] = p[i] - h;
        let minus = f(&x)?;
        x[i] = p[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(QanError::NonFiniteLoss(format!(
                "objective not finite around coordinate {i}"
            )));
        }
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub len: usize,
    pub max_rel: f64,
    pub median_rel: f64,
    pub max_abs: f64,
    pub worst_index: usize,
}

impl BlockReport {
    pub fn passes(&self) -> bool {
        self.max_rel < MAX_REL_TOLERANCE && self.median_rel < MEDIAN_REL_TOLERANCE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
    /// Set when every analytic gradient is exactly zero; nothing was tested.
    pub vacuous: bool,
    pub loss: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        !self.vacuous && self.blocks.iter().all(BlockReport::passes)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<20} {:>6} {:>12} {:>12} {:>12} {:>6}  ok",
            "block", "len", "max_rel", "median_rel", "max_abs", "worst"
        );
        for b in &self.blocks {
            let _ = writeln!(
                out,
                "{:<20} {:>6} {:>12.3e} {:>12.3e} {:>12.3e} {:>6}  {}",
                b.name,
                b.len,
                b.max_rel,
                b.median_rel,
                b.max_abs,
                b.worst_index,
                if b.passes() { "yes" } else { "NO" }
            );
        }
        if self.vacuous {
            out.push_str("vacuous check: every analytic gradient is zero\n");
        }
        out
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Compares the analytic gradient of the total triplet + softmax loss against
/// central differences, for every parameter block of `model`.
pub fn check_model(
    model: &QanModel,
    sets: [&ImageSet; 3],
    classes: &ClassMap,
    settings: &LossSettings,
    h: f64,
) -> Result<GradCheckReport> {
    let mut analytic_model = model.clone();
    analytic_model.zero_grad();
    let value = accumulate_triplet_gradients(&mut analytic_model, sets, classes, settings)?;
    let analytic: Vec<(String, Vec<f64>)> = analytic_model
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.grad.clone()))
        .collect();
    let vacuous = analytic.iter().all(|(_, g)| g.iter().all(|&x| x == 0.0));

    let mut probe = model.clone();
    let mut blocks = Vec::with_capacity(analytic.len());
    for (block, (name, grad)) in analytic.iter().enumerate() {
        let base = probe.params()[block].value.clone();
        let numeric = numeric_grad(
            |x| {
                probe.params_mut()[block].value.copy_from_slice(x);
                triplet_total_loss(&probe, sets, classes, settings)
            },
            &base,
            h,
        )?;
        probe.params_mut()[block].value.copy_from_slice(&base);

        let mut rel: Vec<f64> = grad.iter().zip(&numeric).map(|(&a, &n)| relative_error(a, n)).collect();
        let (worst_index, max_rel) =
            rel.iter()
                .copied()
                .enumerate()
                .fold((0, 0.0), |acc, (i, r)| if r > acc.1 { (i, r) } else { acc });
        let max_abs = grad
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs())
            .fold(0.0, f64::max);
        blocks.push(BlockReport {
            name: name.clone(),
            len: grad.len(),
            max_rel,
            median_rel: median(&mut rel),
            max_abs,
            worst_index,
        });
    }
    Ok(GradCheckReport {
        blocks,
        vacuous,
        loss: value.total,
    })
}

/// Configuration of the small instances used by the gradient sweep.
pub fn tiny_config() -> QanConfig {
    QanConfig {
        d_in: 5,
        trunk_dims: vec![6],
        split_index: 1,
        d_embed: 4,
        quality_hidden: 3,
        n_classes: 3,
        margin: 0.5,
        lambda_class: 1.0,
    }
}

/// A random model and triplet of 3-sample sets, with the margin raised so the
/// hinge is comfortably active.
pub struct TinyInstance {
    pub model: QanModel,
    pub sets: [ImageSet; 3],
    pub classes: ClassMap,
    pub settings: LossSettings,
}

impl TinyInstance {
    pub fn new(config: QanConfig, seed: u64) -> Result<Self> {
        let mut model = QanModel::new(config.clone(), seed)?;
        let mut rng = seeded_rng(seed ^ 0x5eed_0000_0000_0001);
        // with zero biases a dead unit feeds exactly 0 into the next ReLU,
        // where the difference quotient straddles the kink
        for p in model.params_mut() {
            if p.name.ends_with(".bias") {
                p.value = (0..p.len()).map(|_| rng.random_range(-0.5..0.5)).collect();
            }
        }
        model.touch();
        let identities = [0usize, 0, 1];
        let sets: [ImageSet; 3] = std::array::from_fn(|k| ImageSet {
            set_id: k,
            identity: identities[k],
            samples: (0..3)
                .map(|_| Sample {
                    x: (0..config.d_in).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    identity: identities[k],
                    q_true: 1.0,
                })
                .collect(),
        });
        let classes = ClassMap::from_identities(0..config.n_classes);

        let pooled: Vec<Vec<f64>> = sets
            .iter()
            .map(|s| model.embed_set(s).map(|e| e.ra))
            .collect::<Result<_>>()?;
        let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        let gap = sq(&pooled[0], &pooled[1]) - sq(&pooled[0], &pooled[2]);
        let settings = LossSettings {
            margin: (1.0 - gap).max(config.margin),
            lambda_class: config.lambda_class,
            hinge: true,
        };
        Ok(TinyInstance {
            model,
            sets,
            classes,
            settings,
        })
    }

    pub fn set_refs(&self) -> [&ImageSet; 3] {
        [&self.sets[0], &self.sets[1], &self.sets[2]]
    }

    pub fn check(&self, h: f64) -> Result<GradCheckReport> {
        check_model(&self.model, self.set_refs(), &self.classes, &self.settings, h)
    }
}
