//! Joint training: optional softmax pretraining, then triplet-of-sets steps
//! with the softmax branch kept active.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::Dataset;
use crate::error::{QanError, Result};
use crate::losses::{combine_losses, softmax_xent, triplet_loss, xent_from_logits, LossSettings, LossValue};
use crate::model::{normalize_qualities, ImageSet, QanModel};
use crate::netcore::{infer_stack, seeded_rng, Rng, Sgd};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub triplets_per_epoch: usize,
    pub lr: f64,
    pub pretrain_lr: f64,
    pub lr_decay: f64,
    pub momentum: f64,
    pub pretrain_epochs: usize,
    pub seed: u64,
    pub hinge: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            triplets_per_epoch: 200,
            // larger steps either kill the ReLUs during per-sample
            // pretraining or blow up the unnormalized triplet term
            lr: 0.001,
            pretrain_lr: 0.005,
            lr_decay: 0.95,
            momentum: 0.9,
            pretrain_epochs: 5,
            seed: 0,
            hinge: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.pretrain_lr >= 0.0) {
            return Err(QanError::InvalidConfig(format!(
                "learning rates must be positive (lr {}, pretrain {})",
                self.lr, self.pretrain_lr
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(QanError::InvalidConfig(format!(
                "lr_decay {} outside (0,1]",
                self.lr_decay
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(QanError::InvalidConfig(format!(
                "momentum {} outside [0,1)",
                self.momentum
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_veri: f64,
    pub l_class: f64,
    pub active_frac: f64,
    pub mu_clean: f64,
    pub mu_corrupt: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,l_veri,l_class,active_frac,mu_clean,mu_corrupt";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.epoch, r.l_veri, r.l_class, r.active_frac, r.mu_clean, r.mu_corrupt
            );
        }
        out
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// Maps identity labels to contiguous class indices in sorted order.
#[derive(Debug, Clone)]
pub struct ClassMap(BTreeMap<usize, usize>);

impl ClassMap {
    pub fn new(dataset: &Dataset) -> Self {
        Self::from_identities(dataset.identities())
    }

    pub fn from_identities(ids: impl IntoIterator<Item = usize>) -> Self {
        let sorted: std::collections::BTreeSet<usize> = ids.into_iter().collect();
        ClassMap(sorted.into_iter().enumerate().map(|(i, id)| (id, i)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn class_of(&self, identity: usize) -> Result<usize> {
        self.0.get(&identity).copied().ok_or(QanError::InvalidLabel {
            label: identity,
            n_classes: self.0.len(),
        })
    }
}

/// Dataset indices of one (anchor, positive, negative) triple of sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripletIndices {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Uniform triplet sampling over a fixed dataset.
#[derive(Debug, Clone)]
pub struct TripletSampler {
    by_identity: Vec<(usize, Vec<usize>)>,
    anchors: Vec<usize>,
}

impl TripletSampler {
    pub fn new(dataset: &Dataset) -> Result<Self> {
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, set) in dataset.sets.iter().enumerate() {
            groups.entry(set.identity).or_default().push(i);
        }
        let by_identity: Vec<(usize, Vec<usize>)> = groups.into_iter().collect();
        if by_identity.len() < 2 {
            return Err(QanError::NoTriplet("need at least two identities".into()));
        }
        let anchors: Vec<usize> = by_identity
            .iter()
            .enumerate()
            .filter(|(_, (_, sets))| sets.len() >= 2)
            .map(|(i, _)| i)
            .collect();
        if anchors.is_empty() {
            return Err(QanError::NoTriplet("no identity has two or more sets".into()));
        }
        Ok(TripletSampler { by_identity, anchors })
    }

    pub fn sample(&self, rng: &mut Rng) -> TripletIndices {
        let a_group = self.anchors[rng.random_range(0..self.anchors.len())];
        let sets = &self.by_identity[a_group].1;
        let i = rng.random_range(0..sets.len());
        let mut j = rng.random_range(0..sets.len() - 1);
        if j >= i {
            j += 1;
        }
        let mut n_group = rng.random_range(0..self.by_identity.len() - 1);
        if n_group >= a_group {
            n_group += 1;
        }
        let n_sets = &self.by_identity[n_group].1;
        TripletIndices {
            anchor: sets[i],
            positive: sets[j],
            negative: n_sets[rng.random_range(0..n_sets.len())],
        }
    }
}

pub fn sample_triplet(dataset: &Dataset, rng: &mut Rng) -> Result<TripletIndices> {
    Ok(TripletSampler::new(dataset)?.sample(rng))
}

/// Total loss of one triplet, accumulating every parameter gradient into
/// `model` without stepping.
pub fn accumulate_triplet_gradients(
    model: &mut QanModel,
    sets: [&ImageSet; 3],
    classes: &ClassMap,
    settings: &LossSettings,
) -> Result<LossValue> {
    let embs = sets.iter().map(|s| model.embed_set(s)).collect::<Result<Vec<_>>>()?;
    let trip = triplet_loss(&embs[0].ra, &embs[1].ra, &embs[2].ra, settings.margin, settings.hinge)?;

    let total_samples: usize = sets.iter().map(|s| s.len()).sum();
    let weight = settings.lambda_class / total_samples as f64;
    let mut class_losses = Vec::with_capacity(total_samples);
    let mut class_grads = Vec::with_capacity(3);
    for (set, emb) in sets.iter().zip(&embs) {
        let mut grads = Vec::with_capacity(set.len());
        for (sample, r) in set.samples.iter().zip(&emb.r) {
            let label = classes.class_of(sample.identity)?;
            let (loss, dr) = softmax_xent(&mut model.classifier, r, label, weight)?;
            class_losses.push(loss);
            grads.push(dr);
        }
        class_grads.push(grads);
    }
    let value = combine_losses(trip.loss, &class_losses, settings.lambda_class, trip.active);
    if !value.total.is_finite() {
        return Err(QanError::NonFiniteLoss(format!(
            "l_veri {} l_class {}",
            value.l_veri, value.l_class
        )));
    }
    let grads = [&trip.grad_anchor, &trip.grad_positive, &trip.grad_negative];
    for ((emb, g), cg) in embs.iter().zip(grads).zip(&class_grads) {
        model.backward_set(emb, g, Some(cg))?;
    }
    Ok(value)
}

/// Forward-only evaluation of the same total loss; touches no gradient.
pub fn triplet_total_loss(
    model: &QanModel,
    sets: [&ImageSet; 3],
    classes: &ClassMap,
    settings: &LossSettings,
) -> Result<f64> {
    let mut pooled = Vec::with_capacity(3);
    let mut class_losses = Vec::new();
    for set in sets {
        let mut r = Vec::with_capacity(set.len());
        let mut s = Vec::with_capacity(set.len());
        for sample in &set.samples {
            let (ri, si) = model.infer_sample(&sample.x)?;
            let logits = infer_stack(std::slice::from_ref(&model.classifier), &ri)?;
            class_losses.push(xent_from_logits(&logits, classes.class_of(sample.identity)?));
            r.push(ri);
            s.push(si);
        }
        let mu = normalize_qualities(&s)?;
        pooled.push(crate::model::set_pool_forward(&r, &mu)?);
    }
    let trip = triplet_loss(&pooled[0], &pooled[1], &pooled[2], settings.margin, settings.hinge)?;
    Ok(combine_losses(trip.loss, &class_losses, settings.lambda_class, trip.active).total)
}

/// One triplet, one optimizer step.
pub fn train_step(
    model: &mut QanModel,
    sets: [&ImageSet; 3],
    classes: &ClassMap,
    settings: &LossSettings,
    opt: &Sgd,
) -> Result<LossValue> {
    model.zero_grad();
    let value = accumulate_triplet_gradients(model, sets, classes, settings)?;
    model.step(opt)?;
    Ok(value)
}

/// One pass of per-sample softmax training over a shuffled sample order.
/// The quality head is never updated. Returns the mean pre-update loss.
pub fn pretrain_epoch(
    model: &mut QanModel,
    dataset: &Dataset,
    classes: &ClassMap,
    opt: &Sgd,
    rng: &mut Rng,
) -> Result<f64> {
    check_classes(model, classes)?;
    let mut order: Vec<(usize, usize)> = dataset
        .sets
        .iter()
        .enumerate()
        .flat_map(|(i, s)| (0..s.len()).map(move |j| (i, j)))
        .collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for &(i, j) in &order {
        let sample = &dataset.sets[i].samples[j];
        let fwd = model.forward_sample(&sample.x)?;
        let (loss, dr) = softmax_xent(
            &mut model.classifier,
            &fwd.embedding,
            classes.class_of(sample.identity)?,
            1.0,
        )?;
        if !loss.is_finite() {
            return Err(QanError::NonFiniteLoss(format!("pretrain loss on set {i} sample {j}")));
        }
        model.backward_sample(&fwd, &dr, None)?;
        model.step_without_quality(opt)?;
        total += loss;
    }
    Ok(total / order.len().max(1) as f64)
}

/// Mean normalized quality over clean (`q_true = 1`) and corrupted samples.
/// A group with no members reports NaN.
pub fn quality_split(model: &QanModel, dataset: &Dataset) -> Result<(f64, f64)> {
    let (mut clean, mut nc, mut corrupt, mut nk) = (0.0, 0usize, 0.0, 0usize);
    for set in &dataset.sets {
        let scores = set
            .samples
            .iter()
            .map(|s| model.infer_sample(&s.x).map(|(_, q)| q))
            .collect::<Result<Vec<_>>>()?;
        let mu = normalize_qualities(&scores)?;
        for (s, m) in set.samples.iter().zip(mu) {
            if s.q_true >= 1.0 {
                clean += m;
                nc += 1;
            } else {
                corrupt += m;
                nk += 1;
            }
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
    Ok((mean(clean, nc), mean(corrupt, nk)))
}

fn check_classes(model: &QanModel, classes: &ClassMap) -> Result<()> {
    if model.config.n_classes != classes.len() {
        return Err(QanError::InvalidConfig(format!(
            "model has {} classes but the dataset has {} identities",
            model.config.n_classes,
            classes.len()
        )));
    }
    Ok(())
}

/// Pretraining followed by joint training. When `checkpoint_dir` is given,
/// `ckpt_0.qanmodel` holds the initial model and `ckpt_<epoch>.qanmodel`
/// the model after each epoch (pretraining epochs count first).
pub fn train(
    model: &mut QanModel,
    dataset: &Dataset,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainLog> {
    cfg.validate()?;
    let classes = ClassMap::new(dataset);
    check_classes(model, &classes)?;
    if dataset.d_in != model.config.d_in {
        return Err(QanError::InvalidConfig(format!(
            "dataset d_in {} but model d_in {}",
            dataset.d_in, model.config.d_in
        )));
    }
    let settings = LossSettings {
        margin: model.config.margin,
        lambda_class: model.config.lambda_class,
        hinge: cfg.hinge,
    };
    let mut rng = seeded_rng(cfg.seed);
    let mut log = TrainLog::default();
    let save = |model: &QanModel, epoch: usize| -> Result<()> {
        if let Some(dir) = checkpoint_dir {
            checkpoint::save(model, dir.join(format!("ckpt_{epoch}.qanmodel")))?;
        }
        Ok(())
    };
    save(model, 0)?;

    let mut epoch = 0;
    let mut lr = cfg.pretrain_lr;
    for _ in 0..cfg.pretrain_epochs {
        epoch += 1;
        let opt = Sgd {
            lr,
            momentum: cfg.momentum,
        };
        let l_class = pretrain_epoch(model, dataset, &classes, &opt, &mut rng)?;
        let (mu_clean, mu_corrupt) = quality_split(model, dataset)?;
        log.records.push(EpochRecord {
            epoch,
            l_veri: 0.0,
            l_class,
            active_frac: 0.0,
            mu_clean,
            mu_corrupt,
        });
        log::info!("pretrain epoch {epoch}: l_class {l_class:.4}");
        save(model, epoch)?;
        lr *= cfg.lr_decay;
    }
    // momentum from pretraining should not leak into the joint phase
    model
        .params_mut()
        .into_iter()
        .for_each(|p| p.velocity.iter_mut().for_each(|v| *v = 0.0));

    if cfg.epochs > 0 {
        let sampler = TripletSampler::new(dataset)?;
        let mut lr = cfg.lr;
        for _ in 0..cfg.epochs {
            epoch += 1;
            let opt = Sgd {
                lr,
                momentum: cfg.momentum,
            };
            let (mut veri, mut class, mut active) = (0.0, 0.0, 0usize);
            for _ in 0..cfg.triplets_per_epoch {
                let t = sampler.sample(&mut rng);
                let sets = [
                    &dataset.sets[t.anchor],
                    &dataset.sets[t.positive],
                    &dataset.sets[t.negative],
                ];
                let v = train_step(model, sets, &classes, &settings, &opt)?;
                veri += v.l_veri;
                class += v.l_class;
                active += usize::from(v.active);
            }
            let n = cfg.triplets_per_epoch.max(1) as f64;
            let (mu_clean, mu_corrupt) = quality_split(model, dataset)?;
            let record = EpochRecord {
                epoch,
                l_veri: veri / n,
                l_class: class / n,
                active_frac: active as f64 / n,
                mu_clean,
                mu_corrupt,
            };
            log::info!(
                "epoch {epoch}: l_veri {:.4} l_class {:.4} active {:.3} mu clean {:.4} corrupt {:.4}",
                record.l_veri,
                record.l_class,
                record.active_frac,
                mu_clean,
                mu_corrupt
            );
            log.records.push(record);
            save(model, epoch)?;
            lr *= cfg.lr_decay;
        }
    }
    Ok(log)
}
