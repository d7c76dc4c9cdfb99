//! The two-branch network and the quality-weighted set pooling unit.
//!
//! A shared trunk maps every sample to hidden activations. The quality head
//! reads the trunk output at `split_index` (the middle representation) and
//! emits a sigmoid score per sample; the feature head reads the final trunk
//! output and emits the per-sample embedding. Scores are L1-normalized within
//! the set and used as pooling weights:
//!
//! ```text
//! mu_i = s_i / sum_j s_j          Ra = sum_i mu_i R_i
//! dL/dR_i  = mu_i g               dL/dmu_i = <g, R_i - Ra>
//! ```
//!
//! where `g = dL/dRa`. The gradient with respect to the raw scores `s_i`
//! then follows from the Jacobian of the normalization.

use serde::{Deserialize, Serialize};

use crate::error::{QanError, Result};
use crate::netcore::{
    backward_stack, forward_stack, infer_stack, seeded_rng, Activation, CompensatedSum, DenseCache, DenseLayer,
    InitScheme, Param, Rng, Sgd,
};

/// Tolerance on `sum mu = 1` accepted by the pooling operations.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub identity: usize,
    /// Ground-truth quality in `[0, 1]`, 1 = clean. Never seen by any loss.
    pub q_true: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub set_id: usize,
    pub identity: usize,
    pub samples: Vec<Sample>,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QanConfig {
    pub d_in: usize,
    pub trunk_dims: Vec<usize>,
    /// 1-based index of the trunk layer feeding the quality head.
    pub split_index: usize,
    pub d_embed: usize,
    /// Hidden width of the quality head; 0 means a single sigmoid layer.
    pub quality_hidden: usize,
    pub n_classes: usize,
    /// Triplet margin. Softmax pretraining leaves pooled embeddings with
    /// squared distances in the tens, so a unit-scale margin is satisfied by
    /// nearly every triplet and the quality head gets no signal.
    pub margin: f64,
    pub lambda_class: f64,
}

impl Default for QanConfig {
    fn default() -> Self {
        QanConfig {
            d_in: 32,
            trunk_dims: vec![64, 64, 32],
            split_index: 2,
            d_embed: 16,
            quality_hidden: 16,
            n_classes: 100,
            margin: 10.0,
            lambda_class: 1.0,
        }
    }
}

impl QanConfig {
    /// The middle trunk layer, `ceil(len / 2)`.
    pub fn middle_split(trunk_len: usize) -> usize {
        trunk_len.div_ceil(2).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(QanError::InvalidConfig(m));
        if self.d_in == 0 {
            return bad("d_in must be >= 1".into());
        }
        if self.trunk_dims.is_empty() || self.trunk_dims.contains(&0) {
            return bad(format!(
                "trunk_dims must be non-empty and positive, got {:?}",
                self.trunk_dims
            ));
        }
        if self.split_index < 1 || self.split_index > self.trunk_dims.len() {
            return bad(format!(
                "split_index {} outside 1..={}",
                self.split_index,
                self.trunk_dims.len()
            ));
        }
        if self.d_embed == 0 {
            return bad("d_embed must be >= 1".into());
        }
        if self.n_classes == 0 {
            return bad("n_classes must be >= 1".into());
        }
        if !(self.margin > 0.0) {
            return bad(format!("margin must be > 0, got {}", self.margin));
        }
        if !(self.lambda_class >= 0.0) {
            return bad(format!("lambda_class must be >= 0, got {}", self.lambda_class));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QanModel {
    pub config: QanConfig,
    pub trunk: Vec<DenseLayer>,
    pub feature_head: Vec<DenseLayer>,
    pub quality_head: Vec<DenseLayer>,
    pub classifier: DenseLayer,
    /// Bumped whenever parameters change; embeddings remember the value they
    /// were computed at.
    generation: u64,
}

/// Per-sample intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct SampleForward {
    pub middle: Vec<f64>,
    pub embedding: Vec<f64>,
    pub mu_raw: f64,
    trunk: Vec<DenseCache>,
    feature: Vec<DenseCache>,
    quality: Vec<DenseCache>,
}

#[derive(Debug, Clone)]
pub struct SetEmbedding {
    /// Per-sample embeddings `R_i`.
    pub r: Vec<Vec<f64>>,
    /// Raw sigmoid scores before set normalization.
    pub mu_raw: Vec<f64>,
    /// Normalized qualities, summing to 1.
    pub mu: Vec<f64>,
    /// Pooled set representation.
    pub ra: Vec<f64>,
    samples: Vec<SampleForward>,
    generation: u64,
}

impl QanModel {
    pub fn new(config: QanConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        Ok(Self::build(config, &mut rng))
    }

    fn build(config: QanConfig, rng: &mut Rng) -> Self {
        let he = InitScheme::UniformHe;
        let mut trunk = Vec::with_capacity(config.trunk_dims.len());
        let mut width = config.d_in;
        for (i, &out) in config.trunk_dims.iter().enumerate() {
            trunk.push(DenseLayer::new(
                &format!("trunk.{i}"),
                width,
                out,
                Activation::Relu,
                rng,
                he,
            ));
            width = out;
        }
        let feature_head = vec![DenseLayer::new(
            "feature.0",
            width,
            config.d_embed,
            Activation::Identity,
            rng,
            he,
        )];
        let middle = config.trunk_dims[config.split_index - 1];
        let quality_head = if config.quality_hidden == 0 {
            vec![DenseLayer::new("quality.0", middle, 1, Activation::Sigmoid, rng, he)]
        } else {
            vec![
                DenseLayer::new("quality.0", middle, config.quality_hidden, Activation::Relu, rng, he),
                DenseLayer::new("quality.1", config.quality_hidden, 1, Activation::Sigmoid, rng, he),
            ]
        };
        let classifier = DenseLayer::new(
            "classifier",
            config.d_embed,
            config.n_classes,
            Activation::Identity,
            rng,
            he,
        );
        QanModel {
            config,
            trunk,
            feature_head,
            quality_head,
            classifier,
            generation: 0,
        }
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Call after mutating parameter values directly.
    pub fn touch(&mut self) {
        self.generation += 1;
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for l in self.trunk.iter().chain(&self.feature_head).chain(&self.quality_head) {
            out.extend(l.params());
        }
        out.extend(self.classifier.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for l in self
            .trunk
            .iter_mut()
            .chain(self.feature_head.iter_mut())
            .chain(self.quality_head.iter_mut())
        {
            out.extend(l.params_mut());
        }
        out.extend(self.classifier.params_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// One optimizer step over every parameter.
    pub fn step(&mut self, opt: &Sgd) -> Result<()> {
        opt.step(self.params_mut())?;
        self.generation += 1;
        Ok(())
    }

    /// One optimizer step that leaves the quality head untouched.
    pub fn step_without_quality(&mut self, opt: &Sgd) -> Result<()> {
        let mut params = Vec::new();
        for l in self.trunk.iter_mut().chain(self.feature_head.iter_mut()) {
            params.extend(l.params_mut());
        }
        params.extend(self.classifier.params_mut());
        opt.step(params)?;
        self.quality_head
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .for_each(Param::zero_grad);
        self.generation += 1;
        Ok(())
    }

    /// Runs one sample through trunk and both heads.
    pub fn forward_sample(&self, x: &[f64]) -> Result<SampleForward> {
        let (top, trunk) = forward_stack(&self.trunk, x)?;
        let middle = trunk[self.config.split_index - 1].output.clone();
        let (embedding, feature) = forward_stack(&self.feature_head, &top)?;
        let (score, quality) = forward_stack(&self.quality_head, &middle)?;
        Ok(SampleForward {
            middle,
            embedding,
            mu_raw: score[0],
            trunk,
            feature,
            quality,
        })
    }

    /// Embedding and raw quality score without caches.
    pub fn infer_sample(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let split = self.config.split_index;
        let middle = infer_stack(&self.trunk[..split], x)?;
        let top = infer_stack(&self.trunk[split..], &middle)?;
        let r = infer_stack(&self.feature_head, &top)?;
        let s = infer_stack(&self.quality_head, &middle)?;
        Ok((r, s[0]))
    }

    pub fn embed_set(&self, set: &ImageSet) -> Result<SetEmbedding> {
        if set.is_empty() {
            return Err(QanError::EmptySet);
        }
        let samples = set
            .samples
            .iter()
            .map(|s| self.forward_sample(&s.x))
            .collect::<Result<Vec<_>>>()?;
        let r: Vec<Vec<f64>> = samples.iter().map(|s| s.embedding.clone()).collect();
        let mu_raw: Vec<f64> = samples.iter().map(|s| s.mu_raw).collect();
        let mu = normalize_qualities(&mu_raw)?;
        let ra = set_pool_forward(&r, &mu)?;
        Ok(SetEmbedding {
            r,
            mu_raw,
            mu,
            ra,
            samples,
            generation: self.generation,
        })
    }

    /// Accumulates parameter gradients for one embedded set, given
    /// `g = dL/dRa` and optional extra per-sample embedding gradients (the
    /// softmax branch). Quality gradients come from `g` only.
    pub fn backward_set(&mut self, emb: &SetEmbedding, g: &[f64], class_grads: Option<&[Vec<f64>]>) -> Result<()> {
        if emb.generation != self.generation {
            return Err(QanError::StaleCache {
                cached: emb.generation,
                current: self.generation,
            });
        }
        if g.len() != self.config.d_embed {
            return Err(QanError::ShapeMismatch {
                context: "backward_set",
                detail: format!("g has length {}, d_embed is {}", g.len(), self.config.d_embed),
            });
        }
        if let Some(cg) = class_grads {
            if cg.len() != emb.samples.len() {
                return Err(QanError::ShapeMismatch {
                    context: "backward_set",
                    detail: format!("{} class gradients for {} samples", cg.len(), emb.samples.len()),
                });
            }
        }
        let (dr, dmu) = set_pool_backward(&emb.r, &emb.mu, &emb.ra, g)?;
        let dmu_raw = normalize_qualities_backward(&emb.mu_raw, &emb.mu, &dmu);

        for (i, sample) in emb.samples.iter().enumerate() {
            let mut d_embedding = dr[i].clone();
            if let Some(cg) = class_grads {
                if cg[i].len() != d_embedding.len() {
                    return Err(QanError::ShapeMismatch {
                        context: "backward_set",
                        detail: format!("class gradient {i} has length {}", cg[i].len()),
                    });
                }
                d_embedding.iter_mut().zip(&cg[i]).for_each(|(a, b)| *a += b);
            }
            self.backward_sample(sample, &d_embedding, Some(dmu_raw[i]))?;
        }
        Ok(())
    }

    /// Backward through one sample's network. With `d_mu_raw = None` the
    /// quality head is skipped entirely.
    pub fn backward_sample(
        &mut self,
        sample: &SampleForward,
        d_embedding: &[f64],
        d_mu_raw: Option<f64>,
    ) -> Result<()> {
        let split = self.config.split_index;
        let mut d_top = backward_stack(&mut self.feature_head, &sample.feature, d_embedding)?;
        let (lower, upper) = self.trunk.split_at_mut(split);
        if !upper.is_empty() {
            d_top = backward_stack(upper, &sample.trunk[split..], &d_top)?;
        }
        if let Some(ds) = d_mu_raw {
            let d_middle = backward_stack(&mut self.quality_head, &sample.quality, &[ds])?;
            d_top.iter_mut().zip(&d_middle).for_each(|(a, b)| *a += b);
        }
        backward_stack(lower, &sample.trunk[..split], &d_top)?;
        Ok(())
    }
}

/// Group L1 normalization of strictly positive scores.
pub fn normalize_qualities(mu_raw: &[f64]) -> Result<Vec<f64>> {
    if mu_raw.is_empty() {
        return Err(QanError::EmptySet);
    }
    if let Some((index, &value)) = mu_raw.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(QanError::NonPositiveQuality { index, value });
    }
    let mut total = CompensatedSum::default();
    mu_raw.iter().for_each(|&v| total.add(v));
    let total = total.value();
    Ok(mu_raw.iter().map(|v| v / total).collect())
}

/// Pulls `dL/dmu` back to the raw scores:
/// `dL/ds_i = (dL/dmu_i - sum_j mu_j dL/dmu_j) / sum_j s_j`.
pub fn normalize_qualities_backward(mu_raw: &[f64], mu: &[f64], dmu: &[f64]) -> Vec<f64> {
    let total: f64 = mu_raw.iter().sum();
    let mean: f64 = mu.iter().zip(dmu).map(|(m, d)| m * d).sum();
    dmu.iter().map(|d| (d - mean) / total).collect()
}

/// `Ra = sum_i mu_i R_i`, summed in ascending sample order with compensation.
pub fn set_pool_forward(r: &[Vec<f64>], mu: &[f64]) -> Result<Vec<f64>> {
    if r.is_empty() {
        return Err(QanError::EmptySet);
    }
    if r.len() != mu.len() {
        return Err(QanError::ShapeMismatch {
            context: "set_pool_forward",
            detail: format!("{} embeddings but {} weights", r.len(), mu.len()),
        });
    }
    let d = r[0].len();
    if let Some(bad) = r.iter().find(|v| v.len() != d) {
        return Err(QanError::ShapeMismatch {
            context: "set_pool_forward",
            detail: format!("embedding lengths {d} and {}", bad.len()),
        });
    }
    let sum: f64 = mu.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(QanError::NotNormalized { sum });
    }
    let mut acc = vec![CompensatedSum::default(); d];
    for (ri, &m) in r.iter().zip(mu) {
        for (a, &x) in acc.iter_mut().zip(ri) {
            a.add(m * x);
        }
    }
    Ok(acc.iter().map(CompensatedSum::value).collect())
}

/// Returns `(dR, dmu)` with `dR_i = mu_i g` and `dmu_i = <g, R_i - Ra>`.
pub fn set_pool_backward(r: &[Vec<f64>], mu: &[f64], ra: &[f64], g: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if r.len() != mu.len() || r.is_empty() {
        return Err(QanError::ShapeMismatch {
            context: "set_pool_backward",
            detail: format!("{} embeddings, {} weights", r.len(), mu.len()),
        });
    }
    if ra.len() != g.len() || r.iter().any(|v| v.len() != g.len()) {
        return Err(QanError::ShapeMismatch {
            context: "set_pool_backward",
            detail: format!("pooled length {}, gradient length {}", ra.len(), g.len()),
        });
    }
    let dr = mu.iter().map(|&m| g.iter().map(|gj| m * gj).collect()).collect();
    let dmu = r
        .iter()
        .map(|ri| ri.iter().zip(ra).zip(g).map(|((x, a), gj)| gj * (x - a)).sum())
        .collect();
    Ok((dr, dmu))
}
