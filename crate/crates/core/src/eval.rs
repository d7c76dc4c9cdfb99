//! Set-to-set evaluation: CMC matching, verification ROC, baselines and
//! agreement between learned quality scores and ground truth.
//!
//! Distances are "smaller is closer". ROC scores are similarities, obtained as
//! negated distances.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{QanError, Result};
use crate::model::{normalize_qualities, set_pool_forward, ImageSet, QanModel};
use crate::netcore::{dot, seeded_rng};

/// Ranks reported in CMC tables.
pub const CMC_RANKS: [usize; 4] = [1, 5, 10, 20];
/// False-positive rates at which TPR is reported.
pub const FPR_TARGETS: [f64; 3] = [1e-3, 1e-2, 1e-1];

/// Per-sample network outputs for one set, computed once and reused by every
/// method.
#[derive(Debug, Clone)]
pub struct SetFeatures {
    pub identity: usize,
    pub set_id: usize,
    pub r: Vec<Vec<f64>>,
    pub mu_raw: Vec<f64>,
    pub q_true: Vec<f64>,
}

impl SetFeatures {
    pub fn compute(model: &QanModel, set: &ImageSet) -> Result<Self> {
        if set.is_empty() {
            return Err(QanError::EmptySet);
        }
        let mut r = Vec::with_capacity(set.len());
        let mut mu_raw = Vec::with_capacity(set.len());
        for s in &set.samples {
            let (ri, si) = model.infer_sample(&s.x)?;
            r.push(ri);
            mu_raw.push(si);
        }
        Ok(SetFeatures {
            identity: set.identity,
            set_id: set.set_id,
            r,
            mu_raw,
            q_true: set.samples.iter().map(|s| s.q_true).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pooling {
    /// Learned quality weights.
    Qan,
    /// Uniform weights `1/N` over the same features.
    AvePool,
    /// Weights proportional to ground-truth quality.
    Oracle,
}

pub fn pooling_weights(pooling: Pooling, f: &SetFeatures) -> Result<Vec<f64>> {
    let n = f.r.len();
    match pooling {
        Pooling::Qan => normalize_qualities(&f.mu_raw),
        Pooling::AvePool => Ok(vec![1.0 / n as f64; n]),
        Pooling::Oracle => {
            let total: f64 = f.q_true.iter().sum();
            if total > 0.0 {
                Ok(f.q_true.iter().map(|q| q / total).collect())
            } else {
                log::warn!(
                    "set {}: every q_true is 0, oracle pooling falls back to uniform",
                    f.set_id
                );
                Ok(vec![1.0 / n as f64; n])
            }
        }
    }
}

pub fn pool_features(pooling: Pooling, f: &SetFeatures) -> Result<Vec<f64>> {
    set_pool_forward(&f.r, &pooling_weights(pooling, f)?)
}

/// Pooled representation of `set` under `pooling`.
pub fn aggregate(pooling: Pooling, model: &QanModel, set: &ImageSet) -> Result<Vec<f64>> {
    pool_features(pooling, &SetFeatures::compute(model, set)?)
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `1 - cos(a, b)`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(QanError::ZeroNorm);
    }
    Ok(1.0 - dot(a, b) / (na * nb))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetDistance {
    PooledL2,
    PooledCos,
    /// Minimum cosine distance over all cross-set sample pairs.
    MinCos,
    /// Minimum Euclidean distance over all cross-set sample pairs.
    MinL2,
}

impl SetDistance {
    pub fn is_pooled(self) -> bool {
        matches!(self, SetDistance::PooledL2 | SetDistance::PooledCos)
    }
}

/// Distance between two sets. Pooled metrics expect exactly one (pooled)
/// vector per side; closure metrics take every member embedding.
pub fn set_distance(metric: SetDistance, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(QanError::EmptySet);
    }
    match metric {
        SetDistance::PooledL2 | SetDistance::PooledCos => {
            if a.len() != 1 || b.len() != 1 {
                return Err(QanError::ShapeMismatch {
                    context: "set_distance",
                    detail: format!("pooled metric given {} and {} vectors", a.len(), b.len()),
                });
            }
            if metric == SetDistance::PooledL2 {
                Ok(l2_distance(&a[0], &b[0]))
            } else {
                cosine_distance(&a[0], &b[0])
            }
        }
        SetDistance::MinCos | SetDistance::MinL2 => {
            let mut best = f64::INFINITY;
            for x in a {
                for y in b {
                    let d = if metric == SetDistance::MinCos {
                        cosine_distance(x, y)?
                    } else {
                        l2_distance(x, y)
                    };
                    best = best.min(d);
                }
            }
            Ok(best)
        }
    }
}

/// A complete set-comparison recipe used in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMethod {
    Qan,
    AvePool,
    Oracle,
    MinCos,
    MinL2,
}

impl EvalMethod {
    pub const ALL: [EvalMethod; 5] = [
        EvalMethod::Qan,
        EvalMethod::AvePool,
        EvalMethod::MinCos,
        EvalMethod::MinL2,
        EvalMethod::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EvalMethod::Qan => "qan",
            EvalMethod::AvePool => "avepool",
            EvalMethod::Oracle => "oracle",
            EvalMethod::MinCos => "mincos",
            EvalMethod::MinL2 => "minl2",
        }
    }

    fn pooling(self) -> Option<Pooling> {
        match self {
            EvalMethod::Qan => Some(Pooling::Qan),
            EvalMethod::AvePool => Some(Pooling::AvePool),
            EvalMethod::Oracle => Some(Pooling::Oracle),
            EvalMethod::MinCos | EvalMethod::MinL2 => None,
        }
    }

    /// Representation handed to [`set_distance`] for this method.
    pub fn represent(self, f: &SetFeatures) -> Result<Vec<Vec<f64>>> {
        match self.pooling() {
            Some(p) => Ok(vec![pool_features(p, f)?]),
            None => Ok(f.r.clone()),
        }
    }

    pub fn metric(self) -> SetDistance {
        match self {
            EvalMethod::MinCos => SetDistance::MinCos,
            EvalMethod::MinL2 => SetDistance::MinL2,
            _ => SetDistance::PooledL2,
        }
    }
}

impl fmt::Display for EvalMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EvalMethod {
    type Err = QanError;

    /// Case-insensitive; `min-cos` and `min_cos` are accepted for `mincos`.
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .trim()
            .chars()
            .filter(|c| !matches!(c, '-' | '_'))
            .map(|c| c.to_ascii_lowercase())
            .collect();
        EvalMethod::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| QanError::InvalidConfig(format!("unknown method `{s}`")))
    }
}

/// `dist[i][j]` between probe `i` and gallery `j`.
pub fn distance_matrix(method: EvalMethod, probes: &[SetFeatures], gallery: &[SetFeatures]) -> Result<Vec<Vec<f64>>> {
    let g = gallery
        .iter()
        .map(|f| method.represent(f))
        .collect::<Result<Vec<_>>>()?;
    probes
        .iter()
        .map(|p| {
            let rp = method.represent(p)?;
            g.iter().map(|rg| set_distance(method.metric(), &rp, rg)).collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmcTable {
    /// `curve[k - 1]` is the matching rate within the top `k`, for every `k`
    /// up to the gallery size.
    pub curve: Vec<f64>,
}

impl CmcTable {
    /// Rate at rank `k`; ranks past the gallery size saturate at the last value.
    pub fn rate(&self, k: usize) -> f64 {
        assert!(k >= 1, "CMC ranks start at 1");
        self.curve[(k - 1).min(self.curve.len() - 1)]
    }

    pub fn ranks(&self) -> Vec<(usize, f64)> {
        CMC_RANKS.iter().map(|&k| (k, self.rate(k))).collect()
    }
}

/// Rank of the true match for each probe (1-based). Ties go to the lower
/// gallery index.
pub fn match_ranks(dist: &[Vec<f64>], probe_ids: &[usize], gallery_ids: &[usize]) -> Result<Vec<usize>> {
    let mut position = BTreeMap::new();
    for (j, &id) in gallery_ids.iter().enumerate() {
        if position.insert(id, j).is_some() {
            return Err(QanError::DuplicateGalleryIdentity(id));
        }
    }
    let missing: Vec<usize> = probe_ids
        .iter()
        .filter(|id| !position.contains_key(id))
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if !missing.is_empty() {
        return Err(QanError::MissingGalleryIdentity(missing));
    }
    if dist.len() != probe_ids.len() || dist.iter().any(|row| row.len() != gallery_ids.len()) {
        return Err(QanError::ShapeMismatch {
            context: "cmc",
            detail: "distance matrix does not match probe/gallery sizes".into(),
        });
    }
    Ok(dist
        .iter()
        .zip(probe_ids)
        .map(|(row, id)| {
            let t = position[id];
            let target = row[t];
            1 + row
                .iter()
                .enumerate()
                .filter(|&(j, &d)| d < target || (d == target && j < t))
                .count()
        })
        .collect())
}

pub fn cmc_from_distances(dist: &[Vec<f64>], probe_ids: &[usize], gallery_ids: &[usize]) -> Result<CmcTable> {
    if probe_ids.is_empty() || gallery_ids.is_empty() {
        return Err(QanError::Degenerate("CMC needs probes and a gallery".into()));
    }
    let ranks = match_ranks(dist, probe_ids, gallery_ids)?;
    let mut hits = vec![0usize; gallery_ids.len()];
    for r in ranks {
        hits[r - 1] += 1;
    }
    let n = probe_ids.len() as f64;
    let mut cum = 0;
    let curve = hits
        .into_iter()
        .map(|h| {
            cum += h;
            cum as f64 / n
        })
        .collect();
    Ok(CmcTable { curve })
}

pub fn cmc(model: &QanModel, probes: &[ImageSet], gallery: &[ImageSet], method: EvalMethod) -> Result<CmcTable> {
    let p = features_of(model, probes)?;
    let g = features_of(model, gallery)?;
    cmc_for_features(method, &p, &g)
}

pub fn cmc_for_features(method: EvalMethod, probes: &[SetFeatures], gallery: &[SetFeatures]) -> Result<CmcTable> {
    let dist = distance_matrix(method, probes, gallery)?;
    let pid: Vec<usize> = probes.iter().map(|f| f.identity).collect();
    let gid: Vec<usize> = gallery.iter().map(|f| f.identity).collect();
    cmc_from_distances(&dist, &pid, &gid)
}

fn features_of(model: &QanModel, sets: &[ImageSet]) -> Result<Vec<SetFeatures>> {
    sets.iter().map(|s| SetFeatures::compute(model, s)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocReport {
    /// `(fpr, tpr)` staircase from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
    /// Best accuracy over all thresholds.
    pub accuracy: f64,
    /// Highest TPR reachable with FPR at most the target, per [`FPR_TARGETS`].
    pub tpr_at: Vec<(f64, f64)>,
}

impl RocReport {
    pub fn tpr_at(&self, fpr: f64) -> Option<f64> {
        self.tpr_at.iter().find(|(f, _)| *f == fpr).map(|(_, t)| *t)
    }
}

/// ROC from similarity scores (higher means "same identity"). Tied scores
/// move the curve diagonally, so a constant scorer yields AUC 0.5.
pub fn roc_from_scores(scores: &[f64], labels: &[bool]) -> Result<RocReport> {
    if scores.len() != labels.len() {
        return Err(QanError::ShapeMismatch {
            context: "roc",
            detail: format!("{} scores, {} labels", scores.len(), labels.len()),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(QanError::Degenerate("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(QanError::Degenerate(format!("{pos} positive and {neg} negative pairs")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points = vec![(0.0, 0.0)];
    let mut best_correct = neg; // threshold above every score: all rejected
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        best_correct = best_correct.max(tp + (neg - fp));
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum();
    let tpr_at = FPR_TARGETS
        .iter()
        .map(|&target| {
            let t = points
                .iter()
                .filter(|(f, _)| *f <= target)
                .map(|(_, t)| *t)
                .fold(0.0, f64::max);
            (target, t)
        })
        .collect();
    Ok(RocReport {
        points,
        auc,
        accuracy: best_correct as f64 / labels.len() as f64,
        tpr_at,
    })
}

/// A verification pair: indices into a set list plus the same-identity flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerificationPair {
    pub a: usize,
    pub b: usize,
    pub same: bool,
}

/// All same-identity set pairs plus an equal number of distinct random
/// different-identity pairs (fewer if not enough exist).
pub fn verification_pairs(sets: &[ImageSet], seed: u64) -> Vec<VerificationPair> {
    let mut pairs = Vec::new();
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            if sets[i].identity == sets[j].identity {
                pairs.push(VerificationPair { a: i, b: j, same: true });
            }
        }
    }
    let n = sets.len();
    let total_negatives: usize = {
        let mut per: BTreeMap<usize, usize> = BTreeMap::new();
        sets.iter().for_each(|s| *per.entry(s.identity).or_default() += 1);
        let same: usize = per.values().map(|c| c * (c - 1) / 2).sum();
        n * n.saturating_sub(1) / 2 - same
    };
    let wanted = pairs.len().min(total_negatives);
    let mut rng = seeded_rng(seed);
    let mut seen = BTreeSet::new();
    while seen.len() < wanted {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        let (a, b) = (i.min(j), i.max(j));
        if sets[a].identity != sets[b].identity && seen.insert((a, b)) {
            pairs.push(VerificationPair { a, b, same: false });
        }
    }
    pairs
}

pub fn roc_for_features(method: EvalMethod, sets: &[SetFeatures], pairs: &[VerificationPair]) -> Result<RocReport> {
    let reps = sets.iter().map(|f| method.represent(f)).collect::<Result<Vec<_>>>()?;
    let mut scores = Vec::with_capacity(pairs.len());
    for p in pairs {
        scores.push(-set_distance(method.metric(), &reps[p.a], &reps[p.b])?);
    }
    let labels: Vec<bool> = pairs.iter().map(|p| p.same).collect();
    roc_from_scores(&scores, &labels)
}

pub fn roc(model: &QanModel, sets: &[ImageSet], pairs: &[VerificationPair], method: EvalMethod) -> Result<RocReport> {
    roc_for_features(method, &features_of(model, sets)?, pairs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecileRow {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgreementReport {
    pub spearman_rho: f64,
    pub pairwise_agreement: f64,
    /// Pairs with distinct ground truth that were compared.
    pub pairs: usize,
    pub deciles: Vec<DecileRow>,
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman correlation (0 when the scores are constant).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Compares learned scores against ground-truth quality. Pairs with equal
/// ground truth are skipped; equal scores on a compared pair count as a
/// disagreement.
pub fn agreement_from_scores(scores: &[f64], q_true: &[f64]) -> Result<AgreementReport> {
    if scores.len() != q_true.len() {
        return Err(QanError::ShapeMismatch {
            context: "quality agreement",
            detail: format!("{} scores, {} ground-truth values", scores.len(), q_true.len()),
        });
    }
    let distinct: BTreeSet<u64> = q_true.iter().map(|q| q.to_bits()).collect();
    if distinct.len() < 2 {
        return Err(QanError::Degenerate("fewer than two distinct q_true values".into()));
    }
    let (mut agree, mut compared) = (0usize, 0usize);
    for i in 0..scores.len() {
        for j in i + 1..scores.len() {
            let dq = q_true[i] - q_true[j];
            if dq == 0.0 {
                continue;
            }
            compared += 1;
            let ds = scores[i] - scores[j];
            if ds != 0.0 && (ds > 0.0) == (dq > 0.0) {
                agree += 1;
            }
        }
    }
    let mut bins = vec![(0usize, 0.0f64); 10];
    for (&s, &q) in scores.iter().zip(q_true) {
        let b = ((q * 10.0).floor() as usize).min(9);
        bins[b].0 += 1;
        bins[b].1 += s;
    }
    let deciles = bins
        .into_iter()
        .enumerate()
        .map(|(b, (count, sum))| DecileRow {
            lo: b as f64 / 10.0,
            hi: (b + 1) as f64 / 10.0,
            count,
            mean_score: if count == 0 { f64::NAN } else { sum / count as f64 },
        })
        .collect();
    Ok(AgreementReport {
        spearman_rho: spearman(scores, q_true),
        pairwise_agreement: agree as f64 / compared as f64,
        pairs: compared,
        deciles,
    })
}

/// Raw (pre-normalization) sigmoid scores of every sample against `q_true`.
pub fn quality_agreement(model: &QanModel, dataset: &Dataset) -> Result<AgreementReport> {
    let mut scores = Vec::with_capacity(dataset.sample_count());
    let mut q = Vec::with_capacity(dataset.sample_count());
    for s in dataset.samples() {
        scores.push(model.infer_sample(&s.x)?.1);
        q.push(s.q_true);
    }
    agreement_from_scores(&scores, &q)
}

/// First set of each identity becomes a probe, the second its gallery entry.
/// Identities with a single set only appear in the gallery. Third and later
/// sets of an identity are left out of the CMC protocol (they still form
/// verification pairs), so the gallery never holds two sets of one identity.
pub fn probe_gallery_split(dataset: &Dataset) -> (Vec<ImageSet>, Vec<ImageSet>) {
    let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
    let mut first: BTreeMap<usize, ImageSet> = BTreeMap::new();
    let mut probes = Vec::new();
    let mut gallery = Vec::new();
    for set in &dataset.sets {
        let c = seen.entry(set.identity).or_default();
        match *c {
            0 => {
                first.insert(set.identity, set.clone());
            }
            1 => {
                probes.push(first.remove(&set.identity).expect("first set recorded"));
                gallery.push(set.clone());
            }
            _ => {}
        }
        *c += 1;
    }
    gallery.extend(first.into_values());
    (probes, gallery)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub cmc: Vec<(EvalMethod, CmcTable)>,
    pub roc: Vec<(EvalMethod, RocReport)>,
    pub agreement: Option<AgreementReport>,
}

impl EvalReport {
    pub fn cmc_of(&self, m: EvalMethod) -> Option<&CmcTable> {
        self.cmc.iter().find(|(k, _)| *k == m).map(|(_, t)| t)
    }

    pub fn roc_of(&self, m: EvalMethod) -> Option<&RocReport> {
        self.roc.iter().find(|(k, _)| *k == m).map(|(_, t)| t)
    }

    pub fn cmc_csv(&self) -> String {
        let mut out = String::from("method");
        CMC_RANKS.iter().for_each(|k| {
            let _ = write!(out, ",cmc@{k}");
        });
        out.push('\n');
        for (m, t) in &self.cmc {
            out.push_str(m.name());
            for (_, r) in t.ranks() {
                let _ = write!(out, ",{r}");
            }
            out.push('\n');
        }
        out
    }

    pub fn roc_csv(&self) -> String {
        let mut out = String::from("method,auc,accuracy,tpr@1e-3,tpr@1e-2,tpr@1e-1\n");
        for (m, r) in &self.roc {
            let _ = write!(out, "{},{},{}", m.name(), r.auc, r.accuracy);
            for (_, t) in &r.tpr_at {
                let _ = write!(out, ",{t}");
            }
            out.push('\n');
        }
        out
    }

    pub fn agreement_csv(&self) -> Option<String> {
        self.agreement
            .as_ref()
            .map(|a| format!("spearman,pair_agreement\n{},{}\n", a.spearman_rho, a.pairwise_agreement))
    }

    pub fn deciles_csv(&self) -> Option<String> {
        self.agreement.as_ref().map(|a| {
            let mut out = String::from("q_lo,q_hi,count,mean_mu_raw\n");
            for d in &a.deciles {
                let _ = writeln!(out, "{},{},{},{}", d.lo, d.hi, d.count, d.mean_score);
            }
            out
        })
    }

    /// Human-readable summary.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "CMC");
        let _ = writeln!(
            out,
            "  {:<8} {:>7} {:>7} {:>7} {:>7}",
            "method", "@1", "@5", "@10", "@20"
        );
        for (m, t) in &self.cmc {
            let r = t.ranks();
            let _ = writeln!(
                out,
                "  {:<8} {:>7.3} {:>7.3} {:>7.3} {:>7.3}",
                m.name(),
                r[0].1,
                r[1].1,
                r[2].1,
                r[3].1
            );
        }
        let _ = writeln!(out, "ROC");
        let _ = writeln!(
            out,
            "  {:<8} {:>7} {:>7} {:>9} {:>9} {:>9}",
            "method", "auc", "acc", "tpr@1e-3", "tpr@1e-2", "tpr@1e-1"
        );
        for (m, r) in &self.roc {
            let t: Vec<f64> = r.tpr_at.iter().map(|x| x.1).collect();
            let _ = writeln!(
                out,
                "  {:<8} {:>7.4} {:>7.4} {:>9.3} {:>9.3} {:>9.3}",
                m.name(),
                r.auc,
                r.accuracy,
                t[0],
                t[1],
                t[2]
            );
        }
        if let Some(a) = &self.agreement {
            let _ = writeln!(
                out,
                "Quality agreement: spearman {:.4}, pairwise {:.4} over {} pairs",
                a.spearman_rho, a.pairwise_agreement, a.pairs
            );
            for d in &a.deciles {
                let close = if d.hi >= 1.0 { ']' } else { ')' };
                let _ = writeln!(
                    out,
                    "  q in [{:.1},{:.1}{close} n={:<5} mean mu_raw {:.4}",
                    d.lo, d.hi, d.count, d.mean_score
                );
            }
        }
        out
    }
}

/// CMC and ROC for every requested method plus quality agreement.
pub fn evaluate(model: &QanModel, dataset: &Dataset, methods: &[EvalMethod], pair_seed: u64) -> Result<EvalReport> {
    if dataset.d_in != model.config.d_in {
        return Err(QanError::InvalidConfig(format!(
            "dataset d_in {} does not match model d_in {}",
            dataset.d_in, model.config.d_in
        )));
    }
    let (probes, gallery) = probe_gallery_split(dataset);
    let pf = features_of(model, &probes)?;
    let gf = features_of(model, &gallery)?;
    let all = features_of(model, &dataset.sets)?;
    let pairs = verification_pairs(&dataset.sets, pair_seed);

    let mut report = EvalReport {
        cmc: Vec::new(),
        roc: Vec::new(),
        agreement: None,
    };
    for &m in methods {
        report.cmc.push((m, cmc_for_features(m, &pf, &gf)?));
        report.roc.push((m, roc_for_features(m, &all, &pairs)?));
    }
    report.agreement = match quality_agreement(model, dataset) {
        Ok(a) => Some(a),
        Err(QanError::Degenerate(msg)) => {
            log::warn!("skipping quality agreement: {msg}");
            None
        }
        Err(e) => return Err(e),
    };
    Ok(report)
}
