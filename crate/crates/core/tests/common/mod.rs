//! Random instances and brute-force oracles shared by the property suites and
//! the acceptance target. Nothing here calls back into the code it checks
//! except through the public entry points under test.

#![allow(dead_code)]

use qan::eval::{cmc_from_distances, roc_from_scores, FPR_TARGETS};
use qan::model::{normalize_qualities, set_pool_backward, set_pool_forward};
use qan::netcore::Rng;
use rand::Rng as _;

/// Raw scores, per-sample embeddings and an upstream gradient for one set.
#[derive(Debug, Clone)]
pub struct PoolInstance {
    pub s: Vec<f64>,
    pub r: Vec<Vec<f64>>,
    pub g: Vec<f64>,
}

pub fn pool_instance(rng: &mut Rng) -> PoolInstance {
    let n = rng.random_range(1..=10);
    let d = rng.random_range(1..=8);
    PoolInstance {
        s: (0..n).map(|_| rng.random_range(1e-3..1.0)).collect(),
        r: (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect(),
        g: (0..d).map(|_| rng.random_range(-2.0..2.0)).collect(),
    }
}

fn mean_of(r: &[Vec<f64>]) -> Vec<f64> {
    let n = r.len() as f64;
    (0..r[0].len())
        .map(|j| r.iter().map(|v| v[j]).sum::<f64>() / n)
        .collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Normalization, singleton, average-pooling degeneration, per-coordinate
/// hull bounds, permutation and scale routing on one instance.
pub fn check_pool_invariants(inst: &PoolInstance) -> Result<(), String> {
    let PoolInstance { s, r, g } = inst;
    let mu = normalize_qualities(s).map_err(|e| e.to_string())?;
    let total: f64 = mu.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(format!("sum of mu is {total:e}"));
    }
    let ra = set_pool_forward(r, &mu).map_err(|e| e.to_string())?;

    let lone = set_pool_forward(&r[..1], &normalize_qualities(&s[..1]).unwrap()).unwrap();
    if lone != r[0] {
        return Err(format!("singleton pooled to {lone:?}, expected {:?}", r[0]));
    }

    let flat = normalize_qualities(&vec![s[0]; s.len()]).unwrap();
    let ave = set_pool_forward(r, &flat).unwrap();
    if max_diff(&ave, &mean_of(r)) > 1e-12 {
        return Err(format!("uniform scores gave {ave:?}, mean is {:?}", mean_of(r)));
    }

    for j in 0..ra.len() {
        let lo = r.iter().map(|v| v[j]).fold(f64::INFINITY, f64::min);
        let hi = r.iter().map(|v| v[j]).fold(f64::NEG_INFINITY, f64::max);
        if ra[j] < lo - 1e-12 || ra[j] > hi + 1e-12 {
            return Err(format!("coordinate {j}: {} outside [{lo}, {hi}]", ra[j]));
        }
    }

    let perm: Vec<usize> = (0..s.len()).rev().collect();
    let ps: Vec<f64> = perm.iter().map(|&i| s[i]).collect();
    let pr: Vec<Vec<f64>> = perm.iter().map(|&i| r[i].clone()).collect();
    let pmu = normalize_qualities(&ps).unwrap();
    for (k, &i) in perm.iter().enumerate() {
        if (pmu[k] - mu[i]).abs() > 1e-15 {
            return Err(format!("permuted mu[{k}] = {} but mu[{i}] = {}", pmu[k], mu[i]));
        }
    }
    let pra = set_pool_forward(&pr, &pmu).unwrap();
    if max_diff(&pra, &ra) > 1e-12 {
        return Err(format!("permutation moved Ra by {:e}", max_diff(&pra, &ra)));
    }

    let (dr, _) = set_pool_backward(r, &mu, &ra, g).map_err(|e| e.to_string())?;
    let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    for (i, dri) in dr.iter().enumerate() {
        let expect: Vec<f64> = g.iter().map(|x| mu[i] * x).collect();
        if dri != &expect {
            return Err(format!("dR[{i}] is not mu_i * g"));
        }
        let norm = dri.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - mu[i] * gnorm).abs() > 1e-12 * (1.0 + norm) {
            return Err(format!("|dR[{i}]| = {norm}, expected {}", mu[i] * gnorm));
        }
    }
    Ok(())
}

/// `sign(dmu_i) == sign(<g, R_i - Ra>)` for every sample, with the inner
/// product evaluated by a plain loop.
pub fn check_sign_property(inst: &PoolInstance) -> Result<(), String> {
    let PoolInstance { s, r, g } = inst;
    let mu = normalize_qualities(s).map_err(|e| e.to_string())?;
    let ra = set_pool_forward(r, &mu).map_err(|e| e.to_string())?;
    let (_, dmu) = set_pool_backward(r, &mu, &ra, g).map_err(|e| e.to_string())?;
    for (i, ri) in r.iter().enumerate() {
        let mut dot = 0.0;
        for j in 0..g.len() {
            dot += g[j] * (ri[j] - ra[j]);
        }
        let sign = |x: f64| (x > 0.0) as i8 - (x < 0.0) as i8;
        if sign(dmu[i]) != sign(dot) {
            return Err(format!("sample {i}: dmu {} but <g, R_i - Ra> {}", dmu[i], dot));
        }
    }
    Ok(())
}

/// A CMC instance: distance matrix with the true matches spread over a
/// shuffled gallery. Distances are drawn from a small grid so ties happen.
pub fn cmc_instance(rng: &mut Rng) -> (Vec<Vec<f64>>, Vec<usize>, Vec<usize>) {
    let g = rng.random_range(1..=10);
    let p = rng.random_range(1..=g);
    let mut gallery_ids: Vec<usize> = (0..g).map(|k| 100 + k).collect();
    for i in (1..g).rev() {
        let j = rng.random_range(0..=i);
        gallery_ids.swap(i, j);
    }
    let probe_ids: Vec<usize> = (0..p).map(|_| gallery_ids[rng.random_range(0..g)]).collect();
    let dist = (0..p)
        .map(|_| (0..g).map(|_| rng.random_range(0..6) as f64 / 5.0).collect())
        .collect();
    (dist, probe_ids, gallery_ids)
}

/// Sorts every gallery row by `(distance, index)` and reads off where the true
/// match lands.
pub fn brute_force_cmc(dist: &[Vec<f64>], probe_ids: &[usize], gallery_ids: &[usize]) -> Vec<f64> {
    let g = gallery_ids.len();
    let mut hits = vec![0usize; g + 1];
    for (row, id) in dist.iter().zip(probe_ids) {
        let mut order: Vec<usize> = (0..g).collect();
        order.sort_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap().then(a.cmp(&b)));
        let rank = 1 + order.iter().position(|&j| gallery_ids[j] == *id).unwrap();
        hits[rank..].iter_mut().for_each(|h| *h += 1);
    }
    (1..=g).map(|k| hits[k] as f64 / probe_ids.len() as f64).collect()
}

pub fn check_cmc(rng: &mut Rng) -> Result<(), String> {
    let (dist, pid, gid) = cmc_instance(rng);
    let table = cmc_from_distances(&dist, &pid, &gid).map_err(|e| e.to_string())?;
    let oracle = brute_force_cmc(&dist, &pid, &gid);
    if table.curve != oracle {
        return Err(format!("curve {:?}, oracle {:?} on {dist:?}", table.curve, oracle));
    }
    Ok(())
}

/// Scores on a coarse grid (to force ties) with at least one label of each
/// kind.
pub fn roc_instance(rng: &mut Rng) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(2..=50);
    let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..10) as f64 / 10.0).collect();
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    labels[0] = true;
    labels[1] = false;
    (scores, labels)
}

pub struct RocOracle {
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
    pub accuracy: f64,
    pub tpr_at: Vec<(f64, f64)>,
}

/// Enumerates every threshold `t` in `{+inf} ∪ scores` and accepts pairs with
/// `score >= t`. AUC comes from counting concordant positive/negative pairs
/// (ties count half), not from the curve.
pub fn brute_force_roc(scores: &[f64], labels: &[bool]) -> RocOracle {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.push(f64::INFINITY);
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut points = Vec::new();
    let mut best = 0;
    for &t in &thresholds {
        let tp = scores.iter().zip(labels).filter(|&(&s, &l)| l && s >= t).count();
        let fp = scores.iter().zip(labels).filter(|&(&s, &l)| !l && s >= t).count();
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        best = best.max(tp + neg - fp);
    }
    let mut twice = 0usize;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                twice += if scores[i] > scores[j] {
                    2
                } else if scores[i] == scores[j] {
                    1
                } else {
                    0
                };
            }
        }
    }
    let tpr_at = FPR_TARGETS
        .iter()
        .map(|&f| (f, points.iter().filter(|p| p.0 <= f).map(|p| p.1).fold(0.0, f64::max)))
        .collect();
    RocOracle {
        points,
        auc: twice as f64 / (2 * pos * neg) as f64,
        accuracy: best as f64 / labels.len() as f64,
        tpr_at,
    }
}

/// Points, accuracy and TPR targets must match exactly; the AUC is a float
/// sum on one side and a ratio of counts on the other, so it gets 1e-12.
pub fn check_roc(rng: &mut Rng) -> Result<(), String> {
    let (scores, labels) = roc_instance(rng);
    let got = roc_from_scores(&scores, &labels).map_err(|e| e.to_string())?;
    let want = brute_force_roc(&scores, &labels);
    if got.points != want.points {
        return Err(format!("points {:?} vs {:?}", got.points, want.points));
    }
    if (got.auc - want.auc).abs() > 1e-12 {
        return Err(format!("auc {} vs {}", got.auc, want.auc));
    }
    if got.accuracy != want.accuracy {
        return Err(format!("accuracy {} vs {}", got.accuracy, want.accuracy));
    }
    if got.tpr_at != want.tpr_at {
        return Err(format!("tpr_at {:?} vs {:?}", got.tpr_at, want.tpr_at));
    }
    Ok(())
}
