//! Synthetic identity/set/sample generator and the `QANSET v1` text format.
//!
//! Every identity owns a prototype on the unit sphere. A clean sample is the
//! prototype plus isotropic Gaussian noise. A corrupted sample is blended
//! toward a distractor with strength `beta`: either a fresh random direction
//! (clutter) or another identity's prototype (an occluding person). Its
//! ground-truth quality is `1 - beta`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{QanError, Result};
use crate::model::{ImageSet, Sample};
use crate::netcore::{seeded_rng, Rng};

pub const DATASET_HEADER: &str = "QANSET v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub n_identities: usize,
    pub sets_per_identity: usize,
    pub samples_per_set: usize,
    pub d_in: usize,
    pub corruption_rate: f64,
    pub beta_lo: f64,
    pub beta_hi: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for GenSpec {
    /// 150 identities: the first 100 train, the last 50 are held out.
    fn default() -> Self {
        GenSpec {
            n_identities: 150,
            sets_per_identity: 2,
            samples_per_set: 8,
            d_in: 32,
            corruption_rate: 0.3,
            beta_lo: 0.5,
            beta_hi: 0.95,
            noise_sigma: 0.1,
            seed: 0,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(QanError::InvalidConfig(m));
        if self.n_identities == 0 || self.sets_per_identity == 0 || self.samples_per_set == 0 || self.d_in == 0 {
            return bad("all counts must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.corruption_rate) {
            return bad(format!("corruption rate {} outside [0,1]", self.corruption_rate));
        }
        if !(0.0 <= self.beta_lo && self.beta_lo <= self.beta_hi && self.beta_hi <= 1.0) {
            return bad(format!("beta range [{}, {}] invalid", self.beta_lo, self.beta_hi));
        }
        if !(self.noise_sigma >= 0.0) {
            return bad(format!("noise sigma {} must be >= 0", self.noise_sigma));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub d_in: usize,
    pub sets: Vec<ImageSet>,
}

impl Dataset {
    /// Sorted distinct identity labels.
    pub fn identities(&self) -> Vec<usize> {
        self.sets
            .iter()
            .map(|s| s.identity)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn sample_count(&self) -> usize {
        self.sets.iter().map(ImageSet::len).sum()
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.sets.iter().flat_map(|s| &s.samples)
    }

    /// Splits into (identities `< boundary`, identities `>= boundary`).
    pub fn split_by_identity(&self, boundary: usize) -> (Dataset, Dataset) {
        let (lo, hi): (Vec<_>, Vec<_>) = self.sets.iter().cloned().partition(|s| s.identity < boundary);
        (
            Dataset {
                d_in: self.d_in,
                sets: lo,
            },
            Dataset {
                d_in: self.d_in,
                sets: hi,
            },
        )
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{DATASET_HEADER} d_in={}\n", self.d_in);
        for set in &self.sets {
            for s in &set.samples {
                let _ = write!(out, "{} {} {}", s.identity, set.set_id, s.q_true);
                for v in &s.x {
                    let _ = write!(out, " {v}");
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| QanError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| QanError::io(path, e))?;
        Dataset::parse(&text, &path.display().to_string())
    }

    /// Parses `QANSET v1`. Samples sharing a `set_id` form one set; sets keep
    /// the order of their first appearance.
    pub fn parse(text: &str, origin: &str) -> Result<Dataset> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (n, header) = lines
            .next()
            .ok_or_else(|| QanError::parse(origin, 1, "missing header"))?;
        let d_in = header
            .strip_prefix(DATASET_HEADER)
            .and_then(|rest| rest.trim().strip_prefix("d_in="))
            .and_then(|d| d.parse::<usize>().ok())
            .filter(|&d| d > 0)
            .ok_or_else(|| QanError::parse(origin, n, format!("malformed header `{header}`")))?;

        let mut sets: Vec<ImageSet> = Vec::new();
        for (n, line) in lines {
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.len() != 3 + d_in {
                return Err(QanError::parse(
                    origin,
                    n,
                    format!("expected {} fields, found {}", 3 + d_in, tok.len()),
                ));
            }
            let int = |t: &str, what: &str| {
                t.parse::<usize>()
                    .map_err(|_| QanError::parse(origin, n, format!("non-integer {what} `{t}`")))
            };
            let real = |t: &str| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| QanError::parse(origin, n, format!("non-numeric field `{t}`")))
            };
            let identity = int(tok[0], "identity")?;
            let set_id = int(tok[1], "set id")?;
            let q_true = real(tok[2])?;
            if !(0.0..=1.0).contains(&q_true) {
                return Err(QanError::parse(origin, n, format!("q_true {q_true} outside [0,1]")));
            }
            let x = tok[3..].iter().map(|t| real(t)).collect::<Result<Vec<f64>>>()?;
            let sample = Sample { x, identity, q_true };
            match sets.iter_mut().find(|s| s.set_id == set_id) {
                Some(set) if set.identity != identity => {
                    return Err(QanError::parse(
                        origin,
                        n,
                        format!("set {set_id} mixes identities {} and {identity}", set.identity),
                    ))
                }
                Some(set) => set.samples.push(sample),
                None => sets.push(ImageSet {
                    set_id,
                    identity,
                    samples: vec![sample],
                }),
            }
        }
        if sets.is_empty() {
            return Err(QanError::parse(origin, n, "no sets"));
        }
        Ok(Dataset { d_in, sets })
    }
}

fn unit_vector(d: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Blends a prototype toward a distractor and adds noise:
/// `(1 - beta) p + beta d + eps`.
pub fn corrupt(prototype: &[f64], distractor: &[f64], beta: f64, noise: &[f64]) -> Vec<f64> {
    prototype
        .iter()
        .zip(distractor)
        .zip(noise)
        .map(|((p, d), e)| (1.0 - beta) * p + beta * d + e)
        .collect()
}

pub fn generate(spec: &GenSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let d = spec.d_in;
    let prototypes: Vec<Vec<f64>> = (0..spec.n_identities).map(|_| unit_vector(d, &mut rng)).collect();

    let mut sets = Vec::with_capacity(spec.n_identities * spec.sets_per_identity);
    for (identity, proto) in prototypes.iter().enumerate() {
        for _ in 0..spec.sets_per_identity {
            let mut samples = Vec::with_capacity(spec.samples_per_set);
            for _ in 0..spec.samples_per_set {
                let noise: Vec<f64> = (0..d)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        spec.noise_sigma * z
                    })
                    .collect();
                let corrupted = rng.random::<f64>() < spec.corruption_rate;
                let sample = if corrupted {
                    let beta = if spec.beta_hi > spec.beta_lo {
                        rng.random_range(spec.beta_lo..spec.beta_hi)
                    } else {
                        spec.beta_lo
                    };
                    let clutter = spec.n_identities == 1 || rng.random_bool(0.5);
                    let distractor = if clutter {
                        unit_vector(d, &mut rng)
                    } else {
                        let mut other = rng.random_range(0..spec.n_identities - 1);
                        if other >= identity {
                            other += 1;
                        }
                        prototypes[other].clone()
                    };
                    Sample {
                        x: corrupt(proto, &distractor, beta, &noise),
                        identity,
                        q_true: 1.0 - beta,
                    }
                } else {
                    Sample {
                        x: proto.iter().zip(&noise).map(|(p, e)| p + e).collect(),
                        identity,
                        q_true: 1.0,
                    }
                };
                samples.push(sample);
            }
            sets.push(ImageSet {
                set_id: sets.len(),
                identity,
                samples,
            });
        }
    }
    Ok(Dataset { d_in: d, sets })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_clean_default() {
        let spec = GenSpec {
            n_identities: 10,
            corruption_rate: 0.0,
            seed: 1,
            ..GenSpec::default()
        };
        let d = generate(&spec).unwrap();
        assert_eq!(d.sets.len(), 20);
        assert_eq!(d.sample_count(), 160);
        assert!(d.samples().all(|s| s.q_true == 1.0));
        assert!(d
            .sets
            .iter()
            .all(|s| s.samples.iter().all(|x| x.identity == s.identity)));
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = GenSpec {
            n_identities: 6,
            seed: 77,
            ..GenSpec::default()
        };
        assert_eq!(generate(&spec).unwrap().to_text(), generate(&spec).unwrap().to_text());
    }

    #[test]
    fn corrupted_fraction_within_binomial_bound() {
        let spec = GenSpec {
            n_identities: 625,
            sets_per_identity: 2,
            samples_per_set: 8,
            d_in: 4,
            seed: 5,
            ..GenSpec::default()
        };
        let d = generate(&spec).unwrap();
        let n = d.sample_count() as f64;
        assert_eq!(n, 10_000.0);
        let frac = d.samples().filter(|s| s.q_true < 1.0).count() as f64 / n;
        let sigma = (0.3 * 0.7 / n).sqrt();
        assert!((frac - 0.3).abs() <= 3.0 * sigma, "fraction {frac}");
        assert!(d.samples().all(|s| (0.0..=1.0).contains(&s.q_true)));
    }

    #[test]
    fn zero_beta_matches_clean_formula() {
        let p = [0.6, 0.8];
        let e = [0.01, -0.02];
        assert_eq!(corrupt(&p, &[1.0, 0.0], 0.0, &e), vec![0.61, 0.78]);
    }

    #[test]
    fn parse_fixture() {
        let text = "# two samples\nQANSET v1 d_in=2\n3 7 1 0.5 -0.25\n3 7 0.4 1e-3 2\n";
        let d = Dataset::parse(text, "fixture").unwrap();
        assert_eq!(d.d_in, 2);
        assert_eq!(d.sets.len(), 1);
        let s = &d.sets[0];
        assert_eq!((s.set_id, s.identity), (7, 3));
        assert_eq!(s.samples[0].x, vec![0.5, -0.25]);
        assert_eq!(s.samples[1].q_true, 0.4);
        assert_eq!(s.samples[1].x, vec![0.001, 2.0]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = Dataset::parse("QANSET v1 d_in=2\n", "f").unwrap_err().to_string();
        assert!(err.contains("no sets"), "{err}");
        let err = Dataset::parse("QANSET v1 d_in=2\n0 0 1 0.5\n", "f")
            .unwrap_err()
            .to_string();
        assert!(err.starts_with("f:2:"), "{err}");
        let err = Dataset::parse("QANSET v1 d_in=2\n0 0 1 0.5 x\n", "f")
            .unwrap_err()
            .to_string();
        assert!(err.contains("non-numeric"), "{err}");
        assert!(Dataset::parse("QANSET v9 d_in=2\n", "f").is_err());
        assert!(Dataset::parse("QANSET v1 d_in=1\n0 0 1 0\n1 0 1 0\n", "f").is_err());
    }

    #[test]
    fn split_is_identity_disjoint() {
        let d = generate(&GenSpec {
            n_identities: 5,
            ..GenSpec::default()
        })
        .unwrap();
        let (a, b) = d.split_by_identity(3);
        assert_eq!(a.identities(), vec![0, 1, 2]);
        assert_eq!(b.identities(), vec![3, 4]);
    }
}
