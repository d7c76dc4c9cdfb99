mod common;

use common::{check_pool_invariants, check_sign_property, PoolInstance};
use proptest::prelude::*;
use qan::eval::{cmc_from_distances, pool_features, roc_from_scores, set_distance, Pooling, SetDistance, SetFeatures};
use qan::losses::{softmax, triplet_loss};
use qan::model::{ImageSet, QanConfig, QanModel, Sample};

fn pool_instance() -> impl Strategy<Value = PoolInstance> {
    (1usize..=10, 1usize..=8).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(1e-3f64..1.0, n),
            prop::collection::vec(prop::collection::vec(-5.0f64..5.0, d), n),
            prop::collection::vec(-2.0f64..2.0, d),
        )
            .prop_map(|(s, r, g)| PoolInstance { s, r, g })
    })
}

fn vec3(d: usize) -> impl Strategy<Value = [Vec<f64>; 3]> {
    let v = move || prop::collection::vec(-3.0f64..3.0, d);
    (v(), v(), v()).prop_map(|(a, b, c)| [a, b, c])
}

fn small_model(seed: u64) -> QanModel {
    let config = QanConfig {
        d_in: 4,
        trunk_dims: vec![6, 5],
        split_index: 1,
        d_embed: 3,
        quality_hidden: 4,
        n_classes: 2,
        margin: 1.0,
        lambda_class: 1.0,
    };
    QanModel::new(config, seed).unwrap()
}

fn set_from(xs: &[Vec<f64>]) -> ImageSet {
    ImageSet {
        set_id: 0,
        identity: 0,
        samples: xs
            .iter()
            .map(|x| Sample {
                x: x.clone(),
                identity: 0,
                q_true: 1.0,
            })
            .collect(),
    }
}

fn inputs(max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 4), 1..=max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn pooling_invariants_hold(inst in pool_instance()) {
        prop_assert_eq!(check_pool_invariants(&inst), Ok(()));
    }

    #[test]
    fn quality_gradient_sign_follows_alignment(inst in pool_instance()) {
        prop_assert_eq!(check_sign_property(&inst), Ok(()));
    }

    #[test]
    fn scalar_embedding_stays_between_extremes(
        s in prop::collection::vec(1e-3f64..1.0, 1..12),
        seed in any::<u64>(),
    ) {
        use rand::Rng as _;
        let mut rng = qan::netcore::seeded_rng(seed);
        let r: Vec<Vec<f64>> = s.iter().map(|_| vec![rng.random_range(-10.0..10.0)]).collect();
        let mu = qan::model::normalize_qualities(&s).unwrap();
        let ra = qan::model::set_pool_forward(&r, &mu).unwrap()[0];
        let lo = r.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
        let hi = r.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo - 1e-12 <= ra && ra <= hi + 1e-12, "{} not in [{}, {}]", ra, lo, hi);
    }

    #[test]
    fn embedded_sets_are_normalized(seed in 0u64..1000, xs in inputs(9)) {
        let emb = small_model(seed).embed_set(&set_from(&xs)).unwrap();
        prop_assert!((emb.mu.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn singleton_set_is_its_own_embedding(seed in 0u64..1000, xs in inputs(1)) {
        let mut model = small_model(seed);
        // arbitrary quality head
        for l in &mut model.quality_head {
            l.bias.value.iter_mut().for_each(|b| *b += 3.0);
        }
        model.touch();
        let emb = model.embed_set(&set_from(&xs)).unwrap();
        prop_assert_eq!(&emb.ra, &emb.r[0]);
        prop_assert_eq!(emb.mu.clone(), vec![1.0]);
    }

    #[test]
    fn repeated_sample_pools_to_itself(seed in 0u64..1000, x in prop::collection::vec(-2.0f64..2.0, 4), k in 1usize..8) {
        let emb = small_model(seed).embed_set(&set_from(&vec![x; k])).unwrap();
        for (a, b) in emb.ra.iter().zip(&emb.r[0]) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn silenced_quality_head_is_average_pooling(seed in 0u64..1000, xs in inputs(9)) {
        let mut model = small_model(seed);
        let last = model.quality_head.last_mut().unwrap();
        last.weight.value.iter_mut().for_each(|w| *w = 0.0);
        last.bias.value.iter_mut().for_each(|w| *w = 0.0);
        model.touch();
        let emb = model.embed_set(&set_from(&xs)).unwrap();
        prop_assert!(emb.mu_raw.iter().all(|&m| m == 0.5));
        let n = emb.r.len() as f64;
        for j in 0..emb.ra.len() {
            let mean = emb.r.iter().map(|v| v[j]).sum::<f64>() / n;
            prop_assert!((emb.ra[j] - mean).abs() <= 1e-12);
        }
        let f = SetFeatures::compute(&model, &set_from(&xs)).unwrap();
        prop_assert_eq!(pool_features(Pooling::Qan, &f).unwrap(), pool_features(Pooling::AvePool, &f).unwrap());
    }

    #[test]
    fn triplet_loss_is_translation_invariant(
        [a, p, n] in vec3(4),
        shift in prop::collection::vec(-10.0f64..10.0, 4),
        margin in 0.01f64..5.0,
    ) {
        let add = |v: &[f64]| v.iter().zip(&shift).map(|(x, s)| x + s).collect::<Vec<_>>();
        let base = triplet_loss(&a, &p, &n, margin, true).unwrap();
        let moved = triplet_loss(&add(&a), &add(&p), &add(&n), margin, true).unwrap();
        prop_assert!((base.loss - moved.loss).abs() <= 1e-9 * (1.0 + base.loss.abs()));
        prop_assert_eq!(base.active, moved.active);
    }

    #[test]
    fn hinged_triplet_loss_is_zero_exactly_when_margin_met([a, p, n] in vec3(3), margin in 0.01f64..5.0) {
        let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
        let out = triplet_loss(&a, &p, &n, margin, true).unwrap();
        prop_assert!(out.loss >= 0.0);
        prop_assert_eq!(out.loss == 0.0, sq(&a, &p) + margin <= sq(&a, &n));
    }

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0f64..50.0, 1..12)) {
        let p = softmax(&logits);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn auc_ignores_monotone_rescaling(
        scored in prop::collection::vec((0u8..20, any::<bool>()), 2..60),
        k in 0.1f64..10.0,
        c in -5.0f64..5.0,
    ) {
        let mut labels: Vec<bool> = scored.iter().map(|s| s.1).collect();
        labels[0] = true;
        labels[1] = false;
        let s: Vec<f64> = scored.iter().map(|s| s.0 as f64 / 20.0).collect();
        let t: Vec<f64> = s.iter().map(|x| (k * x + c).exp()).collect();
        let a = roc_from_scores(&s, &labels).unwrap();
        let b = roc_from_scores(&t, &labels).unwrap();
        prop_assert!((a.auc - b.auc).abs() <= 1e-12);
        prop_assert_eq!(&a.points, &b.points);
        for w in b.points.windows(2) {
            prop_assert!(w[0].0 <= w[1].0 && w[0].1 <= w[1].1);
        }
        prop_assert!((0.0..=1.0).contains(&a.auc));
    }

    #[test]
    fn cmc_is_monotone_and_saturates(seed in any::<u64>()) {
        let mut rng = qan::netcore::seeded_rng(seed);
        let (dist, pid, gid) = common::cmc_instance(&mut rng);
        let table = cmc_from_distances(&dist, &pid, &gid).unwrap();
        prop_assert!(table.curve.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(table.rate(gid.len()), 1.0);
        prop_assert_eq!(table.rate(gid.len() + 5), 1.0);
    }

    #[test]
    fn min_cos_is_symmetric(
        a in prop::collection::vec(prop::collection::vec(0.1f64..2.0, 3), 1..5),
        b in prop::collection::vec(prop::collection::vec(-2.0f64..-0.1, 3), 1..5),
    ) {
        let ab = set_distance(SetDistance::MinCos, &a, &b).unwrap();
        let ba = set_distance(SetDistance::MinCos, &b, &a).unwrap();
        prop_assert_eq!(ab, ba);
        let mut shared = b.clone();
        shared.push(a[a.len() - 1].clone());
        prop_assert!(set_distance(SetDistance::MinCos, &a, &shared).unwrap().abs() <= 1e-15);
    }
}

#[test]
fn oracle_pooling_ignores_fully_corrupted_sample() {
    let f = SetFeatures {
        identity: 0,
        set_id: 0,
        r: vec![vec![1.0, -2.0], vec![7.0, 3.0]],
        mu_raw: vec![0.5, 0.5],
        q_true: vec![1.0, 0.0],
    };
    assert_eq!(pool_features(Pooling::Oracle, &f).unwrap(), vec![1.0, -2.0]);
}

#[test]
fn oracle_with_equal_quality_is_average_pooling() {
    let f = SetFeatures {
        identity: 0,
        set_id: 0,
        r: vec![vec![1.0, -2.0], vec![7.0, 3.0], vec![0.0, 0.5]],
        mu_raw: vec![0.2, 0.9, 0.4],
        q_true: vec![0.3; 3],
    };
    let o = pool_features(Pooling::Oracle, &f).unwrap();
    let a = pool_features(Pooling::AvePool, &f).unwrap();
    for (x, y) in o.iter().zip(&a) {
        assert!((x - y).abs() <= 1e-15);
    }
}
