//! Finite-difference oracles for every analytic backward routine. The
//! forward passes used by the oracles are written out here from scratch so
//! they share no code with the library's backward path.

use qan::gradcheck::numeric_grad;
use qan::model::{
    normalize_qualities, normalize_qualities_backward, set_pool_backward, ImageSet, QanConfig, QanModel, Sample,
};
use qan::netcore::{seeded_rng, Activation, DenseLayer, InitScheme, Rng};
use rand::Rng as _;

const H: f64 = 1e-5;

fn close(a: f64, n: f64) -> bool {
    (a - n).abs() <= 1e-6 * a.abs().max(n.abs()) + 1e-9
}

fn uniform(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn act(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Identity => z,
        Activation::Relu => z.max(0.0),
        Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
    }
}

/// `sum_k c_k act(W x + b)_k` with row-major `W`.
fn dense_objective(w: &[f64], b: &[f64], x: &[f64], c: &[f64], a: Activation) -> f64 {
    let cols = x.len();
    c.iter()
        .enumerate()
        .map(|(k, ck)| {
            let z = b[k] + (0..cols).map(|j| w[k * cols + j] * x[j]).sum::<f64>();
            ck * act(a, z)
        })
        .sum()
}

#[test]
fn dense_layer_matches_finite_differences() {
    let acts = [Activation::Identity, Activation::Relu, Activation::Sigmoid];
    let mut rng = seeded_rng(2024);
    let mut trials = 0;
    while trials < 100 {
        let rows = rng.random_range(1..=8);
        let cols = rng.random_range(1..=8);
        let a = acts[trials % 3];
        let mut layer = DenseLayer::new("t", cols, rows, a, &mut rng, InitScheme::UniformHe);
        layer.bias.value = uniform(&mut rng, rows);
        let x = uniform(&mut rng, cols);
        let c = uniform(&mut rng, rows);

        let (_, cache) = layer.forward(&x).unwrap();
        // a ReLU pre-activation next to the kink makes the difference quotient meaningless
        if a == Activation::Relu && cache.pre.iter().any(|z| z.abs() < 1e-3) {
            continue;
        }
        trials += 1;
        let dx = layer.backward(&cache, &c).unwrap();
        let (w, b) = (layer.weight.value.clone(), layer.bias.value.clone());

        let nw = numeric_grad(|p| Ok(dense_objective(p, &b, &x, &c, a)), &w, H).unwrap();
        let nb = numeric_grad(|p| Ok(dense_objective(&w, p, &x, &c, a)), &b, H).unwrap();
        let nx = numeric_grad(|p| Ok(dense_objective(&w, &b, p, &c, a)), &x, H).unwrap();
        for (an, nu) in layer
            .weight
            .grad
            .iter()
            .zip(&nw)
            .chain(layer.bias.grad.iter().zip(&nb))
            .chain(dx.iter().zip(&nx))
        {
            assert!(
                close(*an, *nu),
                "trial {trials} {a:?} {rows}x{cols}: analytic {an} numeric {nu}"
            );
        }
    }
}

/// `<c, sum_i (s_i / sum s) R_i>` written without the library.
fn pooled_objective(s: &[f64], r: &[Vec<f64>], c: &[f64]) -> f64 {
    let total: f64 = s.iter().sum();
    (0..c.len())
        .map(|j| c[j] * s.iter().zip(r).map(|(si, ri)| si / total * ri[j]).sum::<f64>())
        .sum()
}

#[test]
fn pooling_chain_matches_finite_differences() {
    let mut rng = seeded_rng(7);
    for trial in 0..200 {
        let n = rng.random_range(1..=8);
        let d = rng.random_range(1..=6);
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let r: Vec<Vec<f64>> = (0..n).map(|_| uniform(&mut rng, d)).collect();
        let c = uniform(&mut rng, d);

        let mu = normalize_qualities(&s).unwrap();
        let ra = qan::model::set_pool_forward(&r, &mu).unwrap();
        let (dr, dmu) = set_pool_backward(&r, &mu, &ra, &c).unwrap();
        let ds = normalize_qualities_backward(&s, &mu, &dmu);

        let ns = numeric_grad(|p| Ok(pooled_objective(p, &r, &c)), &s, H).unwrap();
        for (an, nu) in ds.iter().zip(&ns) {
            assert!(close(*an, *nu), "trial {trial}: ds {an} vs {nu}");
        }
        for i in 0..n {
            let nr = numeric_grad(
                |p| {
                    let mut rr = r.clone();
                    rr[i] = p.to_vec();
                    Ok(pooled_objective(&s, &rr, &c))
                },
                &r[i],
                H,
            )
            .unwrap();
            for (an, nu) in dr[i].iter().zip(&nr) {
                assert!(close(*an, *nu), "trial {trial}: dR[{i}] {an} vs {nu}");
            }
        }
    }
}

fn tiny(seed: u64, split: usize) -> (QanModel, ImageSet) {
    let config = QanConfig {
        d_in: 5,
        trunk_dims: vec![6, 5],
        split_index: split,
        d_embed: 4,
        quality_hidden: 3,
        n_classes: 3,
        margin: 0.5,
        lambda_class: 1.0,
    };
    let mut model = QanModel::new(config, seed).unwrap();
    let mut rng = seeded_rng(seed + 1000);
    // zero biases put dead-unit outputs exactly on the next ReLU's kink
    for p in model.params_mut() {
        if p.name.ends_with(".bias") {
            p.value = (0..p.len()).map(|_| rng.random_range(-0.5..0.5)).collect();
        }
    }
    model.touch();
    let set = ImageSet {
        set_id: 0,
        identity: 0,
        samples: (0..3)
            .map(|_| Sample {
                x: uniform(&mut rng, 5),
                identity: 0,
                q_true: 1.0,
            })
            .collect(),
    };
    (model, set)
}

/// `<g, Ra> + sum_i <h_i, R_i>` through the library forward pass.
fn set_objective(model: &QanModel, set: &ImageSet, g: &[f64], h: &[Vec<f64>]) -> f64 {
    let emb = model.embed_set(set).unwrap();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    dot(g, &emb.ra) + emb.r.iter().zip(h).map(|(r, hi)| dot(r, hi)).sum::<f64>()
}

#[test]
fn full_chain_matches_finite_differences() {
    for seed in 0..20 {
        for split in [1, 2] {
            let (mut model, set) = tiny(seed, split);
            let mut rng = seeded_rng(seed + 77);
            let g = uniform(&mut rng, 4);
            let h: Vec<Vec<f64>> = (0..set.len()).map(|_| uniform(&mut rng, 4)).collect();

            model.zero_grad();
            let emb = model.embed_set(&set).unwrap();
            model.backward_set(&emb, &g, Some(&h)).unwrap();
            let analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad.clone()).collect();

            let mut probe = model.clone();
            for (block, grad) in analytic.iter().enumerate() {
                let base = probe.params()[block].value.clone();
                let numeric = numeric_grad(
                    |p| {
                        probe.params_mut()[block].value.copy_from_slice(p);
                        Ok(set_objective(&probe, &set, &g, &h))
                    },
                    &base,
                    H,
                )
                .unwrap();
                probe.params_mut()[block].value.copy_from_slice(&base);
                let name = &model.params()[block].name;
                for (k, (a, n)) in grad.iter().zip(&numeric).enumerate() {
                    assert!(
                        (a - n).abs() <= 1e-6 * a.abs().max(n.abs()) + 1e-8,
                        "seed {seed} split {split} {name}[{k}]: analytic {a} numeric {n}"
                    );
                }
            }
        }
    }
}
