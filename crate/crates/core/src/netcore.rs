//! Dense-layer math kernel: parameters with gradient and momentum buffers,
//! forward/backward for fully connected layers, seeded initialization and
//! SGD with momentum.
//!
//! Everything is `f64`. Matrices are stored row-major as `[rows × cols]`.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{QanError, Result};

/// Seeded generator used throughout the crate.
///
/// ChaCha8 is portable and stable across platforms for a given `rand_chacha`
/// version, so a seed fully determines every draw within one build.
pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// A named parameter tensor with its gradient accumulator and momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl Param {
    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        let n = rows * cols;
        Param {
            name: name.into(),
            rows,
            cols,
            value: vec![0.0; n],
            grad: vec![0.0; n],
            velocity: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// `U(-sqrt(6 / fan_in), +sqrt(6 / fan_in))`
    UniformHe,
    Zeros,
}

/// Fills a `[rows × cols]` tensor; `fan_in` is `cols`.
pub fn init_params(rows: usize, cols: usize, rng: &mut Rng, scheme: InitScheme) -> Vec<f64> {
    match scheme {
        InitScheme::Zeros => vec![0.0; rows * cols],
        InitScheme::UniformHe => {
            let bound = (6.0 / cols.max(1) as f64).sqrt();
            (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Param,
    pub bias: Param,
    pub activation: Activation,
}

/// Values retained by [`DenseLayer::forward`] for the matching backward call.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseCache {
    pub input: Vec<f64>,
    pub pre: Vec<f64>,
    pub output: Vec<f64>,
}

impl DenseLayer {
    /// New layer with He-uniform weights and zero bias.
    pub fn new(
        name: &str,
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut Rng,
        scheme: InitScheme,
    ) -> Self {
        let mut weight = Param::zeros(format!("{name}.weight"), output, input);
        weight.value = init_params(output, input, rng, scheme);
        DenseLayer {
            weight,
            bias: Param::zeros(format!("{name}.bias"), output, 1),
            activation,
        }
    }

    pub fn input_size(&self) -> usize {
        self.weight.cols
    }

    pub fn output_size(&self) -> usize {
        self.weight.rows
    }

    pub fn name(&self) -> &str {
        self.weight.name.strip_suffix(".weight").unwrap_or(&self.weight.name)
    }

    /// Pre-activation `W·x + b`.
    fn affine(&self, x: &[f64]) -> Vec<f64> {
        let cols = self.weight.cols;
        self.weight
            .value
            .chunks_exact(cols)
            .zip(&self.bias.value)
            .map(|(row, b)| row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, DenseCache)> {
        self.check_input(x.len())?;
        let pre = self.affine(x);
        let output: Vec<f64> = pre.iter().map(|&z| self.activation.apply(z)).collect();
        let cache = DenseCache {
            input: x.to_vec(),
            pre,
            output: output.clone(),
        };
        Ok((output, cache))
    }

    /// Forward pass without building a cache.
    pub fn infer(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x.len())?;
        let mut y = self.affine(x);
        y.iter_mut().for_each(|z| *z = self.activation.apply(*z));
        Ok(y)
    }

    /// Accumulates `dW`, `db` and returns `dx`.
    pub fn backward(&mut self, cache: &DenseCache, dy: &[f64]) -> Result<Vec<f64>> {
        let (rows, cols) = (self.weight.rows, self.weight.cols);
        if cache.input.len() != cols || cache.pre.len() != rows || dy.len() != rows {
            return Err(QanError::ShapeMismatch {
                context: "dense backward",
                detail: format!(
                    "layer `{}` is {rows}x{cols}, cache input {} / pre {}, dy {}",
                    self.name(),
                    cache.input.len(),
                    cache.pre.len(),
                    dy.len()
                ),
            });
        }
        let delta: Vec<f64> = dy
            .iter()
            .zip(cache.pre.iter().zip(&cache.output))
            .map(|(g, (&z, &y))| g * self.activation.derivative(z, y))
            .collect();

        let mut dx = vec![0.0; cols];
        for (r, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &self.weight.value[r * cols..(r + 1) * cols];
            let grow = &mut self.weight.grad[r * cols..(r + 1) * cols];
            for c in 0..cols {
                dx[c] += row[c] * d;
                grow[c] += d * cache.input[c];
            }
            self.bias.grad[r] += d;
        }
        Ok(dx)
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_size() {
            return Err(QanError::DimensionMismatch {
                layer: self.name().to_string(),
                expected: self.input_size(),
                actual: len,
            });
        }
        Ok(())
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Runs `layers` in sequence, returning the final output and one cache per layer.
pub fn forward_stack(layers: &[DenseLayer], x: &[f64]) -> Result<(Vec<f64>, Vec<DenseCache>)> {
    let mut caches = Vec::with_capacity(layers.len());
    let mut h = x.to_vec();
    for layer in layers {
        let (y, cache) = layer.forward(&h)?;
        caches.push(cache);
        h = y;
    }
    Ok((h, caches))
}

pub fn infer_stack(layers: &[DenseLayer], x: &[f64]) -> Result<Vec<f64>> {
    let mut h = x.to_vec();
    for layer in layers {
        h = layer.infer(&h)?;
    }
    Ok(h)
}

pub fn backward_stack(layers: &mut [DenseLayer], caches: &[DenseCache], dy: &[f64]) -> Result<Vec<f64>> {
    if layers.len() != caches.len() {
        return Err(QanError::ShapeMismatch {
            context: "stack backward",
            detail: format!("{} layers but {} caches", layers.len(), caches.len()),
        });
    }
    let mut g = dy.to_vec();
    for (layer, cache) in layers.iter_mut().zip(caches).rev() {
        g = layer.backward(cache, &g)?;
    }
    Ok(g)
}

/// SGD with classical momentum: `v ← m·v + g; p ← p − lr·v`, then `g ← 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
}

impl Default for Sgd {
    fn default() -> Self {
        Sgd {
            lr: 0.01,
            momentum: 0.9,
        }
    }
}

impl Sgd {
    /// Applies one update to every parameter. If any gradient is non-finite
    /// nothing is modified and the offending parameter is named.
    pub fn step<'a>(&self, params: impl IntoIterator<Item = &'a mut Param>) -> Result<()> {
        let mut params: Vec<&mut Param> = params.into_iter().collect();
        for p in &params {
            if let Some(index) = p.grad.iter().position(|g| !g.is_finite()) {
                return Err(QanError::NonFiniteGradient {
                    param: p.name.clone(),
                    index,
                });
            }
        }
        for p in params.iter_mut() {
            let Param {
                value, grad, velocity, ..
            } = &mut **p;
            for ((w, g), v) in value.iter_mut().zip(grad.iter_mut()).zip(velocity.iter_mut()) {
                *v = self.momentum * *v + *g;
                *w -= self.lr * *v;
                *g = 0.0;
            }
        }
        Ok(())
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
