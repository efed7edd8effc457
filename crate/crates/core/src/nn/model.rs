use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::encoding::encoded_width;
use super::layers::{layer_norm, layer_norm_backward, relu_backward_in_place, relu_in_place, sigmoid, Dense, DenseGrad};
use super::matrix::Matrix;

/// Shape of a coordinate network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub num_frequencies: usize,
    pub num_resblocks: usize,
    pub outer_width: usize,
    pub inner_width: usize,
}

impl NetworkConfig {
    /// Occupancy network of the full-size setting: 12 frequencies, 2 blocks of 512x128x512.
    pub const PAPER_GEOMETRY: NetworkConfig = NetworkConfig {
        in_channels: 3,
        out_channels: 1,
        num_frequencies: 12,
        num_resblocks: 2,
        outer_width: 512,
        inner_width: 128,
    };

    /// Color network of the full-size setting: 12 frequencies, 3 blocks of 512x128x512.
    pub const PAPER_ATTRIBUTE: NetworkConfig = NetworkConfig {
        in_channels: 3,
        out_channels: 3,
        num_frequencies: 12,
        num_resblocks: 3,
        outer_width: 512,
        inner_width: 128,
    };

    pub fn new(
        out_channels: usize,
        num_frequencies: usize,
        num_resblocks: usize,
        outer_width: usize,
        inner_width: usize,
    ) -> Result<Self, NnError> {
        let cfg = Self { in_channels: 3, out_channels, num_frequencies, num_resblocks, outer_width, inner_width };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.in_channels != 3 {
            return Err(NnError::Config(format!("input channels must be 3, got {}", self.in_channels)));
        }
        if self.out_channels == 0 || self.outer_width == 0 || self.inner_width == 0 {
            return Err(NnError::Config("layer widths must be positive".into()));
        }
        if self.num_resblocks == 0 {
            return Err(NnError::Config("at least one residual block is required".into()));
        }
        Ok(())
    }

    pub fn encoded_width(&self) -> usize {
        debug_assert_eq!(self.in_channels, 3);
        encoded_width(self.num_frequencies)
    }

    /// `(inputs, outputs)` of every dense layer, input layer first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = vec![(self.encoded_width(), self.outer_width)];
        for _ in 0..self.num_resblocks {
            shapes.push((self.outer_width, self.inner_width));
            shapes.push((self.inner_width, self.outer_width));
        }
        shapes.push((self.outer_width, self.out_channels));
        shapes
    }

    /// Lengths of the parameter tensors in storage order: weights then bias of each layer.
    pub fn tensor_lengths(&self) -> Vec<usize> {
        self.layer_shapes().into_iter().flat_map(|(i, o)| [i * o, o]).collect()
    }

    pub fn param_count(&self) -> usize {
        let (e, o, h) = (self.encoded_width(), self.outer_width, self.inner_width);
        (e + 1) * o + self.num_resblocks * ((o + 1) * h + (h + 1) * o) + (o + 1) * self.out_channels
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NnError {
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("batch has {got} columns but the network expects {expected}")]
    Shape { expected: usize, got: usize },
    #[error("forward cache was produced by a different model revision")]
    StaleCache,
}

/// Fully-connected coordinate network.
///
/// Layer order: input dense, then `(outer -> inner, inner -> outer)` for each
/// residual block, then the output dense. Layer normalization (no learned
/// parameters) sits at each block entry and before the output layer.
#[derive(Clone, Debug)]
pub struct NetworkModel {
    config: NetworkConfig,
    pub layers: Vec<Dense>,
    revision: u64,
}

impl PartialEq for NetworkModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.layers == other.layers
    }
}

/// Activations retained by [`NetworkModel::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    revision: u64,
    input: Matrix,
    blocks: Vec<BlockCache>,
    final_norm: Matrix,
    final_rstd: Vec<f64>,
    output: Matrix,
}

#[derive(Clone, Debug)]
struct BlockCache {
    norm: Matrix,
    rstd: Vec<f64>,
    hidden: Matrix,
    out: Matrix,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        &self.output
    }
}

/// Per-layer gradients, same layout as [`NetworkModel::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<DenseGrad>,
}

impl Gradients {
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weights, &mut l.bias])
    }
}

impl NetworkModel {
    /// Model with every weight and bias equal to zero.
    pub fn zeros(config: NetworkConfig) -> Result<Self, NnError> {
        config.validate()?;
        let layers = config.layer_shapes().into_iter().map(|(i, o)| Dense::zeros(i, o)).collect();
        Ok(Self { config, layers, revision: 0 })
    }

    /// Glorot-uniform weights and zero biases from a seeded ChaCha8 stream.
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Self, NnError> {
        let mut model = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut model.layers {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.gen_range(-limit..limit);
            }
        }
        Ok(model)
    }

    /// Builds a model from tensors in storage order (see [`NetworkConfig::tensor_lengths`]).
    pub fn from_tensors(config: NetworkConfig, tensors: Vec<Vec<f64>>) -> Result<Self, NnError> {
        let mut model = Self::zeros(config)?;
        let lengths = config.tensor_lengths();
        if tensors.len() != lengths.len() || tensors.iter().zip(&lengths).any(|(t, &n)| t.len() != n) {
            return Err(NnError::Config("tensor shapes do not match the configuration".into()));
        }
        let mut it = tensors.into_iter();
        for layer in &mut model.layers {
            layer.weights = it.next().unwrap();
            layer.bias = it.next().unwrap();
        }
        Ok(model)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    /// Mutable parameter tensors. Invalidates outstanding forward caches.
    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.revision += 1;
        self.layers.iter_mut().flat_map(|l| [&mut l.weights, &mut l.bias])
    }

    pub fn l1_norm(&self) -> f64 {
        self.tensors().flatten().map(|v| v.abs()).sum()
    }

    /// Rounds every parameter to the nearest f32.
    pub fn round_to_f32(&mut self) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    fn check_input(&self, x: &Matrix) -> Result<(), NnError> {
        let expected = self.config.encoded_width();
        if x.cols != expected {
            return Err(NnError::Shape { expected, got: x.cols });
        }
        Ok(())
    }

    /// Runs the network on encoded coordinates, keeping what backward needs.
    pub fn forward(&self, encoded: &Matrix) -> Result<(Matrix, ForwardCache), NnError> {
        self.check_input(encoded)?;
        let blocks = self.config.num_resblocks;
        let mut h = self.layers[0].forward(encoded);
        let mut caches = Vec::with_capacity(blocks);
        for b in 0..blocks {
            let (norm, rstd) = layer_norm(&h);
            let mut hidden = self.layers[1 + 2 * b].forward(&norm);
            relu_in_place(&mut hidden);
            let mut out = self.layers[2 + 2 * b].forward(&hidden);
            relu_in_place(&mut out);
            for (acc, v) in h.data.iter_mut().zip(&out.data) {
                *acc += v;
            }
            caches.push(BlockCache { norm, rstd, hidden, out });
        }
        let (final_norm, final_rstd) = layer_norm(&h);
        let output = self.output_head(&final_norm);
        let cache = ForwardCache {
            revision: self.revision,
            input: encoded.clone(),
            blocks: caches,
            final_norm,
            final_rstd,
            output: output.clone(),
        };
        Ok((output, cache))
    }

    /// Forward pass without retaining activations.
    pub fn predict(&self, encoded: &Matrix) -> Result<Matrix, NnError> {
        self.check_input(encoded)?;
        let mut h = self.layers[0].forward(encoded);
        for b in 0..self.config.num_resblocks {
            let (norm, _) = layer_norm(&h);
            let mut hidden = self.layers[1 + 2 * b].forward(&norm);
            relu_in_place(&mut hidden);
            let mut out = self.layers[2 + 2 * b].forward(&hidden);
            relu_in_place(&mut out);
            for (acc, v) in h.data.iter_mut().zip(&out.data) {
                *acc += v;
            }
        }
        let (norm, _) = layer_norm(&h);
        Ok(self.output_head(&norm))
    }

    fn output_head(&self, norm: &Matrix) -> Matrix {
        // keep outputs strictly inside (0, 1) even when the logit saturates
        const HI: f64 = 1.0 - f64::EPSILON / 2.0;
        self.layers.last().unwrap().forward(norm).map(|z| sigmoid(z).clamp(f64::MIN_POSITIVE, HI))
    }

    /// Gradients of all parameters given `d_output = dLoss/dOutput` for the cached batch.
    pub fn backward(&self, cache: &ForwardCache, d_output: &Matrix) -> Result<Gradients, NnError> {
        if cache.revision != self.revision {
            return Err(NnError::StaleCache);
        }
        if d_output.rows != cache.output.rows || d_output.cols != cache.output.cols {
            return Err(NnError::Shape { expected: cache.output.cols, got: d_output.cols });
        }
        let blocks = self.config.num_resblocks;
        let mut grads: Vec<Option<DenseGrad>> = vec![None; self.layers.len()];

        let mut dz = d_output.clone();
        for (g, &s) in dz.data.iter_mut().zip(&cache.output.data) {
            *g *= s * (1.0 - s);
        }
        let last = self.layers.len() - 1;
        let (g, dnorm) = self.layers[last].backward(&cache.final_norm, &dz, true);
        grads[last] = Some(g);
        let mut dh = layer_norm_backward(&cache.final_norm, &cache.final_rstd, &dnorm.unwrap());

        for b in (0..blocks).rev() {
            let bc = &cache.blocks[b];
            let mut dout = dh.clone();
            relu_backward_in_place(&bc.out, &mut dout);
            let (g2, dhidden) = self.layers[2 + 2 * b].backward(&bc.hidden, &dout, true);
            let mut dhidden = dhidden.unwrap();
            relu_backward_in_place(&bc.hidden, &mut dhidden);
            let (g1, dnorm) = self.layers[1 + 2 * b].backward(&bc.norm, &dhidden, true);
            let dskip = layer_norm_backward(&bc.norm, &bc.rstd, &dnorm.unwrap());
            for (acc, v) in dh.data.iter_mut().zip(&dskip.data) {
                *acc += v;
            }
            grads[1 + 2 * b] = Some(g1);
            grads[2 + 2 * b] = Some(g2);
        }
        let (g0, _) = self.layers[0].backward(&cache.input, &dh, false);
        grads[0] = Some(g0);
        Ok(Gradients { layers: grads.into_iter().map(Option::unwrap).collect() })
    }
}

/// Total number of scalars in a model with this configuration.
pub fn param_count(config: &NetworkConfig) -> usize {
    config.param_count()
}
