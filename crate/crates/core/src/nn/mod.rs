//! Dense encoder / feed-forward / decoder networks for density surrogates.

mod io;
mod train;

pub use io::{read_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use train::{
    loss, loss_and_gradient, train, Batch, Gradients, History, HistoryRecord, LossTerms, Stage, TrainConfig, TrainingSet,
};

use rand::distr::{Distribution, Uniform};
use rand::Rng;

use crate::error::{Error, Result};

/// Maximum latent dimension.
pub const LATENT_DIM_MAX: usize = 25;
/// Reference input dimension the published layer widths are tied to.
pub const REFERENCE_NT: usize = 12_800;
/// Threshold on `max |alpha_j|` for a latent coordinate to count as active.
pub const ACTIVE_LATENT_TOL: f64 = 1e-3;

/// Fixed scales mapping `(eta1, eta2)` onto `[0, 1]^2` before the network.
pub const ETA_SCALE: [f64; 2] = [2.3, 59.0];

pub fn normalise_eta(eta1: f64, eta2: f64) -> [f64; 2] {
    [eta1 / ETA_SCALE[0], eta2 / ETA_SCALE[1]]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::Identity => 2,
        }
    }

    pub(crate) fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Sigmoid),
            2 => Ok(Activation::Identity),
            _ => Err(Error::Corrupt(format!("unknown activation code {c}"))),
        }
    }
}

/// Shape of one fully connected layer inside a [`Block`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    /// Start of this layer's weights in the block's parameter vector; the
    /// `out_dim * in_dim` row-major weights are followed by `out_dim` biases.
    pub offset: usize,
}

impl DenseLayer {
    pub fn parameter_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

/// A chain of dense layers with all parameters in one flat vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub layers: Vec<DenseLayer>,
    pub params: Vec<f64>,
}

/// Per-layer outputs retained for back-propagation; `values[0]` is the input.
#[derive(Clone, Debug, Default)]
pub struct Cache {
    values: Vec<Vec<f64>>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        self.values.last().map_or(&[], Vec::as_slice)
    }
}

impl Block {
    /// Zero-initialised block through `dims` with the given activations.
    pub fn new(dims: &[usize], activations: &[Activation]) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 || dims.contains(&0) {
            return Err(Error::invalid(format!("bad block shape {dims:?}")));
        }
        let mut layers = Vec::with_capacity(activations.len());
        let mut offset = 0;
        for (w, &activation) in dims.windows(2).zip(activations) {
            let layer = DenseLayer { in_dim: w[0], out_dim: w[1], activation, offset };
            offset += layer.parameter_count();
            layers.push(layer);
        }
        Ok(Self { layers, params: vec![0.0; offset] })
    }

    /// ReLU on every layer except the last, which uses `last`.
    pub fn relu_chain(dims: &[usize], last: Activation) -> Result<Self> {
        let n = dims.len().saturating_sub(1);
        let acts: Vec<Activation> = (0..n).map(|i| if i + 1 == n { last } else { Activation::Relu }).collect();
        Self::new(dims, &acts)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.in_dim()).chain(self.layers.iter().map(|l| l.out_dim)).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    /// Kaiming-uniform weights in `[-sqrt(6/in), sqrt(6/in)]`, biases in
    /// `[-1/sqrt(in), 1/sqrt(in)]`.
    pub fn init_kaiming_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for layer in &self.layers {
            let fan_in = layer.in_dim as f64;
            let wb = (6.0 / fan_in).sqrt();
            let bb = 1.0 / fan_in.sqrt();
            let nw = layer.in_dim * layer.out_dim;
            let w_dist = Uniform::new_inclusive(-wb, wb).expect("finite bound");
            let b_dist = Uniform::new_inclusive(-bb, bb).expect("finite bound");
            let (w, rest) = self.params[layer.offset..].split_at_mut(nw);
            w.iter_mut().for_each(|p| *p = w_dist.sample(rng));
            rest[..layer.out_dim].iter_mut().for_each(|p| *p = b_dist.sample(rng));
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cache = Cache::default();
        self.forward_cached(x, &mut cache);
        cache.values.pop().unwrap_or_default()
    }

    pub fn forward_cached(&self, x: &[f64], cache: &mut Cache) {
        debug_assert_eq!(x.len(), self.in_dim());
        cache.values.resize_with(self.layers.len() + 1, Vec::new);
        cache.values[0].clear();
        cache.values[0].extend_from_slice(x);
        for (l, layer) in self.layers.iter().enumerate() {
            let (done, todo) = cache.values.split_at_mut(l + 1);
            let input = &done[l];
            let out = &mut todo[0];
            out.clear();
            let nw = layer.in_dim * layer.out_dim;
            let w = &self.params[layer.offset..layer.offset + nw];
            let b = &self.params[layer.offset + nw..layer.offset + nw + layer.out_dim];
            for o in 0..layer.out_dim {
                let row = &w[o * layer.in_dim..(o + 1) * layer.in_dim];
                let z = b[o] + dot(row, input);
                out.push(layer.activation.apply(z));
            }
        }
    }

    /// Back-propagates `grad_out` (gradient with respect to the block
    /// output). Parameter gradients are added into `grad_params` when given.
    /// Returns the gradient with respect to the block input.
    pub fn backward(&self, cache: &Cache, grad_out: &[f64], mut grad_params: Option<&mut [f64]>) -> Vec<f64> {
        let mut delta = grad_out.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.values[l];
            let output = &cache.values[l + 1];
            for (d, &a) in delta.iter_mut().zip(output) {
                *d *= layer.activation.derivative_from_output(a);
            }
            let nw = layer.in_dim * layer.out_dim;
            let w = &self.params[layer.offset..layer.offset + nw];
            if let Some(g) = grad_params.as_deref_mut() {
                let (gw, gb) = g[layer.offset..layer.offset + nw + layer.out_dim].split_at_mut(nw);
                for (o, &d) in delta.iter().enumerate() {
                    if d != 0.0 {
                        axpy(d, input, &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim]);
                        gb[o] += d;
                    }
                }
            }
            let mut next = vec![0.0; layer.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, &w[o * layer.in_dim..(o + 1) * layer.in_dim], &mut next);
                }
            }
            delta = next;
        }
        delta
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Architecture {
    /// Feed-forward map from parameters into a decoder.
    Ffd,
    /// Encoder, feed-forward net and shared decoder trained jointly.
    Effd,
    /// Staggered: autoencoder first, then the feed-forward net through the
    /// frozen decoder.
    Saeffd,
    /// Staggered: autoencoder first, then the feed-forward net against the
    /// frozen encoder's codes.
    Saeff,
    /// Plain autoencoder baseline.
    Ae,
}

impl Architecture {
    pub const ALL: [Architecture; 5] =
        [Architecture::Ffd, Architecture::Effd, Architecture::Saeffd, Architecture::Saeff, Architecture::Ae];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Ffd => "ffd",
            Architecture::Effd => "effd",
            Architecture::Saeffd => "saeffd",
            Architecture::Saeff => "saeff",
            Architecture::Ae => "ae",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown architecture '{s}' (expected ffd, effd, saeffd, saeff or ae)")))
    }

    pub fn has_encoder(self) -> bool {
        !matches!(self, Architecture::Ffd)
    }

    pub fn has_ff(self) -> bool {
        !matches!(self, Architecture::Ae)
    }

    /// Whether the model maps parameters alone to a density.
    pub fn is_predictive(self) -> bool {
        matches!(self, Architecture::Ffd | Architecture::Saeffd | Architecture::Saeff)
    }

    pub fn is_staggered(self) -> bool {
        matches!(self, Architecture::Saeffd | Architecture::Saeff)
    }

    pub(crate) fn code(self) -> u8 {
        Self::ALL.iter().position(|&a| a == self).unwrap() as u8
    }

    pub(crate) fn from_code(c: u8) -> Result<Self> {
        Self::ALL.get(c as usize).copied().ok_or_else(|| Error::Corrupt(format!("unknown architecture code {c}")))
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Hidden widths of the three blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkDims {
    pub n_t: usize,
    /// Encoder hidden widths, outermost first; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub ff_hidden: Vec<usize>,
    pub latent: usize,
}

impl NetworkDims {
    /// Published widths: `nT -> 200 -> 100 -> 25` and `2 -> 50 -> 25`.
    pub fn reference(n_t: usize) -> Self {
        Self { n_t, hidden: vec![200, 100], ff_hidden: vec![50], latent: LATENT_DIM_MAX }
    }

    /// Widths scaled by `n_t / 12800` (floored, at least 8); latent kept.
    pub fn scaled(n_t: usize) -> Self {
        let r = n_t as f64 / REFERENCE_NT as f64;
        let s = |w: usize| ((w as f64 * r).floor() as usize).max(8);
        Self { n_t, hidden: vec![s(200), s(100)], ff_hidden: vec![s(50)], latent: LATENT_DIM_MAX }
    }

    fn encoder_dims(&self) -> Vec<usize> {
        std::iter::once(self.n_t).chain(self.hidden.iter().copied()).chain([self.latent]).collect()
    }

    fn decoder_dims(&self) -> Vec<usize> {
        let mut d = self.encoder_dims();
        d.reverse();
        d
    }

    fn ff_dims(&self) -> Vec<usize> {
        std::iter::once(2).chain(self.ff_hidden.iter().copied()).chain([self.latent]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockMask {
    pub encoder: bool,
    pub ff: bool,
    pub decoder: bool,
}

impl BlockMask {
    pub const ALL: Self = Self { encoder: true, ff: true, decoder: true };
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkModel {
    pub architecture: Architecture,
    pub encoder: Option<Block>,
    pub ff: Option<Block>,
    pub decoder: Block,
    pub latent_dim_max: usize,
    pub trainable: BlockMask,
    /// Structured grid the density vector lives on, when known.
    pub grid: Option<(u32, u32)>,
}

/// Everything a forward pass can produce; absent entries are `None`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ForwardOutput {
    pub alpha_ae: Option<Vec<f64>>,
    pub theta_ae: Option<Vec<f64>>,
    pub alpha_eta: Option<Vec<f64>>,
    pub theta_eta: Option<Vec<f64>>,
}

impl NetworkModel {
    /// Zero-initialised model; call [`init_kaiming_uniform`](Self::init_kaiming_uniform) before training.
    pub fn new(architecture: Architecture, dims: &NetworkDims) -> Result<Self> {
        if dims.latent == 0 || dims.latent > LATENT_DIM_MAX {
            return Err(Error::invalid(format!("latent dimension must lie in 1..={LATENT_DIM_MAX}")));
        }
        let encoder = if architecture.has_encoder() {
            Some(Block::relu_chain(&dims.encoder_dims(), Activation::Relu)?)
        } else {
            None
        };
        let ff = if architecture.has_ff() { Some(Block::relu_chain(&dims.ff_dims(), Activation::Relu)?) } else { None };
        let decoder = Block::relu_chain(&dims.decoder_dims(), Activation::Sigmoid)?;
        Ok(Self { architecture, encoder, ff, decoder, latent_dim_max: LATENT_DIM_MAX, trainable: BlockMask::ALL, grid: None })
    }

    pub fn init_kaiming_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        if let Some(e) = &mut self.encoder {
            e.init_kaiming_uniform(rng);
        }
        if let Some(f) = &mut self.ff {
            f.init_kaiming_uniform(rng);
        }
        self.decoder.init_kaiming_uniform(rng);
    }

    pub fn n_t(&self) -> usize {
        self.decoder.out_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.in_dim()
    }

    /// Sum of `in * out + out` over all layers.
    pub fn parameter_count(&self) -> usize {
        self.encoder.as_ref().map_or(0, Block::parameter_count)
            + self.ff.as_ref().map_or(0, Block::parameter_count)
            + self.decoder.parameter_count()
    }

    /// Runs every path the architecture defines. `eta` is raw (unnormalised).
    pub fn forward(&self, eta: Option<[f64; 2]>, theta_in: Option<&[f64]>) -> Result<ForwardOutput> {
        let mut out = ForwardOutput::default();
        if let Some(enc) = &self.encoder {
            let theta = theta_in.ok_or(Error::invalid(format!("{} needs an input density", self.architecture)))?;
            if theta.len() != enc.in_dim() {
                return Err(Error::DimensionMismatch { expected: enc.in_dim(), actual: theta.len() });
            }
            let alpha = enc.forward(theta);
            out.theta_ae = Some(self.decoder.forward(&alpha));
            out.alpha_ae = Some(alpha);
        }
        if let Some(ff) = &self.ff {
            let eta = eta.ok_or(Error::invalid(format!("{} needs parameters", self.architecture)))?;
            let alpha = ff.forward(&normalise_eta(eta[0], eta[1]));
            out.theta_eta = Some(self.decoder.forward(&alpha));
            out.alpha_eta = Some(alpha);
        }
        Ok(out)
    }

    /// Latent code from the parameters, for models with a feed-forward block.
    pub fn latent_from_eta(&self, eta1: f64, eta2: f64) -> Result<Vec<f64>> {
        let ff = self.ff.as_ref().ok_or(Error::NonPredictive("model has no parameter-to-latent block"))?;
        Ok(ff.forward(&normalise_eta(eta1, eta2)))
    }

    /// Predicted quad densities for `(eta1, eta2)`.
    pub fn predict_theta(&self, eta1: f64, eta2: f64) -> Result<Vec<f64>> {
        if !self.architecture.is_predictive() {
            return Err(Error::NonPredictive("this architecture needs the ground-truth density at inference"));
        }
        Ok(self.decoder.forward(&self.latent_from_eta(eta1, eta2)?))
    }

    /// Latent coordinates whose magnitude exceeds [`ACTIVE_LATENT_TOL`] for
    /// at least one sample. Codes come from the parameters when the model has
    /// a feed-forward block, otherwise from the encoder.
    pub fn count_active_latent(&self, etas: &[[f64; 2]], thetas: &[Vec<f64>]) -> Result<usize> {
        let mut peak = vec![0.0f64; self.latent_dim()];
        let mut track = |alpha: &[f64]| {
            for (p, a) in peak.iter_mut().zip(alpha) {
                *p = p.max(a.abs());
            }
        };
        if self.ff.is_some() {
            for eta in etas {
                track(&self.latent_from_eta(eta[0], eta[1])?);
            }
        } else if let Some(enc) = &self.encoder {
            for theta in thetas {
                if theta.len() != enc.in_dim() {
                    return Err(Error::DimensionMismatch { expected: enc.in_dim(), actual: theta.len() });
                }
                track(&enc.forward(theta));
            }
        }
        Ok(peak.iter().filter(|&&p| p > ACTIVE_LATENT_TOL).count())
    }
}
