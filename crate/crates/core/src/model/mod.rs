//! The transformer encoder: configuration, parameters, forward pass and
//! checkpoints.

mod checkpoint;
mod forward;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_FORMAT};
pub use forward::{
    assemble_tokens, attention_block, batch_loss, ffn_block, forward, freq_encode, grad_check,
    predict, project_embedding, ForwardOutput,
};

/// Which attention value inputs come from the projected embeddings rather
/// than the layer input.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueSource {
    #[default]
    FirstLayer,
    AllLayers,
    /// Standard self-attention everywhere.
    None,
}

impl ValueSource {
    pub fn from_projection(self, layer: usize) -> bool {
        match self {
            ValueSource::FirstLayer => layer == 0,
            ValueSource::AllLayers => true,
            ValueSource::None => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_input: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub layer_norm_eps: f64,
    pub k_star: usize,
    pub value_source: ValueSource,
    /// Feed `ln(1 + n)` instead of the raw count to the frequency encoder.
    pub log_counts: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_input: 16,
            d_model: 16,
            n_heads: 2,
            n_layers: 2,
            d_ff: 64,
            dropout: 0.1,
            layer_norm_eps: 1e-5,
            k_star: 32,
            value_source: ValueSource::FirstLayer,
            log_counts: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_input", self.d_input),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("d_ff", self.d_ff),
            ("k_star", self.k_star),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "model.d_model ({}) must be divisible by model.n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "model.d_model ({}) must be even for the frequency encoder",
                self.d_model
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("model.dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if !(self.layer_norm_eps.is_finite() && self.layer_norm_eps > 0.0) {
            return Err(Error::Config("model.layer_norm_eps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub w_q: T,
    pub w_k: T,
    pub w_v: T,
    pub w_out: T,
    pub norm1_gain: T,
    pub norm1_bias: T,
    pub ffn_w1: T,
    pub ffn_b1: T,
    pub ffn_w2: T,
    pub ffn_b2: T,
    pub norm2_gain: T,
    pub norm2_bias: T,
}

/// Every learnable tensor, generic over the leaf type so the same layout
/// holds values, tape handles, gradients and optimizer moments.
///
/// Matrices are stored `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub proj_weight: T,
    pub proj_bias: T,
    pub freq_w1: T,
    pub freq_b1: T,
    pub freq_w2: T,
    pub freq_b2: T,
    pub layers: Vec<LayerParams<T>>,
    pub head_weight: T,
    pub head_bias: T,
}

pub type ModelParams = Params<Tensor>;

impl<T> Params<T> {
    /// Applies `f` to every leaf with its checkpoint name, in canonical order.
    pub fn try_map<U, E>(
        &self,
        mut f: impl FnMut(&str, &T) -> std::result::Result<U, E>,
    ) -> std::result::Result<Params<U>, E> {
        let proj_weight = f("proj.weight", &self.proj_weight)?;
        let proj_bias = f("proj.bias", &self.proj_bias)?;
        let freq_w1 = f("freq.w1", &self.freq_w1)?;
        let freq_b1 = f("freq.b1", &self.freq_b1)?;
        let freq_w2 = f("freq.w2", &self.freq_w2)?;
        let freq_b2 = f("freq.b2", &self.freq_b2)?;
        let mut layers = Vec::with_capacity(self.layers.len());
        for (l, p) in self.layers.iter().enumerate() {
            let mut g = |suffix: &str, t: &T| f(&format!("layers.{l}.{suffix}"), t);
            layers.push(LayerParams {
                w_q: g("attn.w_q", &p.w_q)?,
                w_k: g("attn.w_k", &p.w_k)?,
                w_v: g("attn.w_v", &p.w_v)?,
                w_out: g("attn.w_out", &p.w_out)?,
                norm1_gain: g("norm1.gain", &p.norm1_gain)?,
                norm1_bias: g("norm1.bias", &p.norm1_bias)?,
                ffn_w1: g("ffn.w1", &p.ffn_w1)?,
                ffn_b1: g("ffn.b1", &p.ffn_b1)?,
                ffn_w2: g("ffn.w2", &p.ffn_w2)?,
                ffn_b2: g("ffn.b2", &p.ffn_b2)?,
                norm2_gain: g("norm2.gain", &p.norm2_gain)?,
                norm2_bias: g("norm2.bias", &p.norm2_bias)?,
            });
        }
        Ok(Params {
            proj_weight,
            proj_bias,
            freq_w1,
            freq_b1,
            freq_w2,
            freq_b2,
            layers,
            head_weight: f("head.weight", &self.head_weight)?,
            head_bias: f("head.bias", &self.head_bias)?,
        })
    }

    pub fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> Params<U> {
        self.try_map(|n, t| Ok::<U, std::convert::Infallible>(f(n, t)))
            .unwrap_or_else(|e| match e {})
    }

    /// Leaves in canonical order.
    pub fn leaves(&self) -> Vec<&T> {
        let mut out = Vec::new();
        self.visit(&mut |_, t| out.push(t));
        out
    }

    pub fn leaves_mut(&mut self) -> Vec<&mut T> {
        let mut out: Vec<&mut T> = Vec::new();
        let Params {
            proj_weight,
            proj_bias,
            freq_w1,
            freq_b1,
            freq_w2,
            freq_b2,
            layers,
            head_weight,
            head_bias,
        } = self;
        out.extend([proj_weight, proj_bias, freq_w1, freq_b1, freq_w2, freq_b2]);
        for p in layers.iter_mut() {
            let LayerParams {
                w_q,
                w_k,
                w_v,
                w_out,
                norm1_gain,
                norm1_bias,
                ffn_w1,
                ffn_b1,
                ffn_w2,
                ffn_b2,
                norm2_gain,
                norm2_bias,
            } = p;
            out.extend([
                w_q, w_k, w_v, w_out, norm1_gain, norm1_bias, ffn_w1, ffn_b1, ffn_w2, ffn_b2,
                norm2_gain, norm2_bias,
            ]);
        }
        out.extend([head_weight, head_bias]);
        out
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |n, _| out.push(n));
        out
    }

    /// Visits leaves in canonical order: projection, frequency encoder,
    /// layers, head.
    fn visit<'s>(&'s self, f: &mut dyn FnMut(String, &'s T)) {
        f("proj.weight".into(), &self.proj_weight);
        f("proj.bias".into(), &self.proj_bias);
        f("freq.w1".into(), &self.freq_w1);
        f("freq.b1".into(), &self.freq_b1);
        f("freq.w2".into(), &self.freq_w2);
        f("freq.b2".into(), &self.freq_b2);
        for (l, p) in self.layers.iter().enumerate() {
            for (suffix, t) in [
                ("attn.w_q", &p.w_q),
                ("attn.w_k", &p.w_k),
                ("attn.w_v", &p.w_v),
                ("attn.w_out", &p.w_out),
                ("norm1.gain", &p.norm1_gain),
                ("norm1.bias", &p.norm1_bias),
                ("ffn.w1", &p.ffn_w1),
                ("ffn.b1", &p.ffn_b1),
                ("ffn.w2", &p.ffn_w2),
                ("ffn.b2", &p.ffn_b2),
                ("norm2.gain", &p.norm2_gain),
                ("norm2.bias", &p.norm2_bias),
            ] {
                f(format!("layers.{l}.{suffix}"), t);
            }
        }
        f("head.weight".into(), &self.head_weight);
        f("head.bias".into(), &self.head_bias);
    }

    /// Rebuilds a structure from leaves in canonical order, using `self` only
    /// for the layer count.
    pub fn with_leaves<U>(&self, leaves: Vec<U>) -> Result<Params<U>> {
        let expected = 6 + 12 * self.layers.len() + 2;
        if leaves.len() != expected {
            return Err(Error::Contract(format!(
                "expected {expected} parameter tensors, got {}",
                leaves.len()
            )));
        }
        let mut it = leaves.into_iter();
        let mut next = || it.next().expect("length checked");
        let (proj_weight, proj_bias, freq_w1, freq_b1, freq_w2, freq_b2) =
            (next(), next(), next(), next(), next(), next());
        let layers = (0..self.layers.len())
            .map(|_| LayerParams {
                w_q: next(),
                w_k: next(),
                w_v: next(),
                w_out: next(),
                norm1_gain: next(),
                norm1_bias: next(),
                ffn_w1: next(),
                ffn_b1: next(),
                ffn_w2: next(),
                ffn_b2: next(),
                norm2_gain: next(),
                norm2_bias: next(),
            })
            .collect();
        Ok(Params {
            proj_weight,
            proj_bias,
            freq_w1,
            freq_b1,
            freq_w2,
            freq_b2,
            layers,
            head_weight: next(),
            head_bias: next(),
        })
    }
}

/// Shapes of every parameter for `cfg`, in canonical order.
pub fn param_shapes(cfg: &ModelConfig) -> Params<Vec<usize>> {
    let d = cfg.d_model;
    let half = d / 2;
    let layer = LayerParams {
        w_q: vec![d, d],
        w_k: vec![d, d],
        w_v: vec![d, d],
        w_out: vec![d, d],
        norm1_gain: vec![d],
        norm1_bias: vec![d],
        ffn_w1: vec![cfg.d_ff, d],
        ffn_b1: vec![cfg.d_ff],
        ffn_w2: vec![d, cfg.d_ff],
        ffn_b2: vec![d],
        norm2_gain: vec![d],
        norm2_bias: vec![d],
    };
    Params {
        proj_weight: vec![d, cfg.d_input],
        proj_bias: vec![d],
        freq_w1: vec![half, 1],
        freq_b1: vec![half],
        freq_w2: vec![d, half],
        freq_b2: vec![d],
        layers: vec![layer; cfg.n_layers],
        head_weight: vec![1, d],
        head_bias: vec![1],
    }
}

/// Glorot-uniform weights, zero biases, unit layer-norm gains. Each tensor
/// draws from its own stream keyed by name, so the result depends only on
/// the seed and the shapes.
pub fn init_params(cfg: &ModelConfig) -> Result<ModelParams> {
    cfg.validate()?;
    let root = Rng::seed_from_u64(cfg.seed).fork("init");
    Ok(param_shapes(cfg).map(|name, shape| {
        if name.ends_with(".gain") {
            Tensor::ones(shape)
        } else if shape.len() == 2 {
            let bound = glorot_bound(shape[1], shape[0]);
            let mut rng = root.fork(name);
            let data = (0..shape[0] * shape[1])
                .map(|_| rng.uniform_range(-bound, bound))
                .collect();
            Tensor::new(shape.clone(), data).expect("shape matches data")
        } else {
            Tensor::zeros(shape)
        }
    }))
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
