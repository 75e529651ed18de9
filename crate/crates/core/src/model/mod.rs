//! Decoder-only causal transformer over unit tokens.
//!
//! Pre-norm blocks (RMS normalization with learned gain), multi-head causal
//! self-attention, GELU feed-forward, learned absolute positions and an
//! untied output projection. Parameters live in one flat buffer described
//! by a [`Layout`], which keeps optimizer updates and checkpoint I/O simple.
//!
//! Parameter count, with `V` the vocabulary, `C` the context length, `d`
//! the width, `m` the depth and `f` the feed-forward multiplier:
//!
//! ```text
//! V·d  +  C·d  +  m·(4d² + 2f·d² + 2d)  +  d  +  d·V
//! ```

pub mod checkpoint;
mod backward;
mod forward;
pub mod ops;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};
use std::sync::Arc;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use backward::{backward, accumulate_gradients, LossSum};
pub use forward::{forward, nll, sequence_logprob, ForwardTrace, Nll, ScoreOptions};

/// Floating-point element type of a model. Training runs in `f32`; gradient
/// checks run in `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub(crate) fn sc<F: Scalar>(x: f64) -> F {
    F::from_f64(x).unwrap()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// `|V_s|`; zero means "derive from the corpus vocabulary".
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ff_mult: usize,
    pub context_len: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            ff_mult: 4,
            context_len: 2048,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    /// The small preset used for exhaustive gradient checks.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            ff_mult: 4,
            context_len: 16,
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("model: {m}")));
        if self.vocab_size < 2 {
            return bad("vocab_size must be at least 2");
        }
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 || self.ff_mult == 0 {
            return bad("dimensions must be positive");
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be divisible by n_heads");
        }
        if self.context_len < 2 {
            return bad("context_len must be at least 2");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn ff_dim(&self) -> usize {
        self.ff_mult * self.d_model
    }

    /// Closed-form parameter count (see the module docs).
    pub fn param_count(&self) -> usize {
        let (v, c, d, m, f) = (
            self.vocab_size,
            self.context_len,
            self.d_model,
            self.n_layers,
            self.ff_mult,
        );
        v * d + c * d + m * (4 * d * d + 2 * f * d * d + 2 * d) + d + d * v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    Normal,
    ScaledNormal,
    Ones,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub decay: bool,
    pub init: InitKind,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct BlockOffsets {
    pub attn_norm: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub ffn_norm: usize,
    pub w_in: usize,
    pub w_out: usize,
}

/// Names, shapes and offsets of every tensor in the flat parameter buffer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    tensors: Vec<TensorSpec>,
    pub(crate) tok_embed: usize,
    pub(crate) pos_embed: usize,
    pub(crate) blocks: Vec<BlockOffsets>,
    pub(crate) final_norm: usize,
    pub(crate) unembed: usize,
    total: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (v, c, d, f) = (cfg.vocab_size, cfg.context_len, cfg.d_model, cfg.ff_dim());
        let mut tensors = Vec::new();
        let mut total = 0;
        let mut push = |name: String, shape: Vec<usize>, init: InitKind| {
            let offset = total;
            total += shape.iter().product::<usize>();
            tensors.push(TensorSpec {
                name,
                shape,
                offset,
                decay: init != InitKind::Ones,
                init,
            });
            offset
        };
        let tok_embed = push("tok_embed".into(), vec![v, d], InitKind::Normal);
        let pos_embed = push("pos_embed".into(), vec![c, d], InitKind::Normal);
        let blocks = (0..cfg.n_layers)
            .map(|i| BlockOffsets {
                attn_norm: push(format!("blocks.{i}.attn_norm"), vec![d], InitKind::Ones),
                wq: push(format!("blocks.{i}.wq"), vec![d, d], InitKind::Normal),
                wk: push(format!("blocks.{i}.wk"), vec![d, d], InitKind::Normal),
                wv: push(format!("blocks.{i}.wv"), vec![d, d], InitKind::Normal),
                wo: push(format!("blocks.{i}.wo"), vec![d, d], InitKind::ScaledNormal),
                ffn_norm: push(format!("blocks.{i}.ffn_norm"), vec![d], InitKind::Ones),
                w_in: push(format!("blocks.{i}.w_in"), vec![d, f], InitKind::Normal),
                w_out: push(format!("blocks.{i}.w_out"), vec![f, d], InitKind::ScaledNormal),
            })
            .collect();
        let final_norm = push("final_norm".into(), vec![d], InitKind::Ones);
        let unembed = push("unembed".into(), vec![d, v], InitKind::Normal);
        Layout {
            tensors,
            tok_embed,
            pos_embed,
            blocks,
            final_norm,
            unembed,
            total,
        }
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// The tensor containing flat index `i`.
    pub fn tensor_at(&self, i: usize) -> &TensorSpec {
        let k = self.tensors.partition_point(|t| t.offset <= i) - 1;
        &self.tensors[k]
    }
}

/// Model weights in a flat buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<F> {
    config: ModelConfig,
    layout: Arc<Layout>,
    pub data: Vec<F>,
}

impl<F: Scalar> ModelParams<F> {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Arc::new(Layout::new(config));
        let data = vec![F::zero(); layout.total()];
        Ok(ModelParams {
            config: config.clone(),
            layout,
            data,
        })
    }

    pub fn from_data(config: &ModelConfig, data: Vec<F>) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        if data.len() != p.data.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                p.data.len(),
                data.len()
            )));
        }
        p.data = data;
        Ok(p)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn tensor(&self, name: &str) -> Option<&[F]> {
        self.layout.get(name).map(|t| &self.data[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [F]> {
        let range = self.layout.get(name)?.range();
        Some(&mut self.data[range])
    }

    pub(crate) fn slice(&self, offset: usize, len: usize) -> &[F] {
        &self.data[offset..offset + len]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<G: Scalar>(&self) -> ModelParams<G> {
        ModelParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            data: self.data.iter().map(|x| G::from_f64(x.to_f64().unwrap()).unwrap()).collect(),
        }
    }
}

/// Draws initial weights: normal with std 0.02, residual output projections
/// scaled by `1/sqrt(2m)`, normalization gains 1. Each tensor has its own
/// random stream so the result does not depend on the element type.
pub fn init_params<F: Scalar>(config: &ModelConfig) -> Result<ModelParams<F>> {
    let mut params = ModelParams::<F>::zeros(config)?;
    let std = 0.02;
    let scaled = std / (2.0 * config.n_layers as f64).sqrt();
    let layout = params.layout.clone();
    for (k, t) in layout.tensors().iter().enumerate() {
        let mut r = rng::stream(config.init_seed, "init", k as u64);
        let dst = &mut params.data[t.range()];
        match t.init {
            InitKind::Ones => dst.fill(F::one()),
            InitKind::Normal | InitKind::ScaledNormal => {
                let s = if t.init == InitKind::Normal { std } else { scaled };
                for x in dst.iter_mut() {
                    *x = sc(s * r.sample::<f64, _>(StandardNormal));
                }
            }
        }
    }
    Ok(params)
}

/// Gradient buffer sharing the layout of a [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<F> {
    layout: Arc<Layout>,
    pub data: Vec<F>,
}

impl<F: Scalar> Gradients<F> {
    pub fn zeros_like(params: &ModelParams<F>) -> Self {
        Gradients {
            layout: params.layout.clone(),
            data: vec![F::zero(); params.data.len()],
        }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn tensor(&self, name: &str) -> Option<&[F]> {
        self.layout.get(name).map(|t| &self.data[t.range()])
    }

    pub fn scale(&mut self, s: F) {
        for g in &mut self.data {
            *g *= s;
        }
    }

    pub fn add(&mut self, other: &Gradients<F>) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|g| {
                let g = g.to_f64().unwrap();
                g * g
            })
            .sum::<f64>()
            .sqrt()
    }
}
