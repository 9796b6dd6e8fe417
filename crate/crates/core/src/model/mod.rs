//! The shared-weight visual extractor with its topic head, and the
//! transformer encoder-decoder report generator.
//!
//! A [`Model`] is only a map from roles to [`ParamId`]s plus its
//! [`ModelConfig`]; weights live in a [`ParamStore`], so the same model can
//! run over f32 training weights or an f64 copy for gradient checks.

mod checkpoint;
mod generate;
mod transformer;
mod visual;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Float, Graph, ParamGroup, ParamId, ParamStore, Tensor, Var};
use crate::corpus::RESERVED;
use crate::rng::seeded;
use crate::{Error, Result};

pub use checkpoint::Checkpoint;
pub use generate::{export_attention, AttentionMap, DecodeMode, DecodeState, GenerationOutput, Step};
pub use transformer::Decoded;
pub use visual::VisualFeatures;

/// What the transformer encoder attends over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderInput {
    /// The `2·P` patch features of both images.
    Patches,
    /// A single token projected from the pooled pair feature.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub k_topics: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers_enc: usize,
    pub n_layers_dec: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub image_size: usize,
    /// Output channels of each 3×3, stride-2, pad-1 convolution.
    pub conv_channels: Vec<usize>,
    pub d_visual: usize,
    pub encoder_input: EncoderInput,
}

impl ModelConfig {
    /// Small configuration for CPU experiments: 32×32 images, 4×4×32
    /// feature maps.
    pub fn desk(k_topics: usize, vocab_size: usize) -> Self {
        Self {
            k_topics,
            d_model: 64,
            n_heads: 4,
            n_layers_enc: 2,
            n_layers_dec: 2,
            d_ff: 128,
            vocab_size,
            max_len: 40,
            image_size: 32,
            conv_channels: vec![8, 16, 32],
            d_visual: 32,
            encoder_input: EncoderInput::Patches,
        }
    }

    /// Full-size layout (224×224 images to 7×7 maps). The CNN is trained
    /// from scratch; no pretrained backbone is bundled.
    pub fn full(k_topics: usize, vocab_size: usize) -> Self {
        Self {
            k_topics,
            d_model: 512,
            n_heads: 8,
            n_layers_enc: 3,
            n_layers_dec: 3,
            d_ff: 2048,
            vocab_size,
            max_len: 150,
            image_size: 224,
            conv_channels: vec![64, 128, 256, 512, 1024],
            d_visual: 1024,
            encoder_input: EncoderInput::Patches,
        }
    }

    pub fn preset(name: &str, k_topics: usize, vocab_size: usize) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk(k_topics, vocab_size)),
            "full" => Ok(Self::full(k_topics, vocab_size)),
            other => Err(Error::config(format!("unknown model preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.max_len < 2 {
            return fail(format!("max_len {} < 2", self.max_len));
        }
        if self.k_topics == 0 {
            return fail("k_topics must be positive".into());
        }
        if self.vocab_size <= RESERVED {
            return fail(format!("vocab_size {} leaves no room for words", self.vocab_size));
        }
        if self.conv_channels.last() != Some(&self.d_visual) {
            return fail(format!("d_visual {} must equal the last conv width {:?}", self.d_visual, self.conv_channels));
        }
        if self.feature_side() == 0 {
            return fail("image too small for the conv stack".into());
        }
        Ok(())
    }

    /// Side of the final feature map.
    pub fn feature_side(&self) -> usize {
        self.conv_channels.iter().fold(self.image_size, |s, _| if s == 0 { 0 } else { (s - 1) / 2 + 1 })
    }

    /// Patches per image, `P`.
    pub fn patches(&self) -> usize {
        self.feature_side().pow(2)
    }

    /// Length of the transformer memory.
    pub fn memory_len(&self) -> usize {
        match self.encoder_input {
            EncoderInput::Patches => 2 * self.patches(),
            EncoderInput::Pooled => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct EncoderLayer {
    pub attn: Attention,
    pub ln1: Norm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub ln2: Norm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct DecoderLayer {
    pub self_attn: Attention,
    pub ln1: Norm,
    pub cross: Attention,
    pub ln2: Norm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub ln3: Norm,
}

/// Parameter layout of the full network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Model {
    pub config: ModelConfig,
    pub(crate) conv: Vec<(ParamId, ParamId)>,
    pub(crate) kmve: Linear,
    pub(crate) memory_proj: Linear,
    pub(crate) enc: Vec<EncoderLayer>,
    pub(crate) dec: Vec<DecoderLayer>,
    pub(crate) tok_embed: ParamId,
    pub(crate) pos_embed: ParamId,
    pub(crate) out: Linear,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Zeros,
    Ones,
    Uniform(f64),
}

type Sink<'a> = dyn FnMut(&str, &[usize], ParamGroup, Init) -> Result<ParamId> + 'a;

struct Declarer<'a, 'b> {
    sink: &'a mut Sink<'b>,
    d: usize,
}

impl Declarer<'_, '_> {
    fn param(&mut self, name: &str, shape: &[usize], group: ParamGroup, init: Init) -> Result<ParamId> {
        (self.sink)(name, shape, group, init)
    }

    fn linear(&mut self, name: &str, i: usize, o: usize, group: ParamGroup) -> Result<Linear> {
        let a = (6.0 / (i + o) as f64).sqrt();
        Ok(Linear {
            w: self.param(&format!("{name}.weight"), &[i, o], group, Init::Uniform(a))?,
            b: self.param(&format!("{name}.bias"), &[o], group, Init::Zeros)?,
        })
    }

    fn norm(&mut self, name: &str) -> Result<Norm> {
        let d = self.d;
        Ok(Norm {
            gamma: self.param(&format!("{name}.gamma"), &[d], ParamGroup::Generator, Init::Ones)?,
            beta: self.param(&format!("{name}.beta"), &[d], ParamGroup::Generator, Init::Zeros)?,
        })
    }

    fn attention(&mut self, name: &str) -> Result<Attention> {
        let (d, g) = (self.d, ParamGroup::Generator);
        Ok(Attention {
            q: self.linear(&format!("{name}.q"), d, d, g)?,
            k: self.linear(&format!("{name}.k"), d, d, g)?,
            v: self.linear(&format!("{name}.v"), d, d, g)?,
            o: self.linear(&format!("{name}.o"), d, d, g)?,
        })
    }
}

/// Walks the parameter declarations in a fixed order, handing each to `sink`.
fn declare(config: &ModelConfig, sink: &mut Sink<'_>) -> Result<Model> {
    config.validate()?;
    let d = config.d_model;
    let mut p = Declarer { sink, d };

    let mut conv = Vec::new();
    let mut c_in = 1;
    for (i, &c_out) in config.conv_channels.iter().enumerate() {
        let a = (6.0 / (c_in * 9) as f64).sqrt();
        let w = p.param(&format!("visual.conv{i}.weight"), &[c_out, c_in, 3, 3], ParamGroup::Visual, Init::Uniform(a))?;
        let b = p.param(&format!("visual.conv{i}.bias"), &[c_out], ParamGroup::Visual, Init::Zeros)?;
        conv.push((w, b));
        c_in = c_out;
    }
    let kmve = p.linear("kmve.proj", 2 * config.d_visual, config.k_topics, ParamGroup::Visual)?;
    let mem_in = match config.encoder_input {
        EncoderInput::Patches => config.d_visual,
        EncoderInput::Pooled => 2 * config.d_visual,
    };
    let g = ParamGroup::Generator;
    let memory_proj = p.linear("generator.memory_proj", mem_in, d, g)?;
    let mut enc = Vec::new();
    for l in 0..config.n_layers_enc {
        let n = format!("generator.enc{l}");
        enc.push(EncoderLayer {
            attn: p.attention(&format!("{n}.attn"))?,
            ln1: p.norm(&format!("{n}.ln1"))?,
            ff1: p.linear(&format!("{n}.ff1"), d, config.d_ff, g)?,
            ff2: p.linear(&format!("{n}.ff2"), config.d_ff, d, g)?,
            ln2: p.norm(&format!("{n}.ln2"))?,
        });
    }
    let mut dec = Vec::new();
    for l in 0..config.n_layers_dec {
        let n = format!("generator.dec{l}");
        dec.push(DecoderLayer {
            self_attn: p.attention(&format!("{n}.self_attn"))?,
            ln1: p.norm(&format!("{n}.ln1"))?,
            cross: p.attention(&format!("{n}.cross_attn"))?,
            ln2: p.norm(&format!("{n}.ln2"))?,
            ff1: p.linear(&format!("{n}.ff1"), d, config.d_ff, g)?,
            ff2: p.linear(&format!("{n}.ff2"), config.d_ff, d, g)?,
            ln3: p.norm(&format!("{n}.ln3"))?,
        });
    }
    let tok_embed = p.param("generator.tok_embed", &[config.vocab_size, d], g, Init::Uniform(0.1))?;
    let pos_embed = p.param("generator.pos_embed", &[config.max_len, d], g, Init::Uniform(0.1))?;
    let out = p.linear("generator.out", d, config.vocab_size, g)?;
    Ok(Model { config: config.clone(), conv, kmve, memory_proj, enc, dec, tok_embed, pos_embed, out })
}

impl Model {
    /// Fresh weights drawn from `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<(Self, ParamStore<f32>)> {
        let mut rng = seeded(seed);
        let mut store = ParamStore::new();
        let model = declare(config, &mut |name, shape, group, init| {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Uniform(a) => (0..n).map(|_| rng.gen_range(-a..a) as f32).collect(),
            };
            Ok(store.add(name, Tensor::new(shape, data)?, group))
        })?;
        Ok((model, store))
    }

    /// Binds to an existing store whose names and shapes must match the
    /// layout exactly, in order.
    pub fn bind<T: Float>(config: &ModelConfig, store: &ParamStore<T>) -> Result<Self> {
        let mut next = 0usize;
        let model = declare(config, &mut |name, shape, group, _| {
            let id = store
                .find(name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {name}")))?;
            let p = store.get(id);
            if p.value.shape() != shape || p.group != group || id.index() != next {
                return Err(Error::Format(format!("parameter {name} has an unexpected layout")));
            }
            next += 1;
            Ok(id)
        })?;
        if next != store.len() {
            return Err(Error::Format(format!("store has {} parameters, layout needs {next}", store.len())));
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }
}

// ---- shared building blocks ----

pub(crate) fn linear<T: Float>(g: &mut Graph<T>, s: &ParamStore<T>, x: Var, l: Linear) -> Result<Var> {
    let w = g.param(s, l.w);
    let b = g.param(s, l.b);
    let h = g.matmul(x, w)?;
    g.add(h, b)
}

pub(crate) fn norm<T: Float>(g: &mut Graph<T>, s: &ParamStore<T>, x: Var, n: Norm) -> Result<Var> {
    let gamma = g.param(s, n.gamma);
    let beta = g.param(s, n.beta);
    let y = g.layer_norm(x)?;
    let y = g.mul(y, gamma)?;
    g.add(y, beta)
}
