//! Slip classifier: patch embedding over an 8-frame clip followed by
//! divided space-time attention blocks, read out through the class token.
//!
//! A named registry exposes the ablation grid over (hidden size, attention
//! heads, encoder blocks); reference accuracies ride along as metadata and
//! are never asserted by tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use tactile_core::divided::{DividedBlock, DividedBlockCache};
use tactile_core::grid::{GridShape, PatchEmbed, PatchEmbedCache};
use tactile_core::layers::{LayerNorm, Linear, LinearCache};
use tactile_core::ops::{self, LayerNormCache};
use tactile_core::param::{join_name, Param, Parameterized};
use tactile_core::Tensor;

use crate::{ActKind, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlipNetConfig {
    pub frames: usize,
    pub image: usize,
    pub channels: usize,
    pub patch: usize,
    pub hidden: usize,
    pub heads: usize,
    pub blocks: usize,
    pub intermediate: usize,
    pub ln_eps: f32,
    pub activation: ActKind,
    pub classes: usize,
}

impl Default for SlipNetConfig {
    /// Full-scale defaults.
    fn default() -> Self {
        Self {
            frames: 8,
            image: 224,
            channels: 3,
            patch: 16,
            hidden: 768,
            heads: 12,
            blocks: 12,
            intermediate: 3078,
            ln_eps: 1e-6,
            activation: ActKind::Gelu,
            classes: 2,
        }
    }
}

impl SlipNetConfig {
    /// Small preset that trains in minutes on one CPU core. The MLP width is
    /// twice the hidden size.
    pub fn toy() -> Self {
        Self {
            image: 32,
            patch: 8,
            hidden: 64,
            heads: 4,
            blocks: 2,
            intermediate: 128,
            ..Self::default()
        }
    }

    /// Patches per frame.
    pub fn n_patches(&self) -> usize {
        let side = self.image / self.patch;
        side * side
    }

    pub fn grid(&self) -> GridShape {
        GridShape {
            n: self.n_patches(),
            f: self.frames,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden == 0 || self.hidden % self.heads != 0 {
            return Err(ModelError::Config {
                reason: format!("hidden {} not divisible by {} heads", self.hidden, self.heads),
            });
        }
        if self.patch == 0 || self.image % self.patch != 0 {
            return Err(ModelError::Config {
                reason: format!("image {} not divisible by patch {}", self.image, self.patch),
            });
        }
        if self.frames == 0 || self.blocks == 0 || self.intermediate == 0 {
            return Err(ModelError::Config {
                reason: "frames, blocks, and intermediate must be positive".into(),
            });
        }
        if self.classes < 2 {
            return Err(ModelError::Config {
                reason: "need at least 2 classes".into(),
            });
        }
        Ok(())
    }
}

/// The ablation grid: one name per studied (hidden, heads, blocks) triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Baseline,
    Ab1W384,
    Ab1W576,
    Ab2H16,
    Ab2H8,
    Ab3B8,
    Ab3B6,
    Ab3B4,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Baseline,
        Variant::Ab1W384,
        Variant::Ab1W576,
        Variant::Ab2H16,
        Variant::Ab2H8,
        Variant::Ab3B8,
        Variant::Ab3B6,
        Variant::Ab3B4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Ab1W384 => "AB1-384",
            Variant::Ab1W576 => "AB1-576",
            Variant::Ab2H16 => "AB2-16",
            Variant::Ab2H8 => "AB2-8",
            Variant::Ab3B8 => "AB3-8",
            Variant::Ab3B6 => "AB3-6",
            Variant::Ab3B4 => "AB3-4",
        }
    }

    pub fn from_name(name: &str) -> Option<Variant> {
        Variant::ALL.iter().copied().find(|v| v.name() == name)
    }

    /// `(hidden size, attention heads, encoder blocks)`.
    pub fn triple(self) -> (usize, usize, usize) {
        match self {
            Variant::Baseline => (768, 12, 12),
            Variant::Ab1W384 => (384, 12, 12),
            Variant::Ab1W576 => (576, 12, 12),
            Variant::Ab2H16 => (768, 16, 12),
            Variant::Ab2H8 => (768, 8, 12),
            Variant::Ab3B8 => (768, 12, 8),
            Variant::Ab3B6 => (768, 12, 6),
            Variant::Ab3B4 => (768, 12, 4),
        }
    }

    /// Accuracy reported for this configuration in the reference ablation
    /// results. Metadata only; nothing in this workspace asserts it.
    pub fn reported_accuracy(self) -> f32 {
        match self {
            Variant::Baseline => 0.8615,
            Variant::Ab1W384 => 0.7307,
            Variant::Ab1W576 => 0.7076,
            Variant::Ab2H16 => 0.8923,
            Variant::Ab2H8 => 0.7923,
            Variant::Ab3B8 => 0.8923,
            Variant::Ab3B6 => 0.8615,
            Variant::Ab3B4 => 0.8076,
        }
    }

    /// Two variants share the top reference accuracy; both are flagged
    /// because the source results are ambiguous about a single winner.
    pub fn is_top_reported(self) -> bool {
        matches!(self, Variant::Ab2H16 | Variant::Ab3B8)
    }

    fn apply(self, mut cfg: SlipNetConfig) -> SlipNetConfig {
        let (hidden, heads, blocks) = self.triple();
        cfg.hidden = hidden;
        cfg.heads = heads;
        cfg.blocks = blocks;
        cfg
    }
}

/// Full-scale config for a named variant.
pub fn build_variant(name: &str) -> Result<SlipNetConfig, ModelError> {
    let v = Variant::from_name(name).ok_or_else(|| ModelError::UnknownVariant {
        name: name.to_string(),
    })?;
    Ok(v.apply(SlipNetConfig::default()))
}

/// Toy-geometry config (32x32, patch 8) carrying a named variant's
/// (hidden, heads, blocks) triple.
pub fn build_variant_toy(name: &str) -> Result<SlipNetConfig, ModelError> {
    let v = Variant::from_name(name).ok_or_else(|| ModelError::UnknownVariant {
        name: name.to_string(),
    })?;
    Ok(v.apply(SlipNetConfig::toy()))
}

/// Closed-form parameter count for a config; the network constructor must
/// agree with this exactly.
pub fn expected_parameter_count(cfg: &SlipNetConfig) -> usize {
    let d = cfg.hidden;
    let i = cfg.intermediate;
    let n = cfg.n_patches();
    let patch_dim = cfg.channels * cfg.patch * cfg.patch;
    let embed = patch_dim * d + d // projection
        + d                       // class token
        + n * d + cfg.frames * d; // positions
    let attn = 4 * (d * d + d);
    let per_block = 3 * 2 * d     // three layer norms
        + 2 * attn                // temporal + spatial attention
        + d * i + i + i * d + d;  // mlp
    let tail = 2 * d + d * cfg.classes + cfg.classes;
    embed + cfg.blocks * per_block + tail
}

/// The slip classifier itself.
pub struct SlipNet {
    cfg: SlipNetConfig,
    embed: PatchEmbed,
    blocks: Vec<DividedBlock>,
    ln_f: LayerNorm,
    head: Linear,
}

pub struct SlipNetCache {
    embed: PatchEmbedCache,
    blocks: Vec<DividedBlockCache>,
    ln_f: LayerNormCache,
    head: LinearCache,
    tokens: usize,
}

impl SlipNetCache {
    /// Runtime-counted keys scored per token, one vector per block.
    pub fn comparisons(&self) -> Vec<Vec<usize>> {
        self.blocks.iter().map(|b| b.comparisons_per_token()).collect()
    }
}

impl SlipNet {
    pub fn new(cfg: SlipNetConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embed = PatchEmbed::new(
            cfg.image,
            cfg.patch,
            cfg.channels,
            cfg.frames,
            cfg.hidden,
            &mut rng,
        );
        let grid = cfg.grid();
        let blocks = (0..cfg.blocks)
            .map(|_| {
                DividedBlock::new(
                    grid,
                    cfg.hidden,
                    cfg.heads,
                    cfg.intermediate,
                    cfg.activation.op(),
                    cfg.ln_eps,
                    &mut rng,
                )
            })
            .collect();
        let ln_f = LayerNorm::new(cfg.hidden, cfg.ln_eps);
        let head = Linear::new(cfg.hidden, cfg.classes, &mut rng);
        Ok(Self {
            cfg,
            embed,
            blocks,
            ln_f,
            head,
        })
    }

    pub fn config(&self) -> &SlipNetConfig {
        &self.cfg
    }

    fn check_clip(&self, clip: &Tensor) -> Result<(), ModelError> {
        let want = [
            self.cfg.frames,
            self.cfg.channels,
            self.cfg.image,
            self.cfg.image,
        ];
        if clip.shape() != want {
            return Err(ModelError::Geometry {
                reason: format!("clip shape {:?}, model expects {:?}", clip.shape(), want),
            });
        }
        Ok(())
    }

    pub fn forward_logits(&self, clip: &Tensor) -> Result<(Tensor, SlipNetCache), ModelError> {
        self.check_clip(clip)?;
        let (mut tokens, embed) = self.embed.forward(clip)?;
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (next, c) = b.forward(&tokens)?;
            tokens = next;
            block_caches.push(c);
        }
        let token_count = tokens.shape()[0];
        let (normed, ln_f) = self.ln_f.forward(&tokens)?;
        let cls = Tensor::new(vec![1, self.cfg.hidden], normed.row(0).to_vec())?;
        let (logits2, head) = self.head.forward(&cls)?;
        let logits = logits2.reshape(&[self.cfg.classes])?;
        Ok((
            logits,
            SlipNetCache {
                embed,
                blocks: block_caches,
                ln_f,
                head,
                tokens: token_count,
            },
        ))
    }

    /// Accumulates all parameter gradients; returns the clip gradient.
    pub fn backward(&mut self, cache: &SlipNetCache, dlogits: &Tensor) -> Result<Tensor, ModelError> {
        let dl2 = dlogits.reshape(&[1, self.cfg.classes])?;
        let dcls = self.head.backward(&cache.head, &dl2)?;
        let mut dnormed = Tensor::zeros(&[cache.tokens, self.cfg.hidden]);
        dnormed.row_mut(0).copy_from_slice(dcls.row(0));
        let mut dtokens = self.ln_f.backward(&cache.ln_f, &dnormed)?;
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            dtokens = b.backward(c, &dtokens)?;
        }
        Ok(self.embed.backward(&cache.embed, &dtokens)?)
    }

    /// Class probabilities `[stable, slip]` for one clip.
    pub fn predict(&self, clip: &Tensor) -> Result<Tensor, ModelError> {
        let (logits, _) = self.forward_logits(clip)?;
        Ok(ops::softmax_last(&logits.reshape(&[1, self.cfg.classes])?)
            .reshape(&[self.cfg.classes])?)
    }
}

impl Parameterized for SlipNet {
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.embed.collect_params(&join_name(prefix, "embed"), out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.collect_params(&join_name(prefix, &format!("block{i}")), out);
        }
        self.ln_f.collect_params(&join_name(prefix, "ln_f"), out);
        self.head.collect_params(&join_name(prefix, "head"), out);
    }
}
