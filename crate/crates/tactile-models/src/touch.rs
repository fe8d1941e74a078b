//! Contact classifier: a small conv net whose later stages interleave
//! downsampling convolutions with patch-transformer blocks.
//!
//! The patch-transformer block unfolds a feature map into P = w*h pixel
//! offsets, runs a shared transformer over the N patch positions at each
//! offset, folds back, and fuses with the untouched input through a conv.
//! Spatial size is preserved, so the block sees the whole map while each
//! attention op stays N tokens long.

use rand::Rng;
use serde::{Deserialize, Serialize};

use tactile_core::layers::{Linear, LinearCache, TransformerBlock, TransformerBlockCache};
use tactile_core::ops::{self, Activation};
use tactile_core::param::{join_name, Param, Parameterized};
use tactile_core::Tensor;

use crate::{ActKind, ModelError};

/// Convolution with bias and an optional pointwise nonlinearity.
pub struct ConvLayer {
    pub kernel: Param,
    pub bias: Param,
    pub stride: usize,
    pub pad: usize,
    pub act: Option<Activation>,
}

pub struct ConvCache {
    x: Tensor,
    /// Output after bias, before the nonlinearity.
    pre: Tensor,
}

impl ConvLayer {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        act: Option<Activation>,
        rng: &mut impl Rng,
    ) -> Self {
        // Fan-in scaled so signal magnitude survives the conv stack.
        let std = (2.0 / (c_in * kernel * kernel) as f32).sqrt();
        Self {
            kernel: Param::new(Tensor::random_normal(&[c_out, c_in, kernel, kernel], std, rng)),
            bias: Param::zeros(&[c_out]),
            stride,
            pad,
            act,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ConvCache), ModelError> {
        let mut pre = ops::conv2d(x, self.kernel.value(), self.stride, self.pad)?;
        let (c_out, h, w) = pre.dims3()?;
        for co in 0..c_out {
            let b = self.bias.value().data()[co];
            for v in &mut pre.data_mut()[co * h * w..(co + 1) * h * w] {
                *v += b;
            }
        }
        let y = match self.act {
            Some(a) => a.apply(&pre),
            None => pre.clone(),
        };
        Ok((y, ConvCache { x: x.clone(), pre }))
    }

    pub fn backward(&mut self, cache: &ConvCache, dy: &Tensor) -> Result<Tensor, ModelError> {
        let dpre = match self.act {
            Some(a) => a.backward(&cache.pre, dy)?,
            None => dy.clone(),
        };
        let (c_out, h, w) = dpre.dims3()?;
        let mut db = Tensor::zeros(&[c_out]);
        for co in 0..c_out {
            db.data_mut()[co] = dpre.data()[co * h * w..(co + 1) * h * w].iter().sum();
        }
        let (dx, dk) =
            ops::conv2d_backward(&cache.x, self.kernel.value(), &dpre, self.stride, self.pad)?;
        self.kernel.accumulate_grad(&dk)?;
        self.bias.accumulate_grad(&db)?;
        Ok(dx)
    }
}

impl Parameterized for ConvLayer {
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join_name(prefix, "kernel"), &mut self.kernel));
        out.push((join_name(prefix, "bias"), &mut self.bias));
    }
}

/// `x [d, H, W]` -> `[P, N, d]` where `P = w*h` intra-patch offsets and
/// `N = (H/h)*(W/w)` patches. Slice p is the length-N feature sequence at
/// intra-patch offset p (offset row-major: p = dy*w + dx), patches ordered
/// row-major over the patch grid.
pub fn unfold(x: &Tensor, w: usize, h: usize) -> Result<Tensor, ModelError> {
    let (d, hh, ww) = x.dims3()?;
    if w == 0 || h == 0 || hh % h != 0 || ww % w != 0 {
        return Err(ModelError::Geometry {
            reason: format!("feature map {hh}x{ww} not divisible by patch {h}x{w}"),
        });
    }
    let rows = hh / h;
    let cols = ww / w;
    let p_total = w * h;
    let n = rows * cols;
    let mut out = Tensor::zeros(&[p_total, n, d]);
    for p in 0..p_total {
        let dy = p / w;
        let dx = p % w;
        for py in 0..rows {
            for px in 0..cols {
                let ni = py * cols + px;
                for c in 0..d {
                    let v = x.at(&[c, py * h + dy, px * w + dx]);
                    out.set(&[p, ni, c], v);
                }
            }
        }
    }
    Ok(out)
}

/// Exact inverse of `unfold`: `[P, N, d]` -> `[d, H, W]`.
pub fn fold(xg: &Tensor, hh: usize, ww: usize, w: usize, h: usize) -> Result<Tensor, ModelError> {
    let (p_total, n, d) = xg.dims3()?;
    if w == 0 || h == 0 || hh % h != 0 || ww % w != 0 {
        return Err(ModelError::Geometry {
            reason: format!("target {hh}x{ww} not divisible by patch {h}x{w}"),
        });
    }
    let rows = hh / h;
    let cols = ww / w;
    if p_total != w * h || n != rows * cols {
        return Err(ModelError::Geometry {
            reason: format!(
                "grid [{p_total}, {n}] inconsistent with {hh}x{ww} at patch {h}x{w}"
            ),
        });
    }
    let mut out = Tensor::zeros(&[d, hh, ww]);
    for p in 0..p_total {
        let dy = p / w;
        let dx = p % w;
        for py in 0..rows {
            for px in 0..cols {
                let ni = py * cols + px;
                for c in 0..d {
                    out.set(&[c, py * h + dy, px * w + dx], xg.at(&[p, ni, c]));
                }
            }
        }
    }
    Ok(out)
}

fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor, ModelError> {
    let (ca, h, w) = a.dims3()?;
    let (cb, hb, wb) = b.dims3()?;
    if h != hb || w != wb {
        return Err(ModelError::Geometry {
            reason: format!("channel concat of {h}x{w} with {hb}x{wb}"),
        });
    }
    let mut data = Vec::with_capacity((ca + cb) * h * w);
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Ok(Tensor::new(vec![ca + cb, h, w], data)?)
}

fn split_channels(x: &Tensor, c_first: usize) -> Result<(Tensor, Tensor), ModelError> {
    let (c, h, w) = x.dims3()?;
    let a = Tensor::new(vec![c_first, h, w], x.data()[..c_first * h * w].to_vec())?;
    let b = Tensor::new(vec![c - c_first, h, w], x.data()[c_first * h * w..].to_vec())?;
    Ok((a, b))
}

/// One slice `[N, d]` of a `[P, N, d]` grid.
fn offset_slice(xu: &Tensor, p: usize) -> Tensor {
    let (_, n, d) = xu.dims3().unwrap();
    Tensor::new(vec![n, d], xu.data()[p * n * d..(p + 1) * n * d].to_vec()).unwrap()
}

fn write_offset(xu: &mut Tensor, p: usize, seq: &Tensor) {
    let (_, n, d) = xu.dims3().unwrap();
    xu.data_mut()[p * n * d..(p + 1) * n * d].copy_from_slice(&seq.data()[..n * d]);
}

/// Conv-plus-transformer block preserving `[C, H, W]`.
pub struct MobileVitBlock {
    pub local: ConvLayer,
    pub proj_in: ConvLayer,
    /// Shared across all P intra-patch offsets.
    pub transformers: Vec<TransformerBlock>,
    pub proj_out: ConvLayer,
    pub fuse: ConvLayer,
    pub patch_w: usize,
    pub patch_h: usize,
}

pub struct MobileVitBlockCache {
    local: ConvCache,
    proj_in: ConvCache,
    /// Transformer caches, indexed `[offset][depth]`.
    seq: Vec<Vec<TransformerBlockCache>>,
    tokens_per_call: usize,
    proj_out: ConvCache,
    fuse: ConvCache,
    h: usize,
    w: usize,
    channels: usize,
}

impl MobileVitBlockCache {
    /// Independent transformer-stack applications during the forward: one
    /// per intra-patch offset.
    pub fn transformer_calls(&self) -> usize {
        self.seq.len()
    }

    pub fn tokens_per_call(&self) -> usize {
        self.tokens_per_call
    }
}

impl MobileVitBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        channels: usize,
        dim: usize,
        heads: usize,
        depth: usize,
        mlp_hidden: usize,
        patch_w: usize,
        patch_h: usize,
        conv_kernel: usize,
        act: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let pad = conv_kernel / 2;
        Self {
            local: ConvLayer::new(channels, channels, conv_kernel, 1, pad, Some(act), rng),
            proj_in: ConvLayer::new(channels, dim, 1, 1, 0, None, rng),
            transformers: (0..depth)
                .map(|_| TransformerBlock::new(dim, heads, mlp_hidden, act, 1e-6, rng))
                .collect(),
            proj_out: ConvLayer::new(dim, channels, 1, 1, 0, None, rng),
            fuse: ConvLayer::new(2 * channels, channels, conv_kernel, 1, pad, Some(act), rng),
            patch_w,
            patch_h,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, MobileVitBlockCache), ModelError> {
        let (channels, h, w) = x.dims3()?;
        let (xl, local) = self.local.forward(x)?;
        let (xl2, proj_in) = self.proj_in.forward(&xl)?;
        let xu = unfold(&xl2, self.patch_w, self.patch_h)?;
        let (p_total, n, _) = xu.dims3()?;
        let mut xg = Tensor::zeros(xu.shape());
        let mut seq_caches = Vec::with_capacity(p_total);
        for p in 0..p_total {
            let mut seq = offset_slice(&xu, p);
            let mut caches = Vec::with_capacity(self.transformers.len());
            for tb in &self.transformers {
                let (next, c) = tb.forward(&seq)?;
                seq = next;
                caches.push(c);
            }
            write_offset(&mut xg, p, &seq);
            seq_caches.push(caches);
        }
        let folded = fold(&xg, h, w, self.patch_w, self.patch_h)?;
        let (xf, proj_out) = self.proj_out.forward(&folded)?;
        let cat = concat_channels(x, &xf)?;
        let (y, fuse) = self.fuse.forward(&cat)?;
        Ok((
            y,
            MobileVitBlockCache {
                local,
                proj_in,
                seq: seq_caches,
                tokens_per_call: n,
                proj_out,
                fuse,
                h,
                w,
                channels,
            },
        ))
    }

    pub fn backward(
        &mut self,
        cache: &MobileVitBlockCache,
        dy: &Tensor,
    ) -> Result<Tensor, ModelError> {
        let dcat = self.fuse.backward(&cache.fuse, dy)?;
        let (dx_skip, dxf) = split_channels(&dcat, cache.channels)?;
        let dfolded = self.proj_out.backward(&cache.proj_out, &dxf)?;
        // fold is a pure permutation, so its gradient is the inverse
        // permutation: unfold.
        let dxg = unfold(&dfolded, self.patch_w, self.patch_h)?;
        let mut dxu = Tensor::zeros(dxg.shape());
        for (p, caches) in cache.seq.iter().enumerate() {
            let mut dseq = offset_slice(&dxg, p);
            for (tb, c) in self.transformers.iter_mut().zip(caches).rev() {
                dseq = tb.backward(c, &dseq)?;
            }
            write_offset(&mut dxu, p, &dseq);
        }
        let dxl2 = fold(&dxu, cache.h, cache.w, self.patch_w, self.patch_h)?;
        let dxl = self.proj_in.backward(&cache.proj_in, &dxl2)?;
        let mut dx = self.local.backward(&cache.local, &dxl)?;
        dx.add_assign(&dx_skip)?;
        Ok(dx)
    }
}

impl Parameterized for MobileVitBlock {
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.local.collect_params(&join_name(prefix, "local"), out);
        self.proj_in.collect_params(&join_name(prefix, "proj_in"), out);
        for (i, tb) in self.transformers.iter_mut().enumerate() {
            tb.collect_params(&join_name(prefix, &format!("tf{i}")), out);
        }
        self.proj_out.collect_params(&join_name(prefix, "proj_out"), out);
        self.fuse.collect_params(&join_name(prefix, "fuse"), out);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TouchNetConfig {
    pub image: usize,
    pub channels: usize,
    pub stem_channels: usize,
    /// Width of the three transformer stages, strictly increasing.
    pub stage_dims: [usize; 3],
    pub activation: ActKind,
    /// Transformer MLP hidden width as a multiple of the stage width.
    pub mlp_ratio: f32,
    pub patch_w: usize,
    pub patch_h: usize,
    pub conv_kernel: usize,
    pub block_heads: usize,
    pub blocks_per_stage: usize,
    pub classes: usize,
}

impl TouchNetConfig {
    /// Full-resolution preset.
    pub fn paper() -> Self {
        Self {
            image: 256,
            channels: 3,
            stem_channels: 16,
            stage_dims: [144, 192, 240],
            activation: ActKind::Silu,
            mlp_ratio: 2.0,
            patch_w: 2,
            patch_h: 2,
            conv_kernel: 3,
            block_heads: 4,
            blocks_per_stage: 2,
            classes: 2,
        }
    }

    /// Small preset that trains in minutes on one CPU core.
    pub fn toy() -> Self {
        Self {
            image: 64,
            stage_dims: [24, 32, 40],
            ..Self::paper()
        }
    }

    /// Feature-map side length entering stage `i` (after the stem and `i+1`
    /// stride-2 downsamples in total).
    pub fn stage_side(&self, i: usize) -> usize {
        self.image >> (2 + i)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.stage_dims[0] < self.stage_dims[1] && self.stage_dims[1] < self.stage_dims[2]) {
            return Err(ModelError::Config {
                reason: format!("stage dims {:?} must be strictly increasing", self.stage_dims),
            });
        }
        if self.classes < 2 {
            return Err(ModelError::Config {
                reason: "need at least 2 classes".into(),
            });
        }
        for i in 0..3 {
            let side = self.stage_side(i);
            if side == 0 || side % self.patch_h != 0 || side % self.patch_w != 0 {
                return Err(ModelError::Config {
                    reason: format!(
                        "stage {i} feature map {side}x{side} not divisible by patch {}x{}",
                        self.patch_h, self.patch_w
                    ),
                });
            }
            if self.stage_dims[i] % self.block_heads != 0 {
                return Err(ModelError::Config {
                    reason: format!(
                        "stage dim {} not divisible by {} heads",
                        self.stage_dims[i], self.block_heads
                    ),
                });
            }
        }
        Ok(())
    }

    fn mlp_hidden(&self, dim: usize) -> usize {
        (dim as f32 * self.mlp_ratio).round() as usize
    }
}

/// Full contact classifier: stem and conv stage, three downsample +
/// patch-transformer stages, global average pool, linear head.
pub struct TouchNet {
    cfg: TouchNetConfig,
    stem: ConvLayer,
    conv0: ConvLayer,
    down: Vec<ConvLayer>,
    stages: Vec<MobileVitBlock>,
    head: Linear,
}

pub struct TouchNetCache {
    stem: ConvCache,
    conv0: ConvCache,
    down: Vec<ConvCache>,
    stages: Vec<MobileVitBlockCache>,
    feat_shape: Vec<usize>,
    head: LinearCache,
}

impl TouchNetCache {
    pub fn stage_caches(&self) -> &[MobileVitBlockCache] {
        &self.stages
    }
}

impl TouchNet {
    pub fn new(cfg: TouchNetConfig, seed: u64) -> Result<Self, ModelError> {
        use rand::SeedableRng;
        cfg.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let act = cfg.activation.op();
        let k = cfg.conv_kernel;
        let pad = k / 2;
        let stem = ConvLayer::new(cfg.channels, cfg.stem_channels, k, 2, pad, Some(act), &mut rng);
        let conv0 = ConvLayer::new(cfg.stem_channels, cfg.stem_channels, k, 1, pad, Some(act), &mut rng);
        let mut down = Vec::new();
        let mut stages = Vec::new();
        let mut c_in = cfg.stem_channels;
        for i in 0..3 {
            let c = cfg.stage_dims[i];
            down.push(ConvLayer::new(c_in, c, k, 2, pad, Some(act), &mut rng));
            stages.push(MobileVitBlock::new(
                c,
                c,
                cfg.block_heads,
                cfg.blocks_per_stage,
                cfg.mlp_hidden(c),
                cfg.patch_w,
                cfg.patch_h,
                k,
                act,
                &mut rng,
            ));
            c_in = c;
        }
        let head = Linear::new(cfg.stage_dims[2], cfg.classes, &mut rng);
        Ok(Self {
            cfg,
            stem,
            conv0,
            down,
            stages,
            head,
        })
    }

    pub fn config(&self) -> &TouchNetConfig {
        &self.cfg
    }

    fn check_image(&self, image: &Tensor) -> Result<(), ModelError> {
        let want = [self.cfg.channels, self.cfg.image, self.cfg.image];
        if image.shape() != want {
            return Err(ModelError::Geometry {
                reason: format!("image shape {:?}, model expects {:?}", image.shape(), want),
            });
        }
        Ok(())
    }

    pub fn forward_logits(&self, image: &Tensor) -> Result<(Tensor, TouchNetCache), ModelError> {
        self.check_image(image)?;
        let (mut feat, stem) = self.stem.forward(image)?;
        let (f2, conv0) = self.conv0.forward(&feat)?;
        feat = f2;
        let mut down_caches = Vec::new();
        let mut stage_caches = Vec::new();
        for i in 0..3 {
            let (f, dc) = self.down[i].forward(&feat)?;
            let (f, sc) = self.stages[i].forward(&f)?;
            feat = f;
            down_caches.push(dc);
            stage_caches.push(sc);
        }
        let (c, h, w) = feat.dims3()?;
        let mut pooled = Tensor::zeros(&[1, c]);
        for ci in 0..c {
            let s: f32 = feat.data()[ci * h * w..(ci + 1) * h * w].iter().sum();
            pooled.data_mut()[ci] = s / (h * w) as f32;
        }
        let (logits2, head) = self.head.forward(&pooled)?;
        let logits = logits2.reshape(&[self.cfg.classes])?;
        Ok((
            logits,
            TouchNetCache {
                stem,
                conv0,
                down: down_caches,
                stages: stage_caches,
                feat_shape: vec![c, h, w],
                head,
            },
        ))
    }

    pub fn backward(&mut self, cache: &TouchNetCache, dlogits: &Tensor) -> Result<(), ModelError> {
        let dl2 = dlogits.reshape(&[1, self.cfg.classes])?;
        let dpooled = self.head.backward(&cache.head, &dl2)?;
        let (c, h, w) = (cache.feat_shape[0], cache.feat_shape[1], cache.feat_shape[2]);
        let mut dfeat = Tensor::zeros(&[c, h, w]);
        let inv = 1.0 / (h * w) as f32;
        for ci in 0..c {
            let g = dpooled.data()[ci] * inv;
            for v in &mut dfeat.data_mut()[ci * h * w..(ci + 1) * h * w] {
                *v = g;
            }
        }
        for i in (0..3).rev() {
            dfeat = self.stages[i].backward(&cache.stages[i], &dfeat)?;
            dfeat = self.down[i].backward(&cache.down[i], &dfeat)?;
        }
        let dfeat = self.conv0.backward(&cache.conv0, &dfeat)?;
        self.stem.backward(&cache.stem, &dfeat)?;
        Ok(())
    }

    /// Class probabilities for one image.
    pub fn predict(&self, image: &Tensor) -> Result<Tensor, ModelError> {
        let (logits, _) = self.forward_logits(image)?;
        Ok(ops::softmax_last(&logits.reshape(&[1, self.cfg.classes])?).reshape(&[self.cfg.classes])?)
    }
}

impl Parameterized for TouchNet {
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.stem.collect_params(&join_name(prefix, "stem"), out);
        self.conv0.collect_params(&join_name(prefix, "conv0"), out);
        for (i, (d, s)) in self.down.iter_mut().zip(self.stages.iter_mut()).enumerate() {
            d.collect_params(&join_name(prefix, &format!("down{i}")), out);
            s.collect_params(&join_name(prefix, &format!("stage{i}")), out);
        }
        self.head.collect_params(&join_name(prefix, "head"), out);
    }
}
