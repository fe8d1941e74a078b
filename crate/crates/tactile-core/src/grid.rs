//! Token grid bookkeeping and patch embedding for frame clips.
//!
//! A clip of F frames, each cut into N square patches, becomes a
//! `[1 + N*F, dim]` token matrix. Token 0 is the learned classification
//! token; patch p of frame t lands at row `1 + t*N + p`.

use rand::Rng;

use crate::layers::{Linear, LinearCache, INIT_STD};
use crate::param::{join_name, Param, Parameterized};
use crate::{Tensor, TensorError};

/// Shape of the token grid: N patches per frame, F frames, one class token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridShape {
    pub n: usize,
    pub f: usize,
}

impl GridShape {
    pub fn token_count(&self) -> usize {
        1 + self.n * self.f
    }

    /// Row of patch `p` (0-based, within frame) at frame `t` (0-based).
    pub fn index(&self, p: usize, t: usize) -> usize {
        debug_assert!(p < self.n && t < self.f);
        1 + t * self.n + p
    }
}

/// Cuts frames into patches, projects them to the model width, and adds the
/// class token plus learned per-patch and per-frame position terms.
pub struct PatchEmbed {
    pub proj: Linear,
    pub cls: Param,
    pub pos_spatial: Param,
    pub pos_temporal: Param,
    patch: usize,
    image: usize,
    channels: usize,
    frames: usize,
}

pub struct PatchEmbedCache {
    proj: LinearCache,
}

impl PatchEmbed {
    pub fn new(
        image: usize,
        patch: usize,
        channels: usize,
        frames: usize,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(patch > 0 && image % patch == 0, "image {image} not divisible by patch {patch}");
        let per_side = image / patch;
        let n = per_side * per_side;
        let patch_dim = channels * patch * patch;
        Self {
            proj: Linear::new(patch_dim, dim, rng),
            cls: Param::new(Tensor::random_normal(&[dim], INIT_STD, rng)),
            pos_spatial: Param::new(Tensor::random_normal(&[n, dim], INIT_STD, rng)),
            pos_temporal: Param::new(Tensor::random_normal(&[frames, dim], INIT_STD, rng)),
            patch,
            image,
            channels,
            frames,
        }
    }

    pub fn grid(&self) -> GridShape {
        let per_side = self.image / self.patch;
        GridShape {
            n: per_side * per_side,
            f: self.frames,
        }
    }

    pub fn dim(&self) -> usize {
        self.proj.out_dim()
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch * self.patch
    }

    fn check_frames(&self, frames: &Tensor) -> Result<(), TensorError> {
        let expected = [self.frames, self.channels, self.image, self.image];
        if frames.shape() != expected {
            return Err(TensorError::ShapeMismatch {
                op: "patch_embed",
                lhs: frames.shape().to_vec(),
                rhs: expected.to_vec(),
            });
        }
        Ok(())
    }

    /// Flatten every patch of every frame into a `[F*N, patch_dim]` matrix.
    /// Row order is frame-major; a patch row is channel-major, then pixel
    /// row, then pixel column.
    fn patch_matrix(&self, frames: &Tensor) -> Tensor {
        let per_side = self.image / self.patch;
        let n = per_side * per_side;
        let pd = self.patch_dim();
        let mut m = Tensor::zeros(&[self.frames * n, pd]);
        for t in 0..self.frames {
            for py in 0..per_side {
                for px in 0..per_side {
                    let p = py * per_side + px;
                    let row = t * n + p;
                    let mut col = 0;
                    for c in 0..self.channels {
                        for dy in 0..self.patch {
                            for dx in 0..self.patch {
                                let v = frames.at(&[t, c, py * self.patch + dy, px * self.patch + dx]);
                                m.data_mut()[row * pd + col] = v;
                                col += 1;
                            }
                        }
                    }
                }
            }
        }
        m
    }

    /// `frames [F, C, H, H]` -> token matrix `[1 + N*F, dim]`.
    pub fn forward(&self, frames: &Tensor) -> Result<(Tensor, PatchEmbedCache), TensorError> {
        self.check_frames(frames)?;
        let grid = self.grid();
        let dim = self.dim();
        let patches = self.patch_matrix(frames);
        let (projected, proj_cache) = self.proj.forward(&patches)?;
        let mut tokens = Tensor::zeros(&[grid.token_count(), dim]);
        tokens.row_mut(0).copy_from_slice(self.cls.value().data());
        for t in 0..grid.f {
            for p in 0..grid.n {
                let src = projected.row(t * grid.n + p);
                let ps = self.pos_spatial.value().row(p);
                let pt = self.pos_temporal.value().row(t);
                let dst = tokens.row_mut(grid.index(p, t));
                for j in 0..dim {
                    dst[j] = src[j] + ps[j] + pt[j];
                }
            }
        }
        Ok((tokens, PatchEmbedCache { proj: proj_cache }))
    }

    /// Accumulates projection, class token, and position gradients; returns
    /// the gradient with respect to the input frames.
    pub fn backward(
        &mut self,
        cache: &PatchEmbedCache,
        dtokens: &Tensor,
    ) -> Result<Tensor, TensorError> {
        let grid = self.grid();
        let dim = self.dim();
        self.cls
            .accumulate_grad(&Tensor::new(vec![dim], dtokens.row(0).to_vec())?)?;
        let mut dpos_s = Tensor::zeros(&[grid.n, dim]);
        let mut dpos_t = Tensor::zeros(&[grid.f, dim]);
        let mut dprojected = Tensor::zeros(&[grid.f * grid.n, dim]);
        for t in 0..grid.f {
            for p in 0..grid.n {
                let g = dtokens.row(grid.index(p, t));
                dprojected.row_mut(t * grid.n + p).copy_from_slice(g);
                for j in 0..dim {
                    dpos_s.data_mut()[p * dim + j] += g[j];
                    dpos_t.data_mut()[t * dim + j] += g[j];
                }
            }
        }
        self.pos_spatial.accumulate_grad(&dpos_s)?;
        self.pos_temporal.accumulate_grad(&dpos_t)?;
        let dpatches = self.proj.backward(&cache.proj, &dprojected)?;
        // Scatter patch-matrix gradients back to pixel positions.
        let per_side = self.image / self.patch;
        let pd = self.patch_dim();
        let mut dframes = Tensor::zeros(&[self.frames, self.channels, self.image, self.image]);
        for t in 0..self.frames {
            for py in 0..per_side {
                for px in 0..per_side {
                    let row = t * grid.n + py * per_side + px;
                    let mut col = 0;
                    for c in 0..self.channels {
                        for dy in 0..self.patch {
                            for dx in 0..self.patch {
                                let idx = dframes.offset(&[
                                    t,
                                    c,
                                    py * self.patch + dy,
                                    px * self.patch + dx,
                                ]);
                                dframes.data_mut()[idx] = dpatches.data()[row * pd + col];
                                col += 1;
                            }
                        }
                    }
                }
            }
        }
        Ok(dframes)
    }
}

impl Parameterized for PatchEmbed {
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.proj.collect_params(&join_name(prefix, "proj"), out);
        out.push((join_name(prefix, "cls"), &mut self.cls));
        out.push((join_name(prefix, "pos_spatial"), &mut self.pos_spatial));
        out.push((join_name(prefix, "pos_temporal"), &mut self.pos_temporal));
    }
}
