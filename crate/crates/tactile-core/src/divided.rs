//! Attention over a token grid split into two restricted passes.
//!
//! A joint space-time attention would score every query against all N*F + 1
//! tokens twice over. Here each block runs two cheaper passes instead:
//!
//! - a temporal pass where patch (p, t) attends to the class token plus the
//!   same patch position p in every frame (F + 1 keys), and
//! - a spatial pass where patch (p, t) attends to the class token plus every
//!   patch of its own frame t (N + 1 keys).
//!
//! So each patch token is compared against N + F + 2 keys per block. The
//! class token attends to every token in both passes to keep a global
//! summary. The kernel gathers exactly the allowed keys; nothing is masked
//! after the fact, and the per-query key tally is recorded at runtime so
//! tests can assert the count.

use rand::Rng;

use crate::grid::GridShape;
use crate::layers::{LayerNorm, Linear, LinearCache, Mlp, MlpCache};
use crate::ops::{self, Activation, LayerNormCache};
use crate::param::{join_name, Param, Parameterized};
use crate::{Tensor, TensorError};

/// Keys scored per patch token across both passes of one block.
pub fn comparisons_per_patch(n: usize, f: usize) -> usize {
    (f + 1) + (n + 1)
}

/// Query/key index sets for one restricted attention pass. Every token
/// appears in exactly one query list; all queries of a group share one key
/// list.
pub struct AttentionGroups {
    groups: Vec<(Vec<usize>, Vec<usize>)>,
    tokens: usize,
}

impl AttentionGroups {
    /// Patch (p, t) sees the class token plus patch p of every frame.
    pub fn temporal(grid: GridShape) -> Self {
        let tokens = grid.token_count();
        let mut groups = vec![(vec![0], (0..tokens).collect::<Vec<_>>())];
        for p in 0..grid.n {
            let queries: Vec<usize> = (0..grid.f).map(|t| grid.index(p, t)).collect();
            let mut keys = vec![0];
            keys.extend((0..grid.f).map(|t| grid.index(p, t)));
            groups.push((queries, keys));
        }
        Self { groups, tokens }
    }

    /// Patch (p, t) sees the class token plus every patch of frame t.
    pub fn spatial(grid: GridShape) -> Self {
        let tokens = grid.token_count();
        let mut groups = vec![(vec![0], (0..tokens).collect::<Vec<_>>())];
        for t in 0..grid.f {
            let queries: Vec<usize> = (0..grid.n).map(|p| grid.index(p, t)).collect();
            let mut keys = vec![0];
            keys.extend((0..grid.n).map(|p| grid.index(p, t)));
            groups.push((queries, keys));
        }
        Self { groups, tokens }
    }

    pub fn groups(&self) -> &[(Vec<usize>, Vec<usize>)] {
        &self.groups
    }

    pub fn token_count(&self) -> usize {
        self.tokens
    }

    /// Number of keys each query row would score in this pass.
    pub fn key_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.tokens];
        for (qs, ks) in &self.groups {
            for &q in qs {
                counts[q] += ks.len();
            }
        }
        counts
    }

    /// True when every token appears exactly once as a query.
    pub fn covers_all_queries(&self) -> bool {
        let mut seen = vec![0usize; self.tokens];
        for (qs, _) in &self.groups {
            for &q in qs {
                seen[q] += 1;
            }
        }
        seen.iter().all(|&c| c == 1)
    }
}

/// Copy the head-h columns of the listed rows into a compact matrix.
fn gather(x: &Tensor, rows: &[usize], h: usize, dh: usize) -> Tensor {
    let d = x.shape()[1];
    let mut out = Tensor::zeros(&[rows.len(), dh]);
    for (i, &r) in rows.iter().enumerate() {
        let src = &x.data()[r * d + h * dh..r * d + (h + 1) * dh];
        out.data_mut()[i * dh..(i + 1) * dh].copy_from_slice(src);
    }
    out
}

/// Add the compact matrix back into the head-h columns of the listed rows.
fn scatter_add(acc: &mut Tensor, part: &Tensor, rows: &[usize], h: usize, dh: usize) {
    let d = acc.shape()[1];
    for (i, &r) in rows.iter().enumerate() {
        let dst = &mut acc.data_mut()[r * d + h * dh..r * d + (h + 1) * dh];
        let src = &part.data()[i * dh..(i + 1) * dh];
        for (a, b) in dst.iter_mut().zip(src) {
            *a += b;
        }
    }
}

/// Multi-head attention where each query scores only the keys its group
/// allows. Weight layout matches the full-attention layer: separate q, k,
/// v, and output projections with bias.
pub struct DividedMha {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

pub struct DividedMhaCache {
    cq: LinearCache,
    ck: LinearCache,
    cv: LinearCache,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Softmax outputs, indexed `[group][head]`.
    attn: Vec<Vec<Tensor>>,
    co: LinearCache,
    /// Keys actually scored per query row during this forward.
    pub key_tally: Vec<usize>,
}

impl DividedMha {
    pub fn new(dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        assert!(heads > 0 && dim % heads == 0, "dim {dim} not divisible by heads {heads}");
        Self {
            wq: Linear::new(dim, dim, rng),
            wk: Linear::new(dim, dim, rng),
            wv: Linear::new(dim, dim, rng),
            wo: Linear::new(dim, dim, rng),
            heads,
        }
    }

    pub fn forward(
        &self,
        x: &Tensor,
        groups: &AttentionGroups,
    ) -> Result<(Tensor, DividedMhaCache), TensorError> {
        let (tokens, d) = x.dims2()?;
        if tokens != groups.token_count() {
            return Err(TensorError::ShapeMismatch {
                op: "divided_attention",
                lhs: vec![tokens, d],
                rhs: vec![groups.token_count()],
            });
        }
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let (q, cq) = self.wq.forward(x)?;
        let (k, ck) = self.wk.forward(x)?;
        let (v, cv) = self.wv.forward(x)?;
        let mut concat = Tensor::zeros(&[tokens, d]);
        let mut attn_all = Vec::with_capacity(groups.groups().len());
        let mut key_tally = vec![0usize; tokens];
        for (qs, ks) in groups.groups() {
            for &qi in qs {
                key_tally[qi] += ks.len();
            }
            let mut per_head = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let qg = gather(&q, qs, h, dh);
                let kg = gather(&k, ks, h, dh);
                let vg = gather(&v, ks, h, dh);
                let scores = ops::matmul(&qg, &kg.transpose2()?)?.scale(scale);
                let attn = ops::softmax_last(&scores);
                let outg = ops::matmul(&attn, &vg)?;
                scatter_add(&mut concat, &outg, qs, h, dh);
                per_head.push(attn);
            }
            attn_all.push(per_head);
        }
        let (y, co) = self.wo.forward(&concat)?;
        Ok((
            y,
            DividedMhaCache {
                cq,
                ck,
                cv,
                q,
                k,
                v,
                attn: attn_all,
                co,
                key_tally,
            },
        ))
    }

    pub fn backward(
        &mut self,
        cache: &DividedMhaCache,
        groups: &AttentionGroups,
        dy: &Tensor,
    ) -> Result<Tensor, TensorError> {
        let (tokens, d) = dy.dims2()?;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let dconcat = self.wo.backward(&cache.co, dy)?;
        let mut dq = Tensor::zeros(&[tokens, d]);
        let mut dk = Tensor::zeros(&[tokens, d]);
        let mut dv = Tensor::zeros(&[tokens, d]);
        for (gi, (qs, ks)) in groups.groups().iter().enumerate() {
            for h in 0..self.heads {
                let attn = &cache.attn[gi][h];
                let doutg = gather(&dconcat, qs, h, dh);
                let kg = gather(&cache.k, ks, h, dh);
                let vg = gather(&cache.v, ks, h, dh);
                let qg = gather(&cache.q, qs, h, dh);
                let dattn = ops::matmul(&doutg, &vg.transpose2()?)?;
                let dvg = ops::matmul(&attn.transpose2()?, &doutg)?;
                let dscores = ops::softmax_last_backward(attn, &dattn)?.scale(scale);
                let dqg = ops::matmul(&dscores, &kg)?;
                let dkg = ops::matmul(&dscores.transpose2()?, &qg)?;
                scatter_add(&mut dq, &dqg, qs, h, dh);
                scatter_add(&mut dk, &dkg, ks, h, dh);
                scatter_add(&mut dv, &dvg, ks, h, dh);
            }
        }
        let dx_q = self.wq.backward(&cache.cq, &dq)?;
        let dx_k = self.wk.backward(&cache.ck, &dk)?;
        let dx_v = self.wv.backward(&cache.cv, &dv)?;
        let mut dx = dx_q;
        dx.add_assign(&dx_k)?;
        dx.add_assign(&dx_v)?;
        Ok(dx)
    }
}

impl Parameterized for DividedMha {
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.wq.collect_params(&join_name(prefix, "wq"), out);
        self.wk.collect_params(&join_name(prefix, "wk"), out);
        self.wv.collect_params(&join_name(prefix, "wv"), out);
        self.wo.collect_params(&join_name(prefix, "wo"), out);
    }
}

/// One transformer block over the token grid: temporal attention, spatial
/// attention, then an MLP, each pre-normed with its own residual.
pub struct DividedBlock {
    pub ln_t: LayerNorm,
    pub attn_t: DividedMha,
    pub ln_s: LayerNorm,
    pub attn_s: DividedMha,
    pub ln_m: LayerNorm,
    pub mlp: Mlp,
    grid: GridShape,
    groups_t: AttentionGroups,
    groups_s: AttentionGroups,
}

pub struct DividedBlockCache {
    ln_t: LayerNormCache,
    attn_t: DividedMhaCache,
    ln_s: LayerNormCache,
    attn_s: DividedMhaCache,
    ln_m: LayerNormCache,
    mlp: MlpCache,
}

impl DividedBlockCache {
    /// Keys scored per token row across both passes of this block.
    pub fn comparisons_per_token(&self) -> Vec<usize> {
        self.attn_t
            .key_tally
            .iter()
            .zip(&self.attn_s.key_tally)
            .map(|(a, b)| a + b)
            .collect()
    }
}

impl DividedBlock {
    /// Output projections start at zero, so a fresh block maps x to x and the
    /// residual branches fade in during training.
    pub fn new(
        grid: GridShape,
        dim: usize,
        heads: usize,
        mlp_hidden: usize,
        act: Activation,
        ln_eps: f32,
        rng: &mut impl Rng,
    ) -> Self {
        let mut attn_t = DividedMha::new(dim, heads, rng);
        attn_t.wo.zero_weight();
        let mut attn_s = DividedMha::new(dim, heads, rng);
        attn_s.wo.zero_weight();
        let mut mlp = Mlp::new(dim, mlp_hidden, act, rng);
        mlp.fc2.zero_weight();
        Self {
            ln_t: LayerNorm::new(dim, ln_eps),
            attn_t,
            ln_s: LayerNorm::new(dim, ln_eps),
            attn_s,
            ln_m: LayerNorm::new(dim, ln_eps),
            mlp,
            grid,
            groups_t: AttentionGroups::temporal(grid),
            groups_s: AttentionGroups::spatial(grid),
        }
    }

    pub fn grid(&self) -> GridShape {
        self.grid
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, DividedBlockCache), TensorError> {
        let (nt, ln_t) = self.ln_t.forward(x)?;
        let (at, attn_t) = self.attn_t.forward(&nt, &self.groups_t)?;
        let x1 = x.add(&at)?;
        let (ns, ln_s) = self.ln_s.forward(&x1)?;
        let (as_, attn_s) = self.attn_s.forward(&ns, &self.groups_s)?;
        let x2 = x1.add(&as_)?;
        let (nm, ln_m) = self.ln_m.forward(&x2)?;
        let (m, mlp) = self.mlp.forward(&nm)?;
        let y = x2.add(&m)?;
        Ok((
            y,
            DividedBlockCache {
                ln_t,
                attn_t,
                ln_s,
                attn_s,
                ln_m,
                mlp,
            },
        ))
    }

    pub fn backward(
        &mut self,
        cache: &DividedBlockCache,
        dy: &Tensor,
    ) -> Result<Tensor, TensorError> {
        let dnm = self.mlp.backward(&cache.mlp, dy)?;
        let mut dx2 = self.ln_m.backward(&cache.ln_m, &dnm)?;
        dx2.add_assign(dy)?;
        let dns = self.attn_s.backward(&cache.attn_s, &self.groups_s, &dx2)?;
        let mut dx1 = self.ln_s.backward(&cache.ln_s, &dns)?;
        dx1.add_assign(&dx2)?;
        let dnt = self.attn_t.backward(&cache.attn_t, &self.groups_t, &dx1)?;
        let mut dx = self.ln_t.backward(&cache.ln_t, &dnt)?;
        dx.add_assign(&dx1)?;
        Ok(dx)
    }
}

impl Parameterized for DividedBlock {
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.ln_t.collect_params(&join_name(prefix, "ln_t"), out);
        self.attn_t.collect_params(&join_name(prefix, "attn_t"), out);
        self.ln_s.collect_params(&join_name(prefix, "ln_s"), out);
        self.attn_s.collect_params(&join_name(prefix, "attn_s"), out);
        self.ln_m.collect_params(&join_name(prefix, "ln_m"), out);
        self.mlp.collect_params(&join_name(prefix, "mlp"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::{compare_fd, dot64, GRAD_REL_TOL};
    use crate::reference::{masked_attention, spatial_mask, temporal_mask, AttnWeights};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::random_uniform(shape, -1.0, 1.0, &mut rng)
    }

    fn oracle_weights(m: &DividedMha) -> AttnWeights {
        AttnWeights {
            wq: m.wq.weight.value().clone(),
            bq: m.wq.bias.value().clone(),
            wk: m.wk.weight.value().clone(),
            bk: m.wk.bias.value().clone(),
            wv: m.wv.weight.value().clone(),
            bv: m.wv.bias.value().clone(),
            wo: m.wo.weight.value().clone(),
            bo: m.wo.bias.value().clone(),
            heads: m.heads,
        }
    }

    #[test]
    fn groups_partition_queries() {
        let g = GridShape { n: 6, f: 3 };
        assert!(AttentionGroups::temporal(g).covers_all_queries());
        assert!(AttentionGroups::spatial(g).covers_all_queries());
    }

    #[test]
    fn key_counts_match_claim() {
        let g = GridShape { n: 6, f: 3 };
        let t = AttentionGroups::temporal(g).key_counts();
        let s = AttentionGroups::spatial(g).key_counts();
        assert_eq!(t[0], g.token_count());
        assert_eq!(s[0], g.token_count());
        for q in 1..g.token_count() {
            assert_eq!(t[q], g.f + 1);
            assert_eq!(s[q], g.n + 1);
            assert_eq!(t[q] + s[q], comparisons_per_patch(g.n, g.f));
        }
    }

    #[test]
    fn gathered_pass_matches_dense_masked_oracle() {
        let g = GridShape { n: 4, f: 3 };
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let m = DividedMha::new(8, 2, &mut rng);
        let x = sample(&[g.token_count(), 8], 101);
        let w = oracle_weights(&m);

        let (y_t, _) = m.forward(&x, &AttentionGroups::temporal(g)).unwrap();
        let oracle_t = masked_attention(&x, &w, &temporal_mask(g));
        assert!(y_t.max_abs_diff(&oracle_t).unwrap() <= 1e-5);

        let (y_s, _) = m.forward(&x, &AttentionGroups::spatial(g)).unwrap();
        let oracle_s = masked_attention(&x, &w, &spatial_mask(g));
        assert!(y_s.max_abs_diff(&oracle_s).unwrap() <= 1e-5);
    }

    #[test]
    fn runtime_tally_counts_keys() {
        let g = GridShape { n: 4, f: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = DividedBlock::new(g, 8, 2, 16, Activation::Gelu, 1e-6, &mut rng);
        let x = sample(&[g.token_count(), 8], 6);
        let (_, cache) = b.forward(&x).unwrap();
        let comp = cache.comparisons_per_token();
        assert_eq!(comp[0], 2 * g.token_count());
        for q in 1..g.token_count() {
            assert_eq!(comp[q], comparisons_per_patch(g.n, g.f), "q={q}");
        }
    }

    #[test]
    fn fresh_block_is_identity() {
        let g = GridShape { n: 4, f: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let b = DividedBlock::new(g, 8, 2, 16, Activation::Gelu, 1e-6, &mut rng);
        let x = sample(&[g.token_count(), 8], 21);
        let (y, _) = b.forward(&x).unwrap();
        assert_eq!(y.max_abs_diff(&x).unwrap(), 0.0);
    }

    #[test]
    fn block_input_grad_matches_fd() {
        let g = GridShape { n: 4, f: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut b = DividedBlock::new(g, 8, 2, 16, Activation::Gelu, 1e-6, &mut rng);
        // Fill in the zeroed output projections so the check is nontrivial.
        b.attn_t.wo = Linear::new(8, 8, &mut rng);
        b.attn_s.wo = Linear::new(8, 8, &mut rng);
        b.mlp.fc2 = Linear::new(16, 8, &mut rng);
        let x = sample(&[g.token_count(), 8], 8);
        let (y, cache) = b.forward(&x).unwrap();
        let v = sample(y.shape(), 9);
        let analytic = b.backward(&cache, &v).unwrap();
        let report = compare_fd(|p| dot64(&b.forward(p).unwrap().0, &v), &x, &analytic);
        assert!(report.max_rel_error <= GRAD_REL_TOL, "{}", report.max_rel_error);
    }

    #[test]
    fn attention_param_grad_matches_fd() {
        let g = GridShape { n: 3, f: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut m = DividedMha::new(6, 2, &mut rng);
        let groups = AttentionGroups::temporal(g);
        let x = sample(&[g.token_count(), 6], 11);
        let (y, cache) = m.forward(&x, &groups).unwrap();
        let v = sample(y.shape(), 12);
        m.backward(&cache, &groups, &v).unwrap();
        let analytic = m.wk.weight.grad().unwrap().clone();
        let w0 = m.wk.weight.value().clone();
        let report = compare_fd(
            |w| {
                m.wk.weight.set_value(w.clone()).unwrap();
                dot64(&m.forward(&x, &groups).unwrap().0, &v)
            },
            &w0,
            &analytic,
        );
        assert!(report.max_rel_error <= GRAD_REL_TOL, "{}", report.max_rel_error);
    }
}
