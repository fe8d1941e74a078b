//! Trainable layers over 2-D token matrices: layer norm, linear, MLP,
//! full multi-head self-attention, and the pre-norm transformer block.
//!
//! Each layer's forward returns the output plus a cache; backward consumes
//! the cache, accumulates parameter gradients in place, and returns the
//! input gradient.

use rand::Rng;

use crate::ops::{self, Activation, LayerNormCache};
use crate::param::{join_name, Param, Parameterized};
use crate::{Tensor, TensorError};

/// Standard deviation for embedding-table init (class token, positions).
pub const INIT_STD: f32 = 0.02;

pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    pub eps: f32,
}

impl LayerNorm {
    pub fn new(dim: usize, eps: f32) -> Self {
        Self {
            gamma: Param::new(Tensor::filled(&[dim], 1.0)),
            beta: Param::zeros(&[dim]),
            eps,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, LayerNormCache), TensorError> {
        ops::layer_norm_forward(x, self.gamma.value(), self.beta.value(), self.eps)
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &Tensor) -> Result<Tensor, TensorError> {
        let (dx, dgamma, dbeta) = ops::layer_norm_backward(cache, self.gamma.value(), dy)?;
        self.gamma.accumulate_grad(&dgamma)?;
        self.beta.accumulate_grad(&dbeta)?;
        Ok(dx)
    }
}

impl Parameterized for LayerNorm {
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join_name(prefix, "gamma"), &mut self.gamma));
        out.push((join_name(prefix, "beta"), &mut self.beta));
    }
}

/// `y = x W + b`, weight stored `[in, out]`.
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

pub struct LinearCache {
    x: Tensor,
}

impl Linear {
    /// Uniform `[-1/sqrt(in), 1/sqrt(in)]` weight init, zero bias.
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim as f32).sqrt();
        Self {
            weight: Param::new(Tensor::random_uniform(&[in_dim, out_dim], -bound, bound, rng)),
            bias: Param::zeros(&[out_dim]),
        }
    }

    /// Zero the weight so a residual branch starts silent.
    pub fn zero_weight(&mut self) {
        let shape = self.weight.value().shape().to_vec();
        self.weight = Param::zeros(&shape);
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value().shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value().shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, LinearCache), TensorError> {
        let mut y = ops::matmul(x, self.weight.value())?;
        let out = self.out_dim();
        let rows = y.len() / out;
        for r in 0..rows {
            let row = &mut y.data_mut()[r * out..(r + 1) * out];
            for (v, b) in row.iter_mut().zip(self.bias.value().data()) {
                *v += b;
            }
        }
        Ok((y, LinearCache { x: x.clone() }))
    }

    pub fn backward(&mut self, cache: &LinearCache, dy: &Tensor) -> Result<Tensor, TensorError> {
        let (dx, dw) = ops::matmul_backward(&cache.x, self.weight.value(), dy)?;
        let out = self.out_dim();
        let rows = dy.len() / out;
        let mut db = Tensor::zeros(&[out]);
        for r in 0..rows {
            let row = &dy.data()[r * out..(r + 1) * out];
            for (g, v) in db.data_mut().iter_mut().zip(row) {
                *g += v;
            }
        }
        self.weight.accumulate_grad(&dw)?;
        self.bias.accumulate_grad(&db)?;
        Ok(dx)
    }
}

impl Parameterized for Linear {
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join_name(prefix, "weight"), &mut self.weight));
        out.push((join_name(prefix, "bias"), &mut self.bias));
    }
}

/// Two linear layers with a pointwise nonlinearity between them.
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
    pub act: Activation,
}

pub struct MlpCache {
    c1: LinearCache,
    pre: Tensor,
    c2: LinearCache,
}

impl Mlp {
    pub fn new(dim: usize, hidden: usize, act: Activation, rng: &mut impl Rng) -> Self {
        Self {
            fc1: Linear::new(dim, hidden, rng),
            fc2: Linear::new(hidden, dim, rng),
            act,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, MlpCache), TensorError> {
        let (pre, c1) = self.fc1.forward(x)?;
        let h = self.act.apply(&pre);
        let (y, c2) = self.fc2.forward(&h)?;
        Ok((y, MlpCache { c1, pre, c2 }))
    }

    pub fn backward(&mut self, cache: &MlpCache, dy: &Tensor) -> Result<Tensor, TensorError> {
        let dh = self.fc2.backward(&cache.c2, dy)?;
        let dpre = self.act.backward(&cache.pre, &dh)?;
        self.fc1.backward(&cache.c1, &dpre)
    }
}

impl Parameterized for Mlp {
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.fc1.collect_params(&join_name(prefix, "fc1"), out);
        self.fc2.collect_params(&join_name(prefix, "fc2"), out);
    }
}

/// Copy columns `[h*dh, (h+1)*dh)` of a `[n, d]` matrix into `[n, dh]`.
fn head_slice(x: &Tensor, h: usize, dh: usize) -> Tensor {
    let (n, d) = x.dims2().unwrap();
    let mut out = Tensor::zeros(&[n, dh]);
    for r in 0..n {
        let src = &x.data()[r * d + h * dh..r * d + (h + 1) * dh];
        out.data_mut()[r * dh..(r + 1) * dh].copy_from_slice(src);
    }
    out
}

/// Add `part [n, dh]` into columns `[h*dh, (h+1)*dh)` of `acc [n, d]`.
fn head_add(acc: &mut Tensor, part: &Tensor, h: usize, dh: usize) {
    let (n, d) = acc.dims2().unwrap();
    for r in 0..n {
        let dst = &mut acc.data_mut()[r * d + h * dh..r * d + (h + 1) * dh];
        let src = &part.data()[r * dh..(r + 1) * dh];
        for (a, b) in dst.iter_mut().zip(src) {
            *a += b;
        }
    }
    let _ = n;
}

/// Full multi-head self-attention over a `[n, dim]` token matrix: every
/// query attends to every token.
pub struct Mha {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

pub struct MhaCache {
    cq: LinearCache,
    ck: LinearCache,
    cv: LinearCache,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Softmax output per head, each `[n, n]`.
    attn: Vec<Tensor>,
    co: LinearCache,
}

impl Mha {
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

    pub fn dim(&self) -> usize {
        self.wq.in_dim()
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, MhaCache), TensorError> {
        let (n, d) = x.dims2()?;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let (q, cq) = self.wq.forward(x)?;
        let (k, ck) = self.wk.forward(x)?;
        let (v, cv) = self.wv.forward(x)?;
        let mut concat = Tensor::zeros(&[n, d]);
        let mut attn_all = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = head_slice(&q, h, dh);
            let kh = head_slice(&k, h, dh);
            let vh = head_slice(&v, h, dh);
            let scores = ops::matmul(&qh, &kh.transpose2()?)?.scale(scale);
            let attn = ops::softmax_last(&scores);
            let out_h = ops::matmul(&attn, &vh)?;
            head_add(&mut concat, &out_h, h, dh);
            attn_all.push(attn);
        }
        let (y, co) = self.wo.forward(&concat)?;
        Ok((
            y,
            MhaCache {
                cq,
                ck,
                cv,
                q,
                k,
                v,
                attn: attn_all,
                co,
            },
        ))
    }

    pub fn backward(&mut self, cache: &MhaCache, dy: &Tensor) -> Result<Tensor, TensorError> {
        let (n, d) = dy.dims2()?;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let dconcat = self.wo.backward(&cache.co, dy)?;
        let mut dq = Tensor::zeros(&[n, d]);
        let mut dk = Tensor::zeros(&[n, d]);
        let mut dv = Tensor::zeros(&[n, d]);
        for h in 0..self.heads {
            let dout_h = head_slice(&dconcat, h, dh);
            let vh = head_slice(&cache.v, h, dh);
            let qh = head_slice(&cache.q, h, dh);
            let kh = head_slice(&cache.k, h, dh);
            let attn = &cache.attn[h];
            let dattn = ops::matmul(&dout_h, &vh.transpose2()?)?;
            let dvh = ops::matmul(&attn.transpose2()?, &dout_h)?;
            let dscores = ops::softmax_last_backward(attn, &dattn)?.scale(scale);
            let dqh = ops::matmul(&dscores, &kh)?;
            let dkh = ops::matmul(&dscores.transpose2()?, &qh)?;
            head_add(&mut dq, &dqh, h, dh);
            head_add(&mut dk, &dkh, h, dh);
            head_add(&mut dv, &dvh, h, dh);
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

impl Parameterized for Mha {
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.wq.collect_params(&join_name(prefix, "wq"), out);
        self.wk.collect_params(&join_name(prefix, "wk"), out);
        self.wv.collect_params(&join_name(prefix, "wv"), out);
        self.wo.collect_params(&join_name(prefix, "wo"), out);
    }
}

/// Pre-norm transformer block: `x + attn(ln1(x))`, then `+ mlp(ln2(..))`.
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: Mha,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

pub struct TransformerBlockCache {
    ln1: LayerNormCache,
    attn: MhaCache,
    ln2: LayerNormCache,
    mlp: MlpCache,
}

impl TransformerBlock {
    /// Output projections start at zero, so a fresh block maps x to x and the
    /// residual branches fade in during training.
    pub fn new(
        dim: usize,
        heads: usize,
        mlp_hidden: usize,
        act: Activation,
        ln_eps: f32,
        rng: &mut impl Rng,
    ) -> Self {
        let mut attn = Mha::new(dim, heads, rng);
        attn.wo.zero_weight();
        let mut mlp = Mlp::new(dim, mlp_hidden, act, rng);
        mlp.fc2.zero_weight();
        Self {
            ln1: LayerNorm::new(dim, ln_eps),
            attn,
            ln2: LayerNorm::new(dim, ln_eps),
            mlp,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, TransformerBlockCache), TensorError> {
        let (n1, ln1) = self.ln1.forward(x)?;
        let (a, attn) = self.attn.forward(&n1)?;
        let x1 = x.add(&a)?;
        let (n2, ln2) = self.ln2.forward(&x1)?;
        let (m, mlp) = self.mlp.forward(&n2)?;
        let y = x1.add(&m)?;
        Ok((y, TransformerBlockCache { ln1, attn, ln2, mlp }))
    }

    pub fn backward(
        &mut self,
        cache: &TransformerBlockCache,
        dy: &Tensor,
    ) -> Result<Tensor, TensorError> {
        let dn2 = self.mlp.backward(&cache.mlp, dy)?;
        let mut dx1 = self.ln2.backward(&cache.ln2, &dn2)?;
        dx1.add_assign(dy)?;
        let dn1 = self.attn.backward(&cache.attn, &dx1)?;
        let mut dx = self.ln1.backward(&cache.ln1, &dn1)?;
        dx.add_assign(&dx1)?;
        Ok(dx)
    }
}

impl Parameterized for TransformerBlock {
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.ln1.collect_params(&join_name(prefix, "ln1"), out);
        self.attn.collect_params(&join_name(prefix, "attn"), out);
        self.ln2.collect_params(&join_name(prefix, "ln2"), out);
        self.mlp.collect_params(&join_name(prefix, "mlp"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::{compare_fd, dot64, GRAD_REL_TOL};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::random_uniform(shape, -1.0, 1.0, &mut rng)
    }

    #[test]
    fn linear_adds_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut l = Linear::new(3, 2, &mut rng);
        l.bias.value_mut().data_mut().copy_from_slice(&[10.0, 20.0]);
        let (y, _) = l.forward(&Tensor::zeros(&[2, 3])).unwrap();
        assert_eq!(y.data(), &[10.0, 20.0, 10.0, 20.0]);
    }

    #[test]
    fn linear_input_grad_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut l = Linear::new(4, 3, &mut rng);
        let x = sample(&[5, 4], 2);
        let (y, cache) = l.forward(&x).unwrap();
        let v = sample(y.shape(), 3);
        let analytic = l.backward(&cache, &v).unwrap();
        let report = compare_fd(|p| dot64(&l.forward(p).unwrap().0, &v), &x, &analytic);
        assert!(report.max_rel_error <= GRAD_REL_TOL, "{}", report.max_rel_error);
    }

    #[test]
    fn linear_weight_and_bias_grads_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut l = Linear::new(3, 2, &mut rng);
        let x = sample(&[4, 3], 5);
        let (y, cache) = l.forward(&x).unwrap();
        let v = sample(y.shape(), 6);
        l.backward(&cache, &v).unwrap();
        let dw = l.weight.grad().unwrap().clone();
        let db = l.bias.grad().unwrap().clone();
        let w0 = l.weight.value().clone();
        let report = compare_fd(
            |w| {
                l.weight.set_value(w.clone()).unwrap();
                dot64(&l.forward(&x).unwrap().0, &v)
            },
            &w0,
            &dw,
        );
        l.weight.set_value(w0).unwrap();
        assert!(report.max_rel_error <= GRAD_REL_TOL, "{}", report.max_rel_error);
        let b0 = l.bias.value().clone();
        let report = compare_fd(
            |b| {
                l.bias.set_value(b.clone()).unwrap();
                dot64(&l.forward(&x).unwrap().0, &v)
            },
            &b0,
            &db,
        );
        assert!(report.max_rel_error <= GRAD_REL_TOL, "{}", report.max_rel_error);
    }

    #[test]
    fn mha_attention_rows_are_convex_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = Mha::new(8, 2, &mut rng);
        let x = sample(&[5, 8], 8);
        let (_, cache) = m.forward(&x).unwrap();
        assert_eq!(cache.attn.len(), 2);
        for attn in &cache.attn {
            assert_eq!(attn.shape(), &[5, 5]);
            for r in 0..5 {
                let s: f32 = attn.row(r).iter().sum();
                assert!((s - 1.0).abs() < 1e-5);
                assert!(attn.row(r).iter().all(|&w| w >= 0.0));
            }
        }
    }

    #[test]
    fn mha_input_grad_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut m = Mha::new(6, 3, &mut rng);
        let x = sample(&[4, 6], 10);
        let (y, cache) = m.forward(&x).unwrap();
        let v = sample(y.shape(), 11);
        let analytic = m.backward(&cache, &v).unwrap();
        let report = compare_fd(|p| dot64(&m.forward(p).unwrap().0, &v), &x, &analytic);
        assert!(report.max_rel_error <= GRAD_REL_TOL, "{}", report.max_rel_error);
    }

    #[test]
    fn fresh_transformer_block_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let b = TransformerBlock::new(6, 2, 12, Activation::Gelu, 1e-6, &mut rng);
        let x = sample(&[4, 6], 31);
        let (y, _) = b.forward(&x).unwrap();
        assert_eq!(y.max_abs_diff(&x).unwrap(), 0.0);
    }

    #[test]
    fn transformer_block_grad_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut b = TransformerBlock::new(6, 2, 12, Activation::Gelu, 1e-6, &mut rng);
        // Fill in the zeroed output projections so the check is nontrivial.
        b.attn.wo = Linear::new(6, 6, &mut rng);
        b.mlp.fc2 = Linear::new(12, 6, &mut rng);
        let x = sample(&[4, 6], 13);
        let (y, cache) = b.forward(&x).unwrap();
        let v = sample(y.shape(), 14);
        let analytic = b.backward(&cache, &v).unwrap();
        let report = compare_fd(|p| dot64(&b.forward(p).unwrap().0, &v), &x, &analytic);
        assert!(report.max_rel_error <= GRAD_REL_TOL, "{}", report.max_rel_error);
    }

    #[test]
    fn param_names_are_stable_and_unique() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut b = TransformerBlock::new(4, 2, 8, Activation::Gelu, 1e-6, &mut rng);
        let names: Vec<String> = b.named_params().iter().map(|(n, _)| n.clone()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len(), "duplicate parameter names");
        assert!(names.contains(&"attn.wq.weight".to_string()));
        assert!(names.contains(&"mlp.fc2.bias".to_string()));
    }
}
