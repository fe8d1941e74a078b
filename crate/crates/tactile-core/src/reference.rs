//! Plainly written dense attention used as an oracle in tests.
//!
//! This path shares no code with the production attention: it materializes a
//! full boolean mask per query, scores every key, and drops disallowed keys
//! by setting their logits to negative infinity before the softmax. The
//! production code instead gathers only the allowed keys. Agreement between
//! the two is what the equivalence tests check.

use crate::grid::GridShape;
use crate::Tensor;

/// `allowed[q][k]` says whether query row q may attend to key row k.
pub type Mask = Vec<Vec<bool>>;

/// Mask for the pass that compares a patch with the same patch in every
/// frame. Row 0 (the class token) sees everything; every token is visible
/// to the class token's row as usual because masks are per query.
pub fn temporal_mask(grid: GridShape) -> Mask {
    let tokens = grid.token_count();
    let mut mask = vec![vec![false; tokens]; tokens];
    for k in 0..tokens {
        mask[0][k] = true;
    }
    for q in 1..tokens {
        let p_q = (q - 1) % grid.n;
        mask[q][0] = true;
        for k in 1..tokens {
            if (k - 1) % grid.n == p_q {
                mask[q][k] = true;
            }
        }
    }
    mask
}

/// Mask for the pass that compares a patch with every patch of its own
/// frame, plus the class token.
pub fn spatial_mask(grid: GridShape) -> Mask {
    let tokens = grid.token_count();
    let mut mask = vec![vec![false; tokens]; tokens];
    for k in 0..tokens {
        mask[0][k] = true;
    }
    for q in 1..tokens {
        let t_q = (q - 1) / grid.n;
        mask[q][0] = true;
        for k in 1..tokens {
            if (k - 1) / grid.n == t_q {
                mask[q][k] = true;
            }
        }
    }
    mask
}

/// Weights for one attention op, as raw tensors so the oracle does not share
/// layer code with the production path. Projection weights are `[d, d]`,
/// biases `[d]`.
pub struct AttnWeights {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub heads: usize,
}

fn project(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (n, d_in) = x.dims2().unwrap();
    let d_out = w.shape()[1];
    let mut y = Tensor::zeros(&[n, d_out]);
    for r in 0..n {
        for j in 0..d_out {
            let mut acc = b.data()[j];
            for i in 0..d_in {
                acc += x.data()[r * d_in + i] * w.data()[i * d_out + j];
            }
            y.data_mut()[r * d_out + j] = acc;
        }
    }
    y
}

/// Dense masked multi-head self-attention over `x [tokens, d]`.
pub fn masked_attention(x: &Tensor, w: &AttnWeights, mask: &Mask) -> Tensor {
    let (tokens, d) = x.dims2().unwrap();
    assert_eq!(mask.len(), tokens);
    let dh = d / w.heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let q = project(x, &w.wq, &w.bq);
    let k = project(x, &w.wk, &w.bk);
    let v = project(x, &w.wv, &w.bv);
    let mut concat = Tensor::zeros(&[tokens, d]);
    for h in 0..w.heads {
        let col0 = h * dh;
        for qi in 0..tokens {
            // Dense logits with -inf on masked keys.
            let mut logits = vec![f32::NEG_INFINITY; tokens];
            for ki in 0..tokens {
                if !mask[qi][ki] {
                    continue;
                }
                let mut s = 0.0f32;
                for j in 0..dh {
                    s += q.data()[qi * d + col0 + j] * k.data()[ki * d + col0 + j];
                }
                logits[ki] = s * scale;
            }
            let max = logits.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
            let mut weights = vec![0.0f32; tokens];
            let mut denom = 0.0f32;
            for ki in 0..tokens {
                let e = (logits[ki] - max).exp();
                weights[ki] = e;
                denom += e;
            }
            for ki in 0..tokens {
                let wgt = weights[ki] / denom;
                if wgt == 0.0 {
                    continue;
                }
                for j in 0..dh {
                    concat.data_mut()[qi * d + col0 + j] += wgt * v.data()[ki * d + col0 + j];
                }
            }
        }
    }
    project(&concat, &w.wo, &w.bo)
}
