//! Dense rank-N f32 tensor, row-major.
//!
//! All compute in this workspace flows through this type. Operations are
//! deterministic: fixed accumulation order, no threading, no FMA contraction,
//! so identical input bits always produce identical output bits.

use crate::TensorError;

/// Dense single-precision array with row-major layout.
///
/// Invariants (enforced by every constructor):
/// - every extent is at least 1,
/// - `shape.iter().product() == data.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

fn element_count(shape: &[usize]) -> Result<usize, TensorError> {
    if shape.is_empty() {
        return Err(TensorError::InvalidShape {
            reason: "rank 0 is not supported".into(),
        });
    }
    let mut n: usize = 1;
    for &d in shape {
        if d == 0 {
            return Err(TensorError::InvalidShape {
                reason: format!("zero extent in shape {shape:?}"),
            });
        }
        n = n.checked_mul(d).ok_or_else(|| TensorError::InvalidShape {
            reason: format!("shape {shape:?} overflows element count"),
        })?;
    }
    Ok(n)
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        let expected = element_count(&shape)?;
        if expected != data.len() {
            return Err(TensorError::InvalidShape {
                reason: format!(
                    "shape {shape:?} implies {expected} elements, data has {}",
                    data.len()
                ),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = element_count(shape).expect("valid shape");
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        let n = element_count(shape).expect("valid shape");
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// 1-D tensor from a slice.
    pub fn from_slice(values: &[f32]) -> Self {
        Self {
            shape: vec![values.len().max(1)],
            data: if values.is_empty() {
                vec![0.0]
            } else {
                values.to_vec()
            },
        }
    }

    /// Rank-2 tensor from rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self, TensorError> {
        let r = rows.len();
        let c = rows.first().map(|x| x.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(TensorError::InvalidShape {
                    reason: "ragged rows".into(),
                });
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![r, c], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Total number of elements.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false // extents are >= 1 by construction
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Flat offset of a multi-index (row-major).
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (i, &ix) in index.iter().enumerate() {
            debug_assert!(ix < self.shape[i]);
            off = off * self.shape[i] + ix;
        }
        off
    }

    pub fn at(&self, index: &[usize]) -> f32 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f32) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    /// Same data, new shape; element count must match. Data bits are untouched.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self, TensorError> {
        let expected = element_count(shape)?;
        if expected != self.data.len() {
            return Err(TensorError::InvalidShape {
                reason: format!(
                    "cannot reshape {:?} ({} elements) to {shape:?} ({expected} elements)",
                    self.shape,
                    self.data.len()
                ),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Rank-2 transpose.
    pub fn transpose2(&self) -> Result<Self, TensorError> {
        let (r, c) = self.dims2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new(vec![c, r], out)
    }

    pub fn dims2(&self) -> Result<(usize, usize), TensorError> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            other => Err(TensorError::InvalidShape {
                reason: format!("expected rank 2, got shape {other:?}"),
            }),
        }
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize), TensorError> {
        match self.shape.as_slice() {
            &[a, b, c] => Ok((a, b, c)),
            other => Err(TensorError::InvalidShape {
                reason: format!("expected rank 3, got shape {other:?}"),
            }),
        }
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize), TensorError> {
        match self.shape.as_slice() {
            &[a, b, c, d] => Ok((a, b, c, d)),
            other => Err(TensorError::InvalidShape {
                reason: format!("expected rank 4, got shape {other:?}"),
            }),
        }
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.shape[self.rank() - 1];
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        let c = self.shape[self.rank() - 1];
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self, TensorError> {
        self.check_same_shape(other, "add")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self, TensorError> {
        self.check_same_shape(other, "sub")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn mul(&self, other: &Self) -> Result<Self, TensorError> {
        self.check_same_shape(other, "mul")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn scale(&self, s: f32) -> Self {
        self.map(|x| x * s)
    }

    /// In-place `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: f32) -> Result<(), TensorError> {
        self.check_same_shape(other, "add_scaled")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<(), TensorError> {
        self.add_scaled(other, 1.0)
    }

    pub fn fill(&mut self, value: f32) {
        self.data.fill(value);
    }

    pub fn sum(&self) -> f32 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f32 {
        self.sum() / self.data.len() as f32
    }

    /// Index of the largest element (first one on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f32, TensorError> {
        self.check_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max))
    }

    /// Fill with N(0, std^2) samples from the given RNG.
    pub fn randomize_normal(&mut self, std: f32, rng: &mut impl rand::Rng) {
        // Box-Muller; avoids a rand_distr dependency and is reproducible
        // for a fixed RNG stream.
        let mut i = 0;
        while i < self.data.len() {
            let u1: f32 = rng.gen_range(f32::EPSILON..1.0);
            let u2: f32 = rng.gen_range(0.0..1.0);
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = 2.0 * std::f32::consts::PI * u2;
            self.data[i] = r * theta.cos() * std;
            i += 1;
            if i < self.data.len() {
                self.data[i] = r * theta.sin() * std;
                i += 1;
            }
        }
    }

    pub fn random_normal(shape: &[usize], std: f32, rng: &mut impl rand::Rng) -> Self {
        let mut t = Self::zeros(shape);
        t.randomize_normal(std, rng);
        t
    }

    pub fn random_uniform(shape: &[usize], lo: f32, hi: f32, rng: &mut impl rand::Rng) -> Self {
        let n = element_count(shape).expect("valid shape");
        let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }
}
