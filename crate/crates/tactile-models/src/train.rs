//! Training loop shared by both classifiers: decoupled-weight-decay Adam,
//! cross-entropy on logits, deterministic shuffling, best-validation
//! snapshot kept in memory.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use tactile_core::ops;
use tactile_core::param::{Param, Parameterized};
use tactile_core::Tensor;

use crate::slip::SlipNet;
use crate::touch::TouchNet;
use crate::ModelError;

/// Adam with decoupled weight decay applied to every parameter.
pub struct AdamW {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl AdamW {
    pub fn new(lr: f32, weight_decay: f32) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One update over named parameters; parameters whose gradient was never
    /// touched are skipped.
    pub fn step(&mut self, params: &mut [(String, &mut Param)]) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = (1.0 - (self.beta1 as f64).powf(t)) as f32;
        let bc2 = (1.0 - (self.beta2 as f64).powf(t)) as f32;
        for (name, p) in params.iter_mut() {
            let Some(grad) = p.grad() else { continue };
            let grad = grad.clone();
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(grad.shape()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(grad.shape()));
            let value = p.value_mut();
            for i in 0..grad.len() {
                let g = grad.data()[i];
                let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * g;
                let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * g * g;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                let w = value.data()[i];
                value.data_mut()[i] =
                    w - self.lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * w);
            }
        }
    }
}

/// Cross-entropy on raw logits. Returns `(loss, dlogits, predicted class)`.
pub fn cross_entropy(logits: &Tensor, target: usize) -> (f32, Tensor, usize) {
    let c = logits.len();
    debug_assert!(target < c);
    let probs = ops::softmax_last(&logits.reshape(&[1, c]).unwrap()).reshape(&[c]).unwrap();
    let loss = -(probs.data()[target].max(1e-30)).ln();
    let mut dlogits = probs.clone();
    dlogits.data_mut()[target] -= 1.0;
    (loss, dlogits, probs.argmax())
}

pub struct StepOutcome {
    pub loss: f32,
    pub correct: bool,
}

/// What `fit` needs from a model: a combined forward/backward on one labeled
/// sample, and inference for validation.
pub trait TrainModel: Parameterized {
    fn forward_backward(&mut self, input: &Tensor, label: usize) -> Result<StepOutcome, ModelError>;
    fn predict_class(&self, input: &Tensor) -> Result<usize, ModelError>;
}

impl TrainModel for TouchNet {
    fn forward_backward(&mut self, input: &Tensor, label: usize) -> Result<StepOutcome, ModelError> {
        let (logits, cache) = self.forward_logits(input)?;
        let (loss, dlogits, predicted) = cross_entropy(&logits, label);
        self.backward(&cache, &dlogits)?;
        Ok(StepOutcome {
            loss,
            correct: predicted == label,
        })
    }

    fn predict_class(&self, input: &Tensor) -> Result<usize, ModelError> {
        Ok(self.predict(input)?.argmax())
    }
}

impl TrainModel for SlipNet {
    fn forward_backward(&mut self, input: &Tensor, label: usize) -> Result<StepOutcome, ModelError> {
        let (logits, cache) = self.forward_logits(input)?;
        let (loss, dlogits, predicted) = cross_entropy(&logits, label);
        self.backward(&cache, &dlogits)?;
        Ok(StepOutcome {
            loss,
            correct: predicted == label,
        })
    }

    fn predict_class(&self, input: &Tensor) -> Result<usize, ModelError> {
        Ok(self.predict(input)?.argmax())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
    pub weight_decay: f32,
    pub val_fraction: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch: 16,
            lr: 3e-4,
            weight_decay: 0.01,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f32,
    pub train_accuracy: f32,
    pub val_accuracy: f32,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub epochs: Vec<EpochMetrics>,
    pub best_val_accuracy: f32,
    pub best_epoch: usize,
}

fn snapshot<M: Parameterized>(model: &mut M) -> Vec<(String, Tensor)> {
    model
        .named_params()
        .into_iter()
        .map(|(n, p)| (n, p.value().clone()))
        .collect()
}

fn restore<M: Parameterized>(model: &mut M, saved: &[(String, Tensor)]) -> Result<(), ModelError> {
    let mut params = model.named_params();
    assert_eq!(params.len(), saved.len());
    for ((name, p), (sname, value)) in params.iter_mut().zip(saved) {
        assert_eq!(name, sname);
        p.set_value(value.clone())?;
    }
    Ok(())
}

/// Train on `(input, label)` pairs. The data is split deterministically into
/// train/validation; the model ends up holding the parameters of its best
/// validation epoch. `on_epoch` fires after each epoch with fresh metrics.
pub fn fit<M: TrainModel>(
    model: &mut M,
    data: &[(Tensor, usize)],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<FitResult, ModelError> {
    if data.len() < 2 {
        return Err(ModelError::Config {
            reason: "need at least 2 samples to fit".into(),
        });
    }
    if !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(ModelError::Config {
            reason: format!("val_fraction {} outside [0, 1)", cfg.val_fraction),
        });
    }
    let batch = cfg.batch.max(1);
    let mut indices: Vec<usize> = (0..data.len()).collect();
    let mut split_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    indices.shuffle(&mut split_rng);
    let val_len = ((data.len() as f32) * cfg.val_fraction).round() as usize;
    let val_len = val_len.min(data.len() - 1);
    let (train_idx, val_idx) = indices.split_at(data.len() - val_len);
    let mut train_idx = train_idx.to_vec();

    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let mut best_val = f32::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut best_params: Option<Vec<(String, Tensor)>> = None;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let mut epoch_rng =
            ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        train_idx.shuffle(&mut epoch_rng);
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for chunk in train_idx.chunks(batch) {
            model.zero_grads();
            for &i in chunk {
                let (input, label) = &data[i];
                let out = model.forward_backward(input, *label)?;
                loss_sum += out.loss as f64;
                if out.correct {
                    correct += 1;
                }
            }
            let scale = 1.0 / chunk.len() as f32;
            let mut params = model.named_params();
            for (_, p) in params.iter_mut() {
                p.scale_grad(scale);
            }
            opt.step(&mut params);
        }
        let train_loss = (loss_sum / train_idx.len() as f64) as f32;
        let train_accuracy = correct as f32 / train_idx.len() as f32;
        let val_accuracy = if val_idx.is_empty() {
            train_accuracy
        } else {
            let mut ok = 0usize;
            for &i in val_idx {
                let (input, label) = &data[i];
                if model.predict_class(input)? == *label {
                    ok += 1;
                }
            }
            ok as f32 / val_idx.len() as f32
        };
        if val_accuracy > best_val {
            best_val = val_accuracy;
            best_epoch = epoch;
            best_params = Some(snapshot(model));
        }
        let metrics = EpochMetrics {
            epoch,
            train_loss,
            train_accuracy,
            val_accuracy,
        };
        on_epoch(&metrics);
        history.push(metrics);
    }
    if let Some(saved) = &best_params {
        restore(model, saved)?;
    }
    Ok(FitResult {
        epochs: history,
        best_val_accuracy: best_val,
        best_epoch,
    })
}

/// Box-average a `[C, H, W]` image or `[F, C, H, W]` clip down to a square
/// `image` x `image` resolution. The source must be square and an integer
/// multiple of the target; equal sizes pass through unchanged.
pub fn pool_to_resolution(t: &Tensor, image: usize) -> Result<Tensor, ModelError> {
    match t.rank() {
        3 => {
            let (c, h, w) = t.dims3()?;
            pool_plane_stack(t.data(), c, h, w, image)
        }
        4 => {
            let (f, c, h, w) = t.dims4()?;
            let pooled = pool_plane_stack(t.data(), f * c, h, w, image)?;
            Ok(pooled.reshape(&[f, c, image, image])?)
        }
        r => Err(ModelError::Geometry {
            reason: format!("cannot pool rank-{r} tensor to an image"),
        }),
    }
}

fn pool_plane_stack(
    data: &[f32],
    planes: usize,
    h: usize,
    w: usize,
    image: usize,
) -> Result<Tensor, ModelError> {
    if h != w || image == 0 || h % image != 0 {
        return Err(ModelError::Geometry {
            reason: format!("cannot pool {h}x{w} to {image}x{image}"),
        });
    }
    let k = h / image;
    if k == 1 {
        return Ok(Tensor::new(vec![planes, image, image], data.to_vec())?);
    }
    let inv = 1.0 / (k * k) as f32;
    let mut out = Tensor::zeros(&[planes, image, image]);
    for p in 0..planes {
        let src = &data[p * h * w..(p + 1) * h * w];
        for y in 0..image {
            for x in 0..image {
                let mut sum = 0.0f32;
                for dy in 0..k {
                    let row = (y * k + dy) * w + x * k;
                    for dx in 0..k {
                        sum += src[row + dx];
                    }
                }
                out.data_mut()[(p * image + y) * image + x] = sum * inv;
            }
        }
    }
    Ok(out)
}

/// Accuracy and a 2x2 confusion matrix (`counts[actual][predicted]`).
pub struct Evaluation {
    pub accuracy: f32,
    pub confusion: [[usize; 2]; 2],
    pub total: usize,
}

pub fn evaluate<M: TrainModel>(
    model: &M,
    data: &[(Tensor, usize)],
) -> Result<Evaluation, ModelError> {
    let mut confusion = [[0usize; 2]; 2];
    let mut correct = 0usize;
    for (input, label) in data {
        let predicted = model.predict_class(input)?;
        if predicted == *label {
            correct += 1;
        }
        if *label < 2 && predicted < 2 {
            confusion[*label][predicted] += 1;
        }
    }
    Ok(Evaluation {
        accuracy: correct as f32 / data.len().max(1) as f32,
        confusion,
        total: data.len(),
    })
}
