//! Conditional real/fake scorer used for visual guidance.
//!
//! A feature extractor (a small convnet for images, an MLP for points) feeds a
//! head that also sees a learned condition embedding. The head emits
//! [`SCORE_DIM`] scores; real samples are trained towards all ones and fakes
//! towards all zeros with a squared-error loss.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::autodiff::{Tape, Var};
use crate::denoiser::{select_rows, TrainReport};
use crate::error::{Error, Result};
use crate::nn::{self, AdamW, AdamWConfig, Bound, ParamStore};
use crate::tensor::{self, Tensor};
use crate::vocab::{self, Token, VOCAB_SIZE};

/// Length of the score vector and of the all-ones guidance target.
pub const SCORE_DIM: usize = 4;
const FEAT_DIM: usize = 32;
const COND_DIM: usize = 8;
const HEAD_HIDDEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiscriminatorArch {
    /// MLP over `[N, dim]` points.
    Point { dim: usize, hidden: usize },
    /// Three conv/pool stages over `[N, 1, size, size]` images; `size % 8 == 0`.
    Conv { size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub arch: DiscriminatorArch,
    pub params: ParamStore,
    /// Squash head outputs through a sigmoid before the loss.
    pub sigmoid_head: bool,
}

impl Discriminator {
    pub fn new(arch: DiscriminatorArch, sigmoid_head: bool, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        match arch {
            DiscriminatorArch::Point { dim, hidden } => {
                if dim == 0 || hidden == 0 {
                    return Err(Error::invalid("point discriminator needs dim, hidden > 0"));
                }
                p.add_linear(&mut rng, "feat1", dim, hidden);
                p.add_linear(&mut rng, "feat2", hidden, FEAT_DIM);
            }
            DiscriminatorArch::Conv { size } => {
                if size == 0 || size % 8 != 0 {
                    return Err(Error::invalid("conv discriminator needs a size divisible by 8"));
                }
                p.add_conv(&mut rng, "conv1", 1, 4, 3);
                p.add_conv(&mut rng, "conv2", 4, 8, 3);
                p.add_conv(&mut rng, "conv3", 8, 8, 3);
                p.add_linear(&mut rng, "feat", 8 * (size / 8) * (size / 8), FEAT_DIM);
            }
        }
        p.insert("cond_table", tensor::randn(&mut rng, &[VOCAB_SIZE, COND_DIM]));
        p.add_linear(&mut rng, "head1", FEAT_DIM + COND_DIM, HEAD_HIDDEN);
        p.add_linear(&mut rng, "head2", HEAD_HIDDEN, SCORE_DIM);
        Ok(Self {
            arch,
            params: p,
            sigmoid_head,
        })
    }

    /// Shape of one input, without the batch axis.
    pub fn input_shape(&self) -> Vec<usize> {
        match self.arch {
            DiscriminatorArch::Point { dim, .. } => vec![dim],
            DiscriminatorArch::Conv { size } => vec![1, size, size],
        }
    }

    pub fn check_input(&self, x: &Tensor, cond: &[Token]) -> Result<()> {
        let shape = self.input_shape();
        if x.ndim() != shape.len() + 1 || x.shape()[1..] != shape[..] {
            return Err(Error::invalid(format!(
                "discriminator expects [N, {shape:?}] inputs, got {:?}",
                x.shape()
            )));
        }
        if cond.len() != x.shape()[0] {
            return Err(Error::invalid("one condition per input row is required"));
        }
        cond.iter().try_for_each(|&c| vocab::check_token(c))
    }

    pub fn forward_bound(&self, tape: &mut Tape, p: &Bound, x: Var, cond: &[Token]) -> Var {
        let feat = match self.arch {
            DiscriminatorArch::Point { .. } => {
                let h = nn::linear(tape, p, "feat1", x, None);
                let h = tape.silu(h);
                let h = nn::linear(tape, p, "feat2", h, None);
                tape.silu(h)
            }
            DiscriminatorArch::Conv { .. } => {
                let mut h = x;
                for name in ["conv1", "conv2", "conv3"] {
                    h = nn::conv(tape, p, name, h);
                    h = tape.silu(h);
                    h = tape.avg_pool2(h);
                }
                let s = tape.value(h).shape().to_vec();
                let flat = tape.reshape(h, &[s[0], s[1] * s[2] * s[3]]);
                let f = nn::linear(tape, p, "feat", flat, None);
                tape.silu(f)
            }
        };
        let c = tape.gather(p.var("cond_table"), cond);
        let h = tape.concat_cols(&[feat, c]);
        let h = nn::linear(tape, p, "head1", h, None);
        let h = tape.silu(h);
        let out = nn::linear(tape, p, "head2", h, None);
        if self.sigmoid_head {
            tape.sigmoid(out)
        } else {
            out
        }
    }

    /// Scores on a tape with frozen weights, differentiable in `x`.
    pub fn score_var(&self, tape: &mut Tape, x: Var, cond: &[Token]) -> Var {
        let p = self.params.bind(tape, false);
        self.forward_bound(tape, &p, x, cond)
    }

    /// `[N, SCORE_DIM]` scores. Never augments.
    pub fn score(&self, x: &Tensor, cond: &[Token]) -> Result<Tensor> {
        self.check_input(x, cond)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = self.score_var(&mut tape, xv, cond);
        Ok(tape.value(out).clone())
    }

    pub fn checksum(&self) -> String {
        self.params.checksum()
    }
}

/// Labelled discriminator examples.
#[derive(Debug, Clone)]
pub struct LabelledSet {
    pub samples: Tensor,
    pub tokens: Vec<Token>,
    /// `true` for real.
    pub labels: Vec<bool>,
}

impl LabelledSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> LabelledSet {
        LabelledSet {
            samples: select_rows(&self.samples, idx),
            tokens: idx.iter().map(|&i| self.tokens[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Deterministic shuffled split into `(train, held_out)`.
    pub fn split(&self, held_out_frac: f64, seed: u64) -> (LabelledSet, LabelledSet) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let k = (self.len() as f64 * held_out_frac).round() as usize;
        (self.subset(&idx[k..]), self.subset(&idx[..k]))
    }

    /// Same samples with labels permuted by `seed`.
    pub fn shuffled_labels(&self, seed: u64) -> LabelledSet {
        let mut labels = self.labels.clone();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        LabelledSet { labels, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub augment: bool,
    pub seed: u64,
}

impl Default for DiscTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 120,
            batch_size: 64,
            lr: 1e-3,
            augment: true,
            seed: 0,
        }
    }
}

/// Training-time augmentation: horizontal flips plus light noise for images,
/// jitter for points.
fn augment(rng: &mut ChaCha8Rng, x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let noise_std = if x.ndim() == 4 { 0.02 } else { 0.05 };
    if x.ndim() == 4 {
        let w = x.shape()[3];
        for mut row in out.outer_iter_mut() {
            if rng.random::<bool>() {
                let src = row.to_owned();
                for ((c, y, xx), v) in row.indexed_iter_mut().map(|(i, v)| ((i[0], i[1], i[2]), v)) {
                    *v = src[[c, y, w - 1 - xx]];
                }
            }
        }
    }
    let noise = tensor::randn(rng, x.shape()) * noise_std;
    out + noise
}

pub fn train_discriminator(
    mut model: Discriminator,
    data: &LabelledSet,
    cfg: &DiscTrainConfig,
) -> Result<(Discriminator, TrainReport)> {
    if data.is_empty() {
        return Err(Error::invalid("discriminator training set is empty"));
    }
    if data.labels.iter().all(|&l| l) || data.labels.iter().all(|&l| !l) {
        return Err(Error::invalid(
            "discriminator training needs both real and fake examples",
        ));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::invalid("epochs and batch_size must be positive"));
    }
    model.check_input(&data.samples, &data.tokens)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(AdamWConfig::with_lr(cfg.lr));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let mut x = select_rows(&data.samples, chunk);
            if cfg.augment {
                x = augment(&mut rng, &x);
            }
            let cond: Vec<Token> = chunk.iter().map(|&i| data.tokens[i]).collect();
            let mut target = tensor::zeros(&[chunk.len(), SCORE_DIM]);
            for (r, &i) in chunk.iter().enumerate() {
                if data.labels[i] {
                    target.index_axis_mut(ndarray::Axis(0), r).fill(1.0);
                }
            }
            let mut tape = Tape::new();
            let p = model.params.bind(&mut tape, true);
            let xv = tape.constant(x);
            let out = model.forward_bound(&mut tape, &p, xv, &cond);
            let tv = tape.constant(target);
            let loss = tape.mse(out, tv);
            let lv = tape.value(loss).iter().next().copied().unwrap_or(f64::NAN);
            if !lv.is_finite() {
                return Err(Error::TrainingDiverged { step, loss: lv });
            }
            let mut g = tape.backward(loss);
            let grads = p.gradients(&model.params, &mut g);
            opt.step(&mut model.params, &grads)?;
            total += lv;
            batches += 1;
            step += 1;
        }
        let mean = total / batches as f64;
        debug!(epoch, loss = mean, "discriminator epoch");
        epoch_losses.push(mean);
    }
    Ok((model, TrainReport { epoch_losses }))
}

/// Fraction of examples whose mean score lands on the correct side of 0.5.
pub fn accuracy(model: &Discriminator, data: &LabelledSet) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("accuracy of an empty set"));
    }
    let mut correct = 0;
    for start in (0..data.len()).step_by(256) {
        let idx: Vec<usize> = (start..(start + 256).min(data.len())).collect();
        let part = data.subset(&idx);
        let s = model.score(&part.samples, &part.tokens)?;
        for (row, &label) in s.outer_iter().zip(&part.labels) {
            let real = row.mean().unwrap_or(0.0) > 0.5;
            correct += (real == label) as usize;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
