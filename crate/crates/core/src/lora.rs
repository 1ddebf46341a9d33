//! Low-rank adapters and directional slider training.
//!
//! An adapter attaches factors `A: d x r` and `B: r x k` to linear layers of a
//! frozen denoiser, adding `scale * x A B` to each targeted layer. It is
//! trained so that the adapted prediction for the neutral prompt matches the
//! frozen prediction pushed along the positive-minus-negative direction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::autodiff::Tape;
use crate::denoiser::{noise_rows, select_rows, Denoiser, TrainReport};
use crate::error::{Error, Result};
use crate::nn::{AdamW, AdamWConfig, LoraBinding, ParamStore};
use crate::schedule::NoiseSchedule;
use crate::tensor::{self, Tensor};
use crate::vocab::{PromptTriple, Token};

pub const DEFAULT_RANK: usize = 4;
pub const DEFAULT_LR: f64 = 1e-4;
pub const DEFAULT_V_TRAIN: f64 = 1.0;
/// Default inference merge scale.
pub const DEFAULT_V: f64 = 0.5;
pub const DEFAULT_SLIDER_STEPS: usize = 3000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    pub rank: usize,
    pub targets: Vec<String>,
    /// `"{target}.A"` and `"{target}.B"` for every target.
    pub factors: ParamStore,
    pub scale: f64,
    /// Checksum of the base model the adapter was built for.
    pub base_checksum: String,
}

impl LoraAdapter {
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> LoraBinding {
        let bound = self.factors.bind(tape, trainable);
        let factors = self
            .targets
            .iter()
            .map(|t| (t.clone(), (bound.var(&format!("{t}.A")), bound.var(&format!("{t}.B")))))
            .collect();
        LoraBinding {
            factors,
            scale: self.scale,
        }
    }

    pub fn num_params(&self) -> usize {
        self.factors.num_scalars()
    }

    pub fn checksum(&self) -> String {
        self.factors.checksum()
    }

    pub fn check_base(&self, model: &dyn Denoiser) -> Result<()> {
        if self.base_checksum != model.checksum() {
            return Err(Error::invalid("adapter was trained against a different base model"));
        }
        Ok(())
    }
}

/// A copy of `adapter` that forward passes run at scale `v`.
pub fn set_scale(adapter: &LoraAdapter, v: f64) -> LoraAdapter {
    LoraAdapter {
        scale: v,
        ..adapter.clone()
    }
}

/// Zero-initialised `B` makes a fresh adapter an exact no-op; `A` is drawn
/// from `N(0, 1/d)`. `targets = None` selects every linear layer.
pub fn init_adapter(model: &dyn Denoiser, rank: usize, targets: Option<&[String]>, seed: u64) -> Result<LoraAdapter> {
    if rank == 0 {
        return Err(Error::invalid("adapter rank must be >= 1"));
    }
    let layers = model.linear_layers();
    let chosen: Vec<(String, usize, usize)> = match targets {
        None => layers,
        Some(names) => names
            .iter()
            .map(|n| {
                layers
                    .iter()
                    .find(|(l, _, _)| l == n)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("unknown adapter target `{n}`")))
            })
            .collect::<Result<_>>()?,
    };
    if chosen.is_empty() {
        return Err(Error::invalid("model exposes no linear layers to adapt"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factors = ParamStore::new();
    for (name, d, k) in &chosen {
        factors.insert(
            format!("{name}.A"),
            tensor::randn(&mut rng, &[*d, rank]) / (*d as f64).sqrt(),
        );
        factors.insert(format!("{name}.B"), tensor::zeros(&[rank, *k]));
    }
    Ok(LoraAdapter {
        rank,
        targets: chosen.into_iter().map(|(n, _, _)| n).collect(),
        factors,
        scale: 1.0,
        base_checksum: model.checksum(),
    })
}

/// `eps_base + v * direction`; `v = 0` returns `eps_base` unchanged.
pub fn merge_textual_eps(eps_base: &Tensor, direction: &Tensor, v: f64) -> Result<Tensor> {
    tensor::ensure_same_shape(eps_base, direction, "merge_textual_eps")?;
    if v == 0.0 {
        return Ok(eps_base.clone());
    }
    Ok(eps_base + &(direction * v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliderTrainConfig {
    pub v_train: f64,
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SliderTrainConfig {
    fn default() -> Self {
        Self {
            v_train: DEFAULT_V_TRAIN,
            steps: DEFAULT_SLIDER_STEPS,
            lr: DEFAULT_LR,
            batch_size: 1,
            seed: 0,
        }
    }
}

/// Frozen target `eps(p) + v (eps(p+) - eps(p-))` for one batch.
fn slider_target(
    model: &dyn Denoiser,
    z: &Tensor,
    t: &[usize],
    p: Token,
    pos: Token,
    neg: Token,
    v: f64,
) -> Result<Tensor> {
    let n = t.len();
    let e = model.predict(z, &vec![p; n], t)?;
    if v == 0.0 {
        return Ok(e);
    }
    let ep = model.predict(z, &vec![pos; n], t)?;
    let en = model.predict(z, &vec![neg; n], t)?;
    Ok(e + &((ep - en) * v))
}

/// Slider objective on a fixed batch: MSE between the adapted prediction for
/// `p` and the frozen directional target.
#[allow(clippy::too_many_arguments)]
pub fn slider_loss(
    model: &dyn Denoiser,
    adapter: &LoraAdapter,
    z: &Tensor,
    t: &[usize],
    p: Token,
    pos: Token,
    neg: Token,
    v_train: f64,
) -> Result<f64> {
    let target = slider_target(model, z, t, p, pos, neg, v_train)?;
    let pred = model.predict_with(z, &vec![p; t.len()], t, Some(adapter))?;
    Ok((pred - target).mapv(|d| d * d).mean().unwrap_or(0.0))
}

/// Latents to train on: noised anchors when given, otherwise standard normal.
fn draw_latents(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    anchors: Option<&Tensor>,
    t: &[usize],
    sched: &NoiseSchedule,
) -> Tensor {
    let n = t.len();
    let mut full = vec![n];
    full.extend_from_slice(shape);
    match anchors {
        Some(a) => {
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..a.shape()[0])).collect();
            let x0 = select_rows(a, &idx);
            let eps = tensor::randn(rng, &full);
            noise_rows(&x0, &eps, t, sched)
        }
        None => tensor::randn(rng, &full),
    }
}

/// Trains only the adapter factors; the base model is never written to.
pub fn train_slider(
    model: &dyn Denoiser,
    adapter: LoraAdapter,
    triples: &[PromptTriple],
    sched: &NoiseSchedule,
    anchors: Option<&Tensor>,
    cfg: &SliderTrainConfig,
) -> Result<(LoraAdapter, TrainReport)> {
    if triples.is_empty() {
        return Err(Error::invalid("slider training needs at least one prompt triple"));
    }
    triples.iter().try_for_each(PromptTriple::validate)?;
    if cfg.steps == 0 || cfg.batch_size == 0 {
        return Err(Error::invalid("steps and batch_size must be positive"));
    }
    adapter.check_base(model)?;
    let shape = model.sample_shape();
    if let Some(a) = anchors {
        if a.shape().is_empty() || a.shape()[0] == 0 || a.shape()[1..] != shape[..] {
            return Err(Error::invalid("anchor latents do not match the model's sample shape"));
        }
    }
    let mut adapter = set_scale(&adapter, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(AdamWConfig::with_lr(cfg.lr));
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let tri = &triples[rng.random_range(0..triples.len())];
        let pos = tri.positives[rng.random_range(0..tri.positives.len())];
        let neg = tri.negatives[rng.random_range(0..tri.negatives.len())];
        let t: Vec<usize> = (0..cfg.batch_size)
            .map(|_| rng.random_range(1..=sched.num_steps()))
            .collect();
        let z = draw_latents(&mut rng, &shape, anchors, &t, sched);
        let target = slider_target(model, &z, &t, tri.neutral, pos, neg, cfg.v_train)?;

        let mut tape = Tape::new();
        let binding = adapter.bind(&mut tape, true);
        let zv = tape.constant(z);
        let pred = model.forward(&mut tape, zv, &vec![tri.neutral; t.len()], &t, Some(&binding));
        let tv = tape.constant(target);
        let loss = tape.mse(pred, tv);
        let lv = tape.value(loss).iter().next().copied().unwrap_or(f64::NAN);
        if !lv.is_finite() {
            return Err(Error::TrainingDiverged { step, loss: lv });
        }
        let mut g = tape.backward(loss);
        let grads = adapter
            .targets
            .iter()
            .flat_map(|name| {
                let (a, b) = binding.factors[name];
                [(format!("{name}.A"), a), (format!("{name}.B"), b)]
            })
            .map(|(k, v)| {
                let grad = g
                    .take(v)
                    .unwrap_or_else(|| Tensor::zeros(adapter.factors.get(&k).expect("factor").raw_dim()));
                (k, grad)
            })
            .collect();
        opt.step(&mut adapter.factors, &grads)?;
        losses.push(lv);
        if step % 100 == 0 {
            debug!(step, loss = lv, "slider step");
        }
    }
    Ok((adapter, TrainReport { epoch_losses: losses }))
}

/// Mean of the first and last `frac` of a loss curve, for noisy batch-1 runs.
pub fn loss_ends(losses: &[f64], frac: f64) -> (f64, f64) {
    let k = ((losses.len() as f64 * frac).ceil() as usize).clamp(1, losses.len().max(1));
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
    (
        mean(&losses[..k.min(losses.len())]),
        mean(&losses[losses.len().saturating_sub(k)..]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{DenoiserArch, PointArch, ToyDenoiser};
    use crate::schedule::{make_schedule, ScheduleKind};
    use crate::vocab::default_prompt_sets;

    fn model() -> ToyDenoiser {
        ToyDenoiser::new(DenoiserArch::Point(PointArch::default()), 11).unwrap()
    }

    #[test]
    fn fresh_adapter_is_a_no_op() {
        let m = model();
        let a = init_adapter(&m, 4, None, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = tensor::randn(&mut rng, &[8, 2]);
        let t = vec![420; 8];
        let c = vec![1; 8];
        let base = m.predict(&z, &c, &t).unwrap();
        assert!(tensor::bit_equal(&base, &m.predict_with(&z, &c, &t, Some(&a)).unwrap()));
        let zero = set_scale(&a, 0.0);
        assert!(tensor::bit_equal(
            &base,
            &m.predict_with(&z, &c, &t, Some(&zero)).unwrap()
        ));
    }

    #[test]
    fn factor_shapes_and_count() {
        let m = model();
        let a = init_adapter(&m, 4, None, 0).unwrap();
        assert_eq!(a.factors.get("lin1.A").unwrap().shape(), &[34, 4]);
        assert_eq!(a.factors.get("lin1.B").unwrap().shape(), &[4, 64]);
        let expected: usize = m.linear_layers().iter().map(|(_, d, k)| 4 * (d + k)).sum();
        assert_eq!(a.num_params(), expected);
        assert_eq!(expected, 4 * (34 + 64) + 4 * (64 + 64) + 4 * (64 + 2));
        assert!(init_adapter(&m, 4, Some(&["attn".to_string()]), 0).is_err());
        assert!(init_adapter(&m, 0, None, 0).is_err());
    }

    #[test]
    fn merge_is_additive_in_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let e = tensor::randn(&mut rng, &[3, 4]);
        let d = tensor::randn(&mut rng, &[3, 4]);
        assert!(tensor::bit_equal(&merge_textual_eps(&e, &d, 0.0).unwrap(), &e));
        let z = tensor::zeros(&[3, 4]);
        assert!(tensor::bit_equal(&merge_textual_eps(&z, &d, 1.0).unwrap(), &d));
        let ab = merge_textual_eps(&e, &d, 0.7).unwrap();
        let seq = merge_textual_eps(&merge_textual_eps(&e, &d, 0.3).unwrap(), &d, 0.4).unwrap();
        assert!((ab - seq).iter().all(|v| v.abs() < 1e-12));
        assert!(merge_textual_eps(&e, &tensor::zeros(&[3]), 1.0).is_err());
    }

    #[test]
    fn zero_adapter_loss_matches_direct_computation() {
        let m = model();
        let a = init_adapter(&m, 4, None, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = tensor::randn(&mut rng, &[6, 2]);
        let t = vec![100, 200, 300, 400, 500, 600];
        let v = 0.8;
        let got = slider_loss(&m, &a, &z, &t, 1, 2, 6, v).unwrap();
        let ep = m.predict(&z, &[2; 6], &t).unwrap();
        let en = m.predict(&z, &[6; 6], &t).unwrap();
        let want = v * v * (ep - en).mapv(|d| d * d).mean().unwrap();
        assert!((got - want).abs() < 1e-12 * (1.0 + want), "{got} vs {want}");
    }

    #[test]
    fn training_leaves_base_untouched_and_is_deterministic() {
        let m = model();
        let before = m.checksum();
        let sched = make_schedule(1000, ScheduleKind::LinearBeta).unwrap();
        let cfg = SliderTrainConfig {
            steps: 300,
            lr: 1e-2,
            batch_size: 16,
            ..Default::default()
        };
        let a0 = init_adapter(&m, 4, None, 0).unwrap();
        let (a1, r1) = train_slider(&m, a0.clone(), &default_prompt_sets(), &sched, None, &cfg).unwrap();
        let (a2, _) = train_slider(&m, a0.clone(), &default_prompt_sets(), &sched, None, &cfg).unwrap();
        assert_eq!(m.checksum(), before);
        assert_eq!(a1, a2);
        let (first, last) = loss_ends(&r1.epoch_losses, 0.2);
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn zero_direction_keeps_zero_adapter_optimal() {
        let m = model();
        let sched = make_schedule(1000, ScheduleKind::LinearBeta).unwrap();
        let cfg = SliderTrainConfig {
            v_train: 0.0,
            steps: 20,
            lr: 1e-2,
            batch_size: 4,
            ..Default::default()
        };
        let a0 = init_adapter(&m, 4, None, 0).unwrap();
        let (_, r) = train_slider(&m, a0, &default_prompt_sets(), &sched, None, &cfg).unwrap();
        assert_eq!(r.epoch_losses[0], 0.0);
        assert!(r.epoch_losses.iter().all(|&l| l < 1e-6));
    }

    #[test]
    fn output_is_continuous_in_scale() {
        let m = model();
        let sched = make_schedule(1000, ScheduleKind::LinearBeta).unwrap();
        let cfg = SliderTrainConfig {
            steps: 30,
            lr: 1e-2,
            batch_size: 4,
            ..Default::default()
        };
        let (a, _) = train_slider(
            &m,
            init_adapter(&m, 4, None, 0).unwrap(),
            &default_prompt_sets(),
            &sched,
            None,
            &cfg,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = tensor::randn(&mut rng, &[4, 2]);
        let t = vec![300; 4];
        let out = |v: f64| m.predict_with(&z, &[1; 4], &t, Some(&set_scale(&a, v))).unwrap();
        let d1 = tensor::l2_norm(&(out(0.5) - out(0.5 + 1e-3)));
        let d2 = tensor::l2_norm(&(out(0.5) - out(0.5 + 2e-3)));
        assert!(d1 > 0.0 && (d2 / d1 - 2.0).abs() < 1e-2);
        assert_eq!(set_scale(&set_scale(&a, 0.3), 0.3), set_scale(&a, 0.3));
    }
}
