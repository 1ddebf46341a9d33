//! Guided sampling.
//!
//! Every step computes the classifier-free prediction, grows the cumulative
//! mask from the clean-sample estimate, and, inside the guidance window, adds
//! the adapter direction and the discriminator gradient. Both additions are
//! zeroed outside the mask. The order is fixed: base, cfg, adapter merge,
//! visual gradient.

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::autodiff::Tape;
use crate::decoder::Decoder;
use crate::denoiser::Denoiser;
use crate::discriminator::Discriminator;
use crate::error::{Error, Result};
use crate::lora::{self, LoraAdapter};
use crate::mask::{self, BinaryGrid, CumulativeMask, RegionDetector};
use crate::sampler::{cfg_eps, check_batch, draw_rows, row_rngs};
use crate::schedule::{ddim_step, predict_x0, sampling_timesteps, NoiseSchedule, SamplerConfig, ALPHA_BAR_FLOOR};
use crate::tensor::{self, Tensor};
use crate::vocab::Token;

pub const DEFAULT_WINDOW_HIGH: usize = 650;
pub const DEFAULT_WINDOW_LOW: usize = 150;
pub const DEFAULT_START_STEP: usize = 65;
/// Default visual guidance weight.
pub const DEFAULT_W: f64 = 1.0;

/// How `guidance_start_step` is counted within the sampler's steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartStepCounting {
    /// Guidance may run during the last `guidance_start_step` steps.
    #[default]
    Remaining,
    /// Guidance may run from the `guidance_start_step`-th step (1-based) on.
    Elapsed,
}

/// What the adapter contributes at merge scale `v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextualMode {
    /// `v * (eps_adapted - eps_base)`, the adapter's own shift.
    #[default]
    AdapterResidual,
    /// `v * eps_adapted`, the full adapted prediction.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    /// Visual guidance weight, `>= 0`.
    pub w: f64,
    /// Textual merge scale.
    pub v: f64,
    /// Mask confidence threshold in `[0, 1]`.
    pub tau: f64,
    pub window_t_high: usize,
    pub window_t_low: usize,
    pub guidance_start_step: usize,
    pub start_counting: StartStepCounting,
    pub textual_mode: TextualMode,
    /// Extra square dilation of the mask, in pixels; 0 disables it.
    pub mask_dilation: usize,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            w: DEFAULT_W,
            v: lora::DEFAULT_V,
            tau: mask::DEFAULT_TAU,
            window_t_high: DEFAULT_WINDOW_HIGH,
            window_t_low: DEFAULT_WINDOW_LOW,
            guidance_start_step: DEFAULT_START_STEP,
            start_counting: StartStepCounting::Remaining,
            textual_mode: TextualMode::AdapterResidual,
            mask_dilation: 0,
        }
    }
}

impl GuidanceConfig {
    /// Both guidances off.
    pub fn disabled() -> Self {
        Self {
            w: 0.0,
            v: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self, num_train_steps: usize) -> Result<()> {
        if !(self.w >= 0.0) || !self.w.is_finite() {
            return Err(Error::invalid(format!("w must be finite and >= 0, got {}", self.w)));
        }
        if !self.v.is_finite() {
            return Err(Error::invalid("v must be finite"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::invalid(format!("tau must be in [0, 1], got {}", self.tau)));
        }
        if self.window_t_low >= self.window_t_high || self.window_t_high > num_train_steps {
            return Err(Error::invalid(format!(
                "window needs low < high <= {num_train_steps}, got [{}, {}]",
                self.window_t_low, self.window_t_high
            )));
        }
        Ok(())
    }
}

/// All-ones regression target for the discriminator scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceTarget {
    pub y: Vec<f64>,
}

impl GuidanceTarget {
    pub fn ones(dim: usize) -> Self {
        Self { y: vec![1.0; dim] }
    }
}

pub fn in_window(t: usize, cfg: &GuidanceConfig) -> bool {
    (cfg.window_t_low..=cfg.window_t_high).contains(&t)
}

/// Whether sampler step `k` (0-based, of `num_steps`) passes the start gate.
pub fn past_start(k: usize, num_steps: usize, cfg: &GuidanceConfig) -> bool {
    match cfg.start_counting {
        StartStepCounting::Remaining => num_steps - k <= cfg.guidance_start_step,
        StartStepCounting::Elapsed => k + 1 >= cfg.guidance_start_step,
    }
}

pub fn guidance_active(k: usize, num_steps: usize, t: usize, cfg: &GuidanceConfig) -> bool {
    in_window(t, cfg) && past_start(k, num_steps, cfg)
}

/// Everything a guided run reads; nothing here is mutated.
#[derive(Clone, Copy)]
pub struct GuidanceModels<'a> {
    pub model: &'a dyn Denoiser,
    pub schedule: &'a NoiseSchedule,
    pub decoder: Decoder,
    pub discriminator: Option<&'a Discriminator>,
    pub adapter: Option<&'a LoraAdapter>,
    pub detector: Option<&'a dyn RegionDetector>,
}

/// `d/dz sum_rows mean_j (f_D(decode(x0_hat(z)), c) - y_j)^2`, with `x0_hat`
/// built from the conditional prediction and differentiated through the
/// denoiser.
pub fn visual_guidance_grad(
    models: &GuidanceModels,
    disc: &Discriminator,
    z: &Tensor,
    cond: &[Token],
    t: usize,
) -> Result<Tensor> {
    let ab = models.schedule.alpha_bar(t)?;
    if ab < ALPHA_BAR_FLOOR {
        return Err(Error::NumericalDegeneracy(format!(
            "alpha_bar[{t}] = {ab:e} is below the floor"
        )));
    }
    models.model.check_inputs(z, cond, &vec![t; cond.len()])?;
    let n = cond.len();
    let mut tape = Tape::new();
    let zv = tape.variable(z.clone());
    let eps = models.model.forward(&mut tape, zv, cond, &vec![t; n], None);
    let se = tape.scale(eps, (1.0 - ab).sqrt());
    let diff = tape.sub(zv, se);
    let x0 = tape.scale(diff, 1.0 / ab.sqrt());
    let px = models.decoder.decode_var(&mut tape, x0);
    let pshape = tape.value(px).shape().to_vec();
    if pshape[1..] != disc.input_shape()[..] {
        return Err(Error::invalid(format!(
            "decoded samples {:?} do not fit the discriminator input {:?}",
            &pshape[1..],
            disc.input_shape()
        )));
    }
    let scores = disc.score_var(&mut tape, px, cond);
    let y = GuidanceTarget::ones(crate::discriminator::SCORE_DIM);
    let target = Tensor::from_shape_fn(ndarray::IxDyn(&[n, y.y.len()]), |i| y.y[i[1]]);
    let yv = tape.constant(target);
    let mse = tape.mse(scores, yv);
    let loss = tape.scale(mse, n as f64);
    let mut grads = tape.backward(loss);
    Ok(grads.take(zv).expect("latent is a variable"))
}

/// `eps + w * grad`; `w = 0` returns `eps` unchanged.
pub fn visual_guidance_eps(eps: &Tensor, grad: &Tensor, w: f64) -> Result<Tensor> {
    tensor::ensure_same_shape(eps, grad, "visual_guidance_eps")?;
    if w == 0.0 {
        return Ok(eps.clone());
    }
    Ok(eps + &(grad * w))
}

/// Per-row latent masks applied to a batch term; `None` leaves it untouched.
fn gate(term: &Tensor, masks: Option<&[BinaryGrid]>) -> Result<Tensor> {
    let Some(masks) = masks else {
        return Ok(term.clone());
    };
    let mut out = term.clone();
    for (mut row, m) in out.outer_iter_mut().zip(masks) {
        let gated = mask::apply_mask(&row.to_owned(), m)?;
        row.assign(&gated);
    }
    Ok(out)
}

/// One record per sample per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub sample: usize,
    pub step: usize,
    pub t: usize,
    pub guided: bool,
    pub mask_area: usize,
    /// L2 norm of the raw discriminator-loss gradient; 0 when not computed.
    pub grad_norm: f64,
    /// L2 norm of the term added to the noise estimate after gating.
    pub added_norm: f64,
    /// Largest magnitude of the added term outside the latent mask.
    pub leak: f64,
    pub detector_error: bool,
}

#[derive(Debug, Clone)]
pub struct GuidedOutput {
    /// Final latents, one row per seed.
    pub latents: Tensor,
    /// Decoded final samples.
    pub images: Tensor,
    /// Final pixel-space masks, one per row; empty for the point backbone.
    pub masks: Vec<CumulativeMask>,
    pub trace: Vec<TraceRecord>,
}

impl GuidedOutput {
    pub fn trace_jsonl(&self) -> String {
        self.trace
            .iter()
            .map(|r| serde_json::to_string(r).expect("trace serializes") + "\n")
            .collect()
    }
}

fn spatial(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [_, h, w] => Some((*h, *w)),
        _ => None,
    }
}

/// Guided DDIM sampling for a batch of seeds.
pub fn sample_guided(
    models: &GuidanceModels,
    cond: &[Token],
    seeds: &[u64],
    cfg: &GuidanceConfig,
    sampler: &SamplerConfig,
) -> Result<GuidedOutput> {
    let sched = models.schedule;
    check_batch(cond, seeds)?;
    sampler.validate(sched)?;
    cfg.validate(sched.num_steps())?;
    models.decoder.validate()?;
    if cfg.w > 0.0 && models.discriminator.is_none() {
        return Err(Error::invalid("w > 0 needs a discriminator"));
    }
    if cfg.v != 0.0 {
        let a = models
            .adapter
            .ok_or_else(|| Error::invalid("v != 0 needs a low-rank adapter"))?;
        a.check_base(models.model)?;
    }
    let n = seeds.len();
    let shape = models.model.sample_shape();
    let latent_hw = spatial(&shape);
    let pixel_hw = latent_hw.map(|(h, w)| (h * models.decoder.factor(), w * models.decoder.factor()));
    let mut masks: Vec<CumulativeMask> = match pixel_hw {
        Some((h, w)) => (0..n).map(|_| mask::init_mask(h, w)).collect::<Result<_>>()?,
        None => Vec::new(),
    };

    let ts = sampling_timesteps(sched.num_steps(), sampler.num_steps)?;
    let mut rngs = row_rngs(seeds);
    let mut z = draw_rows(&mut rngs, &shape);
    let mut trace = Vec::with_capacity(n * sampler.num_steps);

    for k in 0..sampler.num_steps {
        let (t, t_prev) = (ts[k], ts[k + 1]);
        let eps = cfg_eps(models.model, &z, cond, t, sampler.cfg_scale)?;

        let mut detector_error = vec![false; n];
        if let (Some(det), Some(_)) = (models.detector, pixel_hw) {
            let px = models.decoder.decode(&predict_x0(&z, &eps, t, sched)?);
            for (i, m) in masks.iter_mut().enumerate() {
                match det.detect(&px.index_axis(ndarray::Axis(0), i).to_owned()) {
                    Ok(d) => *m = mask::update_mask(m, &d, cfg.tau)?,
                    Err(e) => {
                        warn!(step = k, sample = i, error = %e, "detector failed; mask not grown");
                        detector_error[i] = true;
                    }
                }
            }
        }
        let latent_masks: Option<Vec<BinaryGrid>> = match latent_hw {
            Some((lh, lw)) => Some(
                masks
                    .iter()
                    .map(|m| mask::downsample_mask(&m.dilated(cfg.mask_dilation).grid, lh, lw))
                    .collect::<Result<_>>()?,
            ),
            None => None,
        };

        let active = guidance_active(k, sampler.num_steps, t, cfg);
        let mut guided = eps.clone();
        let mut grad_norms = vec![0.0; n];
        if active && cfg.v != 0.0 {
            let adapter = models.adapter.expect("checked above");
            let tv = vec![t; n];
            let adapted = models.model.predict_with(&z, cond, &tv, Some(adapter))?;
            let direction = match cfg.textual_mode {
                TextualMode::AdapterResidual => adapted - models.model.predict(&z, cond, &tv)?,
                TextualMode::Literal => adapted,
            };
            guided = lora::merge_textual_eps(&guided, &gate(&direction, latent_masks.as_deref())?, cfg.v)?;
        }
        if active && cfg.w > 0.0 {
            let disc = models.discriminator.expect("checked above");
            let grad = visual_guidance_grad(models, disc, &z, cond, t)?;
            if !tensor::all_finite(&grad) {
                return Err(Error::GuidanceDiverged { step: k, t });
            }
            for (g, row) in grad_norms.iter_mut().zip(grad.outer_iter()) {
                *g = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            }
            guided = visual_guidance_eps(&guided, &gate(&grad, latent_masks.as_deref())?, cfg.w)?;
        }

        let added = &guided - &eps;
        for i in 0..n {
            let row = added.index_axis(ndarray::Axis(0), i);
            let (area, leak) = match &latent_masks {
                Some(lm) => {
                    let plane = lm[i].as_slice();
                    let leak = row
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| plane[j % plane.len()] == 0)
                        .fold(0.0f64, |acc, (_, v)| acc.max(v.abs()));
                    (masks[i].area(), leak)
                }
                None => (1, 0.0),
            };
            trace.push(TraceRecord {
                sample: i,
                step: k,
                t,
                guided: active,
                mask_area: area,
                grad_norm: grad_norms[i],
                added_norm: row.iter().map(|v| v * v).sum::<f64>().sqrt(),
                leak,
                detector_error: detector_error[i],
            });
        }

        let noise = (sampler.eta > 0.0 && t_prev > 0).then(|| draw_rows(&mut rngs, &shape));
        z = ddim_step(&z, &guided, t, t_prev, sched, sampler.eta, noise.as_ref())?;
    }
    let images = models.decoder.decode(&z);
    Ok(GuidedOutput {
        latents: z,
        images,
        masks,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_endpoints() {
        let c = GuidanceConfig::default();
        assert!(in_window(650, &c));
        assert!(in_window(150, &c));
        assert!(!in_window(700, &c));
        assert!(!in_window(149, &c));
    }

    #[test]
    fn start_gate_counting() {
        let mut c = GuidanceConfig::default();
        assert!(!past_start(34, 100, &c));
        assert!(past_start(35, 100, &c));
        c.start_counting = StartStepCounting::Elapsed;
        assert!(!past_start(63, 100, &c));
        assert!(past_start(64, 100, &c));
    }

    #[test]
    fn config_validation() {
        let mut c = GuidanceConfig::default();
        c.validate(1000).unwrap();
        c.w = -1.0;
        assert!(c.validate(1000).is_err());
        let c = GuidanceConfig {
            tau: 1.5,
            ..Default::default()
        };
        assert!(c.validate(1000).is_err());
        let c = GuidanceConfig {
            window_t_low: 700,
            ..Default::default()
        };
        assert!(c.validate(1000).is_err());
        assert!(GuidanceConfig::default().validate(600).is_err());
    }

    #[test]
    fn zero_weight_returns_base_exactly() {
        let e = tensor::from_vec(&[2], vec![0.1, 0.2]).unwrap();
        let g = tensor::from_vec(&[2], vec![f64::MAX, 3.0]).unwrap();
        assert!(tensor::bit_equal(&visual_guidance_eps(&e, &g, 0.0).unwrap(), &e));
    }

    #[test]
    fn target_is_all_ones() {
        assert!(GuidanceTarget::ones(4).y.iter().all(|&v| v == 1.0));
    }
}
