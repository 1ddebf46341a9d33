//! Noise-prediction models and toy backbone training.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{self, AdamW, AdamWConfig, Bound, LoraBinding, ParamStore};
use crate::schedule::NoiseSchedule;
use crate::tensor::{self, Tensor};
use crate::toy_data::ConditionedDataset;
use crate::vocab::{self, Token, NULL_TOKEN, VOCAB_SIZE};

/// A conditional noise predictor `eps(z, c, t)`.
///
/// `z` carries a leading batch axis; `cond` and `t` hold one entry per row.
/// Forward passes are written on a [`Tape`] so callers can differentiate the
/// output with respect to `z`.
pub trait Denoiser: Send + Sync {
    /// Shape of one latent, without the batch axis.
    fn sample_shape(&self) -> Vec<usize>;

    fn forward(&self, tape: &mut Tape, z: Var, cond: &[Token], t: &[usize], lora: Option<&LoraBinding>) -> Var;

    /// Linear layers an adapter may target, as `(name, fan_in, fan_out)`.
    fn linear_layers(&self) -> Vec<(String, usize, usize)> {
        Vec::new()
    }

    /// Fingerprint of the frozen parameters.
    fn checksum(&self) -> String;

    fn predict(&self, z: &Tensor, cond: &[Token], t: &[usize]) -> Result<Tensor> {
        self.predict_with(z, cond, t, None)
    }

    fn predict_with(
        &self,
        z: &Tensor,
        cond: &[Token],
        t: &[usize],
        lora: Option<&crate::lora::LoraAdapter>,
    ) -> Result<Tensor> {
        self.check_inputs(z, cond, t)?;
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let binding = lora.map(|a| a.bind(&mut tape, false));
        let out = self.forward(&mut tape, zv, cond, t, binding.as_ref());
        Ok(tape.value(out).clone())
    }

    fn check_inputs(&self, z: &Tensor, cond: &[Token], t: &[usize]) -> Result<()> {
        let shape = self.sample_shape();
        if z.ndim() != shape.len() + 1 || z.shape()[1..] != shape[..] {
            return Err(Error::invalid(format!(
                "denoiser expects [N, {shape:?}], got {:?}",
                z.shape()
            )));
        }
        let n = z.shape()[0];
        if cond.len() != n || t.len() != n {
            return Err(Error::invalid("cond and t need one entry per batch row"));
        }
        cond.iter().try_for_each(|&c| vocab::check_token(c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointArch {
    pub dim: usize,
    pub hidden: usize,
    pub time_dim: usize,
    pub cond_dim: usize,
}

impl Default for PointArch {
    fn default() -> Self {
        Self {
            dim: 2,
            hidden: 64,
            time_dim: 16,
            cond_dim: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvArch {
    /// Latent side length, a multiple of 4.
    pub size: usize,
    pub channels: usize,
    pub hidden: usize,
    pub time_dim: usize,
    pub cond_dim: usize,
}

impl Default for ConvArch {
    fn default() -> Self {
        Self {
            size: crate::toy_data::LATENT_SIZE,
            channels: 8,
            hidden: 32,
            time_dim: 16,
            cond_dim: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DenoiserArch {
    /// Fully connected network over `[N, dim]` points.
    Point(PointArch),
    /// Small two-level U-shaped convolutional network over `[N, 1, S, S]`.
    Conv(ConvArch),
}

/// A trainable toy denoiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDenoiser {
    pub arch: DenoiserArch,
    pub params: ParamStore,
}

impl ToyDenoiser {
    pub fn new(arch: DenoiserArch, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        match arch {
            DenoiserArch::Point(a) => {
                if a.dim == 0 || a.hidden == 0 || a.time_dim % 2 != 0 {
                    return Err(Error::invalid(
                        "point denoiser needs dim, hidden > 0 and an even time_dim",
                    ));
                }
                p.insert("cond_table", tensor::randn(&mut rng, &[VOCAB_SIZE, a.cond_dim]));
                p.add_linear(&mut rng, "lin1", a.dim + a.time_dim + a.cond_dim, a.hidden);
                p.add_linear(&mut rng, "lin2", a.hidden, a.hidden);
                p.add_linear(&mut rng, "lin3", a.hidden, a.dim);
            }
            DenoiserArch::Conv(a) => {
                if a.size % 4 != 0 || a.channels == 0 || a.time_dim % 2 != 0 {
                    return Err(Error::invalid(
                        "conv denoiser needs size % 4 == 0, channels > 0, even time_dim",
                    ));
                }
                let c = a.channels;
                p.insert("cond_table", tensor::randn(&mut rng, &[VOCAB_SIZE, a.cond_dim]));
                p.add_linear(&mut rng, "emb_in", a.time_dim + a.cond_dim, a.hidden);
                p.add_linear(&mut rng, "emb_out", a.hidden, c);
                p.add_conv(&mut rng, "conv_in", 1, c, 3);
                p.add_conv(&mut rng, "down1", c, c, 3);
                p.add_conv(&mut rng, "down2", c, c, 3);
                p.add_conv(&mut rng, "up2", c, c, 3);
                p.add_conv(&mut rng, "conv_out", c, 1, 3);
            }
        }
        Ok(Self { arch, params: p })
    }

    pub fn forward_bound(
        &self,
        tape: &mut Tape,
        p: &Bound,
        z: Var,
        cond: &[Token],
        t: &[usize],
        lora: Option<&LoraBinding>,
    ) -> Var {
        match self.arch {
            DenoiserArch::Point(a) => {
                let temb = tape.constant(nn::timestep_embedding(t, a.time_dim));
                let cemb = tape.gather(p.var("cond_table"), cond);
                let x = tape.concat_cols(&[z, temb, cemb]);
                let h = nn::linear(tape, p, "lin1", x, lora);
                let h = tape.silu(h);
                let h = nn::linear(tape, p, "lin2", h, lora);
                let h = tape.silu(h);
                nn::linear(tape, p, "lin3", h, lora)
            }
            DenoiserArch::Conv(a) => {
                let temb = tape.constant(nn::timestep_embedding(t, a.time_dim));
                let cemb = tape.gather(p.var("cond_table"), cond);
                let e = tape.concat_cols(&[temb, cemb]);
                let e = nn::linear(tape, p, "emb_in", e, lora);
                let e = tape.silu(e);
                let e = nn::linear(tape, p, "emb_out", e, lora);

                let h1 = nn::conv(tape, p, "conv_in", z);
                let h1 = tape.add_channel_bias(h1, e);
                let h1 = tape.silu(h1);
                let d1 = tape.avg_pool2(h1);
                let h2 = nn::conv(tape, p, "down1", d1);
                let h2 = tape.add_channel_bias(h2, e);
                let h2 = tape.silu(h2);
                let d2 = tape.avg_pool2(h2);
                let h3 = nn::conv(tape, p, "down2", d2);
                let h3 = tape.silu(h3);
                let u2 = tape.upsample(h3, 2);
                let u2 = tape.add(u2, h2);
                let u2 = nn::conv(tape, p, "up2", u2);
                let u2 = tape.silu(u2);
                let u1 = tape.upsample(u2, 2);
                let u1 = tape.add(u1, h1);
                nn::conv(tape, p, "conv_out", u1)
            }
        }
    }
}

impl Denoiser for ToyDenoiser {
    fn sample_shape(&self) -> Vec<usize> {
        match self.arch {
            DenoiserArch::Point(a) => vec![a.dim],
            DenoiserArch::Conv(a) => vec![1, a.size, a.size],
        }
    }

    fn forward(&self, tape: &mut Tape, z: Var, cond: &[Token], t: &[usize], lora: Option<&LoraBinding>) -> Var {
        let p = self.params.bind(tape, false);
        self.forward_bound(tape, &p, z, cond, t, lora)
    }

    fn linear_layers(&self) -> Vec<(String, usize, usize)> {
        let names: &[&str] = match self.arch {
            DenoiserArch::Point(_) => &["lin1", "lin2", "lin3"],
            DenoiserArch::Conv(_) => &["emb_in", "emb_out"],
        };
        names
            .iter()
            .map(|n| {
                let w = self.params.get(&format!("{n}.weight")).expect("layer exists");
                (n.to_string(), w.shape()[0], w.shape()[1])
            })
            .collect()
    }

    fn checksum(&self) -> String {
        self.params.checksum()
    }
}

/// Exact noise predictor for data distributed as an isotropic Gaussian
/// `N(mean, std^2 I)`: `E[eps | z_t] = sqrt(1-ab) (z - sqrt(ab) mean) / (ab std^2 + 1 - ab)`.
#[derive(Debug, Clone)]
pub struct AnalyticGaussianDenoiser {
    pub mean: Vec<f64>,
    pub std: f64,
    pub schedule: NoiseSchedule,
}

impl Denoiser for AnalyticGaussianDenoiser {
    fn sample_shape(&self) -> Vec<usize> {
        vec![self.mean.len()]
    }

    fn forward(&self, tape: &mut Tape, z: Var, _cond: &[Token], t: &[usize], _lora: Option<&LoraBinding>) -> Var {
        let d = self.mean.len();
        let n = t.len();
        let mut offset = tensor::zeros(&[n, d]);
        let mut coef = tensor::zeros(&[n, d]);
        for (r, &ti) in t.iter().enumerate() {
            let ab = self.schedule.alpha_bars()[ti];
            let c = (1.0 - ab).sqrt() / (ab * self.std * self.std + 1.0 - ab);
            for j in 0..d {
                offset[[r, j]] = ab.sqrt() * self.mean[j];
                coef[[r, j]] = c;
            }
        }
        let o = tape.constant(offset);
        let c = tape.constant(coef);
        let centred = tape.sub(z, o);
        tape.mul(centred, c)
    }

    fn checksum(&self) -> String {
        format!("analytic-gaussian:{:?}:{}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiserTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Probability of replacing the condition by the null token.
    pub cond_dropout: f64,
    pub seed: u64,
}

impl Default for DenoiserTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 256,
            lr: 2e-3,
            cond_dropout: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss per epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn initial(&self) -> f64 {
        self.epoch_losses.first().copied().unwrap_or(f64::NAN)
    }

    pub fn last(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(f64::NAN)
    }
}

/// Gathers rows of a batch tensor.
pub(crate) fn select_rows(t: &Tensor, idx: &[usize]) -> Tensor {
    t.select(ndarray::Axis(0), idx)
}

/// `z_t` for rows with individual timesteps.
pub(crate) fn noise_rows(z0: &Tensor, eps: &Tensor, t: &[usize], sched: &NoiseSchedule) -> Tensor {
    let mut out = z0.clone();
    for (r, (mut row, e)) in out.outer_iter_mut().zip(eps.outer_iter()).enumerate() {
        let ab = sched.alpha_bars()[t[r]];
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        row.zip_mut_with(&e, |x, &e| *x = a * *x + b * e);
    }
    out
}

/// Trains `model` on epsilon-prediction MSE with classifier-free dropout.
pub fn train_toy_denoiser(
    mut model: ToyDenoiser,
    data: &ConditionedDataset,
    sched: &NoiseSchedule,
    cfg: &DenoiserTrainConfig,
) -> Result<(ToyDenoiser, TrainReport)> {
    data.validate()?;
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::invalid("epochs and batch_size must be positive"));
    }
    model.check_inputs(&select_rows(&data.samples, &[0]), &[data.tokens[0]], &[1])?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(AdamWConfig::with_lr(cfg.lr));
    let n = data.len();
    let t_max = sched.num_steps();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let z0 = select_rows(&data.samples, chunk);
            let t: Vec<usize> = chunk.iter().map(|_| rng.random_range(1..=t_max)).collect();
            let cond: Vec<Token> = chunk
                .iter()
                .map(|&i| {
                    if rng.random::<f64>() < cfg.cond_dropout {
                        NULL_TOKEN
                    } else {
                        data.tokens[i]
                    }
                })
                .collect();
            let eps = tensor::randn(&mut rng, z0.shape());
            let zt = noise_rows(&z0, &eps, &t, sched);

            let mut tape = Tape::new();
            let p = model.params.bind(&mut tape, true);
            let zv = tape.constant(zt);
            let pred = model.forward_bound(&mut tape, &p, zv, &cond, &t, None);
            let target = tape.constant(eps);
            let loss = tape.mse(pred, target);
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
        debug!(epoch, loss = mean, "denoiser epoch");
        epoch_losses.push(mean);
    }
    Ok((model, TrainReport { epoch_losses }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{make_schedule, ScheduleKind};

    #[test]
    fn output_shape_matches_input() {
        let m = ToyDenoiser::new(DenoiserArch::Point(PointArch::default()), 0).unwrap();
        let z = tensor::zeros(&[3, 2]);
        assert_eq!(m.predict(&z, &[0, 1, 2], &[5, 6, 7]).unwrap().shape(), &[3, 2]);
        let c = ToyDenoiser::new(DenoiserArch::Conv(ConvArch::default()), 0).unwrap();
        let z = tensor::zeros(&[2, 1, 16, 16]);
        assert_eq!(c.predict(&z, &[0, 1], &[5, 6]).unwrap().shape(), &[2, 1, 16, 16]);
    }

    #[test]
    fn predict_rejects_bad_inputs() {
        let m = ToyDenoiser::new(DenoiserArch::Point(PointArch::default()), 0).unwrap();
        assert!(m.predict(&tensor::zeros(&[3, 3]), &[0, 0, 0], &[1, 1, 1]).is_err());
        assert!(m.predict(&tensor::zeros(&[3, 2]), &[0, 0], &[1, 1, 1]).is_err());
        assert!(m.predict(&tensor::zeros(&[1, 2]), &[99], &[1]).is_err());
    }

    #[test]
    fn prediction_is_deterministic() {
        let m = ToyDenoiser::new(DenoiserArch::Point(PointArch::default()), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = tensor::randn(&mut rng, &[5, 2]);
        let a = m.predict(&z, &[1; 5], &[300; 5]).unwrap();
        let b = m.predict(&z, &[1; 5], &[300; 5]).unwrap();
        assert!(tensor::bit_equal(&a, &b));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let sched = make_schedule(100, ScheduleKind::LinearBeta).unwrap();
        let m = ToyDenoiser::new(DenoiserArch::Point(PointArch::default()), 0).unwrap();
        let ds = ConditionedDataset {
            samples: tensor::zeros(&[0, 2]),
            tokens: vec![],
        };
        assert!(matches!(
            train_toy_denoiser(m, &ds, &sched, &DenoiserTrainConfig::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn analytic_denoiser_matches_formula() {
        let sched = make_schedule(1000, ScheduleKind::LinearBeta).unwrap();
        let d = AnalyticGaussianDenoiser {
            mean: vec![0.0],
            std: 1.0,
            schedule: sched.clone(),
        };
        let z = tensor::from_vec(&[1, 1], vec![0.7]).unwrap();
        let e = d.predict(&z, &[0], &[400]).unwrap()[[0, 0]];
        let ab = sched.alpha_bar(400).unwrap();
        assert!((e - (1.0 - ab).sqrt() * 0.7).abs() < 1e-15);
    }

    #[test]
    fn conv_forward_gradient_wrt_input_matches_finite_differences() {
        let m = ToyDenoiser::new(DenoiserArch::Conv(ConvArch::default()), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z0 = tensor::randn(&mut rng, &[1, 1, 16, 16]);
        let w = tensor::randn(&mut rng, &[1, 1, 16, 16]);
        let f = |z: &Tensor| (m.predict(z, &[2], &[300]).unwrap() * &w).sum();
        let mut tape = Tape::new();
        let zv = tape.variable(z0.clone());
        let out = m.forward(&mut tape, zv, &[2], &[300], None);
        let wv = tape.constant(w.clone());
        let prod = tape.mul(out, wv);
        let s = tape.sum(prod);
        let g = tape.backward(s).take(zv).unwrap();
        for i in [0usize, 17, 100, 255] {
            let mut zp = z0.clone();
            let mut zm = z0.clone();
            zp.as_slice_mut().unwrap()[i] += 1e-5;
            zm.as_slice_mut().unwrap()[i] -= 1e-5;
            let fd = (f(&zp) - f(&zm)) / 2e-5;
            let an = g.as_slice().unwrap()[i];
            assert!((fd - an).abs() < 1e-6 * (1.0 + fd.abs()), "{i}: {an} vs {fd}");
        }
    }
}
