//! Noise schedules, the forward noising identity, clean-sample recovery and
//! the DDIM reverse step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Default linear beta range, the usual 1000-step DDPM profile.
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;
pub const DEFAULT_TRAIN_STEPS: usize = 1000;

/// Cosine schedule offset.
pub const COSINE_OFFSET: f64 = 0.008;
/// Per-step beta cap for the cosine schedule so that `alpha_bar[T]` stays positive.
pub const COSINE_MAX_BETA: f64 = 0.999;

/// Smallest `alpha_bar` that clean-sample recovery accepts.
pub const ALPHA_BAR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    LinearBeta,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub num_train_steps: usize,
    /// Only used by [`ScheduleKind::LinearBeta`].
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::LinearBeta,
            num_train_steps: DEFAULT_TRAIN_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
        }
    }
}

/// Cumulative signal retention `alpha_bar[t]` for `t = 0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    alpha_bar: Vec<f64>,
}

/// Builds a schedule with the default beta range.
pub fn make_schedule(num_train_steps: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    NoiseSchedule::new(ScheduleConfig {
        kind,
        num_train_steps,
        ..ScheduleConfig::default()
    })
}

impl NoiseSchedule {
    pub fn new(config: ScheduleConfig) -> Result<Self> {
        let t_max = config.num_train_steps;
        if t_max < 1 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        let betas: Vec<f64> = match config.kind {
            ScheduleKind::LinearBeta => {
                let (b0, b1) = (config.beta_start, config.beta_end);
                if !(b0 > 0.0 && b1 < 1.0 && b0 <= b1) {
                    return Err(Error::invalid(format!(
                        "linear beta range must satisfy 0 < start <= end < 1, got [{b0}, {b1}]"
                    )));
                }
                if t_max == 1 {
                    vec![b0]
                } else {
                    (0..t_max)
                        .map(|i| b0 + (b1 - b0) * i as f64 / (t_max - 1) as f64)
                        .collect()
                }
            }
            ScheduleKind::Cosine => {
                let f = |t: usize| {
                    let x = (t as f64 / t_max as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
                    (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
                };
                (1..=t_max)
                    .map(|t| (1.0 - f(t) / f(t - 1)).clamp(1e-12, COSINE_MAX_BETA))
                    .collect()
            }
        };
        let mut alpha_bar = Vec::with_capacity(t_max + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for b in betas {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Ok(Self { config, alpha_bar })
    }

    pub fn config(&self) -> &ScheduleConfig {
        &self.config
    }

    /// Number of training steps `T`.
    pub fn num_steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bar
            .get(t)
            .copied()
            .ok_or_else(|| Error::invalid(format!("timestep {t} outside [0, {}]", self.num_steps())))
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }
}

/// A latent with its timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub z: Tensor,
    pub t: usize,
}

impl LatentState {
    pub fn new(z: Tensor, t: usize, sched: &NoiseSchedule) -> Result<Self> {
        if t > sched.num_steps() {
            return Err(Error::invalid(format!("timestep {t} exceeds T={}", sched.num_steps())));
        }
        if !tensor::all_finite(&z) {
            return Err(Error::invalid("latent contains non-finite values"));
        }
        Ok(Self { z, t })
    }
}

/// `z_t = sqrt(ab_t) z0 + sqrt(1 - ab_t) eps`.
pub fn add_noise(z0: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    tensor::ensure_same_shape(z0, eps, "add_noise")?;
    let ab = sched.alpha_bar(t)?;
    Ok(z0 * ab.sqrt() + eps * (1.0 - ab).sqrt())
}

/// Inverts the forward identity for the clean sample given a noise estimate.
pub fn predict_x0(z_t: &Tensor, eps_hat: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    tensor::ensure_same_shape(z_t, eps_hat, "predict_x0")?;
    let ab = sched.alpha_bar(t)?;
    if ab < ALPHA_BAR_FLOOR {
        return Err(Error::NumericalDegeneracy(format!(
            "alpha_bar[{t}] = {ab:e} is below the floor {ALPHA_BAR_FLOOR:e}"
        )));
    }
    Ok((z_t - &(eps_hat * (1.0 - ab).sqrt())) / ab.sqrt())
}

/// Standard deviation of the stochastic part of a DDIM step.
pub fn ddim_sigma(ab_t: f64, ab_prev: f64, eta: f64) -> f64 {
    if eta == 0.0 {
        return 0.0;
    }
    eta * ((1.0 - ab_prev) / (1.0 - ab_t)).sqrt() * (1.0 - ab_t / ab_prev).max(0.0).sqrt()
}

/// One DDIM move from `t` to `t_prev` through the clean-sample estimate.
///
/// `noise` is the fresh standard-normal draw used when `eta > 0`; it may be
/// `None` for deterministic steps.
pub fn ddim_step(
    z_t: &Tensor,
    eps_hat: &Tensor,
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
    eta: f64,
    noise: Option<&Tensor>,
) -> Result<Tensor> {
    if t_prev >= t {
        return Err(Error::invalid(format!(
            "ddim_step needs t_prev < t, got {t_prev} >= {t}"
        )));
    }
    if eta < 0.0 {
        return Err(Error::invalid("eta must be non-negative"));
    }
    let x0 = predict_x0(z_t, eps_hat, t, sched)?;
    let ab_prev = sched.alpha_bar(t_prev)?;
    if t_prev == 0 {
        return Ok(x0);
    }
    let ab_t = sched.alpha_bar(t)?;
    let sigma = ddim_sigma(ab_t, ab_prev, eta);
    let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
    let mut out = x0 * ab_prev.sqrt() + eps_hat * dir;
    if sigma > 0.0 {
        let xi = noise.ok_or_else(|| Error::invalid("stochastic DDIM step needs a noise draw"))?;
        tensor::ensure_same_shape(z_t, xi, "ddim_step noise")?;
        out = out + xi * sigma;
    }
    Ok(out)
}

/// Classifier-free guidance: `u + scale (c - u)`; exact at scale 0 and 1.
pub fn cfg_combine(eps_uncond: &Tensor, eps_cond: &Tensor, scale: f64) -> Result<Tensor> {
    tensor::ensure_same_shape(eps_uncond, eps_cond, "cfg_combine")?;
    if scale == 1.0 {
        return Ok(eps_cond.clone());
    }
    if scale == 0.0 {
        return Ok(eps_uncond.clone());
    }
    Ok(eps_uncond + &((eps_cond - eps_uncond) * scale))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub num_steps: usize,
    /// DDIM stochasticity; 0 is the deterministic sampler.
    pub eta: f64,
    pub cfg_scale: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            num_steps: 100,
            eta: 0.0,
            cfg_scale: 3.0,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if self.num_steps == 0 || self.num_steps > sched.num_steps() {
            return Err(Error::invalid(format!(
                "num_steps must be in [1, {}], got {}",
                sched.num_steps(),
                self.num_steps
            )));
        }
        if !(self.eta >= 0.0) {
            return Err(Error::invalid("eta must be >= 0"));
        }
        Ok(())
    }
}

/// Evenly spaced descending timesteps `T, ..., 0` with `num_steps + 1` entries.
pub fn sampling_timesteps(num_train_steps: usize, num_steps: usize) -> Result<Vec<usize>> {
    if num_steps == 0 || num_steps > num_train_steps {
        return Err(Error::invalid(format!(
            "num_steps must be in [1, {num_train_steps}], got {num_steps}"
        )));
    }
    Ok((0..=num_steps)
        .map(|k| ((num_train_steps * (num_steps - k)) as f64 / num_steps as f64).round() as usize)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::from_vec;
    use proptest::prelude::*;

    fn sched_with(ab_t: f64, ab_prev: f64) -> NoiseSchedule {
        // hand-built two-step schedule with chosen alpha_bar values
        NoiseSchedule {
            config: ScheduleConfig::default(),
            alpha_bar: vec![1.0, ab_prev, ab_t],
        }
    }

    fn s(v: f64) -> Tensor {
        from_vec(&[1], vec![v]).unwrap()
    }

    #[test]
    fn single_step_schedule_is_one_minus_beta() {
        let sc = make_schedule(1, ScheduleKind::LinearBeta).unwrap();
        assert_eq!(sc.alpha_bars(), &[1.0, 1.0 - DEFAULT_BETA_START]);
    }

    #[test]
    fn four_step_schedule_is_strictly_decreasing() {
        let sc = make_schedule(4, ScheduleKind::LinearBeta).unwrap();
        let ab = sc.alpha_bars();
        assert_eq!(ab.len(), 5);
        assert_eq!(ab[0], 1.0);
        assert!(ab.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn thousand_step_linear_anchor() {
        // independent scalar recomputation of the cumulative product
        let mut acc = 1.0f64;
        for i in 0..1000 {
            let beta = 1e-4 + (0.02 - 1e-4) * i as f64 / 999.0;
            acc *= 1.0 - beta;
        }
        let sc = make_schedule(1000, ScheduleKind::LinearBeta).unwrap();
        let last = sc.alpha_bar(1000).unwrap();
        assert!(last > 0.0 && last < 0.05);
        assert!((last - acc).abs() <= 1e-15);
        // frozen regression anchor
        assert!((last - 4.035_829_765_375_675_4e-5).abs() < 1e-15, "{last:e}");
    }

    #[test]
    fn zero_steps_is_rejected() {
        assert!(matches!(
            make_schedule(0, ScheduleKind::Cosine),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn add_noise_scalar_cases() {
        let sc = sched_with(0.25, 0.64);
        assert_eq!(add_noise(&s(1.0), 2, &s(0.0), &sc).unwrap()[0], 0.5);
        assert_eq!(add_noise(&s(0.0), 2, &s(1.0), &sc).unwrap()[0], 0.75f64.sqrt());
        let v = add_noise(&s(2.0), 1, &s(-1.0), &sc).unwrap()[0];
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn add_noise_rejects_shape_mismatch() {
        let sc = sched_with(0.25, 0.64);
        let e = add_noise(&s(1.0), 1, &from_vec(&[2], vec![0.0, 0.0]).unwrap(), &sc);
        assert!(matches!(e, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn predict_x0_scalar_cases() {
        let sc = sched_with(0.25, 0.64);
        assert_eq!(predict_x0(&s(0.5), &s(0.0), 2, &sc).unwrap()[0], 1.0);
        let v = predict_x0(&s(1.0), &s(-1.0), 1, &sc).unwrap()[0];
        assert!((v - 2.0).abs() < 1e-15);
    }

    #[test]
    fn predict_x0_refuses_degenerate_alpha_bar() {
        let sc = NoiseSchedule {
            config: ScheduleConfig::default(),
            alpha_bar: vec![1.0, 1e-9],
        };
        assert!(matches!(
            predict_x0(&s(1.0), &s(1.0), 1, &sc),
            Err(Error::NumericalDegeneracy(_))
        ));
    }

    #[test]
    fn ddim_step_scalar_case() {
        let sc = sched_with(0.25, 0.64);
        let v = ddim_step(&s(0.5), &s(0.0), 2, 1, &sc, 0.0, None).unwrap()[0];
        assert!((v - 0.8).abs() < 1e-15);
    }

    #[test]
    fn ddim_step_to_zero_is_x0() {
        let sc = make_schedule(10, ScheduleKind::LinearBeta).unwrap();
        let z = from_vec(&[3], vec![0.3, -1.2, 2.0]).unwrap();
        let e = from_vec(&[3], vec![0.1, 0.5, -0.7]).unwrap();
        let x0 = predict_x0(&z, &e, 7, &sc).unwrap();
        let out = ddim_step(&z, &e, 7, 0, &sc, 0.0, None).unwrap();
        assert!(tensor::bit_equal(&x0, &out));
    }

    #[test]
    fn ddim_step_rejects_non_descending() {
        let sc = make_schedule(10, ScheduleKind::LinearBeta).unwrap();
        assert!(ddim_step(&s(0.0), &s(0.0), 3, 3, &sc, 0.0, None).is_err());
        assert!(ddim_step(&s(0.0), &s(0.0), 3, 5, &sc, 0.0, None).is_err());
    }

    #[test]
    fn stochastic_step_requires_noise() {
        let sc = make_schedule(10, ScheduleKind::LinearBeta).unwrap();
        assert!(ddim_step(&s(0.0), &s(0.0), 5, 3, &sc, 1.0, None).is_err());
        assert!(ddim_step(&s(0.0), &s(0.0), 5, 3, &sc, 1.0, Some(&s(0.3))).is_ok());
    }

    #[test]
    fn cfg_identity_cases() {
        let u = from_vec(&[2], vec![0.1, -0.2]).unwrap();
        let c = from_vec(&[2], vec![0.7, 0.3]).unwrap();
        assert!(tensor::bit_equal(&cfg_combine(&u, &c, 1.0).unwrap(), &c));
        assert!(tensor::bit_equal(&cfg_combine(&u, &c, 0.0).unwrap(), &u));
        assert_eq!(cfg_combine(&s(0.0), &s(1.0), 3.0).unwrap()[0], 3.0);
    }

    #[test]
    fn timesteps_descend_to_zero() {
        let ts = sampling_timesteps(1000, 100).unwrap();
        assert_eq!(ts.len(), 101);
        assert_eq!(ts[0], 1000);
        assert_eq!(ts[35], 650);
        assert_eq!(ts[85], 150);
        assert_eq!(*ts.last().unwrap(), 0);
        assert!(ts.windows(2).all(|w| w[1] < w[0]));
        assert!(sampling_timesteps(10, 11).is_err());
    }

    proptest! {
        #[test]
        fn schedules_are_monotone(t in 1usize..1500, cosine in any::<bool>()) {
            let kind = if cosine { ScheduleKind::Cosine } else { ScheduleKind::LinearBeta };
            let sc = make_schedule(t, kind).unwrap();
            let ab = sc.alpha_bars();
            prop_assert_eq!(ab[0], 1.0);
            prop_assert!(ab.iter().all(|&a| a > 0.0 && a <= 1.0));
            prop_assert!(ab.windows(2).all(|w| w[1] < w[0]));
        }

        #[test]
        fn predict_x0_inverts_add_noise(
            z0 in prop::collection::vec(-5.0f64..5.0, 1..8),
            seed in any::<u64>(),
            t in 0usize..=1000,
        ) {
            use rand::SeedableRng;
            let sc = make_schedule(1000, ScheduleKind::LinearBeta).unwrap();
            let n = z0.len();
            let z0 = from_vec(&[n], z0).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let eps = tensor::randn(&mut rng, &[n]);
            let zt = add_noise(&z0, t, &eps, &sc).unwrap();
            let back = predict_x0(&zt, &eps, t, &sc).unwrap();
            for (a, b) in back.iter().zip(z0.iter()) {
                // relative to the scale of the noisy latent the inversion divides
                let scale = 1.0f64.max(b.abs()).max(a.abs());
                prop_assert!((a - b).abs() <= 1e-6 * scale, "{} vs {}", a, b);
            }
        }

        #[test]
        fn cfg_is_affine_in_scale(
            u in prop::collection::vec(-3.0f64..3.0, 4),
            c in prop::collection::vec(-3.0f64..3.0, 4),
            a in -5.0f64..5.0,
            b in -5.0f64..5.0,
        ) {
            let u = from_vec(&[4], u).unwrap();
            let c = from_vec(&[4], c).unwrap();
            let lhs = cfg_combine(&u, &c, a).unwrap() + cfg_combine(&u, &c, b).unwrap() - &u;
            let rhs = cfg_combine(&u, &c, a + b).unwrap();
            for (x, y) in lhs.iter().zip(rhs.iter()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn deterministic_ddim_is_pure(v in prop::collection::vec(-3.0f64..3.0, 6), t in 2usize..1000) {
            let sc = make_schedule(1000, ScheduleKind::LinearBeta).unwrap();
            let z = from_vec(&[3], v[..3].to_vec()).unwrap();
            let e = from_vec(&[3], v[3..].to_vec()).unwrap();
            let a = ddim_step(&z, &e, t, t - 1, &sc, 0.0, None).unwrap();
            let b = ddim_step(&z, &e, t, t - 1, &sc, 0.0, None).unwrap();
            prop_assert!(tensor::bit_equal(&a, &b));
        }
    }
}
