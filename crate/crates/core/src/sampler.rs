//! Unguided classifier-free DDIM sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::schedule::{cfg_combine, ddim_step, sampling_timesteps, NoiseSchedule, SamplerConfig};
use crate::tensor::{self, Tensor};
use crate::vocab::{Token, NULL_TOKEN};

/// One generator per batch row so every row depends only on its own seed.
pub fn row_rngs(seeds: &[u64]) -> Vec<ChaCha8Rng> {
    seeds.iter().map(|&s| ChaCha8Rng::seed_from_u64(s)).collect()
}

/// Stacks one standard-normal draw of `shape` per row generator.
pub fn draw_rows(rngs: &mut [ChaCha8Rng], shape: &[usize]) -> Tensor {
    let mut full = vec![rngs.len()];
    full.extend_from_slice(shape);
    let data = rngs
        .iter_mut()
        .flat_map(|r| tensor::randn(r, shape).into_iter())
        .collect();
    tensor::from_vec(&full, data).expect("shape")
}

/// Consecutive seeds starting at `base`.
pub fn seed_range(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| base.wrapping_add(i)).collect()
}

/// Conditional noise estimate combined with the unconditional one.
pub fn cfg_eps(model: &dyn Denoiser, z: &Tensor, cond: &[Token], t: usize, scale: f64) -> Result<Tensor> {
    let n = cond.len();
    let tv = vec![t; n];
    let eps_c = model.predict(z, cond, &tv)?;
    if scale == 1.0 {
        return Ok(eps_c);
    }
    let eps_u = model.predict(z, &vec![NULL_TOKEN; n], &tv)?;
    cfg_combine(&eps_u, &eps_c, scale)
}

pub(crate) fn check_batch(cond: &[Token], seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::invalid("at least one seed is required"));
    }
    if cond.len() != seeds.len() {
        return Err(Error::invalid("one condition per seed is required"));
    }
    Ok(())
}

/// Plain classifier-free DDIM sampling, one row per seed.
pub fn sample_base(
    model: &dyn Denoiser,
    sched: &NoiseSchedule,
    cond: &[Token],
    seeds: &[u64],
    sampler: &SamplerConfig,
) -> Result<Tensor> {
    check_batch(cond, seeds)?;
    sampler.validate(sched)?;
    let ts = sampling_timesteps(sched.num_steps(), sampler.num_steps)?;
    let shape = model.sample_shape();
    let mut rngs = row_rngs(seeds);
    let mut z = draw_rows(&mut rngs, &shape);
    for k in 0..sampler.num_steps {
        let (t, t_prev) = (ts[k], ts[k + 1]);
        let eps = cfg_eps(model, &z, cond, t, sampler.cfg_scale)?;
        let noise = (sampler.eta > 0.0 && t_prev > 0).then(|| draw_rows(&mut rngs, &shape));
        z = ddim_step(&z, &eps, t, t_prev, sched, sampler.eta, noise.as_ref())?;
    }
    Ok(z)
}
