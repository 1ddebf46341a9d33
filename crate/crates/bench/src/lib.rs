//! Shared fixtures for the benchmarks. Models are untrained: timings do not
//! depend on the weights.

use handguide::denoiser::{ConvArch, DenoiserArch, PointArch, ToyDenoiser};
use handguide::discriminator::{Discriminator, DiscriminatorArch};
use handguide::guidance::GuidanceConfig;
use handguide::lora::{init_adapter, LoraAdapter};
use handguide::schedule::{NoiseSchedule, ScheduleConfig};
use handguide::{tensor, Tensor};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn schedule() -> NoiseSchedule {
    NoiseSchedule::new(ScheduleConfig::default()).expect("default schedule")
}

pub fn point_denoiser() -> ToyDenoiser {
    ToyDenoiser::new(DenoiserArch::Point(PointArch::default()), 0).expect("point arch")
}

pub fn conv_denoiser() -> ToyDenoiser {
    ToyDenoiser::new(DenoiserArch::Conv(ConvArch::default()), 0).expect("conv arch")
}

pub fn conv_discriminator() -> Discriminator {
    Discriminator::new(DiscriminatorArch::Conv { size: 32 }, false, 0).expect("conv discriminator")
}

pub fn adapter(model: &ToyDenoiser) -> LoraAdapter {
    init_adapter(model, 4, None, 0).expect("adapter")
}

/// Guidance active on every sampler step.
pub fn always_on() -> GuidanceConfig {
    GuidanceConfig {
        window_t_high: 1000,
        window_t_low: 0,
        guidance_start_step: 1000,
        ..GuidanceConfig::default()
    }
}

/// `n` standard-normal rows of `shape`.
pub fn batch(n: usize, shape: &[usize], seed: u64) -> Tensor {
    let mut full = vec![n];
    full.extend_from_slice(shape);
    tensor::randn(&mut rng(seed), &full)
}
