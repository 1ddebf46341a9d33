#![allow(dead_code)]

use handguide::denoiser::{train_toy_denoiser, ConvArch, DenoiserArch, DenoiserTrainConfig, PointArch, ToyDenoiser};
use handguide::discriminator::{train_discriminator, DiscTrainConfig, Discriminator, DiscriminatorArch, LabelledSet};
use handguide::schedule::{NoiseSchedule, ScheduleConfig};
use handguide::toy_data::{self, GaussianMixture2d, Mode};
use handguide::{tensor, Tensor};
use ndarray::Axis;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn schedule() -> NoiseSchedule {
    NoiseSchedule::new(ScheduleConfig::default()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Point denoiser trained on the two-mode mixture with half the prompts
/// neutral.
pub fn point_denoiser(sched: &NoiseSchedule) -> ToyDenoiser {
    let data = GaussianMixture2d::default().dataset(&mut rng(0), 20_000, 0.5);
    let m = ToyDenoiser::new(DenoiserArch::Point(PointArch::default()), 0).unwrap();
    let cfg = DenoiserTrainConfig {
        epochs: 30,
        ..Default::default()
    };
    train_toy_denoiser(m, &data, sched, &cfg).unwrap().0
}

/// Mode A labelled real, mode B fake, tokens cycling through the vocabulary.
pub fn point_modes_set(n: usize, seed: u64) -> LabelledSet {
    let gm = GaussianMixture2d::default();
    let mut r = rng(seed);
    let a = gm.points(&mut r, n, Mode::A);
    let b = gm.points(&mut r, n, Mode::B);
    LabelledSet {
        samples: ndarray::concatenate(Axis(0), &[a.view(), b.view()]).unwrap(),
        tokens: (0..2 * n).map(|i| i % handguide::vocab::VOCAB_SIZE).collect(),
        labels: (0..2 * n).map(|i| i < n).collect(),
    }
}

/// Point discriminator that prefers mode A.
pub fn point_discriminator() -> Discriminator {
    let d = Discriminator::new(DiscriminatorArch::Point { dim: 2, hidden: 32 }, false, 0).unwrap();
    let cfg = DiscTrainConfig {
        epochs: 20,
        ..Default::default()
    };
    train_discriminator(d, &point_modes_set(2000, 1), &cfg).unwrap().0
}

/// Image denoiser on the disk/scatter corpus.
pub fn image_denoiser(sched: &NoiseSchedule, epochs: usize) -> ToyDenoiser {
    let data = toy_data::image_dataset(&mut rng(0), 2000, 0.5, 0.5);
    let m = ToyDenoiser::new(DenoiserArch::Conv(ConvArch::default()), 0).unwrap();
    let cfg = DenoiserTrainConfig {
        epochs,
        batch_size: 64,
        ..Default::default()
    };
    train_toy_denoiser(m, &data, sched, &cfg).unwrap().0
}

/// Decoded 32x32 image of the given mode.
pub fn pixel_image(r: &mut ChaCha8Rng, mode: Mode) -> Tensor {
    let dec = handguide::decoder::Decoder::Upsample { factor: 2 };
    let l = toy_data::image_to_latent(&toy_data::render_image(r, mode, toy_data::LATENT_SIZE)).insert_axis(Axis(0));
    dec.decode(&l).index_axis(Axis(0), 0).to_owned()
}

/// Disk images labelled real against scatter images labelled fake.
pub fn image_modes_set(n: usize, seed: u64) -> LabelledSet {
    let mut r = rng(seed);
    let mut imgs: Vec<Tensor> = (0..n).map(|_| pixel_image(&mut r, Mode::A)).collect();
    imgs.extend((0..n).map(|_| pixel_image(&mut r, Mode::B)));
    LabelledSet {
        samples: tensor::stack(&imgs).unwrap(),
        tokens: (0..2 * n).map(|i| i % handguide::vocab::VOCAB_SIZE).collect(),
        labels: (0..2 * n).map(|i| i < n).collect(),
    }
}

/// Two-sided normal quantile for a 99% interval.
pub const Z99: f64 = 2.5758293035489004;

/// Difference of two proportions with its 99% normal interval.
pub fn proportion_shift(p0: f64, p1: f64, n: usize) -> (f64, f64, f64) {
    let se = (p0 * (1.0 - p0) / n as f64 + p1 * (1.0 - p1) / n as f64).sqrt();
    let d = p1 - p0;
    (d, d - Z99 * se, d + Z99 * se)
}
