//! Synthetic corpora for the two reference backbones.
//!
//! Point backbone: a two-component Gaussian mixture in the plane. Mode A plays
//! the part of well-formed hands, mode B of malformed ones.
//!
//! Image backbone: 16x16 latents in `[-1, 1]`. Mode A is a single bright disk,
//! mode B is a scatter of small dim spots.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};
use crate::vocab::{self, Concept, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    A,
    B,
}

/// Samples with their conditioning tokens.
#[derive(Debug, Clone)]
pub struct ConditionedDataset {
    pub samples: Tensor,
    pub tokens: Vec<Token>,
}

impl ConditionedDataset {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        if self.samples.shape().first() != Some(&self.tokens.len()) {
            return Err(Error::invalid("dataset samples and tokens disagree in length"));
        }
        self.tokens.iter().try_for_each(|&t| vocab::check_token(t))
    }
}

/// Picks the conditioning token for a sample of the given mode: the neutral
/// phrase half of the time, otherwise a phrase of the mode's concept.
pub fn token_for_mode<R: Rng + ?Sized>(rng: &mut R, mode: Mode, neutral_share: f64) -> Token {
    if rng.random::<f64>() < neutral_share {
        return vocab::NEUTRAL_TOKEN;
    }
    let pool = match mode {
        Mode::A => vocab::tokens_of(Concept::Positive),
        Mode::B => vocab::tokens_of(Concept::Negative),
    };
    pool[rng.random_range(0..pool.len())]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture2d {
    pub center_a: [f64; 2],
    pub center_b: [f64; 2],
    pub std: f64,
    /// Probability of drawing mode A.
    pub weight_a: f64,
}

impl Default for GaussianMixture2d {
    fn default() -> Self {
        Self {
            center_a: [-1.5, 0.0],
            center_b: [1.5, 0.0],
            std: 0.3,
            weight_a: 0.5,
        }
    }
}

impl GaussianMixture2d {
    pub fn center(&self, mode: Mode) -> [f64; 2] {
        match mode {
            Mode::A => self.center_a,
            Mode::B => self.center_b,
        }
    }

    pub fn sample_mode<R: Rng + ?Sized>(&self, rng: &mut R, mode: Mode) -> [f64; 2] {
        let c = self.center(mode);
        let e = tensor::randn(rng, &[2]);
        [c[0] + self.std * e[0], c[1] + self.std * e[1]]
    }

    /// Nearest-centre classification.
    pub fn classify(&self, p: &[f64]) -> Mode {
        let d = |c: [f64; 2]| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
        if d(self.center_a) <= d(self.center_b) {
            Mode::A
        } else {
            Mode::B
        }
    }

    /// Fraction of rows of an `[N, 2]` tensor classified as `mode`.
    pub fn mode_fraction(&self, points: &Tensor, mode: Mode) -> f64 {
        let n = points.shape()[0];
        let hits = points
            .outer_iter()
            .filter(|r| self.classify(r.as_slice().expect("contiguous rows")) == mode)
            .count();
        hits as f64 / n.max(1) as f64
    }

    pub fn dataset<R: Rng + ?Sized>(&self, rng: &mut R, n: usize, neutral_share: f64) -> ConditionedDataset {
        let mut data = Vec::with_capacity(2 * n);
        let mut tokens = Vec::with_capacity(n);
        for _ in 0..n {
            let mode = if rng.random::<f64>() < self.weight_a {
                Mode::A
            } else {
                Mode::B
            };
            let p = self.sample_mode(rng, mode);
            data.extend_from_slice(&p);
            tokens.push(token_for_mode(rng, mode, neutral_share));
        }
        ConditionedDataset {
            samples: tensor::from_vec(&[n, 2], data).expect("shape"),
            tokens,
        }
    }

    pub fn points<R: Rng + ?Sized>(&self, rng: &mut R, n: usize, mode: Mode) -> Tensor {
        let data = (0..n).flat_map(|_| self.sample_mode(rng, mode)).collect();
        tensor::from_vec(&[n, 2], data).expect("shape")
    }
}

/// Side length of the image latent.
pub const LATENT_SIZE: usize = 16;

fn disk(img: &mut [f64], size: usize, cy: f64, cx: f64, r: f64, level: f64) {
    for y in 0..size {
        for x in 0..size {
            let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
            let cover = (r + 0.5 - d).clamp(0.0, 1.0);
            let v = level * cover;
            let px = &mut img[y * size + x];
            *px = px.max(v);
        }
    }
}

/// A `[1, S, S]` image in `[0, 1]` of the given mode.
pub fn render_image<R: Rng + ?Sized>(rng: &mut R, mode: Mode, size: usize) -> Tensor {
    let mut img = vec![0.0; size * size];
    let s = size as f64;
    match mode {
        Mode::A => {
            let r = rng.random_range(0.2 * s..0.26 * s);
            let cy = rng.random_range(0.35 * s..0.65 * s);
            let cx = rng.random_range(0.35 * s..0.65 * s);
            disk(&mut img, size, cy, cx, r, rng.random_range(0.9..1.0));
        }
        Mode::B => {
            for _ in 0..3 {
                let cy = rng.random_range(0.15 * s..0.85 * s);
                let cx = rng.random_range(0.15 * s..0.85 * s);
                disk(&mut img, size, cy, cx, 0.08 * s, rng.random_range(0.5..0.65));
            }
        }
    }
    tensor::from_vec(&[1, size, size], img).expect("shape")
}

/// Smoothed uniform noise in `[0, 1]`, the non-image control class.
pub fn render_noise<R: Rng + ?Sized>(rng: &mut R, size: usize) -> Tensor {
    let raw: Vec<f64> = (0..size * size).map(|_| rng.random::<f64>()).collect();
    let mut img = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let mut acc = 0.0;
            let mut n = 0.0;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                    if yy >= 0 && xx >= 0 && (yy as usize) < size && (xx as usize) < size {
                        acc += raw[yy as usize * size + xx as usize];
                        n += 1.0;
                    }
                }
            }
            img[y * size + x] = acc / n;
        }
    }
    tensor::from_vec(&[1, size, size], img).expect("shape")
}

/// Image in `[0, 1]` to latent in `[-1, 1]`.
pub fn image_to_latent(img: &Tensor) -> Tensor {
    img.mapv(|v| 2.0 * v - 1.0)
}

pub fn latent_to_image(z: &Tensor) -> Tensor {
    z.mapv(|v| 0.5 * (v + 1.0))
}

/// Conditioned image latents `[N, 1, S, S]` drawn half from each mode.
pub fn image_dataset<R: Rng + ?Sized>(rng: &mut R, n: usize, weight_a: f64, neutral_share: f64) -> ConditionedDataset {
    let mut data = Vec::with_capacity(n * LATENT_SIZE * LATENT_SIZE);
    let mut tokens = Vec::with_capacity(n);
    for _ in 0..n {
        let mode = if rng.random::<f64>() < weight_a {
            Mode::A
        } else {
            Mode::B
        };
        let img = render_image(rng, mode, LATENT_SIZE);
        data.extend(image_to_latent(&img).iter().copied());
        tokens.push(token_for_mode(rng, mode, neutral_share));
    }
    ConditionedDataset {
        samples: tensor::from_vec(&[n, 1, LATENT_SIZE, LATENT_SIZE], data).expect("shape"),
        tokens,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mixture_dataset_is_balanced_and_classifiable() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gm = GaussianMixture2d::default();
        let ds = gm.dataset(&mut rng, 4000, 0.5);
        ds.validate().unwrap();
        let fa = gm.mode_fraction(&ds.samples, Mode::A);
        assert!((fa - 0.5).abs() < 0.05, "{fa}");
        let a = gm.points(&mut rng, 500, Mode::A);
        assert_eq!(gm.mode_fraction(&a, Mode::A), 1.0);
    }

    #[test]
    fn positive_tokens_only_label_mode_a() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let t = token_for_mode(&mut rng, Mode::A, 0.5);
            assert!(matches!(vocab::concept(t), Some(Concept::Positive | Concept::Neutral)));
        }
    }

    #[test]
    fn rendered_images_stay_in_unit_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for mode in [Mode::A, Mode::B] {
            let img = render_image(&mut rng, mode, 16);
            assert_eq!(img.shape(), &[1, 16, 16]);
            assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let z = image_to_latent(&render_noise(&mut rng, 16));
        assert!(z.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
