//! Run configuration.
//!
//! A run is described by one TOML file. Every section is optional and falls
//! back to the default profile; unknown keys are rejected.
//!
//! ```toml
//! seed = 0
//! backbone = "image"          # "image" or "point"
//! out_dir = "runs/default"
//!
//! [schedule]                  # kind, num_train_steps, beta_start, beta_end
//! [sampler]                   # steps, eta, cfg_scale
//! [guidance]                  # w, v, tau, window_t_high, window_t_low,
//!                             # guidance_start_step, start_counting,
//!                             # textual_mode, mask_dilation
//! [sample]                    # count, prompt
//! [detector]                  # kind = "blob", intensity_threshold
//! [data]                      # train_size, per_source, good_frac, threshold,
//!                             # captioner, fake_steps
//! [denoiser]                  # epochs, batch_size, lr, cond_dropout
//! [discriminator]             # epochs, batch_size, lr, augment, held_out
//! [lora]                      # rank, lr, steps, batch_size, v_train
//! [eval]                      # tau_detect, kid_subsets, kid_subset_size
//! [checkpoints]               # denoiser, discriminator, adapter (paths)
//! ```
//!
//! Every stochastic stage draws from its own seed, derived from `seed` by
//! [`StageSeeds::derive`]. Only the captioner endpoint and its credential may
//! come from the environment ([`CAPTIONER_URL_ENV`] and
//! [`dataset::CAPTIONER_TOKEN_ENV`]).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{self, BuildConfig};
use crate::denoiser::{ConvArch, DenoiserArch, DenoiserTrainConfig, PointArch};
use crate::discriminator::{DiscTrainConfig, DiscriminatorArch};
use crate::error::{Error, FieldError, Result};
use crate::guidance::GuidanceConfig;
use crate::lora::{self, SliderTrainConfig};
use crate::mask::BlobDetector;
use crate::metrics::{KidConfig, DEFAULT_TAU_DETECT};
use crate::schedule::{SamplerConfig, ScheduleConfig, ScheduleKind};
use crate::toy_data::LATENT_SIZE;
use crate::vocab::{self, Token};

/// Overrides `data.captioner` when set.
pub const CAPTIONER_URL_ENV: &str = "HANDGUIDE_CAPTIONER_URL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    /// Two-dimensional points, no decoder, no masks.
    Point,
    /// 16x16 latents decoded to 32x32 images.
    Image,
}

impl Backbone {
    pub fn denoiser_arch(self) -> DenoiserArch {
        match self {
            Backbone::Point => DenoiserArch::Point(PointArch::default()),
            Backbone::Image => DenoiserArch::Conv(ConvArch::default()),
        }
    }

    pub fn decoder(self) -> crate::decoder::Decoder {
        match self {
            Backbone::Point => crate::decoder::Decoder::Identity,
            Backbone::Image => crate::decoder::Decoder::Upsample { factor: 2 },
        }
    }

    pub fn discriminator_arch(self) -> DiscriminatorArch {
        match self {
            Backbone::Point => DiscriminatorArch::Point { dim: 2, hidden: 32 },
            Backbone::Image => DiscriminatorArch::Conv { size: LATENT_SIZE * 2 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub steps: usize,
    pub eta: f64,
    pub cfg_scale: f64,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let s = SamplerConfig::default();
        Self {
            steps: s.num_steps,
            eta: s.eta,
            cfg_scale: s.cfg_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub count: usize,
    /// Vocabulary phrase or free text mapped to its closest phrase.
    pub prompt: String,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            count: 200,
            prompt: "hands".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DetectorConfig {
    Blob { intensity_threshold: f64 },
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig::Blob {
            intensity_threshold: BlobDetector::default().intensity_threshold,
        }
    }
}

impl DetectorConfig {
    pub fn build(&self) -> BlobDetector {
        match *self {
            DetectorConfig::Blob { intensity_threshold } => BlobDetector { intensity_threshold },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Samples in the synthetic denoiser training set.
    pub train_size: usize,
    /// Images written per source in the fixture corpus (image backbone).
    pub per_source: usize,
    /// Share of well-formed images in each source.
    pub good_frac: f64,
    /// Detector score a real image needs to be kept, inclusive.
    pub threshold: f64,
    /// `stub` or `http:<url>`.
    pub captioner: String,
    /// Sampler steps used to draw fakes.
    pub fake_steps: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            train_size: 2000,
            per_source: 120,
            good_frac: 0.6,
            threshold: dataset::DEFAULT_THRESHOLD,
            captioner: "stub".into(),
            fake_steps: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub cond_dropout: f64,
}

impl Default for DenoiserSection {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            lr: DenoiserTrainConfig::default().lr,
            cond_dropout: DenoiserTrainConfig::default().cond_dropout,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub augment: bool,
    /// Share of the labelled set held out for the accuracy check.
    pub held_out: f64,
}

impl Default for DiscriminatorSection {
    fn default() -> Self {
        let d = DiscTrainConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            lr: d.lr,
            augment: d.augment,
            held_out: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoraSection {
    pub rank: usize,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub v_train: f64,
}

impl Default for LoraSection {
    fn default() -> Self {
        Self {
            rank: lora::DEFAULT_RANK,
            lr: lora::DEFAULT_LR,
            steps: lora::DEFAULT_SLIDER_STEPS,
            batch_size: 1,
            v_train: lora::DEFAULT_V_TRAIN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub tau_detect: f64,
    pub kid_subsets: usize,
    pub kid_subset_size: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let k = KidConfig::default();
        Self {
            tau_detect: DEFAULT_TAU_DETECT,
            kid_subsets: k.subsets,
            kid_subset_size: k.subset_size,
        }
    }
}

/// Trained artifacts to load instead of training them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckpointPaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub denoiser: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discriminator: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adapter: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub backbone: Backbone,
    pub out_dir: PathBuf,
    pub schedule: ScheduleConfig,
    pub sampler: SamplerSection,
    pub guidance: GuidanceConfig,
    pub sample: SampleSection,
    pub detector: DetectorConfig,
    pub data: DataSection,
    pub denoiser: DenoiserSection,
    pub discriminator: DiscriminatorSection,
    pub lora: LoraSection,
    pub eval: EvalSection,
    pub checkpoints: CheckpointPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            backbone: Backbone::Image,
            out_dir: PathBuf::from("runs/default"),
            schedule: ScheduleConfig::default(),
            sampler: SamplerSection::default(),
            guidance: GuidanceConfig::default(),
            sample: SampleSection::default(),
            detector: DetectorConfig::default(),
            data: DataSection::default(),
            denoiser: DenoiserSection::default(),
            discriminator: DiscriminatorSection::default(),
            lora: LoraSection::default(),
            eval: EvalSection::default(),
            checkpoints: CheckpointPaths::default(),
        }
    }
}

/// Per-stage seeds, all derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub run: u64,
    pub data: u64,
    pub denoiser_init: u64,
    pub denoiser_train: u64,
    pub fakes: u64,
    pub discriminator_init: u64,
    pub discriminator_train: u64,
    pub adapter_init: u64,
    pub adapter_train: u64,
    /// First per-sample seed; sample `i` uses `samples + i`.
    pub samples: u64,
}

impl StageSeeds {
    pub fn derive(seed: u64) -> Self {
        let s = |k: u64| seed.wrapping_mul(1_000_003).wrapping_add(k * 7919);
        Self {
            run: seed,
            data: s(1),
            denoiser_init: s(2),
            denoiser_train: s(3),
            fakes: s(4),
            discriminator_init: s(5),
            discriminator_train: s(6),
            adapter_init: s(7),
            adapter_train: s(8),
            samples: s(9),
        }
    }
}

impl RunConfig {
    /// Named profiles: `default` (image backbone) and `smoke` (point backbone,
    /// `w = 0.2`).
    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "smoke" => Ok(Self::smoke()),
            _ => Err(Error::invalid(format!(
                "unknown profile `{name}`; expected `default` or `smoke`"
            ))),
        }
    }

    pub fn smoke() -> Self {
        Self {
            backbone: Backbone::Point,
            out_dir: PathBuf::from("runs/smoke"),
            guidance: GuidanceConfig {
                w: 0.2,
                v: 0.5,
                ..GuidanceConfig::default()
            },
            data: DataSection {
                train_size: 20_000,
                ..DataSection::default()
            },
            denoiser: DenoiserSection {
                epochs: 30,
                batch_size: 256,
                ..DenoiserSection::default()
            },
            discriminator: DiscriminatorSection {
                epochs: 20,
                ..DiscriminatorSection::default()
            },
            ..Self::default()
        }
    }

    pub fn seeds(&self) -> StageSeeds {
        StageSeeds::derive(self.seed)
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            num_steps: self.sampler.steps,
            eta: self.sampler.eta,
            cfg_scale: self.sampler.cfg_scale,
            seed: self.seeds().samples,
        }
    }

    pub fn denoiser_train_config(&self) -> DenoiserTrainConfig {
        DenoiserTrainConfig {
            epochs: self.denoiser.epochs,
            batch_size: self.denoiser.batch_size,
            lr: self.denoiser.lr,
            cond_dropout: self.denoiser.cond_dropout,
            seed: self.seeds().denoiser_train,
        }
    }

    pub fn disc_train_config(&self) -> DiscTrainConfig {
        DiscTrainConfig {
            epochs: self.discriminator.epochs,
            batch_size: self.discriminator.batch_size,
            lr: self.discriminator.lr,
            augment: self.discriminator.augment,
            seed: self.seeds().discriminator_train,
        }
    }

    pub fn slider_train_config(&self) -> SliderTrainConfig {
        SliderTrainConfig {
            v_train: self.lora.v_train,
            steps: self.lora.steps,
            lr: self.lora.lr,
            batch_size: self.lora.batch_size,
            seed: self.seeds().adapter_train,
        }
    }

    pub fn build_config(&self) -> BuildConfig {
        BuildConfig {
            threshold: self.data.threshold,
            fake_seed: self.seeds().fakes,
            ..BuildConfig::default()
        }
    }

    pub fn kid_config(&self) -> KidConfig {
        KidConfig {
            subsets: self.eval.kid_subsets,
            subset_size: self.eval.kid_subset_size,
            seed: self.seed,
        }
    }

    pub fn prompt_token(&self) -> Token {
        vocab::lookup(&self.sample.prompt).unwrap_or_else(|_| vocab::token_for_text(&self.sample.prompt))
    }

    /// Hash of every setting that can change results; `out_dir` is excluded.
    pub fn content_hash(&self) -> String {
        crate::checkpoint::config_hash(&Self {
            out_dir: PathBuf::new(),
            ..self.clone()
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("config does not serialize: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| format!("at byte {}", s.start))
                .unwrap_or_else(|| "config".into());
            Error::Config(vec![FieldError {
                field,
                message: e.message().to_string(),
            }])
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Applies the environment overrides; only the captioner endpoint may be
    /// set this way.
    pub fn apply_env(&mut self) {
        if let Ok(url) = std::env::var(CAPTIONER_URL_ENV) {
            if !url.is_empty() {
                self.data.captioner = format!("http:{url}");
            }
        }
    }
}

struct Checks(Vec<FieldError>);

impl Checks {
    fn check(&mut self, ok: bool, field: &str, message: impl FnOnce() -> String) {
        if !ok {
            self.0.push(FieldError {
                field: field.into(),
                message: message(),
            });
        }
    }

    fn positive(&mut self, v: usize, field: &str) {
        self.check(v > 0, field, || format!("must be positive, got {v}"));
    }

    fn rate(&mut self, v: f64, field: &str) {
        self.check(v.is_finite() && v > 0.0, field, || {
            format!("must be finite and > 0, got {v}")
        });
    }

    fn unit(&mut self, v: f64, field: &str) {
        self.check((0.0..=1.0).contains(&v), field, || {
            format!("must be in [0, 1], got {v}")
        });
    }
}

/// Checks every field; all violations are reported together. Referenced
/// checkpoints must exist.
pub fn validate_config(cfg: &RunConfig) -> Result<()> {
    let mut c = Checks(Vec::new());

    let sc = &cfg.schedule;
    let t_max = sc.num_train_steps;
    c.positive(t_max, "schedule.num_train_steps");
    if sc.kind == ScheduleKind::LinearBeta {
        c.check(
            0.0 < sc.beta_start && sc.beta_start < sc.beta_end && sc.beta_end < 1.0,
            "schedule.beta_start",
            || {
                format!(
                    "needs 0 < beta_start < beta_end < 1, got {} and {}",
                    sc.beta_start, sc.beta_end
                )
            },
        );
    }

    let s = &cfg.sampler;
    c.check(s.steps >= 1 && s.steps <= t_max, "sampler.steps", || {
        format!("must be in [1, {t_max}], got {}", s.steps)
    });
    c.check(s.eta >= 0.0 && s.eta.is_finite(), "sampler.eta", || {
        format!("must be >= 0, got {}", s.eta)
    });
    c.check(s.cfg_scale.is_finite(), "sampler.cfg_scale", || "must be finite".into());

    let g = &cfg.guidance;
    c.check(g.w.is_finite() && g.w >= 0.0, "guidance.w", || {
        format!("must be finite and >= 0, got {}", g.w)
    });
    c.check(g.v.is_finite(), "guidance.v", || format!("must be finite, got {}", g.v));
    c.unit(g.tau, "guidance.tau");
    c.check(g.window_t_low < g.window_t_high, "guidance.window_t_low", || {
        format!(
            "must be below window_t_high ({}), got {}",
            g.window_t_high, g.window_t_low
        )
    });
    c.check(g.window_t_high <= t_max, "guidance.window_t_high", || {
        format!("must be at most num_train_steps ({t_max}), got {}", g.window_t_high)
    });
    c.positive(g.guidance_start_step, "guidance.guidance_start_step");

    c.positive(cfg.sample.count, "sample.count");
    c.check(!cfg.sample.prompt.trim().is_empty(), "sample.prompt", || {
        "must not be empty".into()
    });

    let DetectorConfig::Blob { intensity_threshold } = cfg.detector;
    c.unit(intensity_threshold, "detector.intensity_threshold");

    let d = &cfg.data;
    c.positive(d.train_size, "data.train_size");
    c.unit(d.threshold, "data.threshold");
    c.unit(d.good_frac, "data.good_frac");
    c.check(d.fake_steps >= 1 && d.fake_steps <= t_max, "data.fake_steps", || {
        format!("must be in [1, {t_max}], got {}", d.fake_steps)
    });
    if cfg.backbone == Backbone::Image {
        c.positive(d.per_source, "data.per_source");
        if let Err(e) = dataset::captioner_from_spec(&d.captioner) {
            c.check(false, "data.captioner", || e.to_string());
        }
    }

    c.positive(cfg.denoiser.epochs, "denoiser.epochs");
    c.positive(cfg.denoiser.batch_size, "denoiser.batch_size");
    c.rate(cfg.denoiser.lr, "denoiser.lr");
    c.unit(cfg.denoiser.cond_dropout, "denoiser.cond_dropout");

    c.positive(cfg.discriminator.epochs, "discriminator.epochs");
    c.positive(cfg.discriminator.batch_size, "discriminator.batch_size");
    c.rate(cfg.discriminator.lr, "discriminator.lr");
    c.check(
        cfg.discriminator.held_out > 0.0 && cfg.discriminator.held_out < 1.0,
        "discriminator.held_out",
        || format!("must be in (0, 1), got {}", cfg.discriminator.held_out),
    );

    c.positive(cfg.lora.rank, "lora.rank");
    c.rate(cfg.lora.lr, "lora.lr");
    c.positive(cfg.lora.steps, "lora.steps");
    c.positive(cfg.lora.batch_size, "lora.batch_size");
    c.check(cfg.lora.v_train.is_finite(), "lora.v_train", || "must be finite".into());

    c.unit(cfg.eval.tau_detect, "eval.tau_detect");
    c.positive(cfg.eval.kid_subsets, "eval.kid_subsets");
    c.positive(cfg.eval.kid_subset_size, "eval.kid_subset_size");

    let ck = &cfg.checkpoints;
    for (field, path) in [
        ("checkpoints.denoiser", &ck.denoiser),
        ("checkpoints.discriminator", &ck.discriminator),
        ("checkpoints.adapter", &ck.adapter),
    ] {
        if let Some(p) = path {
            c.check(p.is_file(), field, || format!("{} does not exist", p.display()));
        }
    }

    if c.0.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(c.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fields(cfg: &RunConfig) -> Vec<String> {
        match validate_config(cfg) {
            Ok(()) => Vec::new(),
            Err(Error::Config(errs)) => errs.into_iter().map(|e| e.field).collect(),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn defaults_pass() {
        validate_config(&RunConfig::default()).unwrap();
        validate_config(&RunConfig::smoke()).unwrap();
    }

    #[test]
    fn default_profile_values() {
        let c = RunConfig::default();
        assert_eq!(c.sampler.steps, 100);
        assert_eq!(c.sampler.cfg_scale, 3.0);
        assert_eq!(c.sampler.eta, 0.0);
        assert_eq!(c.guidance.tau, 0.4);
        assert_eq!((c.guidance.window_t_high, c.guidance.window_t_low), (650, 150));
        assert_eq!(c.guidance.guidance_start_step, 65);
        assert_eq!(c.lora.rank, 4);
        assert_eq!(c.lora.lr, 1e-4);
        assert_eq!(c.lora.batch_size, 1);
        assert_eq!((c.discriminator.epochs, c.discriminator.batch_size), (120, 64));
        assert_eq!(c.data.threshold, 0.8);
        assert_eq!(c.schedule.num_train_steps, 1000);
        assert_eq!(c.sample.count, 200);
    }

    #[test]
    fn tau_out_of_range_names_the_field() {
        let mut c = RunConfig::default();
        c.guidance.tau = 1.5;
        let err = validate_config(&c).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("guidance.tau"), "{msg}");
        assert!(msg.contains("1.5"), "{msg}");
    }

    #[test]
    fn every_violation_is_reported() {
        let mut c = RunConfig::default();
        c.guidance.window_t_low = 700;
        c.sampler.steps = 0;
        c.guidance.tau = -0.1;
        let f = fields(&c);
        assert!(f.contains(&"guidance.window_t_low".to_string()));
        assert!(f.contains(&"sampler.steps".to_string()));
        assert!(f.contains(&"guidance.tau".to_string()));
    }

    #[test]
    fn missing_checkpoint_is_a_config_error() {
        let mut c = RunConfig::default();
        c.checkpoints.adapter = Some(PathBuf::from("/nonexistent/adapter.json"));
        assert_eq!(fields(&c), vec!["checkpoints.adapter".to_string()]);
    }

    #[test]
    fn toml_roundtrip_is_byte_identical() {
        for mut c in [RunConfig::default(), RunConfig::smoke()] {
            c.checkpoints.denoiser = Some(PathBuf::from("ck/denoiser.json"));
            c.guidance.v = -0.25;
            let a = c.to_toml().unwrap();
            let back = RunConfig::from_toml(&a).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_toml().unwrap(), a);
        }
    }

    #[test]
    fn partial_files_fill_in_defaults() {
        let c = RunConfig::from_toml("seed = 9\n[guidance]\nw = 0.3\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.guidance.w, 0.3);
        assert_eq!(c.guidance.tau, 0.4);
        assert_eq!(c.backbone, Backbone::Image);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("[guidance]\nomega = 1.0\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("omega"));
    }

    #[test]
    fn content_hash_ignores_output_location() {
        let a = RunConfig::default();
        let b = RunConfig {
            out_dir: PathBuf::from("elsewhere"),
            ..a.clone()
        };
        assert_eq!(a.content_hash(), b.content_hash());
        let c = RunConfig { seed: 1, ..a.clone() };
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn stage_seeds_are_distinct() {
        let s = StageSeeds::derive(5);
        let v = [
            s.data,
            s.denoiser_init,
            s.denoiser_train,
            s.fakes,
            s.discriminator_init,
            s.discriminator_train,
            s.adapter_init,
            s.adapter_train,
            s.samples,
        ];
        let set: std::collections::HashSet<_> = v.iter().collect();
        assert_eq!(set.len(), v.len());
        assert_eq!(StageSeeds::derive(5), s);
    }
}
