//! End-to-end run: data, training, guided sampling, masks, evaluation.
//!
//! Layout of a run directory:
//!
//! ```text
//! config.toml              resolved configuration
//! run.json                 seeds, checkpoint hashes, stage summaries
//! checkpoints/             denoiser.json, discriminator.json, adapter.json
//! corpus/                  fixture corpus (image backbone)
//! manifest.jsonl, manifest_fakes/
//!                          filtered dataset and its generated fakes
//! samples/base/, samples/guided/
//!                          PNGs, or points.jsonl for the point backbone
//! samples/prompts.txt      one prompt per sample
//! masks/                   final cumulative masks (image backbone)
//! trace.jsonl              per-sample, per-step guidance trace
//! report.json, report_base.json, table.md
//! ```
//!
//! Every file is a function of the configuration alone, so two runs of the
//! same configuration agree byte for byte.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::info;

use crate::checkpoint::{write_atomic, Checkpoint, CheckpointKind};
use crate::config::{validate_config, Backbone, RunConfig, StageSeeds};
use crate::dataset::{self, SamplerGenerator};
use crate::denoiser::{train_toy_denoiser, ToyDenoiser};
use crate::discriminator::{accuracy, train_discriminator, Discriminator, LabelledSet};
use crate::error::{Error, Result};
use crate::guidance::{sample_guided, GuidanceConfig, GuidanceModels, GuidedOutput};
use crate::lora::{init_adapter, train_slider, LoraAdapter};
use crate::metrics::{evaluate_samples, render_table, EvalOptions, MetricsReport, ToyEmbedder, ToyJointEmbedder};
use crate::sampler::{sample_base, seed_range};
use crate::schedule::{NoiseSchedule, SamplerConfig};
use crate::tensor::{self, Tensor};
use crate::toy_data::{self, ConditionedDataset, GaussianMixture2d, Mode};
use crate::vocab::{self, Token};

/// Attaches the stage name to an error.
fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Stage { .. } => e,
        e => Error::Stage {
            stage: name,
            source: Box::new(e),
        },
    })
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Synthetic training set for the configured backbone.
pub fn training_data(cfg: &RunConfig) -> ConditionedDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds().data);
    match cfg.backbone {
        Backbone::Point => GaussianMixture2d::default().dataset(&mut rng, cfg.data.train_size, 0.5),
        Backbone::Image => toy_data::image_dataset(&mut rng, cfg.data.train_size, 0.5, 0.5),
    }
}

fn check_schedule(path: &Path, stored: Option<&crate::schedule::ScheduleConfig>, sched: &NoiseSchedule) -> Result<()> {
    match stored {
        Some(s) if s != sched.config() => Err(Error::Checkpoint(format!(
            "{} was trained with a different noise schedule",
            path.display()
        ))),
        _ => Ok(()),
    }
}

/// Loads the configured denoiser checkpoint or trains one and saves it to
/// `out`.
pub fn obtain_denoiser(cfg: &RunConfig, sched: &NoiseSchedule, out: &Path) -> Result<ToyDenoiser> {
    if let Some(p) = &cfg.checkpoints.denoiser {
        let ck = Checkpoint::<ToyDenoiser>::load(p, CheckpointKind::Denoiser)?;
        check_schedule(p, ck.schedule.as_ref(), sched)?;
        if ck.model.arch != cfg.backbone.denoiser_arch() {
            return Err(Error::Checkpoint(format!(
                "{} does not match the {:?} backbone",
                p.display(),
                cfg.backbone
            )));
        }
        info!(path = %p.display(), "loaded denoiser");
        return Ok(ck.model);
    }
    let seeds = cfg.seeds();
    let data = training_data(cfg);
    let model = ToyDenoiser::new(cfg.backbone.denoiser_arch(), seeds.denoiser_init)?;
    let tcfg = cfg.denoiser_train_config();
    let (model, report) = train_toy_denoiser(model, &data, sched, &tcfg)?;
    info!(initial = report.initial(), last = report.last(), "trained denoiser");
    Checkpoint::new(
        CheckpointKind::Denoiser,
        tcfg.seed,
        &tcfg,
        Some(*sched.config()),
        model.clone(),
    )
    .save(out)?;
    Ok(model)
}

/// Real examples paired 1:1 with unguided samples from `model`.
///
/// Image backbone: a fixture corpus under `run_dir/corpus` is filtered,
/// captioned and paired with fakes into `run_dir/manifest.jsonl`.
/// Point backbone: mode-A points against base samples.
pub fn discriminator_data(
    cfg: &RunConfig,
    model: &ToyDenoiser,
    sched: &NoiseSchedule,
    run_dir: &Path,
) -> Result<LabelledSet> {
    let seeds = cfg.seeds();
    let fake_sampler = SamplerConfig {
        num_steps: cfg.data.fake_steps,
        ..cfg.sampler_config()
    };
    match cfg.backbone {
        Backbone::Image => {
            let corpus = run_dir.join("corpus");
            dataset::write_fixture_corpus(
                &corpus,
                cfg.data.per_source,
                cfg.data.good_frac,
                toy_data::LATENT_SIZE * 2,
                seeds.data,
            )?;
            let manifest = run_dir.join("manifest.jsonl");
            let captioner = dataset::captioner_from_spec(&cfg.data.captioner)?;
            let generator = SamplerGenerator {
                model,
                schedule: sched,
                decoder: cfg.backbone.decoder(),
                sampler: fake_sampler,
            };
            let m = dataset::build_dataset(
                &corpus,
                &manifest,
                &cfg.detector.build(),
                captioner.as_ref(),
                &generator,
                &cfg.build_config(),
            )?;
            info!(
                real = m.header.counts.real,
                fake = m.header.counts.fake,
                "built dataset"
            );
            dataset::load_labelled_set(&manifest)
        }
        Backbone::Point => {
            let n = (cfg.data.train_size / 10).max(2);
            let mut rng = ChaCha8Rng::seed_from_u64(seeds.fakes);
            let real = GaussianMixture2d::default().points(&mut rng, n, Mode::A);
            let fake = sample_base(
                model,
                sched,
                &vec![vocab::NEUTRAL_TOKEN; n],
                &seed_range(seeds.fakes, n),
                &fake_sampler,
            )?;
            let samples = ndarray::concatenate(ndarray::Axis(0), &[real.view(), fake.view()])
                .map_err(|e| Error::invalid(e.to_string()))?;
            Ok(LabelledSet {
                samples,
                tokens: vec![vocab::NEUTRAL_TOKEN; 2 * n],
                labels: (0..2 * n).map(|i| i < n).collect(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorSummary {
    pub loaded: bool,
    pub held_out_accuracy: Option<f64>,
    pub final_loss: Option<f64>,
}

/// Loads the configured discriminator or trains one on
/// [`discriminator_data`] and saves it to `out`.
pub fn obtain_discriminator(
    cfg: &RunConfig,
    model: &ToyDenoiser,
    sched: &NoiseSchedule,
    run_dir: &Path,
    out: &Path,
) -> Result<(Discriminator, DiscriminatorSummary)> {
    if let Some(p) = &cfg.checkpoints.discriminator {
        let ck = Checkpoint::<Discriminator>::load(p, CheckpointKind::Discriminator)?;
        info!(path = %p.display(), "loaded discriminator");
        let summary = DiscriminatorSummary {
            loaded: true,
            held_out_accuracy: None,
            final_loss: None,
        };
        return Ok((ck.model, summary));
    }
    let seeds = cfg.seeds();
    let set = discriminator_data(cfg, model, sched, run_dir)?;
    let (train, held_out) = set.split(cfg.discriminator.held_out, seeds.discriminator_train);
    let disc = Discriminator::new(cfg.backbone.discriminator_arch(), false, seeds.discriminator_init)?;
    let tcfg = cfg.disc_train_config();
    let (disc, report) = train_discriminator(disc, &train, &tcfg)?;
    let acc = if held_out.is_empty() {
        None
    } else {
        Some(accuracy(&disc, &held_out)?)
    };
    info!(loss = report.last(), held_out_accuracy = ?acc, "trained discriminator");
    Checkpoint::new(CheckpointKind::Discriminator, tcfg.seed, &tcfg, None, disc.clone()).save(out)?;
    Ok((
        disc,
        DiscriminatorSummary {
            loaded: false,
            held_out_accuracy: acc,
            final_loss: Some(report.last()),
        },
    ))
}

/// Loads the configured adapter or trains one on the default prompt sets and
/// saves it to `out`.
pub fn obtain_adapter(cfg: &RunConfig, model: &ToyDenoiser, sched: &NoiseSchedule, out: &Path) -> Result<LoraAdapter> {
    if let Some(p) = &cfg.checkpoints.adapter {
        let ck = Checkpoint::<LoraAdapter>::load(p, CheckpointKind::Adapter)?;
        ck.model.check_base(model)?;
        info!(path = %p.display(), "loaded adapter");
        return Ok(ck.model);
    }
    let seeds = cfg.seeds();
    let adapter = init_adapter(model, cfg.lora.rank, None, seeds.adapter_init)?;
    let tcfg = cfg.slider_train_config();
    let (adapter, report) = train_slider(model, adapter, &vocab::default_prompt_sets(), sched, None, &tcfg)?;
    let (first, last) = crate::lora::loss_ends(&report.epoch_losses, 0.1);
    info!(first, last, "trained adapter");
    Checkpoint::new(
        CheckpointKind::Adapter,
        tcfg.seed,
        &tcfg,
        Some(*sched.config()),
        adapter.clone(),
    )
    .save(out)?;
    Ok(adapter)
}

/// Writes one sample per row: PNGs for images, a JSONL of coordinates for
/// points.
pub fn write_samples(dir: &Path, samples: &Tensor) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if samples.ndim() == 2 {
        let text: String = samples
            .outer_iter()
            .map(|r| serde_json::to_string(&r.iter().copied().collect::<Vec<f64>>()).expect("floats serialize") + "\n")
            .collect();
        return write_atomic(&dir.join("points.jsonl"), text.as_bytes());
    }
    for (i, img) in samples.outer_iter().enumerate() {
        dataset::write_gray_png(
            &dir.join(format!("sample_{i:04}.png")),
            &img.mapv(|v| v.clamp(0.0, 1.0)),
        )?;
    }
    Ok(())
}

/// Reads back what [`write_samples`] wrote.
pub fn read_samples(dir: &Path) -> Result<Vec<Tensor>> {
    let points = dir.join("points.jsonl");
    if points.is_file() {
        let text = std::fs::read_to_string(&points).map_err(|e| Error::io(&points, e))?;
        return text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let v: Vec<f64> = serde_json::from_str(l)?;
                tensor::from_vec(&[v.len()], v)
            })
            .collect();
    }
    crate::metrics::load_pngs(dir)
}

/// Everything needed to reproduce a run, written to `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub seeds: StageSeeds,
    pub sample_seeds: Vec<u64>,
    /// Checkpoint path (relative to the run directory when inside it) to
    /// SHA-256 of its bytes.
    pub checkpoints: IndexMap<String, String>,
    pub discriminator: DiscriminatorSummary,
    /// Share of samples in the well-formed mode, point backbone only.
    pub mode_a_fraction: Option<IndexMap<String, f64>>,
    pub reports: Vec<MetricsReport>,
}

fn rel(p: &Path, base: &Path) -> String {
    p.strip_prefix(base).unwrap_or(p).to_string_lossy().into_owned()
}

/// Runs every stage in order and fills `cfg.out_dir`.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunSummary> {
    stage("validate", validate_config(cfg))?;
    let dir = cfg.out_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let toml = cfg.to_toml()?;
    write_atomic(&dir.join("config.toml"), toml.as_bytes())?;
    let seeds = cfg.seeds();
    let sched = NoiseSchedule::new(cfg.schedule)?;
    let ck_dir = dir.join("checkpoints");

    let ck_path = |name: &str, configured: &Option<PathBuf>| configured.clone().unwrap_or_else(|| ck_dir.join(name));
    let den_path = ck_path("denoiser.json", &cfg.checkpoints.denoiser);
    let disc_path = ck_path("discriminator.json", &cfg.checkpoints.discriminator);
    let ad_path = ck_path("adapter.json", &cfg.checkpoints.adapter);

    let model = stage("denoiser", obtain_denoiser(cfg, &sched, &den_path))?;
    let (disc, disc_summary) = stage(
        "discriminator",
        obtain_discriminator(cfg, &model, &sched, &dir, &disc_path),
    )?;
    let adapter = stage("adapter", obtain_adapter(cfg, &model, &sched, &ad_path))?;

    let n = cfg.sample.count;
    let token = cfg.prompt_token();
    let cond: Vec<Token> = vec![token; n];
    let sample_seeds = seed_range(seeds.samples, n);
    let sampler = cfg.sampler_config();
    let detector = cfg.detector.build();
    let models = GuidanceModels {
        model: &model,
        schedule: &sched,
        decoder: cfg.backbone.decoder(),
        discriminator: Some(&disc),
        adapter: Some(&adapter),
        detector: Some(&detector),
    };

    let base = stage(
        "sample",
        sample_guided(&models, &cond, &sample_seeds, &GuidanceConfig::disabled(), &sampler),
    )?;
    let guided: GuidedOutput = stage(
        "sample",
        sample_guided(&models, &cond, &sample_seeds, &cfg.guidance, &sampler),
    )?;
    info!(samples = n, "sampled");

    stage("write", {
        let sdir = dir.join("samples");
        write_samples(&sdir.join("base"), &base.images)
            .and_then(|_| write_samples(&sdir.join("guided"), &guided.images))
            .and_then(|_| {
                let phrase = vocab::phrase(token).unwrap_or("hands");
                write_atomic(&sdir.join("prompts.txt"), format!("{phrase}\n").repeat(n).as_bytes())
            })
            .and_then(|_| write_atomic(&dir.join("trace.jsonl"), guided.trace_jsonl().as_bytes()))
            .and_then(|_| {
                if guided.masks.is_empty() {
                    return Ok(());
                }
                let mdir = dir.join("masks");
                std::fs::create_dir_all(&mdir).map_err(|e| Error::io(&mdir, e))?;
                for (i, m) in guided.masks.iter().enumerate() {
                    m.grid.write_png(&mdir.join(format!("mask_{i:04}.png")))?;
                }
                Ok(())
            })
    })?;

    let reports = stage("evaluate", evaluate_run(cfg, &dir, &base, &guided, &cond))?;

    let mode_a_fraction = (cfg.backbone == Backbone::Point).then(|| {
        let gm = GaussianMixture2d::default();
        IndexMap::from([
            ("base".to_string(), gm.mode_fraction(&base.latents, Mode::A)),
            ("guided".to_string(), gm.mode_fraction(&guided.latents, Mode::A)),
        ])
    });
    let mut checkpoints = IndexMap::new();
    for p in [&den_path, &disc_path, &ad_path] {
        checkpoints.insert(rel(p, &dir), file_sha256(p)?);
    }
    let summary = RunSummary {
        config_hash: cfg.content_hash(),
        seeds,
        sample_seeds,
        checkpoints,
        discriminator: disc_summary,
        mode_a_fraction,
        reports,
    };
    let json = serde_json::to_string_pretty(&summary)? + "\n";
    write_atomic(&dir.join("run.json"), json.as_bytes())?;
    Ok(summary)
}

/// Reference samples the run is scored against: the kept real corpus images,
/// or well-formed points.
fn reference_samples(cfg: &RunConfig, dir: &Path) -> Result<Vec<Tensor>> {
    match cfg.backbone {
        Backbone::Image => {
            let manifest_path = dir.join("manifest.jsonl");
            if !manifest_path.is_file() {
                return Err(Error::invalid(format!(
                    "no reference set: {} is missing (a loaded discriminator skips the dataset build)",
                    manifest_path.display()
                )));
            }
            let m = dataset::DatasetManifest::load(&manifest_path)?;
            m.records
                .iter()
                .filter(|r| r.label == dataset::Label::Real)
                .map(|r| dataset::read_gray_png(&m.resolve(&manifest_path, r)))
                .collect()
        }
        Backbone::Point => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds().data ^ 0x5eed);
            let pts = GaussianMixture2d::default().points(&mut rng, cfg.sample.count, Mode::A);
            Ok(tensor::rows(&pts))
        }
    }
}

fn evaluate_run(
    cfg: &RunConfig,
    dir: &Path,
    base: &GuidedOutput,
    guided: &GuidedOutput,
    cond: &[Token],
) -> Result<Vec<MetricsReport>> {
    let reference = reference_samples(cfg, dir)?;
    let detector = cfg.detector.build();
    let joint = ToyJointEmbedder::default();
    let hash = cfg.content_hash();
    let mut reports = Vec::new();
    for (id, out, file) in [("base", base, "report_base.json"), ("guided", guided, "report.json")] {
        let images: Vec<Tensor> =
            tensor::rows(
                &out.images
                    .mapv(|v| if out.images.ndim() > 2 { v.clamp(0.0, 1.0) } else { v }),
            );
        let opts = EvalOptions {
            model_id: id.into(),
            config_hash: hash.clone(),
            tau_detect: cfg.eval.tau_detect,
            kid: cfg.kid_config(),
            include_misses: false,
        };
        let r = evaluate_samples(&images, &reference, Some(cond), &detector, &ToyEmbedder, &joint, &opts)?;
        write_atomic(&dir.join(file), r.to_json().as_bytes())?;
        reports.push(r);
    }
    write_atomic(&dir.join("table.md"), render_table(&reports).as_bytes())?;
    Ok(reports)
}
