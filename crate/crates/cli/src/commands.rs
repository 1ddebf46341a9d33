use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use handguide::checkpoint::{write_atomic, Checkpoint, CheckpointKind};
use handguide::config::{validate_config, Backbone, RunConfig};
use handguide::dataset::{self, FakeGenerator, NoiseGenerator, SamplerGenerator};
use handguide::discriminator::{self, accuracy, Discriminator};
use handguide::guidance::{sample_guided, GuidanceModels};
use handguide::lora::{init_adapter, loss_ends, train_slider};
use handguide::metrics::{self, EvalOptions, KidConfig, ToyEmbedder, ToyJointEmbedder};
use handguide::pipeline::{self, file_sha256};
use handguide::sampler::seed_range;
use handguide::schedule::NoiseSchedule;
use handguide::toy_data;
use handguide::vocab::{self, PromptTripleSpec};
use serde_json::json;
use tracing::info;

use crate::{
    BackboneArg, BuildDatasetArgs, Common, EvaluateArgs, GuidanceFlags, ProfileArg, RunPipelineArgs, SampleArgs,
    TrainDenoiserArgs, TrainDiscriminatorArgs, TrainLoraArgs,
};

/// Config file (or profile), then environment, then flags.
fn base_config(common: &Common, profile: Option<ProfileArg>) -> Result<RunConfig> {
    let mut cfg = match (&common.config, profile) {
        (Some(p), _) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        (None, Some(ProfileArg::Smoke)) => RunConfig::smoke(),
        (None, _) => RunConfig::default(),
    };
    cfg.apply_env();
    if let Some(b) = common.backbone {
        cfg.backbone = match b {
            BackboneArg::Point => Backbone::Point,
            BackboneArg::Image => Backbone::Image,
        };
    }
    Ok(cfg)
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn apply_guidance(cfg: &mut RunConfig, g: &GuidanceFlags) {
    set(&mut cfg.guidance.w, g.w);
    set(&mut cfg.guidance.v, g.v);
    set(&mut cfg.guidance.tau, g.tau);
    set(&mut cfg.sampler.steps, g.steps);
    set(&mut cfg.sampler.cfg_scale, g.cfg);
}

fn finish(cfg: &RunConfig) -> Result<NoiseSchedule> {
    validate_config(cfg)?;
    Ok(NoiseSchedule::new(cfg.schedule)?)
}

fn print(value: serde_json::Value) {
    println!("{value}");
}

/// Loads the denoiser named by `flag` or the config, failing when neither is set.
fn load_denoiser(
    cfg: &mut RunConfig,
    flag: Option<PathBuf>,
    sched: &NoiseSchedule,
) -> Result<handguide::denoiser::ToyDenoiser> {
    set(&mut cfg.checkpoints.denoiser, flag.map(Some));
    let Some(p) = cfg.checkpoints.denoiser.clone() else {
        bail!("a denoiser checkpoint is required (--denoiser or checkpoints.denoiser)");
    };
    validate_config(cfg)?;
    Ok(pipeline::obtain_denoiser(cfg, sched, &p)?)
}

pub fn train_denoiser(a: TrainDenoiserArgs) -> Result<()> {
    let mut cfg = base_config(&a.common, None)?;
    cfg.seed = a.seed;
    set(&mut cfg.denoiser.epochs, a.epochs);
    set(&mut cfg.denoiser.batch_size, a.batch);
    set(&mut cfg.denoiser.lr, a.lr);
    set(&mut cfg.data.train_size, a.train_size);
    cfg.checkpoints.denoiser = None;
    let sched = finish(&cfg)?;
    pipeline::obtain_denoiser(&cfg, &sched, &a.out)?;
    print(json!({ "checkpoint": a.out, "sha256": file_sha256(&a.out)? }));
    Ok(())
}

pub fn train_discriminator(a: TrainDiscriminatorArgs) -> Result<()> {
    let mut cfg = base_config(&a.common, None)?;
    cfg.seed = a.seed;
    set(&mut cfg.discriminator.epochs, a.epochs);
    set(&mut cfg.discriminator.batch_size, a.batch);
    set(&mut cfg.discriminator.lr, a.lr);
    set(&mut cfg.discriminator.held_out, a.held_out);
    let sched = finish(&cfg)?;
    let set_ = match &a.data {
        Some(manifest) => dataset::load_labelled_set(manifest)?,
        None if cfg.backbone == Backbone::Point => {
            let model = load_denoiser(&mut cfg, a.denoiser, &sched)?;
            let dir = a.out.parent().unwrap_or(Path::new("."));
            pipeline::discriminator_data(&cfg, &model, &sched, dir)?
        }
        None => bail!("the image backbone needs --data <manifest>; build one with build-dataset"),
    };
    let seeds = cfg.seeds();
    let (train, held_out) = set_.split(cfg.discriminator.held_out, seeds.discriminator_train);
    let disc = Discriminator::new(cfg.backbone.discriminator_arch(), false, seeds.discriminator_init)?;
    let tcfg = cfg.disc_train_config();
    let (disc, report) = discriminator::train_discriminator(disc, &train, &tcfg)?;
    let acc = if held_out.is_empty() {
        None
    } else {
        Some(accuracy(&disc, &held_out)?)
    };
    Checkpoint::new(CheckpointKind::Discriminator, tcfg.seed, &tcfg, None, disc).save(&a.out)?;
    print(json!({
        "checkpoint": a.out,
        "train": train.len(),
        "held_out": held_out.len(),
        "held_out_accuracy": acc,
        "final_loss": report.last(),
    }));
    Ok(())
}

pub fn train_lora(a: TrainLoraArgs) -> Result<()> {
    let mut cfg = base_config(&a.common, None)?;
    cfg.seed = a.seed;
    set(&mut cfg.lora.rank, a.rank);
    set(&mut cfg.lora.lr, a.lr);
    set(&mut cfg.lora.steps, a.steps);
    set(&mut cfg.lora.batch_size, a.batch);
    let sched = finish(&cfg)?;
    let triples = match &a.triples {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let specs: Vec<PromptTripleSpec> =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            specs
                .iter()
                .map(PromptTripleSpec::resolve)
                .collect::<handguide::Result<Vec<_>>>()?
        }
        None => vocab::default_prompt_sets(),
    };
    let model = load_denoiser(&mut cfg, a.denoiser, &sched)?;
    let seeds = cfg.seeds();
    let adapter = init_adapter(&model, cfg.lora.rank, None, seeds.adapter_init)?;
    let tcfg = cfg.slider_train_config();
    let (adapter, report) = train_slider(&model, adapter, &triples, &sched, None, &tcfg)?;
    let (first, last) = loss_ends(&report.epoch_losses, 0.1);
    Checkpoint::new(
        CheckpointKind::Adapter,
        tcfg.seed,
        &tcfg,
        Some(*sched.config()),
        adapter,
    )
    .save(&a.out)?;
    print(json!({ "checkpoint": a.out, "triples": triples.len(), "loss_first": first, "loss_last": last }));
    Ok(())
}

pub fn build_dataset(a: BuildDatasetArgs) -> Result<()> {
    let mut cfg = base_config(&a.common, None)?;
    cfg.seed = a.seed;
    set(&mut cfg.data.threshold, a.threshold);
    set(&mut cfg.data.captioner, a.captioner);
    let sched = finish(&cfg)?;
    let captioner = dataset::captioner_from_spec(&cfg.data.captioner)?;
    let mut build = cfg.build_config();
    build.max_source_share = a.max_source_share.or(build.max_source_share);
    set(&mut build.max_caption_failure_rate, a.max_caption_failure_rate);

    let model = match a.denoiser.or(cfg.checkpoints.denoiser.clone()) {
        Some(p) => {
            if cfg.backbone != Backbone::Image {
                bail!("fakes are images; use the image backbone with --denoiser");
            }
            Some(load_denoiser(&mut cfg, Some(p), &sched)?)
        }
        None => None,
    };
    let sampler_gen;
    let noise_gen = NoiseGenerator {
        size: toy_data::LATENT_SIZE * cfg.backbone.decoder().factor(),
    };
    let generator: &dyn FakeGenerator = match &model {
        Some(m) => {
            sampler_gen = SamplerGenerator {
                model: m,
                schedule: &sched,
                decoder: cfg.backbone.decoder(),
                sampler: handguide::schedule::SamplerConfig {
                    num_steps: cfg.data.fake_steps,
                    ..cfg.sampler_config()
                },
            };
            &sampler_gen
        }
        None => &noise_gen,
    };
    let m = dataset::build_dataset(
        &a.input,
        &a.out,
        &cfg.detector.build(),
        captioner.as_ref(),
        generator,
        &build,
    )?;
    print(json!({ "manifest": a.out, "counts": m.header.counts }));
    Ok(())
}

pub fn sample(a: SampleArgs) -> Result<()> {
    let mut cfg = base_config(&a.common, None)?;
    cfg.seed = a.seed;
    apply_guidance(&mut cfg, &a.guidance);
    set(&mut cfg.sample.prompt, a.prompt);
    cfg.sample.count = a.count;
    set(&mut cfg.checkpoints.discriminator, a.discriminator.map(Some));
    set(&mut cfg.checkpoints.adapter, a.adapter.map(Some));
    let sched = finish(&cfg)?;
    if cfg.guidance.w > 0.0 && cfg.checkpoints.discriminator.is_none() {
        bail!("w > 0 needs a discriminator checkpoint (--discriminator or checkpoints.discriminator)");
    }
    if cfg.guidance.v != 0.0 && cfg.checkpoints.adapter.is_none() {
        bail!("v != 0 needs an adapter checkpoint (--adapter or checkpoints.adapter)");
    }
    let model = load_denoiser(&mut cfg, a.denoiser, &sched)?;
    let out = &a.out;
    let disc = match &cfg.checkpoints.discriminator {
        Some(p) => Some(pipeline::obtain_discriminator(&cfg, &model, &sched, out, p)?.0),
        None => None,
    };
    let adapter = match &cfg.checkpoints.adapter {
        Some(p) => Some(pipeline::obtain_adapter(&cfg, &model, &sched, p)?),
        None => None,
    };
    let detector = cfg.detector.build();
    let models = GuidanceModels {
        model: &model,
        schedule: &sched,
        decoder: cfg.backbone.decoder(),
        discriminator: disc.as_ref(),
        adapter: adapter.as_ref(),
        detector: Some(&detector),
    };
    let token = cfg.prompt_token();
    let seeds = seed_range(a.seed, a.count);
    let cond = vec![token; a.count];
    let res = sample_guided(&models, &cond, &seeds, &cfg.guidance, &cfg.sampler_config())?;
    info!(samples = a.count, "sampled");

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_atomic(&out.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    pipeline::write_samples(out, &res.images)?;
    write_atomic(&out.join("trace.jsonl"), res.trace_jsonl().as_bytes())?;
    let mut masks = Vec::new();
    for (i, m) in res.masks.iter().enumerate() {
        let p = out.join(format!("mask_{i:04}.png"));
        m.grid.write_png(&p)?;
        masks.push(json!({ "path": p, "area": m.area() }));
    }
    print(json!({
        "out": out,
        "prompt": vocab::phrase(token),
        "seeds": seeds,
        "masks": masks,
        "trace_records": res.trace.len(),
    }));
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let generated =
        pipeline::read_samples(&a.generated).with_context(|| format!("reading {}", a.generated.display()))?;
    let reference =
        pipeline::read_samples(&a.reference).with_context(|| format!("reading {}", a.reference.display()))?;
    let prompts = a.prompts.as_deref().map(metrics::read_prompts).transpose()?;
    if let Some(p) = &prompts {
        if p.len() != generated.len() {
            bail!("{} prompts for {} generated samples", p.len(), generated.len());
        }
    }
    let opts = EvalOptions {
        model_id: a.model_id,
        config_hash: String::new(),
        tau_detect: a.tau_detect,
        kid: KidConfig {
            seed: a.seed,
            ..KidConfig::default()
        },
        include_misses: false,
    };
    let detector = RunConfig::default().detector.build();
    let report = metrics::evaluate_samples(
        &generated,
        &reference,
        prompts.as_deref(),
        &detector,
        &ToyEmbedder,
        &ToyJointEmbedder::default(),
        &opts,
    )?;
    write_atomic(&a.out, report.to_json().as_bytes())?;
    print!("{}", metrics::render_table(std::slice::from_ref(&report)));
    Ok(())
}

pub fn run_pipeline(a: RunPipelineArgs) -> Result<()> {
    let mut cfg = base_config(&a.common, a.profile)?;
    cfg.seed = a.seed;
    apply_guidance(&mut cfg, &a.guidance);
    set(&mut cfg.sample.count, a.samples);
    set(&mut cfg.out_dir, a.out_dir);
    let summary = pipeline::run_pipeline(&cfg)?;
    let table = std::fs::read_to_string(cfg.out_dir.join("table.md")).unwrap_or_default();
    print!("{table}");
    if let Some(f) = &summary.mode_a_fraction {
        println!("well-formed fraction: base {:.3}, guided {:.3}", f["base"], f["guided"]);
    }
    println!("run written to {}", cfg.out_dir.display());
    Ok(())
}
