use std::time::Instant;

use handguide::config::{Backbone, RunConfig};
use handguide::pipeline::{read_samples, run_pipeline};

#[test]
fn smoke_profile_runs_quickly_and_reruns_from_its_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        out_dir: tmp.path().join("first"),
        ..RunConfig::smoke()
    };
    assert_eq!(cfg.backbone, Backbone::Point);
    assert_eq!((cfg.sample.count, cfg.guidance.w, cfg.guidance.v), (200, 0.2, 0.5));

    let t0 = Instant::now();
    let summary = run_pipeline(&cfg).unwrap();
    assert!(t0.elapsed().as_secs() < 5 * 60, "smoke run took {:?}", t0.elapsed());

    let guided = read_samples(&cfg.out_dir.join("samples/guided")).unwrap();
    assert_eq!(guided.len(), 200);
    assert!(!cfg.out_dir.join("masks").exists());
    let frac = summary.mode_a_fraction.as_ref().unwrap();
    assert!(frac["guided"] > frac["base"], "{frac:?}");
    let trace = std::fs::read_to_string(cfg.out_dir.join("trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 200 * cfg.sampler.steps);

    // a second run that loads the first run's checkpoints samples the same points
    let ck = cfg.out_dir.join("checkpoints");
    let mut again = cfg.clone();
    again.out_dir = tmp.path().join("second");
    again.checkpoints.denoiser = Some(ck.join("denoiser.json"));
    again.checkpoints.discriminator = Some(ck.join("discriminator.json"));
    again.checkpoints.adapter = Some(ck.join("adapter.json"));
    let s2 = run_pipeline(&again).unwrap();
    let a = std::fs::read(cfg.out_dir.join("samples/guided/points.jsonl")).unwrap();
    let b = std::fs::read(again.out_dir.join("samples/guided/points.jsonl")).unwrap();
    assert_eq!(a, b);
    assert!(s2.discriminator.loaded);
    assert_eq!(
        summary.checkpoints.values().collect::<Vec<_>>(),
        s2.checkpoints.values().collect::<Vec<_>>()
    );
}

#[test]
fn checkpoint_of_the_wrong_backbone_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig {
        out_dir: tmp.path().join("p"),
        ..RunConfig::smoke()
    };
    cfg.data.train_size = 200;
    cfg.denoiser.epochs = 1;
    cfg.discriminator.epochs = 1;
    cfg.lora.steps = 5;
    cfg.sample.count = 2;
    cfg.sampler.steps = 5;
    run_pipeline(&cfg).unwrap();

    let img = RunConfig {
        out_dir: tmp.path().join("i"),
        checkpoints: handguide::config::CheckpointPaths {
            denoiser: Some(cfg.out_dir.join("checkpoints/denoiser.json")),
            ..Default::default()
        },
        ..RunConfig::default()
    };
    let err = run_pipeline(&img).unwrap_err();
    assert!(err.to_string().contains("stage `denoiser`"), "{err}");
}
