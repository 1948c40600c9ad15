use std::fs;

use semvos::confidence::{ConfidenceField, Derivation};
use semvos::pipeline::{self, PipelineConfig, ADAPTED_CSV, POOLED_CSV};
use semvos::synth::{generate, SynthConfig, CONFIG_FILE};
use semvos::Error;

fn case() -> (tempfile::TempDir, PipelineConfig) {
    let dir = tempfile::tempdir().unwrap();
    generate(&SynthConfig::default())
        .unwrap()
        .write(dir.path())
        .unwrap();
    let cfg = PipelineConfig::load(&dir.path().join(CONFIG_FILE)).unwrap();
    (dir, cfg)
}

#[test]
fn staged_stages_reproduce_single_shot() {
    let (dir, cfg) = case();
    let single = pipeline::run_pipeline(&cfg).unwrap();
    let staged = PipelineConfig {
        out: dir.path().join("staged"),
        ..cfg.clone()
    };
    pipeline::run_pool(&staged).unwrap();
    pipeline::run_adapt(&staged).unwrap();
    pipeline::run_segment(&staged).unwrap();
    let report = pipeline::run_eval(&staged).unwrap();
    assert_eq!(Some(report.to_csv()), single.report.map(|r| r.to_csv()));
    for t in 0..20 {
        let name = format!("object/masks/{t:05}.pgm");
        assert_eq!(
            fs::read(cfg.out.join(&name)).unwrap(),
            fs::read(staged.out.join(&name)).unwrap()
        );
    }
}

#[test]
fn confidence_csv_round_trips_exactly() {
    let (_dir, cfg) = case();
    let (inputs, outcome) = pipeline::execute(&cfg).unwrap();
    let class = &outcome.classes[0];
    let csv = class.pooled.to_csv(&inputs.superpixels);
    let back = ConfidenceField::from_csv(
        &csv,
        "object",
        &inputs.superpixels,
        Derivation::Pooled,
        POOLED_CSV.as_ref(),
    )
    .unwrap();
    assert_eq!(back, class.pooled);
    let adapted = &class.adapted.as_ref().unwrap().0;
    let back = ConfidenceField::from_csv(
        &adapted.to_csv(&inputs.superpixels),
        "object",
        &inputs.superpixels,
        Derivation::Adapted,
        ADAPTED_CSV.as_ref(),
    )
    .unwrap();
    assert_eq!(&back, adapted);
}

#[test]
fn undetected_class_fails_in_segment() {
    let (dir, cfg) = case();
    // a second class nobody detects: its pooled field is all zero, so the
    // colour models have no object samples
    let both = PipelineConfig {
        classes: vec!["object".into(), "ghost".into()],
        out: dir.path().join("both"),
        ..cfg
    };
    let err = pipeline::run_pipeline(&both).unwrap_err();
    assert!(err.to_string().starts_with("segment stage"), "{err}");
    assert!(matches!(err, Error::Stage { .. }));
}

#[test]
fn missing_inputs_name_the_ingest_stage() {
    let (dir, cfg) = case();
    fs::remove_dir_all(dir.path().join("motion")).unwrap();
    let err = pipeline::run_pipeline(&cfg).unwrap_err();
    assert!(err.to_string().starts_with("ingest stage"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn config_file_values_and_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    fs::write(
        &path,
        r#"{"classes":["cat"],"lambda_s":50,"gt":"annotations"}"#,
    )
    .unwrap();
    let cfg = PipelineConfig::load(&path).unwrap();
    assert_eq!(cfg.lambda_s, 50.0);
    assert_eq!(cfg.lambda_t, 2000.0);
    assert_eq!(cfg.gt, Some(dir.path().join("annotations")));
    assert_eq!(cfg.frames, dir.path().join("frames"));

    fs::write(&path, r#"{"classes":["cat"],"mu":"high"}"#).unwrap();
    assert_eq!(PipelineConfig::load(&path).unwrap_err().exit_code(), 1);
}
