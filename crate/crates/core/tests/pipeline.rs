use c2al_core::cohorts::DivergenceMetric;
use c2al_core::experiment::{
    discover_cohorts, evaluate, gen_dataset, run_experiment, train_variant, ExperimentConfig,
};
use c2al_core::model::{load_checkpoint, predict, save_checkpoint, strip_aux};
use c2al_core::synthdata::{read_dataset_with_hash, write_dataset_tagged};
use c2al_core::Error;

fn small(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::with_seed(seed);
    cfg.gen.num_samples = 20_000;
    cfg.model.embed_dim = 6;
    cfg.model.compress_dim = 4;
    cfg.model.head_hidden = vec![8];
    cfg.train.num_steps = 300;
    cfg.train.batch_size = 32;
    cfg.train.optimizer = c2al_core::trainer::OptimizerConfig::adam(0.01);
    cfg
}

#[test]
fn dataset_file_round_trips_with_hash() {
    let cfg = small(3);
    let data = gen_dataset(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.jsonl");
    write_dataset_tagged(&data, &path, Some(&cfg.config_hash())).unwrap();
    let (back, hash) = read_dataset_with_hash(&path).unwrap();
    assert_eq!(back.samples, data.samples);
    assert_eq!(back.config, data.config);
    assert_eq!(hash.as_deref(), Some(cfg.config_hash().as_str()));
}

#[test]
fn staged_pipeline_matches_run_experiment() {
    let cfg = small(1);
    let data = gen_dataset(&cfg).unwrap();
    let baseline = train_variant(&cfg, &data, None).unwrap();
    assert!(!baseline.params.has_aux());
    let report = discover_cohorts(&cfg, &data, &baseline.params, DivergenceMetric::Js).unwrap();
    let spec = cfg.spec_for(report.head, report.tail);
    let c2al = train_variant(&cfg, &data, Some(&spec)).unwrap();
    assert!(c2al.params.has_aux());
    let base_ne = evaluate(&cfg, &data, "baseline", &baseline.params, None, Some(&spec)).unwrap();
    let ne = evaluate(&cfg, &data, "c2al", &c2al.params, Some(&base_ne), Some(&spec)).unwrap();
    assert_eq!((ne.head, ne.tail), (Some(report.head), Some(report.tail)));

    let whole = run_experiment(&cfg).unwrap();
    assert_eq!(whole.c2al.params, c2al.params);
    assert_eq!(whole.baseline.params, baseline.params);
    assert_eq!(whole.c2al_ne, ne);
    assert_eq!(whole.planted, cfg.resolved().gen.planted_pair());
    assert_eq!(whole.comparison.rows.len(), c2al.snapshots.snapshots.len());
}

#[test]
fn explicit_cohorts_skip_discovery() {
    let mut cfg = small(2);
    cfg.cohorts.head = Some(0);
    cfg.cohorts.tail = Some(9);
    let spec = cfg.explicit_cohorts().unwrap();
    assert_eq!((spec.head_segments.clone(), spec.tail_segments.clone()), (vec![0], vec![9]));
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.c2al_ne.head, Some(0));
    assert_eq!(out.c2al_ne.tail, Some(9));
}

#[test]
fn checkpoint_reload_preserves_predictions() {
    let cfg = small(4);
    let data = gen_dataset(&cfg).unwrap();
    let spec = cfg.spec_for(0, 9);
    let out = train_variant(&cfg, &data, Some(&spec)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.c2al");
    save_checkpoint(&out.params, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, out.params);
    let batch = &data.samples[..500];
    let a = predict(batch, &out.params).unwrap();
    let b = predict(batch, &strip_aux(&back)).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn config_json_overrides_and_validation() {
    let cfg = ExperimentConfig::from_json(
        r#"{"seed": 9, "train": {"num_steps": 10, "optimizer": {"kind": "sgd", "lr": 0.5}}, "eval": {"range": 0.5}}"#,
    )
    .unwrap();
    assert_eq!(cfg.train.num_steps, 10);
    assert_eq!(cfg.train.optimizer.lr(), 0.5);
    assert_eq!(cfg.eval.range, 0.5);
    assert_eq!(cfg.train.batch_size, ExperimentConfig::default().train.batch_size);
    for bad in [
        r#"{"eval": {"range": 0}}"#,
        r#"{"train": {"lambda_head": -1}}"#,
        r#"{"train": {"optimizer": {"kind": "rmsprop"}}}"#,
        r#"{"model": {"embed_dim": 1}}"#,
    ] {
        assert!(matches!(ExperimentConfig::from_json(bad), Err(Error::Config(_))), "{bad}");
    }
}

#[test]
fn runs_are_reproducible_and_seed_sensitive() {
    let a = run_experiment(&small(5)).unwrap();
    let b = run_experiment(&small(5)).unwrap();
    assert_eq!(a.c2al.params, b.c2al.params);
    assert_eq!(a.c2al.log, b.c2al.log);
    let c = run_experiment(&small(6)).unwrap();
    assert_ne!(a.baseline.params, c.baseline.params);
}
