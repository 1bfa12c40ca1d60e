use sgir::graph::{generate_synthetic, FrequencyProfile, SyntheticData, SyntheticSpec};
use sgir::nn::ParamCheckpoint;
use sgir::selftrain::{
    compare_manifests, run, run_from, ArtifactSink, BinningKind, RunCheckpoint, RunConfig, RunInputs, RunManifest,
};

fn data(seed: u64) -> SyntheticData {
    let spec = SyntheticSpec {
        intervals: 10,
        label_range: [0.0, 10.0],
        train: FrequencyProfile::Exponential { base: 20.0, decay: 0.75 },
        valid: FrequencyProfile::Uniform { count: 1 },
        test: FrequencyProfile::Uniform { count: 3 },
        unlabeled: FrequencyProfile::Uniform { count: 8 },
        ..SyntheticSpec::default()
    };
    generate_synthetic(&spec, seed).unwrap()
}

fn inputs(d: &SyntheticData) -> RunInputs {
    RunInputs {
        train: d.train.labeled.clone(),
        valid: d.valid.labeled.clone(),
        test: d.test.labeled.clone(),
        unlabeled: d.unlabeled.unlabeled.clone(),
        hidden_truth: Some(d.hidden_truth.clone()),
    }
}

fn config(d: &SyntheticData, iterations: usize) -> RunConfig {
    let mut cfg = RunConfig {
        seed: 5,
        iterations,
        epochs: 3,
        batch_size: 16,
        ..RunConfig::default()
    };
    cfg.model.hidden_dim = 12;
    cfg.binning.mode = BinningKind::Explicit;
    cfg.binning.boundaries = Some(d.boundaries.clone());
    cfg.binning.pseudo_intervals = 10;
    cfg.binning.mixup_intervals = 5;
    cfg.shots.many = 10;
    cfg.shots.few = 3;
    cfg
}

fn param_bits(m: &sgir::model::GreaModel) -> Vec<u64> {
    m.params.entries().iter().flat_map(|e| e.value.data().iter().map(|v| v.to_bits())).collect()
}

#[test]
fn same_seed_same_history() {
    let d = data(1);
    let cfg = config(&d, 3);
    let a = run(&cfg, &inputs(&d), None).unwrap();
    let b = run(&cfg, &inputs(&d), None).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(param_bits(&a.model), param_bits(&b.model));
    assert_eq!(a.history.len(), 4);
    assert_eq!(a.history[0].stage, "initial");
    assert_eq!(a.history[1].stage, "supervised");
    assert_eq!(a.history[1].gconf_size, 0);
    assert_eq!(a.history[1].haug_size, 0);
    assert!(a.history[2..].iter().all(|h| h.stage == "self-training"));
    assert!(a.history[2..].iter().any(|h| h.gconf_size > 0));
    assert!(a.history[2..].iter().all(|h| h.haug_size > 0 && h.tau.is_some()));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let d = data(2);
    let cfg = config(&d, 4);
    let dir = tempfile::tempdir().unwrap();
    let sink = ArtifactSink::create(dir.path()).unwrap();
    let full = run(&cfg, &inputs(&d), Some(&sink)).unwrap();
    for k in 1..4 {
        let ck = RunCheckpoint::load(&sink.checkpoint_path(k)).unwrap();
        assert_eq!(ck.completed, k);
        let resumed = run_from(&cfg, &inputs(&d), Some(ck), None).unwrap();
        assert_eq!(resumed.history, full.history, "resume from {k}");
        assert_eq!(resumed.loss_trace, full.loss_trace, "resume from {k}");
        assert_eq!(param_bits(&resumed.model), param_bits(&full.model), "resume from {k}");
    }
    assert_eq!(sink.latest_checkpoint().unwrap(), Some(sink.checkpoint_path(4)));
    for round in 1..4 {
        for kind in ["confidence", "gconf", "haug"] {
            assert!(sink.dump_path(round, kind).exists(), "round {round} {kind} dump");
        }
    }
    assert!(!sink.dump_path(0, "gconf").exists());
}

#[test]
fn a_shorter_run_can_be_extended() {
    let d = data(9);
    let long = config(&d, 3);
    let full = run(&long, &inputs(&d), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let sink = ArtifactSink::create(dir.path()).unwrap();
    run(&config(&d, 2), &inputs(&d), Some(&sink)).unwrap();
    let ck = RunCheckpoint::load(&sink.checkpoint_path(2)).unwrap();
    let extended = run_from(&long, &inputs(&d), Some(ck.clone()), None).unwrap();
    assert_eq!(extended.history, full.history);
    assert_eq!(param_bits(&extended.model), param_bits(&full.model));
    let err = run_from(&config(&d, 1), &inputs(&d), Some(ck), None).unwrap_err();
    assert!(matches!(err, sgir::Error::Checkpoint(_)), "{err}");
}

#[test]
fn resume_rejects_a_different_config() {
    let d = data(3);
    let cfg = config(&d, 2);
    let dir = tempfile::tempdir().unwrap();
    let sink = ArtifactSink::create(dir.path()).unwrap();
    run(&cfg, &inputs(&d), Some(&sink)).unwrap();
    let ck = RunCheckpoint::load(&sink.checkpoint_path(1)).unwrap();
    let mut other = cfg.clone();
    other.mixup.beta = 3.0;
    let err = run_from(&other, &inputs(&d), Some(ck), None).unwrap_err();
    assert!(matches!(err, sgir::Error::Checkpoint(_)), "{err}");
}

#[test]
fn zero_iterations_only_evaluates() {
    let d = data(4);
    let cfg = config(&d, 0);
    let out = run(&cfg, &inputs(&d), None).unwrap();
    assert_eq!(out.history.len(), 1);
    assert!(out.loss_trace.is_empty());
    let fresh = sgir::model::GreaModel::new(d.train.feature_dim().unwrap(), cfg.model, cfg.seed);
    assert_eq!(param_bits(&out.model), param_bits(&fresh));
    assert!(out.final_test.is_some());
    assert!(out.bound_trend.is_some());
}

#[test]
fn ablations_change_the_round_sets() {
    let d = data(5);
    let base = config(&d, 3);
    let full = run(&base, &inputs(&d), None).unwrap();

    let mut no_sigma = base.clone();
    no_sigma.ablation.enable("no-sigma").unwrap();
    let ns = run(&no_sigma, &inputs(&d), None).unwrap();
    assert!(ns.history.iter().all(|h| h.tau.is_none()));
    assert!(ns.history[2].gconf_size >= full.history[2].gconf_size);

    let mut no_sampling = no_sigma.clone();
    no_sampling.ablation.enable("no-sampling").unwrap();
    let open = run(&no_sampling, &inputs(&d), None).unwrap();
    assert_eq!(open.history[2].gconf_size, d.unlabeled.len());

    let mut no_mixup = base.clone();
    no_mixup.ablation.enable("no-mixup").unwrap();
    let nm = run(&no_mixup, &inputs(&d), None).unwrap();
    assert!(nm.history.iter().all(|h| h.haug_size == 0));

    let mut no_unl = base.clone();
    no_unl.ablation.enable("no-unlabeled").unwrap();
    let nu = run(&no_unl, &inputs(&d), None).unwrap();
    assert!(nu.history.iter().all(|h| h.gconf_size == 0 && h.pseudo_quality.is_none()));
    assert!(nu.history[2].haug_size > 0);
    assert!(base.clone().ablation.enable("no-everything").is_err());
}

#[test]
fn dropout_confidence_runs_end_to_end() {
    let d = data(6);
    let mut cfg = config(&d, 2);
    cfg.confidence.method = sgir::confidence::ConfidenceMethod::Dropout;
    let a = run(&cfg, &inputs(&d), None).unwrap();
    let b = run(&cfg, &inputs(&d), None).unwrap();
    assert_eq!(a.history, b.history);
    assert!(a.history[2].tau.is_some());
}

#[test]
fn manifests_roundtrip_and_compare() {
    let d = data(7);
    let cfg = config(&d, 2);
    let out = run(&cfg, &inputs(&d), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let sink = ArtifactSink::create(dir.path()).unwrap();
    let m = RunManifest::new(&cfg, &out, Default::default(), 1).unwrap();
    sink.write_reports(&out, &m).unwrap();
    for f in ["manifest.json", "report.json", "report.txt", "curves.csv", "margin.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let loaded = RunManifest::load(&sink.manifest_path()).unwrap();
    assert_eq!(loaded, m);
    assert!(!loaded.deviations.is_empty());

    let same = compare_manifests(&[("a".into(), m.clone()), ("b".into(), loaded.clone())]).unwrap();
    assert!(same.rows[1].mae_delta.iter().flatten().all(|&v| v == 0.0));

    let mut other = loaded.clone();
    other.config.shots.few = 4;
    let err = compare_manifests(&[("a".into(), m.clone()), ("b".into(), other)]).unwrap_err();
    assert!(matches!(err, sgir::Error::Incomparable(_)), "{err}");

    let mut tampered = serde_json::to_value(&m).unwrap();
    tampered["config"]["epochs"] = serde_json::json!(99);
    std::fs::write(sink.manifest_path(), tampered.to_string()).unwrap();
    assert!(RunManifest::load(&sink.manifest_path()).is_err());
}

#[test]
fn checkpoint_restore_rejects_other_shapes() {
    let d = data(8);
    let cfg = config(&d, 1);
    let out = run(&cfg, &inputs(&d), None).unwrap();
    let ck = ParamCheckpoint::from_params(&out.model.params);
    let mut wide = cfg.model;
    wide.hidden_dim = 13;
    let mut other = sgir::model::GreaModel::new(d.train.feature_dim().unwrap(), wide, 0);
    let err = ck.restore_into(&mut other.params).unwrap_err().to_string();
    assert!(err.contains("gin.0") || err.contains("weight"), "{err}");
}
