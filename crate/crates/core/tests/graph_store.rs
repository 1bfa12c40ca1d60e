use std::fs;

use sgir::binning::IntervalPartition;

use sgir::graph::{
    generate_synthetic, load_data_dir, load_dataset, read_sidecar, save_dataset, split_overlap_check, write_synthetic,
    DataDir, Dataset, DatasetManifest, FrequencyProfile, Graph, SplitTag, SyntheticSpec,
};

fn decaying_spec() -> SyntheticSpec {
    SyntheticSpec {
        intervals: 20,
        train: FrequencyProfile::Exponential { base: 100.0, decay: 0.7 },
        valid: FrequencyProfile::Uniform { count: 2 },
        test: FrequencyProfile::Uniform { count: 10 },
        unlabeled: FrequencyProfile::Uniform { count: 20 },
        ..SyntheticSpec::default()
    }
}

fn file_names() -> Vec<&'static str> {
    vec![
        "train.jsonl",
        "train.manifest.json",
        "valid.jsonl",
        "test.jsonl",
        "unlabeled.jsonl",
        "unlabeled.truth.jsonl",
        "dataset.json",
    ]
}

#[test]
fn generation_is_byte_identical_across_runs() {
    let spec = decaying_spec();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let data = generate_synthetic(&spec, 7).unwrap();
        write_synthetic(&DataDir::new(d.path()), &spec, 7, &data).unwrap();
    }
    for name in file_names() {
        let a = fs::read(dirs[0].path().join(name)).unwrap();
        let b = fs::read(dirs[1].path().join(name)).unwrap();
        assert!(!a.is_empty(), "{name} is empty");
        assert_eq!(a, b, "{name} differs between runs");
    }
}

#[test]
fn different_seeds_give_different_graphs() {
    let spec = decaying_spec();
    let a = generate_synthetic(&spec, 1).unwrap();
    let b = generate_synthetic(&spec, 2).unwrap();
    assert_ne!(a.train.labels(), b.train.labels());
}

#[test]
fn profiles_are_realized_per_interval() {
    let spec = decaying_spec();
    let data = generate_synthetic(&spec, 7).unwrap();
    let hist = |ds: &Dataset| {
        IntervalPartition::from_boundaries(spec.boundaries(), &ds.labels())
            .unwrap()
            .frequencies()
            .to_vec()
    };
    assert_eq!(hist(&data.test), vec![10; 20]);
    assert_eq!(hist(&data.train), spec.train.counts(20).unwrap());
    assert_eq!(data.unlabeled.len(), 400);
    assert!(data.unlabeled.graphs().all(|g| g.label.is_none()));
    assert_eq!(data.hidden_truth.len(), 400);
}

#[test]
fn written_directory_loads_back() {
    let spec = decaying_spec();
    let dir = tempfile::tempdir().unwrap();
    let dd = DataDir::new(dir.path());
    let data = generate_synthetic(&spec, 3).unwrap();
    let manifest = write_synthetic(&dd, &spec, 3, &data).unwrap();
    let loaded = load_data_dir(&dd).unwrap();
    assert_eq!(loaded.train, data.train);
    assert_eq!(loaded.unlabeled, data.unlabeled);
    assert_eq!(DatasetManifest::load(&dd.manifest_path()).unwrap(), manifest);
    assert_eq!(manifest.splits["train"].count, data.train.len());
    let side = read_sidecar(&dd.split_path(SplitTag::Train)).unwrap();
    assert_eq!(side.count, data.train.len());
    assert_eq!(side.feature_dim, spec.feature_dim);
    for (a, b) in [
        (&loaded.train, &loaded.test),
        (&loaded.train, &loaded.unlabeled),
        (&loaded.valid, &loaded.test),
    ] {
        assert!(split_overlap_check(a, b).is_empty());
    }
    assert_eq!(split_overlap_check(&loaded.test, &loaded.test).len(), loaded.test.len());
}

#[test]
fn save_load_roundtrip_and_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let g = Graph::new("g1", 3, [(0, 1), (1, 0), (1, 2)], vec![vec![1.0, 0.5]; 3], Some(2.25)).unwrap();
    assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
    let ds = Dataset::from_graphs(vec![g], SplitTag::Train).unwrap();
    let path = dir.path().join("one.jsonl");
    save_dataset(&path, &ds).unwrap();
    assert_eq!(load_dataset(&path, SplitTag::Train).unwrap(), ds);

    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"id\":\"ok\",\"n\":1,\"edges\":[],\"x\":[[0.0]],\"y\":1.0}\n{\"id\":\"b\",\"n\":3,\"edges\":[[0,5]],\"x\":[[0.0],[0.0],[0.0]],\"y\":1.0}\n").unwrap();
    let err = load_dataset(&bad, SplitTag::Train).unwrap_err().to_string();
    assert!(err.contains('b') && err.contains("(0,5)"), "{err}");

    let garbled = dir.path().join("garbled.jsonl");
    fs::write(&garbled, "{\"id\":\"ok\",\"n\":1,\"edges\":[],\"x\":[[0.0]],\"y\":1.0}\nnot json\n").unwrap();
    let err = load_dataset(&garbled, SplitTag::Train).unwrap_err().to_string();
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn infeasible_profile_is_a_configuration_error() {
    let spec = SyntheticSpec {
        label_range: [0.0, 400.0],
        train: FrequencyProfile::Uniform { count: 1 },
        max_attempts: 2000,
        ..SyntheticSpec::default()
    };
    let err = generate_synthetic(&spec, 0).unwrap_err();
    assert!(matches!(err, sgir::Error::Config(_)), "{err}");
}
