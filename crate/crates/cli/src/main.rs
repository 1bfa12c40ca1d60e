//! `sgir`: generate data, train, evaluate and compare semi-supervised graph regression runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sgir::graph::{
    dataset_hash, generate_synthetic, load_data_dir, load_dataset, load_hidden_truth, write_synthetic, DataDir,
    Graph, SplitTag, SyntheticSpec,
};
use sgir::metrics::{bound_trend_check, margin_diagnostics, region_report};
use sgir::model::GreaModel;
use sgir::nn::ParamCheckpoint;
use sgir::selftrain::{
    build_partitions, compare_manifests, curves_csv, run_from, ArtifactSink, BinningKind, RunCheckpoint, RunConfig,
    RunInputs, RunManifest,
};
use sgir::Error;

#[derive(Parser, Debug)]
#[command(name = "sgir", version, about = "Semi-supervised graph imbalanced regression")]
struct Cli {
    /// Worker threads; 1 is the reproducibility reference.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic imbalanced dataset.
    Generate(GenerateArgs),
    /// Run self-training and write manifest, checkpoints and reports.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Tabulate final metrics of several runs side by side.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Generator spec (TOML or JSON); defaults when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Run configuration (TOML); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "SGIR_DATA_DIR")]
    data_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Repeatable: no-sigma, no-sampling, no-mixup, no-unlabeled.
    #[arg(long = "ablate")]
    ablate: Vec<String>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated pseudo-partition boundaries.
    #[arg(long, value_delimiter = ',')]
    boundaries: Option<Vec<f64>>,
    /// Use the boundaries recorded in the data directory's `dataset.json`.
    #[arg(long)]
    dataset_boundaries: bool,
    /// Force equal-width pseudo intervals.
    #[arg(long)]
    equal_width: bool,
    /// Rerun exactly the configuration stored in a manifest.
    #[arg(long)]
    from_manifest: Option<PathBuf>,
    /// Continue from the latest checkpoint in `--out`.
    #[arg(long)]
    resume: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, env = "SGIR_DATA_DIR")]
    data_dir: PathBuf,
    /// Manifest of the run; defaults to `manifest.json` beside the checkpoint directory.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Configuration to use instead of a manifest.
    #[arg(long, conflicts_with = "manifest")]
    config: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    /// Print JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// At least two run manifests.
    #[arg(required = true)]
    manifests: Vec<PathBuf>,
    /// Directory for per-run curve CSVs and the comparison JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(1);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: cannot start thread pool: {e}");
        return ExitCode::from(1);
    }
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a, cli.threads),
        Command::Eval(a) => cmd_eval(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn require_file(path: &Path, what: &str) -> sgir::Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

fn load_spec(path: &Path) -> sgir::Result<SyntheticSpec> {
    require_file(path, "spec file")?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: SyntheticSpec = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
    };
    spec.validate()?;
    Ok(spec)
}

fn cmd_generate(a: GenerateArgs) -> sgir::Result<()> {
    let spec = match &a.spec {
        Some(p) => load_spec(p)?,
        None => SyntheticSpec::default(),
    };
    let data = generate_synthetic(&spec, a.seed)?;
    let manifest = write_synthetic(&DataDir::new(&a.out), &spec, a.seed, &data)?;
    for (split, s) in &manifest.splits {
        println!("{split:<10} {:>6} graphs  sha256 {}", s.count, s.sha256);
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn dataset_hashes(dir: &DataDir) -> sgir::Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for tag in SplitTag::ALL {
        let path = dir.split_path(tag);
        if path.exists() {
            out.insert(tag.to_string(), dataset_hash(&path)?);
        }
    }
    Ok(out)
}

fn load_inputs(dir: &DataDir) -> sgir::Result<RunInputs> {
    let data = load_data_dir(dir)?;
    for (a, b) in [
        (&data.train, &data.valid),
        (&data.train, &data.test),
        (&data.train, &data.unlabeled),
        (&data.valid, &data.test),
    ] {
        let overlap = sgir::graph::split_overlap_check(a, b);
        if !overlap.is_empty() {
            return Err(Error::Validation {
                id: overlap[0].clone(),
                message: format!("graph appears in both {} and {} splits", a.split_tag, b.split_tag),
            });
        }
    }
    let truth = dir.truth_path();
    let hidden = if truth.exists() { Some(load_hidden_truth(&truth)?) } else { None };
    Ok(RunInputs::from_split_data(data, hidden))
}

fn train_config(a: &TrainArgs, dir: &DataDir) -> sgir::Result<RunConfig> {
    if let Some(m) = &a.from_manifest {
        require_file(m, "manifest")?;
        let manifest = RunManifest::load(m)?;
        let current = dataset_hashes(dir)?;
        if current != manifest.dataset_hashes {
            return Err(Error::Validation {
                id: dir.root.display().to_string(),
                message: "data files differ from those recorded in the manifest".into(),
            });
        }
        return Ok(manifest.config);
    }
    let given = [a.boundaries.is_some(), a.dataset_boundaries, a.equal_width];
    if given.iter().filter(|&&g| g).count() > 1 {
        return Err(usage(
            "--boundaries, --dataset-boundaries and --equal-width are mutually exclusive",
        ));
    }
    let mut cfg = match &a.config {
        Some(p) => {
            require_file(p, "config file")?;
            RunConfig::load(p)?
        }
        None => RunConfig::default(),
    };
    for name in &a.ablate {
        cfg.ablation.enable(name)?;
    }
    if let Some(t) = a.iterations {
        cfg.iterations = t;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let explicit = if a.dataset_boundaries {
        let path = dir.manifest_path();
        require_file(&path, "dataset manifest")?;
        Some(sgir::graph::DatasetManifest::load(&path)?.boundaries)
    } else {
        a.boundaries.clone()
    };
    if let Some(b) = explicit {
        cfg.binning.mode = BinningKind::Explicit;
        cfg.binning.pseudo_intervals = b.len().saturating_sub(1);
        cfg.binning.boundaries = Some(b);
    } else if a.equal_width {
        cfg.binning.mode = BinningKind::EqualWidth;
        cfg.binning.boundaries = None;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: TrainArgs, threads: usize) -> sgir::Result<()> {
    let dir = DataDir::new(&a.data_dir);
    let cfg = train_config(&a, &dir)?;
    let inputs = load_inputs(&dir)?;
    let sink = ArtifactSink::create(&a.out)?;
    let resume = if a.resume {
        match sink.latest_checkpoint()? {
            Some(p) => {
                log::info!("resuming from {}", p.display());
                Some(RunCheckpoint::load(&p)?)
            }
            None => None,
        }
    } else {
        None
    };
    std::fs::write(a.out.join("config.toml"), cfg.to_toml()).map_err(|e| Error::io(a.out.join("config.toml"), e))?;
    let output = run_from(&cfg, &inputs, resume, Some(&sink))?;
    let manifest = RunManifest::new(&cfg, &output, dataset_hashes(&dir)?, threads)?;
    sink.write_reports(&output, &manifest)?;
    print!("{}", sgir::selftrain::report_text(&output));
    println!("artifacts in {}", a.out.display());
    Ok(())
}

fn eval_config(a: &EvalArgs) -> sgir::Result<RunConfig> {
    if let Some(c) = &a.config {
        require_file(c, "config file")?;
        return RunConfig::load(c);
    }
    let manifest = match &a.manifest {
        Some(m) => m.clone(),
        None => a
            .checkpoint
            .parent()
            .and_then(Path::parent)
            .map(|p| p.join("manifest.json"))
            .unwrap_or_else(|| PathBuf::from("manifest.json")),
    };
    require_file(&manifest, "manifest")?;
    Ok(RunManifest::load(&manifest)?.config)
}

/// Parameters from a run checkpoint or a bare parameter checkpoint.
fn load_params(path: &Path) -> sgir::Result<ParamCheckpoint> {
    require_file(path, "checkpoint")?;
    match RunCheckpoint::load(path) {
        Ok(ck) => Ok(ck.params),
        Err(_) => ParamCheckpoint::load(path),
    }
}

fn cmd_eval(a: EvalArgs) -> sgir::Result<()> {
    let cfg = eval_config(&a)?;
    let split: SplitTag = a.split.parse()?;
    if split == SplitTag::Unlabeled {
        return Err(usage("the unlabeled split has no labels to evaluate against"));
    }
    if split == SplitTag::Train {
        log::warn!("evaluating on the training split: these numbers measure fit, not generalization");
    }
    let dir = DataDir::new(&a.data_dir);
    let train = load_dataset(&dir.split_path(SplitTag::Train), SplitTag::Train)?;
    let target = if split == SplitTag::Train {
        train.clone()
    } else {
        load_dataset(&dir.split_path(split), split)?
    };
    let params = load_params(&a.checkpoint)?;
    let input_dim = train.feature_dim().ok_or(Error::Empty("training set"))?;
    let mut model = GreaModel::new(input_dim, cfg.model, cfg.seed);
    params.restore_into(&mut model.params)?;
    let partitions = build_partitions(&cfg, &train.labeled)?;
    let refs: Vec<&Graph> = target.labeled.iter().collect();
    let preds = model.predict(&refs)?;
    let truths = target.labels();
    let report = region_report(&preds, &truths, &partitions.pseudo, &partitions.shots)?;
    let margin = margin_diagnostics(&preds, &truths, &partitions.pseudo, partitions.pseudo.frequencies())?;
    let trend = bound_trend_check(&margin);
    if a.json {
        let v = serde_json::json!({ "split": split, "report": report, "margin": margin, "bound_trend": trend });
        println!("{}", serde_json::to_string_pretty(&v).expect("report serializes"));
    } else {
        println!("split {split}");
        print!("{}", report.to_text());
        println!("\n{}", trend.summary());
        print!("\n{}", margin.to_csv());
    }
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> sgir::Result<()> {
    if a.manifests.len() < 2 {
        return Err(usage("compare needs at least 2 manifests"));
    }
    let mut runs = Vec::new();
    for (i, p) in a.manifests.iter().enumerate() {
        require_file(p, "manifest")?;
        let name = p
            .parent()
            .and_then(|d| d.file_name())
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("run{i}"));
        runs.push((format!("{i}:{name}"), RunManifest::load(p)?));
    }
    let table = compare_manifests(&runs)?;
    print!("{}", table.to_text());
    if let Some(out) = &a.out {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        for (i, (_, m)) in runs.iter().enumerate() {
            let path = out.join(format!("run{i}_curves.csv"));
            std::fs::write(&path, curves_csv(&m.metric_table)).map_err(|e| Error::io(&path, e))?;
        }
        let path = out.join("comparison.json");
        let text = serde_json::to_string_pretty(&table).expect("comparison serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
