use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::binning::{build_partition, reverse_sampling_rates, shot_regions, IntervalPartition, ShotRegionMap};
use crate::confidence::{compute_threshold, gration_scores, ConfidenceMethod, ConfidenceScore, Scorer, Threshold};
use crate::error::{Error, Result};
use crate::graph::{Graph, HiddenTruth, SplitData};
use crate::metrics::{bound_trend_check, margin_diagnostics, region_report, BoundTrend, MarginDiagnostics, RegionReport};
use crate::mixup::{build_haug, AnchorTable, AugmentedExample, HaugParams, LatentSample};
use crate::model::{GreaModel, RationaleOutput};
use crate::nn::{Adam, ParamCheckpoint};
use crate::pseudo::{pseudo_label_quality, select_confident, PseudoLabeledSet, PseudoQuality};
use crate::rng::stream;
use crate::selftrain::artifacts::ArtifactSink;
use crate::selftrain::config::RunConfig;
use crate::selftrain::trainer::{train_round, TrainOptions};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Graphs a run consumes. Hidden truths only feed audit reports.
#[derive(Clone, Debug, Default)]
pub struct RunInputs {
    pub train: Vec<Graph>,
    pub valid: Vec<Graph>,
    pub test: Vec<Graph>,
    pub unlabeled: Vec<Graph>,
    pub hidden_truth: Option<HiddenTruth>,
}

impl RunInputs {
    pub fn from_split_data(data: SplitData, hidden_truth: Option<HiddenTruth>) -> Self {
        Self {
            train: data.train.labeled,
            valid: data.valid.labeled,
            test: data.test.labeled,
            unlabeled: data.unlabeled.unlabeled,
            hidden_truth,
        }
    }
}

/// Interval partitions fixed for the whole run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partitions {
    /// Pseudo-label sampling, shot regions and metrics.
    pub pseudo: IntervalPartition,
    /// Mixup anchors.
    pub mixup: IntervalPartition,
    pub shots: ShotRegionMap,
}

pub fn build_partitions(config: &RunConfig, train: &[Graph]) -> Result<Partitions> {
    let labels = labels(train);
    let pseudo = build_partition(&labels, config.binning.pseudo_intervals, &config.binning.pseudo_mode())?;
    let mixup = pseudo.rebinned(config.binning.mixup_intervals, &labels)?;
    let shots = shot_regions(pseudo.frequencies(), config.shots)?;
    Ok(Partitions { pseudo, mixup, shots })
}

fn labels(graphs: &[Graph]) -> Vec<f64> {
    graphs.iter().filter_map(|g| g.label).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Training rounds finished when this row was measured.
    pub completed: usize,
    /// `initial`, `supervised` or `self-training`.
    pub stage: String,
    pub real_examples: usize,
    pub gconf_size: usize,
    pub haug_size: usize,
    /// Confidence threshold; absent when filtering is off or nothing was scored.
    pub tau: Option<f64>,
    pub best_epoch: usize,
    pub valid: Option<RegionReport>,
    pub test: Option<RegionReport>,
    pub pseudo_quality: Option<PseudoQuality>,
}

/// Everything needed to continue a run after a completed round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunCheckpoint {
    pub version: u32,
    pub config_hash: String,
    pub completed: usize,
    pub params: ParamCheckpoint,
    pub adam: Adam,
    pub history: Vec<IterationRecord>,
    pub loss_trace: Vec<f64>,
    /// Pseudo-labels used in the last completed round.
    pub last_gconf: PseudoLabeledSet,
}

impl RunCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }
}

/// The per-round training additions and their audit trail.
#[derive(Clone, Debug, Default)]
pub struct RoundSets {
    pub gconf: PseudoLabeledSet,
    pub gconf_graphs: Vec<Graph>,
    pub haug: Vec<AugmentedExample>,
    pub scores: Vec<ConfidenceScore>,
    pub threshold: Option<Threshold>,
    pub quality: Option<PseudoQuality>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub model: GreaModel,
    pub adam: Adam,
    pub history: Vec<IterationRecord>,
    pub loss_trace: Vec<f64>,
    pub partitions: Partitions,
    pub final_test: Option<RegionReport>,
    pub margin: Option<MarginDiagnostics>,
    pub bound_trend: Option<BoundTrend>,
}

impl RunOutput {
    /// Metrics after the first (supervised-only) round.
    pub fn supervised(&self) -> Option<&IterationRecord> {
        self.history.get(1)
    }

    pub fn last(&self) -> &IterationRecord {
        self.history.last().expect("history always has the initial row")
    }
}

fn train_options(config: &RunConfig) -> TrainOptions {
    TrainOptions {
        epochs: config.epochs,
        batch_size: config.batch_size,
        hyper: config.grea,
        seed: config.seed,
    }
}

/// Environment pool: up to `B` labeled graphs drawn without replacement.
pub fn environment_pool(config: &RunConfig, train: &[Graph], round: usize) -> Vec<usize> {
    let b = config.confidence.env_pool_size.min(train.len());
    let mut rng = stream(config.seed, "envpool", &[round as u64]);
    let mut idx = sample(&mut rng, train.len(), b).into_vec();
    idx.sort_unstable();
    idx
}

fn score(
    config: &RunConfig,
    model: &GreaModel,
    graphs: &[&Graph],
    reps: &[RationaleOutput],
    env: &[RationaleOutput],
    salt: u64,
) -> Result<Vec<ConfidenceScore>> {
    match config.confidence.method {
        ConfidenceMethod::GRation => gration_scores(graphs, reps, env, model),
        ConfidenceMethod::Dropout => Scorer::Dropout {
            n_samples: config.confidence.dropout_samples,
            rate: config.confidence.dropout_rate,
            seed: config.seed,
            salt,
        }
        .score_all(graphs, model),
    }
}

fn latent(graphs: &[&Graph], reps: &[RationaleOutput], ys: &[f64]) -> Vec<LatentSample> {
    graphs
        .iter()
        .zip(reps)
        .zip(ys)
        .map(|((g, r), &y)| LatentSample {
            id: g.id.clone(),
            h: r.h.clone(),
            y,
        })
        .collect()
}

/// Reverse-sampling rates over unmasked anchors from pool label counts.
pub fn mixup_rates(partition: &IntervalPartition, anchors: &AnchorTable, pool_labels: &[f64]) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; partition.len()];
    for &y in pool_labels {
        counts[partition.assign(y)] += 1;
    }
    let live: Vec<usize> = anchors.unmasked().collect();
    let restricted: Vec<usize> = live.iter().map(|&i| counts[i]).collect();
    let mut rates = vec![0.0; partition.len()];
    if restricted.iter().all(|&c| c == 0) {
        live.iter().for_each(|&i| rates[i] = 1.0);
        return Ok(rates);
    }
    for (&i, p) in live.iter().zip(reverse_sampling_rates(&restricted)?) {
        rates[i] = p;
    }
    Ok(rates)
}

/// Build `G_conf` and `H_aug` for `round` from the current model.
pub fn build_round_sets(
    config: &RunConfig,
    model: &GreaModel,
    inputs: &RunInputs,
    partitions: &Partitions,
    previous_gconf: &PseudoLabeledSet,
    round: usize,
) -> Result<RoundSets> {
    let abl = config.ablation;
    let unlabeled: &[Graph] = if abl.no_unlabeled { &[] } else { &inputs.unlabeled };
    let n_aug = config.n_aug(inputs.train.len());
    if unlabeled.is_empty() && n_aug == 0 {
        return Ok(RoundSets::default());
    }
    let train_refs: Vec<&Graph> = inputs.train.iter().collect();
    let unl_refs: Vec<&Graph> = unlabeled.iter().collect();
    let train_reps = model.embed(&train_refs)?;
    let unl_reps = model.embed(&unl_refs)?;

    let mut sets = RoundSets::default();
    if !unlabeled.is_empty() {
        let env: Vec<RationaleOutput> = environment_pool(config, &inputs.train, round)
            .into_iter()
            .map(|i| train_reps[i].clone())
            .collect();
        let threshold = if abl.no_sigma {
            Threshold::open()
        } else {
            let labeled = score(config, model, &train_refs, &train_reps, &env, 2 * round as u64)?;
            compute_threshold(&labeled, config.confidence.tau_pct)?
        };
        let scores = score(config, model, &unl_refs, &unl_reps, &env, 2 * round as u64 + 1)?;
        let rates = if abl.no_sampling {
            vec![1.0; partitions.pseudo.len()]
        } else if config.pseudo.rates_include_conf {
            let mut p = partitions.pseudo.clone();
            let mut ys = labels(&inputs.train);
            ys.extend(previous_gconf.entries.iter().map(|e| e.pseudo_label));
            let ys: Vec<f64> = ys.into_iter().filter(|&y| in_range(&p, y)).collect();
            p.recount(&ys)?;
            reverse_sampling_rates(p.frequencies())?
        } else {
            reverse_sampling_rates(partitions.pseudo.frequencies())?
        };
        let gconf = select_confident(&scores, &partitions.pseudo, &rates, &threshold, round)?;
        sets.quality = match &inputs.hidden_truth {
            Some(t) => Some(pseudo_label_quality(&gconf, Some(t), &partitions.shots)?),
            None => None,
        };
        sets.gconf_graphs = gconf.materialize(unlabeled)?;
        sets.gconf = gconf;
        sets.scores = scores;
        sets.threshold = Some(threshold);
    }

    if n_aug > 0 {
        let train_y = labels(&inputs.train);
        let imb = latent(&train_refs, &train_reps, &train_y);
        let position: std::collections::HashMap<&str, usize> =
            unl_refs.iter().enumerate().map(|(i, g)| (g.id.as_str(), i)).collect();
        let conf: Vec<LatentSample> = sets
            .gconf
            .entries
            .iter()
            .map(|e| LatentSample {
                id: e.graph_id.clone(),
                h: unl_reps[position[e.graph_id.as_str()]].h.clone(),
                y: e.pseudo_label,
            })
            .collect();
        let unl_y = model.predict_from(&unl_reps)?;
        let unl = latent(&unl_refs, &unl_reps, &unl_y);
        let sources = config.mixup.sources();
        let anchors = AnchorTable::from_samples(&sources.z_source.gather(&imb, &conf, &unl), &partitions.mixup)?;
        let pool = sources.h_source.gather(&imb, &conf, &unl);
        let rates = if abl.no_sampling {
            anchors.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect()
        } else {
            let mut counted = train_y;
            counted.extend(sets.gconf.entries.iter().map(|e| e.pseudo_label));
            mixup_rates(&partitions.mixup, &anchors, &counted)?
        };
        sets.haug = build_haug(
            &anchors,
            &pool,
            &rates,
            &HaugParams {
                n_aug,
                beta: config.mixup.beta,
                seed: config.seed,
                salt: round as u64,
            },
        )?;
    }
    Ok(sets)
}

fn in_range(p: &IntervalPartition, y: f64) -> bool {
    let (lo, hi) = p.range();
    y >= lo && y < hi
}

pub fn evaluate(model: &GreaModel, graphs: &[Graph], partitions: &Partitions) -> Result<Option<RegionReport>> {
    if graphs.is_empty() {
        return Ok(None);
    }
    let refs: Vec<&Graph> = graphs.iter().collect();
    let preds = model.predict(&refs)?;
    if preds.iter().any(|p| !p.is_finite()) {
        return Err(Error::NumericFault { op: "evaluation".into() });
    }
    let truths = labels(graphs);
    region_report(&preds, &truths, &partitions.pseudo, &partitions.shots).map(Some)
}

#[allow(clippy::too_many_arguments)]
fn record(
    model: &GreaModel,
    inputs: &RunInputs,
    partitions: &Partitions,
    completed: usize,
    real_examples: usize,
    sets: &RoundSets,
    best_epoch: usize,
) -> Result<IterationRecord> {
    let stage = match completed {
        0 => "initial",
        1 => "supervised",
        _ => "self-training",
    };
    Ok(IterationRecord {
        completed,
        stage: stage.into(),
        real_examples,
        gconf_size: sets.gconf.len(),
        haug_size: sets.haug.len(),
        tau: sets.threshold.map(|t| t.tau).filter(|t| t.is_finite()),
        best_epoch,
        valid: evaluate(model, &inputs.valid, partitions)?,
        test: evaluate(model, &inputs.test, partitions)?,
        pseudo_quality: sets.quality.clone(),
    })
}

/// Full run from scratch.
pub fn run(config: &RunConfig, inputs: &RunInputs, sink: Option<&ArtifactSink>) -> Result<RunOutput> {
    run_from(config, inputs, None, sink)
}

/// Run, optionally continuing from a checkpoint of the same configuration.
pub fn run_from(
    config: &RunConfig,
    inputs: &RunInputs,
    resume: Option<RunCheckpoint>,
    sink: Option<&ArtifactSink>,
) -> Result<RunOutput> {
    config.validate()?;
    let input_dim = inputs
        .train
        .first()
        .map(Graph::feature_dim)
        .ok_or(Error::Empty("training set"))?;
    let partitions = build_partitions(config, &inputs.train)?;
    let opts = train_options(config);

    let mut model = GreaModel::new(input_dim, config.model, config.seed);
    let mut adam = Adam::new(config.adam, &model.params);
    let (mut history, mut loss_trace, mut last_gconf, start) = match resume {
        Some(ck) => {
            if ck.config_hash != config.resume_hash() {
                return Err(Error::Checkpoint("checkpoint was written under a different configuration".into()));
            }
            if ck.completed > config.iterations {
                return Err(Error::Checkpoint(format!(
                    "checkpoint has {} completed iterations but the run asks for {}",
                    ck.completed, config.iterations
                )));
            }
            ck.params.restore_into(&mut model.params)?;
            adam = ck.adam;
            (ck.history, ck.loss_trace, ck.last_gconf, ck.completed)
        }
        None => {
            let initial = record(&model, inputs, &partitions, 0, 0, &RoundSets::default(), 0)?;
            (vec![initial], Vec::new(), PseudoLabeledSet::default(), 0)
        }
    };

    for round in start..config.iterations {
        let sets = if round == 0 {
            RoundSets::default()
        } else {
            build_round_sets(config, &model, inputs, &partitions, &last_gconf, round)?
        };
        if let Some(s) = sink {
            s.write_round_dumps(round, &sets)?;
        }
        let mut real = inputs.train.clone();
        real.extend(sets.gconf_graphs.iter().cloned());
        let outcome = train_round(&mut model, &mut adam, &real, &sets.haug, &inputs.valid, &opts, round)?;
        loss_trace.extend(&outcome.losses);
        let rec = record(&model, inputs, &partitions, round + 1, real.len(), &sets, outcome.best_epoch)?;
        log::info!(
            "round {}/{}: {} real, {} aug, valid MAE {}",
            round + 1,
            config.iterations,
            real.len(),
            sets.haug.len(),
            rec.valid.as_ref().and_then(|v| v.all.mae).map_or("-".into(), |v| format!("{v:.4}"))
        );
        history.push(rec);
        last_gconf = sets.gconf;
        if let Some(s) = sink {
            s.write_checkpoint(&RunCheckpoint {
                version: CHECKPOINT_VERSION,
                config_hash: config.resume_hash(),
                completed: round + 1,
                params: ParamCheckpoint::from_params(&model.params),
                adam: adam.clone(),
                history: history.clone(),
                loss_trace: loss_trace.clone(),
                last_gconf: last_gconf.clone(),
            })?;
        }
    }

    let final_test = history.last().and_then(|r| r.test.clone());
    let (margin, bound_trend) = if inputs.test.is_empty() {
        (None, None)
    } else {
        let refs: Vec<&Graph> = inputs.test.iter().collect();
        let preds = model.predict(&refs)?;
        let d = margin_diagnostics(&preds, &labels(&inputs.test), &partitions.pseudo, partitions.pseudo.frequencies())?;
        let t = bound_trend_check(&d);
        (Some(d), Some(t))
    };
    Ok(RunOutput {
        model,
        adam,
        history,
        loss_trace,
        partitions,
        final_test,
        margin,
        bound_trend,
    })
}
