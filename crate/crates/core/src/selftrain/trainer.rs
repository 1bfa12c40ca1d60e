use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::metrics::mae;
use crate::mixup::AugmentedExample;
use crate::model::{GraphBatch, GreaHyper, GreaModel};
use crate::nn::{Adam, AdamConfig, Bound, ParamSet, Tape, Tensor, Var};
use crate::rng::stream;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub hyper: GreaHyper,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    /// Epoch (1-based) whose weights were kept; 0 when validation never ran.
    pub best_epoch: usize,
    pub best_valid_mae: Option<f64>,
    /// Loss of every optimizer step, in order.
    pub losses: Vec<f64>,
}

/// `mean |f(h~) - y~|` over augmented latents, which enter as constants.
pub fn aug_loss_on_tape(model: &GreaModel, tape: &mut Tape, bound: &Bound, aug: &[&AugmentedExample]) -> Result<Var> {
    if aug.is_empty() {
        return Err(Error::Empty("augmented batch"));
    }
    let rows: Vec<Vec<f64>> = aug.iter().map(|a| a.h_tilde.clone()).collect();
    let h = tape.constant(Tensor::from_rows(&rows));
    let y = tape.constant(Tensor::column(aug.iter().map(|a| a.y_tilde).collect()));
    let pred = model.decode(tape, bound, h, None);
    let resid = tape.sub(pred, y);
    let abs = tape.abs(resid);
    Ok(tape.mean(abs))
}

/// GREA objective on the real batch plus the augmented MAE.
pub fn total_loss_on_tape(
    model: &GreaModel,
    tape: &mut Tape,
    bound: &Bound,
    real: &[&Graph],
    aug: &[&AugmentedExample],
    hyper: &GreaHyper,
) -> Result<Var> {
    let real_term = if real.is_empty() {
        None
    } else {
        let labels = labels_of(real)?;
        let batch = GraphBatch::new(real)?;
        Some(model.grea_loss_on_tape(tape, bound, &batch, &labels, hyper)?.total)
    };
    let aug_term = if aug.is_empty() {
        None
    } else {
        Some(aug_loss_on_tape(model, tape, bound, aug)?)
    };
    let total = match (real_term, aug_term) {
        (Some(r), Some(a)) => tape.add(r, a),
        (Some(r), None) => r,
        (None, Some(a)) => a,
        (None, None) => return Err(Error::Empty("both real and augmented batches")),
    };
    tape.check()?;
    Ok(total)
}

/// Value of the total loss without gradient tracking.
pub fn total_loss(model: &GreaModel, real: &[&Graph], aug: &[&AugmentedExample], hyper: &GreaHyper) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape, false);
    let v = total_loss_on_tape(model, &mut tape, &bound, real, aug, hyper)?;
    Ok(tape.value(v).item())
}

fn labels_of(graphs: &[&Graph]) -> Result<Vec<f64>> {
    graphs
        .iter()
        .map(|g| {
            g.label.ok_or_else(|| Error::Validation {
                id: g.id.clone(),
                message: "training graph has no label".into(),
            })
        })
        .collect()
}

/// One Adam update; returns the loss before the update.
pub fn train_step(
    model: &mut GreaModel,
    adam: &mut Adam,
    real: &[&Graph],
    aug: &[&AugmentedExample],
    hyper: &GreaHyper,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape, true);
    let loss = total_loss_on_tape(model, &mut tape, &bound, real, aug, hyper)?;
    let value = tape.value(loss).item();
    let mut grads = tape.backward(loss)?;
    let per_param: Vec<Option<Tensor>> = bound.vars().iter().map(|&v| grads.take(v)).collect();
    adam.step(&mut model.params, &per_param)?;
    Ok(value)
}

/// Validation MAE of `f(h_r)`.
pub fn validation_mae(model: &GreaModel, valid: &[Graph]) -> Result<Option<f64>> {
    if valid.is_empty() {
        return Ok(None);
    }
    let refs: Vec<&Graph> = valid.iter().collect();
    let preds = model.predict(&refs)?;
    let truths = labels_of(&refs)?;
    let v = mae(&preds, &truths)?;
    if !v.is_finite() {
        return Err(Error::NumericFault { op: "validation".into() });
    }
    Ok(Some(v))
}

/// Train for `opts.epochs` epochs, then restore the best-validation weights
/// and optimizer state.
///
/// Every epoch reshuffles both sets. Step `s` pairs real batch `s` with
/// augmented batch `s` (mod the number of augmented batches), sized so each
/// augmented example is visited once per epoch.
pub fn train_round(
    model: &mut GreaModel,
    adam: &mut Adam,
    real: &[Graph],
    aug: &[AugmentedExample],
    valid: &[Graph],
    opts: &TrainOptions,
    round: usize,
) -> Result<RoundOutcome> {
    if opts.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    if real.is_empty() && aug.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut losses = Vec::new();
    let mut best: Option<(f64, usize, ParamSet, Adam)> = None;
    for epoch in 0..opts.epochs {
        let mut order: Vec<usize> = (0..real.len()).collect();
        order.shuffle(&mut stream(opts.seed, "train", &[round as u64, epoch as u64]));
        let mut aug_order: Vec<usize> = (0..aug.len()).collect();
        aug_order.shuffle(&mut stream(opts.seed, "train-aug", &[round as u64, epoch as u64]));

        let real_batches: Vec<&[usize]> = order.chunks(opts.batch_size).collect();
        let steps = real_batches.len().max(1);
        let aug_size = aug.len().div_ceil(steps).max(1);
        let aug_batches: Vec<&[usize]> = aug_order.chunks(aug_size).collect();
        for s in 0..steps {
            let r: Vec<&Graph> = real_batches.get(s).map_or(Vec::new(), |b| b.iter().map(|&i| &real[i]).collect());
            let a: Vec<&AugmentedExample> = if aug_batches.is_empty() {
                Vec::new()
            } else {
                aug_batches[s % aug_batches.len()].iter().map(|&i| &aug[i]).collect()
            };
            losses.push(train_step(model, adam, &r, &a, &opts.hyper)?);
        }

        if let Some(v) = validation_mae(model, valid)? {
            if best.as_ref().is_none_or(|b| v < b.0) {
                best = Some((v, epoch + 1, model.params.clone(), adam.clone()));
            }
        }
    }
    let (best_valid_mae, best_epoch) = match best {
        Some((v, e, params, opt)) => {
            model.params = params;
            *adam = opt;
            (Some(v), e)
        }
        None => (None, 0),
    };
    Ok(RoundOutcome {
        best_epoch,
        best_valid_mae,
        losses,
    })
}

/// Plain supervised GREA: fresh model from `seed`, `rounds` warm-started
/// rounds on the labeled set alone.
pub fn train_grea(
    train: &[Graph],
    valid: &[Graph],
    model_config: crate::model::ModelConfig,
    adam_config: AdamConfig,
    opts: &TrainOptions,
    rounds: usize,
) -> Result<(GreaModel, Vec<RoundOutcome>)> {
    let input_dim = train
        .first()
        .map(Graph::feature_dim)
        .ok_or(Error::Empty("training set"))?;
    let mut model = GreaModel::new(input_dim, model_config, opts.seed);
    let mut adam = Adam::new(adam_config, &model.params);
    let outcomes = (0..rounds)
        .map(|r| train_round(&mut model, &mut adam, train, &[], valid, opts, r))
        .collect::<Result<Vec<_>>>()?;
    Ok((model, outcomes))
}
