//! Regression confidence as reciprocal prediction variance, and the
//! percentile threshold used to keep only confident pseudo-labels.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{GreaModel, RationaleOutput};
use crate::nn::tape::population_variance;
use crate::nn::Tensor;
use crate::rng::{stream, Rng};

/// Variances below this are treated as this value, capping sigma at `1e12`.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceMethod {
    /// Variance over rationale/environment recombinations.
    #[default]
    #[serde(rename = "gration")]
    GRation,
    /// Variance over stochastic dropout passes.
    Dropout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceScore {
    pub graph_id: String,
    pub predicted_label: f64,
    pub sigma: f64,
    pub method: ConfidenceMethod,
}

pub fn sigma_from_variance(variance: f64) -> f64 {
    1.0 / variance.max(VARIANCE_FLOOR)
}

/// Score one graph against an environment pool.
pub fn gration_confidence(
    target: &Graph,
    env_pool: &[RationaleOutput],
    model: &GreaModel,
) -> Result<ConfidenceScore> {
    let rep = model.encode_with_rationale(target)?;
    let mut scores = gration_scores(&[target], &[rep], env_pool, model)?;
    Ok(scores.remove(0))
}

/// Batched GRation: `reps[i]` is the decomposition of `targets[i]`.
///
/// `sigma_i = 1 / Var_j f(h_r_i + h_e_j)` over the pool, and the predicted label is `f(h_r_i)`.
pub fn gration_scores(
    targets: &[&Graph],
    reps: &[RationaleOutput],
    env_pool: &[RationaleOutput],
    model: &GreaModel,
) -> Result<Vec<ConfidenceScore>> {
    if env_pool.len() < 2 {
        return Err(Error::InsufficientEnvironments {
            needed: 2,
            got: env_pool.len(),
        });
    }
    if targets.len() != reps.len() {
        return Err(Error::Shape(format!(
            "{} targets with {} representations",
            targets.len(),
            reps.len()
        )));
    }
    let predicted = model.predict_from(reps)?;
    let variances = environment_variances(reps, env_pool, model)?;
    Ok(targets
        .iter()
        .zip(predicted)
        .zip(variances)
        .map(|((g, y), v)| ConfidenceScore {
            graph_id: g.id.clone(),
            predicted_label: y,
            sigma: sigma_from_variance(v),
            method: ConfidenceMethod::GRation,
        })
        .collect())
}

/// Population variance of `f(h_r_i + h_e_j)` over `j` for every target `i`.
pub fn environment_variances(
    reps: &[RationaleOutput],
    env_pool: &[RationaleOutput],
    model: &GreaModel,
) -> Result<Vec<f64>> {
    let b = env_pool.len();
    let d = model.hidden_dim();
    let chunk = (8192 / b.max(1)).max(1);
    let mut out = Vec::with_capacity(reps.len());
    for group in reps.chunks(chunk) {
        let mut data = Vec::with_capacity(group.len() * b * d);
        for r in group {
            for e in env_pool {
                data.extend(r.h_r.iter().zip(&e.h_e).map(|(x, y)| x + y));
            }
        }
        let preds = model.decode_values(&Tensor::new(group.len() * b, d, data))?;
        out.extend(preds.chunks(b).map(population_variance));
    }
    Ok(out)
}

/// Confidence from a set of stochastic predictions: mean label, reciprocal population variance.
pub fn score_from_samples(graph_id: &str, samples: &[f64], method: ConfidenceMethod) -> Result<ConfidenceScore> {
    if samples.len() < 2 {
        return Err(Error::Config(format!(
            "confidence needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    Ok(ConfidenceScore {
        graph_id: graph_id.to_string(),
        predicted_label: mean,
        sigma: sigma_from_variance(population_variance(samples)),
        method,
    })
}

pub fn dropout_confidence(
    target: &Graph,
    model: &GreaModel,
    n_samples: usize,
    rate: f64,
    rng: &mut Rng,
) -> Result<ConfidenceScore> {
    if n_samples < 2 {
        return Err(Error::Config(format!(
            "dropout confidence needs at least 2 samples, got {n_samples}"
        )));
    }
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    let samples = (0..n_samples)
        .map(|_| model.predict_with_dropout(target, rate, rng))
        .collect::<Result<Vec<_>>>()?;
    score_from_samples(&target.id, &samples, ConfidenceMethod::Dropout)
}

/// How a batch of graphs is scored against a frozen model.
#[derive(Clone, Copy, Debug)]
pub enum Scorer<'a> {
    GRation { env_pool: &'a [RationaleOutput] },
    /// Each graph gets its own dropout stream keyed by `(seed, salt, position)`.
    Dropout {
        n_samples: usize,
        rate: f64,
        seed: u64,
        salt: u64,
    },
}

impl Scorer<'_> {
    pub fn method(&self) -> ConfidenceMethod {
        match self {
            Scorer::GRation { .. } => ConfidenceMethod::GRation,
            Scorer::Dropout { .. } => ConfidenceMethod::Dropout,
        }
    }

    pub fn score_all(&self, graphs: &[&Graph], model: &GreaModel) -> Result<Vec<ConfidenceScore>> {
        match *self {
            Scorer::GRation { env_pool } => {
                let reps = model.embed(graphs)?;
                gration_scores(graphs, &reps, env_pool, model)
            }
            Scorer::Dropout {
                n_samples,
                rate,
                seed,
                salt,
            } => graphs
                .par_iter()
                .enumerate()
                .map(|(i, g)| {
                    let mut rng = stream(seed, "dropout", &[salt, i as u64]);
                    dropout_confidence(g, model, n_samples, rate, &mut rng)
                })
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub tau: f64,
    pub tau_pct: f64,
}

impl Threshold {
    /// Accepts everything (confidence filtering disabled).
    pub fn open() -> Self {
        Self {
            tau: f64::NEG_INFINITY,
            tau_pct: 0.0,
        }
    }

    pub fn accepts(&self, sigma: f64) -> bool {
        sigma >= self.tau
    }
}

/// Linear-interpolation percentile (rank `pct/100 * (n-1)` in sorted order).
pub fn percentile(values: &[f64], pct: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("percentile input"));
    }
    if !(0.0..=100.0).contains(&pct) {
        return Err(Error::Config(format!("percentile must be in [0, 100], got {pct}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

/// `tau` is the `tau_pct` percentile of the labeled training confidences.
pub fn compute_threshold(labeled_scores: &[ConfidenceScore], tau_pct: f64) -> Result<Threshold> {
    if labeled_scores.is_empty() {
        return Err(Error::Empty("labeled confidence scores"));
    }
    let sigmas: Vec<f64> = labeled_scores.iter().map(|s| s.sigma).collect();
    Ok(Threshold {
        tau: percentile(&sigmas, tau_pct)?,
        tau_pct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::nn::Activation;

    fn scores(sigmas: &[f64]) -> Vec<ConfidenceScore> {
        sigmas
            .iter()
            .enumerate()
            .map(|(i, &s)| ConfidenceScore {
                graph_id: format!("g{i}"),
                predicted_label: 0.0,
                sigma: s,
                method: ConfidenceMethod::GRation,
            })
            .collect()
    }

    fn graph(id: &str, n: usize) -> Graph {
        let edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
        let feats = (0..n).map(|i| vec![(i % 2) as f64, 1.0]).collect();
        Graph::new(id, n, edges, feats, None).unwrap()
    }

    fn model() -> GreaModel {
        GreaModel::new(
            2,
            ModelConfig {
                hidden_dim: 5,
                gin_layers: 2,
            },
            9,
        )
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(compute_threshold(&scores(&[1.0, 2.0, 3.0, 4.0]), 50.0).unwrap().tau, 2.5);
        assert_eq!(compute_threshold(&scores(&[4.0, 2.0, 3.0, 1.0]), 0.0).unwrap().tau, 1.0);
        assert_eq!(compute_threshold(&scores(&[7.0; 5]), 80.0).unwrap().tau, 7.0);
        assert!(compute_threshold(&[], 50.0).is_err());
    }

    #[test]
    fn two_sample_dropout_score() {
        let s = score_from_samples("g", &[1.0, 3.0], ConfidenceMethod::Dropout).unwrap();
        assert_eq!(s.predicted_label, 2.0);
        assert_eq!(s.sigma, 1.0);
        assert!(score_from_samples("g", &[1.0], ConfidenceMethod::Dropout).is_err());
    }

    #[test]
    fn zero_rate_dropout_is_capped_and_deterministic() {
        let m = model();
        let g = graph("g", 5);
        let mut rng = stream(1, "dropout", &[]);
        let s = dropout_confidence(&g, &m, 4, 0.0, &mut rng).unwrap();
        assert_eq!(s.sigma, 1.0 / VARIANCE_FLOOR);

        let a = dropout_confidence(&g, &m, 6, 0.3, &mut stream(2, "dropout", &[])).unwrap();
        let b = dropout_confidence(&g, &m, 6, 0.3, &mut stream(2, "dropout", &[])).unwrap();
        assert_eq!(a, b);
        assert!(dropout_confidence(&g, &m, 1, 0.3, &mut rng).is_err());
    }

    #[test]
    fn identical_environments_give_capped_sigma() {
        let m = model();
        let g = graph("e", 4);
        let env = m.encode_with_rationale(&g).unwrap();
        let s = gration_confidence(&graph("t", 6), &[env.clone(), env], &m).unwrap();
        assert_eq!(s.sigma, 1.0 / VARIANCE_FLOOR);
    }

    #[test]
    fn constant_decoder_gives_capped_sigma() {
        let mut m = model();
        let last = m.decoder().layers.last().unwrap().weight;
        m.params.get_mut(last).data_mut().iter_mut().for_each(|w| *w = 0.0);
        let env: Vec<_> = [graph("a", 3), graph("b", 7)]
            .iter()
            .map(|g| m.encode_with_rationale(g).unwrap())
            .collect();
        let s = gration_confidence(&graph("t", 5), &env, &m).unwrap();
        assert_eq!(s.sigma, 1.0 / VARIANCE_FLOOR);
    }

    #[test]
    fn two_environment_variance_with_linear_decoder() {
        let mut m = model();
        m.decoder_mut().activations = vec![Activation::Identity; 3];
        let target = graph("t", 6);
        let env: Vec<_> = [graph("a", 3), graph("b", 7)]
            .iter()
            .map(|g| m.encode_with_rationale(g).unwrap())
            .collect();
        let rep = m.encode_with_rationale(&target).unwrap();
        // oracle: evaluate f at the two combined points directly, 2-point variance = (d/2)^2
        let p: Vec<f64> = env
            .iter()
            .map(|e| {
                let x: Vec<f64> = rep.h_r.iter().zip(&e.h_e).map(|(a, b)| a + b).collect();
                m.decode_values(&Tensor::row(x)).unwrap()[0]
            })
            .collect();
        let var = ((p[0] - p[1]) / 2.0).powi(2);
        let s = gration_confidence(&target, &env, &m).unwrap();
        assert!((s.sigma - 1.0 / var).abs() / (1.0 / var) < 1e-9);
        assert!(gration_confidence(&target, &env[..1], &m).is_err());
    }
}
