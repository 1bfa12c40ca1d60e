//! Rationale/environment graph regressor.
//!
//! A GIN encoder produces node representations `H`. A sigmoid node-score head
//! gives the soft rationale mask `m`; sum pooling yields
//! `h_r = sum_k m_k H_k`, `h_e = sum_k (1 - m_k) H_k` and `h = sum_k H_k`.
//! A three-layer MLP decoder `f` maps representations to the property.
//! Training pairs each rationale with every environment in the batch and
//! penalizes the mean and the variance of the resulting errors.

use std::rc::Rc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::nn::{Activation, Bound, Dropout, Gin, Mlp, ParamSet, Tape, Tensor, Topology, Var};
use crate::rng::{stream, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub gin_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            gin_layers: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreaModel {
    pub input_dim: usize,
    pub config: ModelConfig,
    pub params: ParamSet,
    encoder: Gin,
    gate: Mlp,
    decoder: Mlp,
}

/// Concatenated node features and message routes for a list of graphs.
pub struct GraphBatch {
    pub features: Tensor,
    pub topology: Topology,
    /// Graph index of every node row.
    pub segments: Rc<[usize]>,
    pub node_counts: Vec<usize>,
}

impl GraphBatch {
    pub fn new(graphs: &[&Graph]) -> Result<Self> {
        let d = graphs.first().map_or(0, |g| g.feature_dim());
        let total: usize = graphs.iter().map(|g| g.num_nodes()).sum();
        let mut features = Vec::with_capacity(total * d);
        let mut src = Vec::new();
        let mut dst = Vec::new();
        let mut segments = Vec::with_capacity(total);
        let mut node_counts = Vec::with_capacity(graphs.len());
        let mut offset = 0;
        for (gi, g) in graphs.iter().enumerate() {
            if g.feature_dim() != d {
                return Err(Error::Shape(format!(
                    "graph {} has feature dim {}, batch uses {d}",
                    g.id,
                    g.feature_dim()
                )));
            }
            features.extend_from_slice(g.features());
            for &(a, b) in g.edges() {
                src.push(offset + a);
                dst.push(offset + b);
                src.push(offset + b);
                dst.push(offset + a);
            }
            segments.extend(std::iter::repeat_n(gi, g.num_nodes()));
            node_counts.push(g.num_nodes());
            offset += g.num_nodes();
        }
        Ok(Self {
            features: Tensor::new(total, d, features),
            topology: Topology {
                src: src.into(),
                dst: dst.into(),
            },
            segments: segments.into(),
            node_counts,
        })
    }

    pub fn num_graphs(&self) -> usize {
        self.node_counts.len()
    }
}

/// Tape handles produced by [`GreaModel::encode`].
pub struct Encoded {
    pub nodes: Var,
    pub mask: Var,
    pub h: Var,
    pub h_r: Var,
    pub h_e: Var,
}

#[derive(Default)]
pub struct EncodeOptions<'a> {
    /// Replace the learned mask with a constant (diagnostics only).
    pub force_gate: Option<f64>,
    pub dropout: Option<Dropout<'a>>,
}

/// Per-graph values of the rationale decomposition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RationaleOutput {
    pub m: Vec<f64>,
    pub h: Vec<f64>,
    pub h_r: Vec<f64>,
    pub h_e: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GreaHyper {
    /// Target mean of the rationale mask.
    pub gamma_size: f64,
    /// Softmax temperature of the batch reweighting.
    pub temperature: f64,
    pub regu_weight: f64,
}

impl Default for GreaHyper {
    fn default() -> Self {
        Self {
            gamma_size: 0.5,
            temperature: 1.0,
            regu_weight: 1.0,
        }
    }
}

impl GreaHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma_size) {
            return Err(Error::Config(format!(
                "gamma_size must be in [0, 1], got {}",
                self.gamma_size
            )));
        }
        if !(self.regu_weight >= 0.0 && self.regu_weight.is_finite()) {
            return Err(Error::Config("regu_weight must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreaLossParts {
    pub rationale_mae: f64,
    pub env_expectation: f64,
    pub env_variance: f64,
    pub regu: f64,
    pub weights: Vec<f64>,
    pub total: f64,
}

/// Tape handles for one GREA batch objective.
pub struct GreaLossVars {
    pub total: Var,
    pub rationale_mae: Var,
    pub env_expectation: Var,
    pub env_variance: Var,
    pub regu: Var,
    pub weights: Vec<f64>,
}

/// `softmax_i( sum_b |y_i - y_b| / t )`: labels far from the rest of the batch weigh more.
pub fn batch_weights(labels: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    let mut s: Vec<f64> = labels
        .iter()
        .map(|&y| labels.iter().map(|&yb| (y - yb).abs()).sum::<f64>() / temperature)
        .collect();
    crate::nn::tape::softmax_in_place(&mut s);
    Ok(s)
}

const INFER_CHUNK: usize = 128;

impl GreaModel {
    pub fn new(input_dim: usize, config: ModelConfig, seed: u64) -> Self {
        let mut rng = stream(seed, "init", &[]);
        Self::with_rng(input_dim, config, &mut rng)
    }

    pub fn with_rng(input_dim: usize, config: ModelConfig, rng: &mut Rng) -> Self {
        let d = config.hidden_dim;
        let mut params = ParamSet::new();
        let encoder = Gin::new(&mut params, input_dim, d, config.gin_layers, rng);
        let gate = Mlp::new(&mut params, "gate", &[d, d, 1], Activation::Sigmoid, rng);
        let decoder = Mlp::new(&mut params, "decoder", &[d, d, d, 1], Activation::Identity, rng);
        Self {
            input_dim,
            config,
            params,
            encoder,
            gate,
            decoder,
        }
    }

    pub fn encoder(&self) -> &Gin {
        &self.encoder
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub fn decoder_mut(&mut self) -> &mut Mlp {
        &mut self.decoder
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    pub fn encode(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &GraphBatch,
        mut opts: EncodeOptions<'_>,
    ) -> Result<Encoded> {
        if batch.features.cols() != self.input_dim && batch.features.rows() > 0 {
            return Err(Error::Shape(format!(
                "node features have dim {}, encoder expects {}",
                batch.features.cols(),
                self.input_dim
            )));
        }
        let x = tape.constant(batch.features.clone());
        let nodes = self
            .encoder
            .forward(tape, bound, x, &batch.topology, opts.dropout.as_mut());
        let mask = match opts.force_gate {
            Some(v) => tape.constant(Tensor::full(batch.features.rows(), 1, v)),
            None => self.gate.forward(tape, bound, nodes, None),
        };
        let n_graphs = batch.num_graphs();
        let rationale_nodes = tape.mul_col(nodes, mask);
        let inverse = tape.affine(mask, -1.0, 1.0);
        let environment_nodes = tape.mul_col(nodes, inverse);
        let h = tape.segment_sum(nodes, batch.segments.clone(), n_graphs);
        let h_r = tape.segment_sum(rationale_nodes, batch.segments.clone(), n_graphs);
        let h_e = tape.segment_sum(environment_nodes, batch.segments.clone(), n_graphs);
        Ok(Encoded {
            nodes,
            mask,
            h,
            h_r,
            h_e,
        })
    }

    /// Decoder `f` applied row-wise: `n x d` representations to `n x 1` predictions.
    pub fn decode(&self, tape: &mut Tape, bound: &Bound, reps: Var, dropout: Option<&mut Dropout<'_>>) -> Var {
        self.decoder.forward(tape, bound, reps, dropout)
    }

    /// GREA objective for a labeled batch; `labels[i]` belongs to `batch` graph `i`.
    pub fn grea_loss_on_tape(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &GraphBatch,
        labels: &[f64],
        hyper: &GreaHyper,
    ) -> Result<GreaLossVars> {
        hyper.validate()?;
        let b = batch.num_graphs();
        if b == 0 {
            return Err(Error::Empty("GREA batch"));
        }
        if labels.len() != b {
            return Err(Error::Shape(format!("{} labels for {b} graphs", labels.len())));
        }
        let weights = batch_weights(labels, hyper.temperature)?;
        let enc = self.encode(tape, bound, batch, EncodeOptions::default())?;

        let y = tape.constant(Tensor::column(labels.to_vec()));
        let pred_r = self.decode(tape, bound, enc.h_r, None);
        let resid_r = tape.sub(pred_r, y);
        let abs_r = tape.abs(resid_r);
        let rationale_mae = tape.mean(abs_r);

        // P[i][j] = f(h_r_i + h_e_j), flattened row-major
        let rows: Rc<[usize]> = (0..b * b).map(|k| k / b).collect();
        let cols: Rc<[usize]> = (0..b * b).map(|k| k % b).collect();
        let r_rep = tape.gather(enc.h_r, rows.clone());
        let e_rep = tape.gather(enc.h_e, cols);
        let combos = tape.add(r_rep, e_rep);
        let cross = self.decode(tape, bound, combos, None);
        let y_rep = tape.constant(Tensor::column(rows.iter().map(|&i| labels[i]).collect()));
        let cross_resid = tape.sub(cross, y_rep);
        let cross_abs = tape.abs(cross_resid);
        let errors = tape.reshape(cross_abs, b, b);
        let expectation = tape.row_mean(errors);
        let variance = tape.row_var(errors);
        let w = tape.constant(Tensor::column(weights.clone()));
        let we = tape.mul(expectation, w);
        let env_expectation = tape.sum(we);
        let wv = tape.mul(variance, w);
        let env_variance = tape.sum(wv);

        let inv_count = tape.constant(Tensor::column(
            batch.node_counts.iter().map(|&k| 1.0 / k as f64).collect(),
        ));
        let mask_sum = tape.segment_sum(enc.mask, batch.segments.clone(), b);
        let mask_mean = tape.mul(mask_sum, inv_count);
        let deviation = tape.affine(mask_mean, 1.0, -hyper.gamma_size);
        let abs_dev = tape.abs(deviation);
        let regu = tape.mean(abs_dev);

        let env = tape.add(env_expectation, env_variance);
        let fit = tape.add(rationale_mae, env);
        let weighted_regu = tape.affine(regu, hyper.regu_weight, 0.0);
        let total = tape.add(fit, weighted_regu);
        tape.check()?;
        Ok(GreaLossVars {
            total,
            rationale_mae,
            env_expectation,
            env_variance,
            regu,
            weights,
        })
    }

    /// Evaluates the GREA objective without tracking gradients.
    pub fn grea_loss(&self, graphs: &[&Graph], labels: &[f64], hyper: &GreaHyper) -> Result<GreaLossParts> {
        let batch = GraphBatch::new(graphs)?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let vars = self.grea_loss_on_tape(&mut tape, &bound, &batch, labels, hyper)?;
        Ok(GreaLossParts {
            rationale_mae: tape.value(vars.rationale_mae).item(),
            env_expectation: tape.value(vars.env_expectation).item(),
            env_variance: tape.value(vars.env_variance).item(),
            regu: tape.value(vars.regu).item(),
            weights: vars.weights,
            total: tape.value(vars.total).item(),
        })
    }

    fn embed_chunk(&self, graphs: &[&Graph], force_gate: Option<f64>) -> Result<Vec<RationaleOutput>> {
        let batch = GraphBatch::new(graphs)?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let enc = self.encode(
            &mut tape,
            &bound,
            &batch,
            EncodeOptions {
                force_gate,
                dropout: None,
            },
        )?;
        tape.check()?;
        let (h, h_r, h_e, mask) = (
            tape.value(enc.h),
            tape.value(enc.h_r),
            tape.value(enc.h_e),
            tape.value(enc.mask),
        );
        let mut offset = 0;
        Ok((0..graphs.len())
            .map(|i| {
                let k = batch.node_counts[i];
                let out = RationaleOutput {
                    m: mask.data()[offset..offset + k].to_vec(),
                    h: h.row_slice(i).to_vec(),
                    h_r: h_r.row_slice(i).to_vec(),
                    h_e: h_e.row_slice(i).to_vec(),
                };
                offset += k;
                out
            })
            .collect())
    }

    /// Rationale decomposition for every graph, evaluated in parallel chunks.
    pub fn embed(&self, graphs: &[&Graph]) -> Result<Vec<RationaleOutput>> {
        self.embed_with_gate(graphs, None)
    }

    pub fn embed_with_gate(&self, graphs: &[&Graph], force_gate: Option<f64>) -> Result<Vec<RationaleOutput>> {
        let chunks: Vec<Result<Vec<RationaleOutput>>> = graphs
            .par_chunks(INFER_CHUNK)
            .map(|c| self.embed_chunk(c, force_gate))
            .collect();
        let mut out = Vec::with_capacity(graphs.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    pub fn encode_with_rationale(&self, graph: &Graph) -> Result<RationaleOutput> {
        Ok(self.embed(&[graph])?.remove(0))
    }

    /// Decoder outputs for each row of `reps`.
    pub fn decode_values(&self, reps: &Tensor) -> Result<Vec<f64>> {
        if reps.cols() != self.hidden_dim() {
            return Err(Error::Shape(format!(
                "representations have dim {}, decoder expects {}",
                reps.cols(),
                self.hidden_dim()
            )));
        }
        let rows = reps.rows();
        let d = reps.cols();
        let chunk = 1024;
        let parts: Vec<Result<Vec<f64>>> = (0..rows.div_ceil(chunk))
            .into_par_iter()
            .map(|c| {
                let start = c * chunk;
                let end = (start + chunk).min(rows);
                let slice = Tensor::new(end - start, d, reps.data()[start * d..end * d].to_vec());
                let mut tape = Tape::new();
                let bound = self.params.bind(&mut tape, false);
                let x = tape.constant(slice);
                let y = self.decode(&mut tape, &bound, x, None);
                tape.check()?;
                Ok(tape.value(y).data().to_vec())
            })
            .collect();
        let mut out = Vec::with_capacity(rows);
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    /// Inference path: `f(h_r)` per graph.
    pub fn predict(&self, graphs: &[&Graph]) -> Result<Vec<f64>> {
        let reps = self.embed(graphs)?;
        self.predict_from(&reps)
    }

    pub fn predict_from(&self, reps: &[RationaleOutput]) -> Result<Vec<f64>> {
        let rows: Vec<Vec<f64>> = reps.iter().map(|r| r.h_r.clone()).collect();
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        self.decode_values(&Tensor::from_rows(&rows))
    }

    /// One stochastic `f(h_r)` evaluation with dropout in the encoder and decoder MLPs.
    pub fn predict_with_dropout(&self, graph: &Graph, rate: f64, rng: &mut Rng) -> Result<f64> {
        let batch = GraphBatch::new(&[graph])?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let enc = self.encode(
            &mut tape,
            &bound,
            &batch,
            EncodeOptions {
                force_gate: None,
                dropout: Some(Dropout { rate, rng: &mut *rng }),
            },
        )?;
        let mut dropout = Dropout { rate, rng };
        let y = self.decode(&mut tape, &bound, enc.h_r, Some(&mut dropout));
        tape.check()?;
        Ok(tape.value(y).item())
    }

    /// `P[i][j] = f(h_r_i + h_e_j)` over a batch of decompositions.
    pub fn cross_predictions(&self, outputs: &[RationaleOutput]) -> Result<Vec<Vec<f64>>> {
        let b = outputs.len();
        if b == 0 {
            return Err(Error::Empty("cross-prediction batch"));
        }
        let d = self.hidden_dim();
        let mut data = Vec::with_capacity(b * b * d);
        for oi in outputs {
            for oj in outputs {
                data.extend(oi.h_r.iter().zip(&oj.h_e).map(|(r, e)| r + e));
            }
        }
        let flat = self.decode_values(&Tensor::new(b * b, d, data))?;
        Ok(flat.chunks(b).map(<[f64]>::to_vec).collect())
    }
}
