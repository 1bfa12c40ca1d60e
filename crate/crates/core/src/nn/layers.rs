//! Parameter storage and the MLP / GIN building blocks.

use std::rc::Rc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedParam {
    pub name: String,
    pub value: Tensor,
}

/// Ordered, named parameter tensors. Layers refer to entries by [`ParamId`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    entries: Vec<NamedParam>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.entries.push(NamedParam {
            name: name.into(),
            value,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn entries(&self) -> &[NamedParam] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [NamedParam] {
        &mut self.entries
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Registers every parameter on the tape, tracked or not.
    pub fn bind(&self, tape: &mut Tape, track: bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|e| {
                if track {
                    tape.leaf(e.value.clone())
                } else {
                    tape.constant(e.value.clone())
                }
            })
            .collect();
        Bound { vars }
    }
}

/// Tape handles for a [`ParamSet`], in the same order.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

/// Glorot-uniform weights, zero bias.
pub fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::new(rows, cols, data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(params: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let weight = params.add(format!("{name}.weight"), glorot(in_dim, out_dim, rng));
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(1, out_dim));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Var {
        let xw = tape.matmul(x, bound.var(self.weight));
        tape.add_row(xw, bound.var(self.bias))
    }
}

/// Inverted dropout state: masks are drawn from `rng` in call order.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut Rng,
}

/// Zeroes each element with probability `rate` and scales survivors by `1/(1-rate)`.
pub fn dropout_forward(x: &Tensor, rate: f64, rng: &mut Rng) -> Tensor {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
    if rate == 0.0 {
        return x.clone();
    }
    let keep = 1.0 / (1.0 - rate);
    let [rows, cols] = x.shape();
    let data = x
        .data()
        .iter()
        .map(|&v| if rng.random::<f64>() < rate { 0.0 } else { v * keep })
        .collect();
    Tensor::new(rows, cols, data)
}

fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut Rng) -> Tensor {
    dropout_forward(&Tensor::full(rows, cols, 1.0), rate, rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activations: Vec<Activation>,
}

impl Mlp {
    /// `dims = [in, h1, ..., out]`; hidden layers use ReLU, the last one `last`.
    pub fn new(params: &mut ParamSet, name: &str, dims: &[usize], last: Activation, rng: &mut Rng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| Linear::new(params, &format!("{name}.{i}"), dims[i], dims[i + 1], rng))
            .collect();
        let activations = (0..n)
            .map(|i| if i + 1 == n { last } else { Activation::Relu })
            .collect();
        Self { layers, activations }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var, mut dropout: Option<&mut Dropout<'_>>) -> Var {
        let mut h = x;
        let n = self.layers.len();
        for (i, (layer, act)) in self.layers.iter().zip(&self.activations).enumerate() {
            h = layer.forward(tape, bound, h);
            h = act.apply(tape, h);
            if i + 1 < n {
                if let Some(d) = dropout.as_deref_mut() {
                    if d.rate > 0.0 {
                        let [r, c] = tape.value(h).shape();
                        let mask = tape.constant(dropout_mask(r, c, d.rate, d.rng));
                        h = tape.mul(h, mask);
                    }
                }
            }
        }
        h
    }
}

/// Node rows and directed message routes for a batch of graphs.
#[derive(Clone, Debug)]
pub struct Topology {
    pub src: Rc<[usize]>,
    pub dst: Rc<[usize]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GinLayer {
    pub mlp: Mlp,
    pub eps: ParamId,
    pub relu_out: bool,
}

impl GinLayer {
    /// `MLP((1 + eps) * x_v + sum_{u in N(v)} x_u)`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        topo: &Topology,
        dropout: Option<&mut Dropout<'_>>,
    ) -> Var {
        let neigh = tape.scatter_add(x, topo.src.clone(), topo.dst.clone());
        let self_scaled = tape.scale_by(x, bound.var(self.eps));
        let self_term = tape.add(x, self_scaled);
        let combined = tape.add(self_term, neigh);
        let h = self.mlp.forward(tape, bound, combined, dropout);
        if self.relu_out {
            tape.relu(h)
        } else {
            h
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gin {
    pub layers: Vec<GinLayer>,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl Gin {
    pub fn new(params: &mut ParamSet, input_dim: usize, hidden_dim: usize, num_layers: usize, rng: &mut Rng) -> Self {
        assert!(num_layers >= 1, "GIN needs at least one layer");
        let layers = (0..num_layers)
            .map(|l| {
                let in_dim = if l == 0 { input_dim } else { hidden_dim };
                let name = format!("gin.{l}");
                let mlp = Mlp::new(
                    params,
                    &format!("{name}.mlp"),
                    &[in_dim, hidden_dim, hidden_dim],
                    Activation::Identity,
                    rng,
                );
                let eps = params.add(format!("{name}.eps"), Tensor::scalar(0.0));
                GinLayer {
                    mlp,
                    eps,
                    relu_out: l + 1 < num_layers,
                }
            })
            .collect();
        Self {
            layers,
            input_dim,
            hidden_dim,
        }
    }

    /// Node representation matrix `H` (nodes x hidden_dim).
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        topo: &Topology,
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Var {
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(tape, bound, h, topo, dropout.as_deref_mut());
        }
        h
    }
}
