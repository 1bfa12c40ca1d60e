//! Tape-based reverse-mode differentiation over a fixed set of matrix ops.
//!
//! Every op appends a node holding its forward value. [`Tape::backward`] walks
//! the nodes in reverse and accumulates adjoints for the ones that depend on a
//! gradient-tracked leaf. The first op that produces a non-finite value is
//! remembered and turns every later `check`/`backward` into a
//! [`Error::NumericFault`] naming that op.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    ScaleBy(Var, Var),
    Affine(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    ScatterAdd {
        x: Var,
        src: Rc<[usize]>,
        dst: Rc<[usize]>,
    },
    SegmentSum {
        x: Var,
        segments: Rc<[usize]>,
    },
    Gather {
        x: Var,
        index: Rc<[usize]>,
    },
    RowMean(Var),
    RowVar(Var),
    SoftmaxRows(Var),
    Reshape(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulCol(..) => "mul_col",
            Op::ScaleBy(..) => "scale_by",
            Op::Affine(..) => "affine",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Abs(..) => "abs",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::ScatterAdd { .. } => "scatter_add",
            Op::SegmentSum { .. } => "segment_sum",
            Op::Gather { .. } => "gather",
            Op::RowMean(..) => "row_mean",
            Op::RowVar(..) => "row_var",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::Reshape(..) => "reshape",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<&'static str>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulCol(a, b)
            | Op::ScaleBy(a, b) => self.tracks(*a) || self.tracks(*b),
            Op::Affine(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Abs(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::RowMean(a)
            | Op::RowVar(a)
            | Op::SoftmaxRows(a)
            | Op::Reshape(a) => self.tracks(*a),
            Op::ScatterAdd { x, .. } | Op::SegmentSum { x, .. } | Op::Gather { x, .. } => {
                self.tracks(*x)
            }
        };
        if self.fault.is_none() && !value.is_finite() {
            self.fault = Some(op.name());
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracks(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient-tracked input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].requires_grad = true;
        v
    }

    /// Untracked input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Errors if any recorded op produced a non-finite value.
    pub fn check(&self) -> Result<()> {
        match self.fault {
            Some(op) => Err(Error::NumericFault { op: op.to_string() }),
            None => Ok(()),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    /// `a (n x m) + b (1 x m)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(bv.rows(), 1, "add_row expects a 1 x m row");
        assert_eq!(av.cols(), bv.cols(), "add_row column mismatch");
        let m = av.cols();
        let mut out = av.clone();
        if m > 0 {
            for row in out.data_mut().chunks_mut(m) {
                for (o, &b) in row.iter_mut().zip(bv.data()) {
                    *o += b;
                }
            }
        }
        self.push(out, Op::AddRow(a, b))
    }

    /// `a (n x m) * c (n x 1)` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Var {
        let (av, cv) = (self.value(a), self.value(c));
        assert_eq!(cv.cols(), 1, "mul_col expects an n x 1 column");
        assert_eq!(av.rows(), cv.rows(), "mul_col row mismatch");
        let m = av.cols();
        let mut out = av.clone();
        if m > 0 {
            for (row, &c) in out.data_mut().chunks_mut(m).zip(cv.data()) {
                for o in row.iter_mut() {
                    *o *= c;
                }
            }
        }
        self.push(out, Op::MulCol(a, c))
    }

    /// `a * s` for a 1x1 tensor `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let s_val = self.value(s).item();
        let v = self.value(a).map(|x| x * s_val);
        self.push(v, Op::ScaleBy(a, s))
    }

    /// `scale * a + shift` with constant coefficients.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(a).map(|x| scale * x + shift);
        self.push(v, Op::Affine(a, scale))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        assert!(!t.is_empty(), "mean of empty tensor");
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(v, Op::Mean(a))
    }

    /// `out[dst[e]] += x[src[e]]` for every edge `e`; output has `x.rows()` rows.
    pub fn scatter_add(&mut self, x: Var, src: Rc<[usize]>, dst: Rc<[usize]>) -> Var {
        assert_eq!(src.len(), dst.len(), "scatter_add index length mismatch");
        let xv = self.value(x);
        let m = xv.cols();
        let mut out = Tensor::zeros(xv.rows(), m);
        {
            let o = out.data_mut();
            for (&s, &d) in src.iter().zip(dst.iter()) {
                let from = xv.row_slice(s);
                for (t, &f) in o[d * m..(d + 1) * m].iter_mut().zip(from) {
                    *t += f;
                }
            }
        }
        self.push(out, Op::ScatterAdd { x, src, dst })
    }

    /// Sums rows of `x` into `n_segments` output rows by segment id.
    pub fn segment_sum(&mut self, x: Var, segments: Rc<[usize]>, n_segments: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(segments.len(), xv.rows(), "segment ids must cover every row");
        let m = xv.cols();
        let mut out = Tensor::zeros(n_segments, m);
        {
            let o = out.data_mut();
            for (r, &s) in segments.iter().enumerate() {
                for (t, &f) in o[s * m..(s + 1) * m].iter_mut().zip(xv.row_slice(r)) {
                    *t += f;
                }
            }
        }
        self.push(out, Op::SegmentSum { x, segments })
    }

    /// Rows of `x` selected (with repetition) by `index`.
    pub fn gather(&mut self, x: Var, index: Rc<[usize]>) -> Var {
        let xv = self.value(x);
        let m = xv.cols();
        let mut data = Vec::with_capacity(index.len() * m);
        for &i in index.iter() {
            data.extend_from_slice(xv.row_slice(i));
        }
        let out = Tensor::new(index.len(), m, data);
        self.push(out, Op::Gather { x, index })
    }

    /// Per-row mean, `n x 1`.
    pub fn row_mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let m = av.cols();
        assert!(m > 0, "row_mean of zero-width tensor");
        let data = av
            .data()
            .chunks(m)
            .map(|r| r.iter().sum::<f64>() / m as f64)
            .collect();
        self.push(Tensor::column(data), Op::RowMean(a))
    }

    /// Per-row population variance, `n x 1`.
    pub fn row_var(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let m = av.cols();
        assert!(m > 0, "row_var of zero-width tensor");
        let data = av.data().chunks(m).map(population_variance).collect();
        self.push(Tensor::column(data), Op::RowVar(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let m = av.cols();
        let mut out = av.clone();
        if m > 0 {
            for row in out.data_mut().chunks_mut(m) {
                softmax_in_place(row);
            }
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let v = self.value(a).clone().reshape(rows, cols);
        self.push(v, Op::Reshape(a))
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check()?;
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                lv.shape()
            )));
        }
        if !self.tracks(loss) {
            return Err(Error::NoGraph);
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        for (idx, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.is_finite() {
                    return Err(Error::NumericFault {
                        op: format!("backward through {}", self.nodes[idx].op.name()),
                    });
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.tracks(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.tracks(*a) {
                    self.accumulate(grads, *a, g.matmul_nt(self.value(*b)));
                }
                if self.tracks(*b) {
                    self.accumulate(grads, *b, self.value(*a).matmul_tn(g));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.tracks(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |gi, bi| gi * bi));
                }
                if self.tracks(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |gi, ai| gi * ai));
                }
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.tracks(*b) {
                    let m = g.cols();
                    let mut gb = vec![0.0; m];
                    if m > 0 {
                        for row in g.data().chunks(m) {
                            for (s, &v) in gb.iter_mut().zip(row) {
                                *s += v;
                            }
                        }
                    }
                    self.accumulate(grads, *b, Tensor::row(gb));
                }
            }
            Op::MulCol(a, c) => {
                let (av, cv) = (self.value(*a), self.value(*c));
                let m = av.cols();
                if self.tracks(*a) {
                    let mut ga = g.clone();
                    if m > 0 {
                        for (row, &cval) in ga.data_mut().chunks_mut(m).zip(cv.data()) {
                            row.iter_mut().for_each(|x| *x *= cval);
                        }
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.tracks(*c) {
                    let gc: Vec<f64> = (0..av.rows())
                        .map(|r| {
                            g.row_slice(r)
                                .iter()
                                .zip(av.row_slice(r))
                                .map(|(x, y)| x * y)
                                .sum()
                        })
                        .collect();
                    self.accumulate(grads, *c, Tensor::column(gc));
                }
            }
            Op::ScaleBy(a, s) => {
                let s_val = self.value(*s).item();
                if self.tracks(*a) {
                    self.accumulate(grads, *a, g.map(|x| x * s_val));
                }
                if self.tracks(*s) {
                    let gs = g
                        .data()
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(x, y)| x * y)
                        .sum();
                    self.accumulate(grads, *s, Tensor::scalar(gs));
                }
            }
            Op::Affine(a, scale) => {
                self.accumulate(grads, *a, g.map(|x| x * scale));
            }
            Op::Relu(a) => {
                let ga = g.zip_map(self.value(*a), |gi, x| if x > 0.0 { gi } else { 0.0 });
                self.accumulate(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = g.zip_map(y, |gi, s| gi * s * (1.0 - s));
                self.accumulate(grads, *a, ga);
            }
            Op::Abs(a) => {
                let ga = g.zip_map(self.value(*a), |gi, x| {
                    if x > 0.0 {
                        gi
                    } else if x < 0.0 {
                        -gi
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let av = self.value(*a);
                self.accumulate(grads, *a, Tensor::full(av.rows(), av.cols(), g.item()));
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                let n = av.len() as f64;
                self.accumulate(grads, *a, Tensor::full(av.rows(), av.cols(), g.item() / n));
            }
            Op::ScatterAdd { x, src, dst } => {
                let xv = self.value(*x);
                let m = xv.cols();
                let mut gx = Tensor::zeros(xv.rows(), m);
                {
                    let o = gx.data_mut();
                    for (&s, &d) in src.iter().zip(dst.iter()) {
                        for (t, &f) in o[s * m..(s + 1) * m].iter_mut().zip(g.row_slice(d)) {
                            *t += f;
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::SegmentSum { x, segments } => {
                let xv = self.value(*x);
                let m = xv.cols();
                let mut data = Vec::with_capacity(xv.len());
                for &s in segments.iter() {
                    data.extend_from_slice(g.row_slice(s));
                }
                self.accumulate(grads, *x, Tensor::new(xv.rows(), m, data));
            }
            Op::Gather { x, index } => {
                let xv = self.value(*x);
                let m = xv.cols();
                let mut gx = Tensor::zeros(xv.rows(), m);
                {
                    let o = gx.data_mut();
                    for (r, &i) in index.iter().enumerate() {
                        for (t, &f) in o[i * m..(i + 1) * m].iter_mut().zip(g.row_slice(r)) {
                            *t += f;
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::RowMean(a) => {
                let av = self.value(*a);
                let m = av.cols();
                let mut data = Vec::with_capacity(av.len());
                for &gi in g.data() {
                    data.extend(std::iter::repeat_n(gi / m as f64, m));
                }
                self.accumulate(grads, *a, Tensor::new(av.rows(), m, data));
            }
            Op::RowVar(a) => {
                let av = self.value(*a);
                let m = av.cols();
                let mut data = Vec::with_capacity(av.len());
                for (row, &gi) in av.data().chunks(m).zip(g.data()) {
                    let mu = row.iter().sum::<f64>() / m as f64;
                    data.extend(row.iter().map(|&x| gi * 2.0 * (x - mu) / m as f64));
                }
                self.accumulate(grads, *a, Tensor::new(av.rows(), m, data));
            }
            Op::SoftmaxRows(a) => {
                let m = y.cols();
                let mut data = Vec::with_capacity(y.len());
                if m > 0 {
                    for (yr, gr) in y.data().chunks(m).zip(g.data().chunks(m)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        data.extend(yr.iter().zip(gr).map(|(&yi, &gi)| yi * (gi - dot)));
                    }
                }
                self.accumulate(grads, *a, Tensor::new(y.rows(), m, data));
            }
            Op::Reshape(a) => {
                let av = self.value(*a);
                self.accumulate(grads, *a, g.clone().reshape(av.rows(), av.cols()));
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Divides by the number of samples; a single sample has variance 0.
pub fn population_variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mu = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n
}

pub fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}
