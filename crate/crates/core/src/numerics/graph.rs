//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied during a forward pass. Calling
//! [`Graph::backward`] walks the record in reverse and returns the gradient of
//! a scalar output with respect to every node. The graph is rebuilt for every
//! forward pass; nothing is cached between passes.

use std::collections::HashMap;

use super::kernels::{self, log_sum_exp};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an operation defined outside this module.
///
/// `inputs` are the forward values of the op's inputs in registration order;
/// the returned vector has one entry per input (`None` = no gradient).
pub trait CustomOp: Send + Sync {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>>;
}

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    LogSoftmax {
        input: Var,
        axis: usize,
    },
    Gather {
        table: Var,
        indices: Vec<usize>,
    },
    Reshape(Var),
    ConcatCols(Vec<Var>),
    SliceCols {
        input: Var,
        start: usize,
    },
    Mask {
        input: Var,
        mask: Vec<f64>,
    },
    ConvMaxPool(Box<ConvSaved>),
    Sum(Var),
    WeightedSum {
        input: Var,
        weights: Vec<f64>,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

struct ConvSaved {
    input: Var,
    filter: Var,
    bias: Var,
    words: usize,
    len: usize,
    width: usize,
    argmax: Vec<usize>,
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradient of one scalar with respect to every recorded node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Dimension {
            op,
            left: s.to_vec(),
            right: vec![],
        }),
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

impl Graph {
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
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let mut t = t;
        t.clear_grad();
        self.push(t, Op::Leaf)
    }

    /// Leaf holding a copy of a parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let mut t = store.value(id).clone();
        t.clear_grad();
        let v = self.push(t, Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2("matmul", self.value(a))?;
        let (k2, n) = dims2("matmul", self.value(b))?;
        if k != k2 {
            return Err(self.dim_err("matmul", a, b));
        }
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2("matmul_bt", self.value(a))?;
        let (n, k2) = dims2("matmul_bt", self.value(b))?;
        if k != k2 {
            return Err(self.dim_err("matmul_bt", a, b));
        }
        let out = kernels::matmul_bt(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMulBt(a, b)))
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (m, n) = dims2("add_bias", self.value(x))?;
        if self.value(b).len() != n || self.value(b).ndim() != 1 {
            return Err(self.dim_err("add_bias", x, b));
        }
        let bias = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::AddBias(x, b)))
    }

    /// `x·W + b` for `x[batch×n_in]`, `W[n_in×n_out]`, `b[n_out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).data().iter().map(|x| x * s).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Scale(a, s))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).data().iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::from_parts(shape, out), op)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    /// Log-softmax along `axis`, max-shifted.
    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape(format!(
                "axis {axis} invalid for shape {shape:?}"
            )));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        let mut buf = vec![0.0; len];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                for (j, b) in buf.iter_mut().enumerate() {
                    *b = src[base + j * inner];
                }
                let lse = log_sum_exp(&buf);
                for (j, b) in buf.iter().enumerate() {
                    out[base + j * inner] = b - lse;
                }
            }
        }
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::LogSoftmax { input: x, axis },
        ))
    }

    /// Gathers rows of a 2-D table.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (rows, d) = dims2("gather_rows", self.value(table))?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Index {
                what: "lookup table",
                index: bad,
                len: rows,
            });
        }
        if indices.is_empty() {
            return Err(Error::Shape("lookup with no indices".into()));
        }
        let t = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&t[i * d..(i + 1) * d]);
        }
        let op = Op::Gather {
            table,
            indices: indices.to_vec(),
        };
        Ok(self.push(Tensor::from_parts(vec![indices.len(), d], out), op))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let (m, _) = dims2("concat_cols", self.value(first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = dims2("concat_cols", self.value(p))?;
            if r != m {
                return Err(self.dim_err("concat_cols", first, p));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &c) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * c..(r + 1) * c]);
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![m, total], out),
            Op::ConcatCols(parts.to_vec()),
        ))
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = dims2("slice_cols", self.value(x))?;
        if start >= end || end > n {
            return Err(Error::Shape(format!(
                "column slice {start}..{end} of width {n}"
            )));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(m * (end - start));
        for r in 0..m {
            out.extend_from_slice(&src[r * n + start..r * n + end]);
        }
        Ok(self.push(
            Tensor::from_parts(vec![m, end - start], out),
            Op::SliceCols { input: x, start },
        ))
    }

    /// Elementwise product with a constant mask (used by dropout).
    pub fn mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(Error::Dimension {
                op: "mask",
                left: self.shape(x).to_vec(),
                right: vec![mask.len()],
            });
        }
        let out = zip_map(self.value(x).data(), &mask, |a, m| a * m);
        let shape = self.shape(x).to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::Mask { input: x, mask }))
    }

    /// 1-D convolution over each word's character rows followed by max-over-time pooling.
    ///
    /// `x` is `[words*len × E]` (row `w*len + p` is position `p` of word `w`),
    /// `filter` is `[width*E × F]`, `bias` is `[F]`. Output is `[words × F]`.
    pub fn conv_max_pool(
        &mut self,
        x: Var,
        filter: Var,
        bias: Var,
        words: usize,
        len: usize,
        width: usize,
    ) -> Result<Var> {
        let (rows, e) = dims2("conv_max_pool", self.value(x))?;
        let (fr, f) = dims2("conv_max_pool", self.value(filter))?;
        if rows != words * len || fr != width * e || width == 0 || width > len {
            return Err(self.dim_err("conv_max_pool", x, filter));
        }
        if self.value(bias).len() != f {
            return Err(self.dim_err("conv_max_pool", filter, bias));
        }
        let xd = self.value(x).data();
        let fd = self.value(filter).data();
        let bd = self.value(bias).data();
        let per_word = par::map_range(words, |w| {
            let mut best = vec![f64::NEG_INFINITY; f];
            let mut arg = vec![0usize; f];
            let mut s = vec![0.0; f];
            for p in 0..=len - width {
                let start = (w * len + p) * e;
                let window = &xd[start..start + width * e];
                s.copy_from_slice(bd);
                for (j, &xv) in window.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let fr = &fd[j * f..(j + 1) * f];
                    for (sv, &fv) in s.iter_mut().zip(fr) {
                        *sv += xv * fv;
                    }
                }
                for k in 0..f {
                    if s[k] > best[k] {
                        best[k] = s[k];
                        arg[k] = p;
                    }
                }
            }
            (best, arg)
        });
        let mut out = Vec::with_capacity(words * f);
        let mut argmax = Vec::with_capacity(words * f);
        for (b, a) in per_word {
            out.extend(b);
            argmax.extend(a);
        }
        let saved = ConvSaved {
            input: x,
            filter,
            bias,
            words,
            len,
            width,
            argmax,
        };
        Ok(self.push(
            Tensor::from_parts(vec![words, f], out),
            Op::ConvMaxPool(Box::new(saved)),
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// `Σ w ⊙ x` for a constant weight tensor of the same size.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor) -> Result<Var> {
        if weights.len() != self.value(x).len() {
            return Err(Error::Dimension {
                op: "weighted_sum",
                left: self.shape(x).to_vec(),
                right: weights.shape().to_vec(),
            });
        }
        let s = kernels::dot(self.value(x).data(), weights.data());
        let op = Op::WeightedSum {
            input: x,
            weights: weights.data().to_vec(),
        };
        Ok(self.push(Tensor::scalar(s), op))
    }

    /// Records an externally computed value with its own backward rule.
    pub fn custom(&mut self, inputs: Vec<Var>, value: Tensor, op: Box<dyn CustomOp>) -> Var {
        self.push(value, Op::Custom { inputs, op })
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(self.dim_err(op, a, b));
        }
        Ok(())
    }

    fn dim_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Dimension {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(
            self.value(output).len(),
            1,
            "backward needs a scalar output"
        );
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2();
                let (_, n) = val(*b).dims2();
                let da = kernels::matmul_bt(g, val(*b).data(), m, n, k);
                let db = kernels::matmul_at(val(*a).data(), g, m, k, n);
                add_into(acc(grads, *a, m * k), &da);
                add_into(acc(grads, *b, k * n), &db);
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = val(*a).dims2();
                let (n, _) = val(*b).dims2();
                let da = kernels::matmul(g, val(*b).data(), m, n, k);
                let db = kernels::matmul_at(g, val(*a).data(), m, n, k);
                add_into(acc(grads, *a, m * k), &da);
                add_into(acc(grads, *b, n * k), &db);
            }
            Op::AddBias(x, b) => {
                let n = val(*b).len();
                add_into(acc(grads, *x, g.len()), g);
                let db = acc(grads, *b, n);
                for row in g.chunks(n) {
                    add_into(db, row);
                }
            }
            Op::Add(a, b) => {
                add_into(acc(grads, *a, g.len()), g);
                add_into(acc(grads, *b, g.len()), g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                for (o, (gi, bi)) in acc(grads, *a, g.len()).iter_mut().zip(g.iter().zip(bv)) {
                    *o += gi * bi;
                }
                for (o, (gi, ai)) in acc(grads, *b, g.len()).iter_mut().zip(g.iter().zip(av)) {
                    *o += gi * ai;
                }
            }
            Op::Scale(a, s) => {
                for (o, gi) in acc(grads, *a, g.len()).iter_mut().zip(g) {
                    *o += gi * s;
                }
            }
            Op::Relu(a) => {
                let y = node.value.data();
                for (o, (gi, yi)) in acc(grads, *a, g.len()).iter_mut().zip(g.iter().zip(y)) {
                    if *yi > 0.0 {
                        *o += gi;
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                for (o, (gi, yi)) in acc(grads, *a, g.len()).iter_mut().zip(g.iter().zip(y)) {
                    *o += gi * yi * (1.0 - yi);
                }
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                for (o, (gi, yi)) in acc(grads, *a, g.len()).iter_mut().zip(g.iter().zip(y)) {
                    *o += gi * (1.0 - yi * yi);
                }
            }
            Op::LogSoftmax { input, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                let dx = acc(grads, *input, g.len());
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let gs: f64 = (0..len).map(|j| g[base + j * inner]).sum();
                        for j in 0..len {
                            let at = base + j * inner;
                            dx[at] += g[at] - y[at].exp() * gs;
                        }
                    }
                }
            }
            Op::Gather { table, indices } => {
                let (rows, d) = val(*table).dims2();
                let dt = acc(grads, *table, rows * d);
                for (r, &i) in indices.iter().enumerate() {
                    add_into(&mut dt[i * d..(i + 1) * d], &g[r * d..(r + 1) * d]);
                }
            }
            Op::Reshape(x) => add_into(acc(grads, *x, g.len()), g),
            Op::ConcatCols(parts) => {
                let (m, total) = node.value.dims2();
                let mut offset = 0;
                for &p in parts {
                    let c = val(p).dims2().1;
                    let dp = acc(grads, p, m * c);
                    for r in 0..m {
                        add_into(
                            &mut dp[r * c..(r + 1) * c],
                            &g[r * total + offset..r * total + offset + c],
                        );
                    }
                    offset += c;
                }
            }
            Op::SliceCols { input, start } => {
                let (m, n) = val(*input).dims2();
                let w = node.value.dims2().1;
                let dx = acc(grads, *input, m * n);
                for r in 0..m {
                    add_into(
                        &mut dx[r * n + start..r * n + start + w],
                        &g[r * w..(r + 1) * w],
                    );
                }
            }
            Op::Mask { input, mask } => {
                for (o, (gi, mi)) in acc(grads, *input, g.len())
                    .iter_mut()
                    .zip(g.iter().zip(mask))
                {
                    *o += gi * mi;
                }
            }
            Op::ConvMaxPool(s) => {
                let xd = val(s.input).data();
                let fd = val(s.filter).data();
                let (rows, e) = val(s.input).dims2();
                let (fr, f) = val(s.filter).dims2();
                let mut dx = vec![0.0; rows * e];
                let mut df = vec![0.0; fr * f];
                let mut db = vec![0.0; f];
                for w in 0..s.words {
                    for k in 0..f {
                        let gi = g[w * f + k];
                        if gi == 0.0 {
                            continue;
                        }
                        let start = (w * s.len + s.argmax[w * f + k]) * e;
                        db[k] += gi;
                        for j in 0..s.width * e {
                            df[j * f + k] += gi * xd[start + j];
                            dx[start + j] += gi * fd[j * f + k];
                        }
                    }
                }
                add_into(acc(grads, s.input, rows * e), &dx);
                add_into(acc(grads, s.filter, fr * f), &df);
                add_into(acc(grads, s.bias, f), &db);
            }
            Op::Sum(x) => {
                let n = val(*x).len();
                for o in acc(grads, *x, n).iter_mut() {
                    *o += g[0];
                }
            }
            Op::WeightedSum { input, weights } => {
                for (o, w) in acc(grads, *input, weights.len()).iter_mut().zip(weights) {
                    *o += g[0] * w;
                }
            }
            Op::Custom { inputs, op } => {
                let vals: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                let local = op.backward(&vals, &node.value, g);
                debug_assert_eq!(local.len(), inputs.len());
                for (&v, lg) in inputs.iter().zip(local) {
                    if let Some(lg) = lg {
                        debug_assert_eq!(lg.len(), val(v).len());
                        add_into(acc(grads, v, lg.len()), &lg);
                    }
                }
            }
        }
    }

    /// Adds gradients of every parameter leaf into the store's grad buffers.
    pub fn accumulate_param_grads(&self, grads: &Gradients, store: &mut ParamStore) {
        let mut pairs: Vec<(ParamId, Var)> = self.params.iter().map(|(&p, &v)| (p, v)).collect();
        pairs.sort_by_key(|(p, _)| *p);
        for (id, v) in pairs {
            if let Some(g) = grads.get(v) {
                add_into(store.value_mut(id).grad_mut(), g);
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
