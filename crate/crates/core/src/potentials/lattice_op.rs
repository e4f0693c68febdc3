//! Batch lattice objectives recorded on the tape as fused ops.
//!
//! Both ops read the emission table `[K×V]` and either one static transition
//! matrix `[(K+1)×(K+1)]` or one `[B×(K+1)²]` tensor per LSTM step. Backward
//! scatters per-sentence lattice gradients into those inputs, sentence by
//! sentence, so the reduction order is fixed.

use crate::error::{Error, Result};
use crate::hmm::{
    forward, marginal_adjoint, ForwardResult, LatticePotentials, LogTransitions, PosteriorTable,
};
use crate::numerics::{CustomOp, Graph, Tensor, Var};
use crate::par;

/// Graph nodes that parameterize a batch of lattices.
#[derive(Clone, Debug)]
pub enum TransitionInputs {
    Static(Var),
    /// Step `p` holds row `b` = sentence `b`'s matrix into position `p`.
    Contextual(Vec<Var>),
}

/// Everything needed to build the lattices of one batch.
#[derive(Clone, Debug)]
pub struct LatticeInputs {
    /// `[K×V]` emission log-probabilities.
    pub table: Var,
    pub transitions: TransitionInputs,
    /// Emission column per token; `None` scores `unk_score` for every tag.
    pub columns: Vec<Vec<Option<usize>>>,
    pub unk_score: f64,
}

impl LatticeInputs {
    fn vars(&self) -> Vec<Var> {
        let mut v = vec![self.table];
        match &self.transitions {
            TransitionInputs::Static(t) => v.push(*t),
            TransitionInputs::Contextual(ts) => v.extend(ts),
        }
        v
    }
}

/// Emission slice of one sentence from a `[K×V]` table.
pub fn emission_slice(columns: &[Option<usize>], table: &Tensor, unk_score: f64) -> Result<Tensor> {
    if columns.is_empty() {
        return Err(Error::EmptySentence);
    }
    let (k, v) = table.dims2();
    let mut e = Vec::with_capacity(columns.len() * k);
    for &c in columns {
        match c {
            Some(c) if c >= v => {
                return Err(Error::Vocab(format!(
                    "emission column {c} outside a table of {v} words"
                )));
            }
            Some(c) => e.extend((0..k).map(|i| table.at(i, c))),
            None => e.extend(std::iter::repeat_n(unk_score, k)),
        }
    }
    Tensor::new(vec![columns.len(), k], e)
}

/// Lattice for one sentence: `log_emit[t][k] = table[k][column(x_t)]`.
pub fn assemble_potentials(
    columns: &[Option<usize>],
    table: &Tensor,
    transitions: LogTransitions,
    unk_score: f64,
) -> Result<LatticePotentials> {
    LatticePotentials::new(emission_slice(columns, table, unk_score)?, transitions)
}

/// Sentence `b`'s `n+1` matrices out of per-step `[B×(K+1)²]` tensors.
pub fn contextual_rows(steps: &[&Tensor], b: usize, n: usize, kb: usize) -> Result<Vec<Tensor>> {
    if steps.len() < n + 1 {
        return Err(Error::Shape(format!(
            "{} LSTM steps for a sentence of length {n}",
            steps.len()
        )));
    }
    steps[..=n]
        .iter()
        .map(|s| {
            Tensor::new(
                vec![kb, kb],
                s.data()[b * kb * kb..(b + 1) * kb * kb].to_vec(),
            )
        })
        .collect()
}

/// Lattices of the batch, built from the current node values.
pub fn batch_potentials(g: &Graph, inputs: &LatticeInputs) -> Result<Vec<LatticePotentials>> {
    let table = g.value(inputs.table);
    let kb = table.dims2().0 + 1;
    match &inputs.transitions {
        TransitionInputs::Static(t) => {
            let t = g.value(*t);
            let pots = par::map(&inputs.columns, |_, cols| {
                assemble_potentials(
                    cols,
                    table,
                    LogTransitions::Static(t.clone()),
                    inputs.unk_score,
                )
            });
            pots.into_iter().collect()
        }
        TransitionInputs::Contextual(steps) => {
            let steps: Vec<&Tensor> = steps.iter().map(|&s| g.value(s)).collect();
            let pots = par::map(&inputs.columns, |b, cols| {
                let mats = contextual_rows(&steps, b, cols.len(), kb)?;
                assemble_potentials(
                    cols,
                    table,
                    LogTransitions::Contextual(mats),
                    inputs.unk_score,
                )
            });
            pots.into_iter().collect()
        }
    }
}

struct Scatter {
    columns: Vec<Vec<Option<usize>>>,
    k: usize,
    v: usize,
    /// `None` for a static transition input.
    steps: Option<usize>,
}

impl Scatter {
    fn new(g: &Graph, inputs: &LatticeInputs) -> Self {
        let (k, v) = g.value(inputs.table).dims2();
        let steps = match &inputs.transitions {
            TransitionInputs::Static(_) => None,
            TransitionInputs::Contextual(s) => Some(s.len()),
        };
        Self {
            columns: inputs.columns.clone(),
            k,
            v,
            steps,
        }
    }

    /// Accumulates `scale · d` into the table and transition inputs, where
    /// `emit(b)` is sentence `b`'s `[n×K]` gradient and `trans(b, p)` its
    /// `(K+1)²` gradient for transition `p`.
    fn run<'a>(
        &self,
        scale: f64,
        emit: impl Fn(usize) -> &'a [f64],
        trans: impl Fn(usize, usize) -> &'a [f64],
    ) -> Vec<Option<Vec<f64>>> {
        let (k, v) = (self.k, self.v);
        let kb2 = (k + 1) * (k + 1);
        let mut d_table = vec![0.0; k * v];
        for (b, cols) in self.columns.iter().enumerate() {
            let e = emit(b);
            for (t, c) in cols.iter().enumerate() {
                if let Some(c) = *c {
                    for i in 0..k {
                        d_table[i * v + c] += scale * e[t * k + i];
                    }
                }
            }
        }
        let mut out = vec![Some(d_table)];
        match self.steps {
            None => {
                let mut d = vec![0.0; kb2];
                for (b, cols) in self.columns.iter().enumerate() {
                    for p in 0..=cols.len() {
                        for (acc, x) in d.iter_mut().zip(trans(b, p)) {
                            *acc += scale * x;
                        }
                    }
                }
                out.push(Some(d));
            }
            Some(steps) => {
                let bsz = self.columns.len();
                let mut d = vec![vec![0.0; bsz * kb2]; steps];
                for (b, cols) in self.columns.iter().enumerate() {
                    for (p, dp) in d.iter_mut().enumerate().take(cols.len() + 1) {
                        for (acc, x) in dp[b * kb2..(b + 1) * kb2].iter_mut().zip(trans(b, p)) {
                            *acc += scale * x;
                        }
                    }
                }
                out.extend(d.into_iter().map(Some));
            }
        }
        out
    }
}

struct NllOp {
    scatter: Scatter,
    pots: Vec<LatticePotentials>,
    fwds: Vec<ForwardResult>,
}

impl CustomOp for NllOp {
    fn backward(
        &self,
        _inputs: &[&Tensor],
        _output: &Tensor,
        grad: &[f64],
    ) -> Vec<Option<Vec<f64>>> {
        let adj: Vec<_> = par::map(&self.pots, |b, pot| marginal_adjoint(pot, &self.fwds[b]));
        self.scatter.run(
            -grad[0],
            |b| adj[b].d_log_emit.data(),
            |b, p| adj[b].d_log_trans[p].data(),
        )
    }
}

/// Negative log-marginal of a batch together with each sentence's `log p(x)`.
pub struct BatchNll {
    pub loss: Var,
    pub log_marginals: Vec<f64>,
}

/// `−Σ log p(x)` over the batch, differentiated by reverse-mode through the
/// forward recursion.
pub fn lattice_nll(g: &mut Graph, inputs: &LatticeInputs) -> Result<BatchNll> {
    let pots = batch_potentials(g, inputs)?;
    let fwds: Vec<ForwardResult> = par::map(&pots, |_, p| forward(p));
    let mut total = 0.0;
    let mut log_marginals = Vec::with_capacity(fwds.len());
    for (i, f) in fwds.iter().enumerate() {
        if !f.log_marginal.is_finite() {
            return Err(Error::Numeric {
                sentence: i,
                value: f.log_marginal,
            });
        }
        total -= f.log_marginal;
        log_marginals.push(f.log_marginal);
    }
    let op = NllOp {
        scatter: Scatter::new(g, inputs),
        pots,
        fwds,
    };
    let loss = g.custom(inputs.vars(), Tensor::scalar(total), Box::new(op));
    Ok(BatchNll {
        loss,
        log_marginals,
    })
}

struct ExpectedOp {
    scatter: Scatter,
    posteriors: Vec<PosteriorTable>,
}

impl CustomOp for ExpectedOp {
    fn backward(
        &self,
        _inputs: &[&Tensor],
        _output: &Tensor,
        grad: &[f64],
    ) -> Vec<Option<Vec<f64>>> {
        let post = &self.posteriors;
        self.scatter.run(
            -grad[0],
            |b| post[b].gamma.data(),
            |b, p| post[b].xi_slice(p),
        )
    }
}

/// `−Σ [Σ γ·log p(x_t|z_t) + Σ ξ·log p(z_t|z_{t−1})]` with the posteriors held fixed.
pub fn expected_complete_nll(
    g: &mut Graph,
    inputs: &LatticeInputs,
    posteriors: &[PosteriorTable],
) -> Result<Var> {
    if posteriors.len() != inputs.columns.len() {
        return Err(Error::Shape(format!(
            "{} posterior tables for {} sentences",
            posteriors.len(),
            inputs.columns.len()
        )));
    }
    let pots = batch_potentials(g, inputs)?;
    let k = g.value(inputs.table).dims2().0;
    let mut total = 0.0;
    for (i, (pot, post)) in pots.iter().zip(posteriors).enumerate() {
        if post.len() != pot.len() || post.num_tags() != k {
            return Err(Error::Shape(format!(
                "sentence {i}: posterior table {}×{} for a lattice {}×{k}",
                post.len(),
                post.num_tags(),
                pot.len()
            )));
        }
        let mut s = 0.0;
        for (gm, e) in post.gamma.data().iter().zip(pot.log_emit().data()) {
            s += gm * e;
        }
        for p in 0..=pot.len() {
            for (x, t) in post.xi_slice(p).iter().zip(pot.trans_at(p).data()) {
                s += x * t;
            }
        }
        if !s.is_finite() {
            return Err(Error::Numeric {
                sentence: i,
                value: s,
            });
        }
        total -= s;
    }
    let op = ExpectedOp {
        scatter: Scatter::new(g, inputs),
        posteriors: posteriors.to_vec(),
    };
    Ok(g.custom(inputs.vars(), Tensor::scalar(total), Box::new(op)))
}
