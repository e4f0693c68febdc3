use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Log-domain transition matrices of a lattice, each `(K+1)×(K+1)` with the
/// boundary state at index `K`.
#[derive(Clone, Debug, PartialEq)]
pub enum LogTransitions {
    /// One matrix shared by every position.
    Static(Tensor),
    /// `n+1` matrices; entry `p` scores the transition into position `p`
    /// (0-based), entry `n` the transition into the closing boundary.
    Contextual(Vec<Tensor>),
}

/// Per-sentence HMM factors in log space.
///
/// Real tags are `0..K`; tag `K` is the boundary that opens and closes every
/// sentence. It never emits and never appears at an interior position.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticePotentials {
    log_emit: Tensor,
    trans: LogTransitions,
    n: usize,
    k: usize,
}

impl LatticePotentials {
    pub fn new(log_emit: Tensor, trans: LogTransitions) -> Result<Self> {
        let (n, k) = match log_emit.shape() {
            [n, k] => (*n, *k),
            s => {
                return Err(Error::Shape(format!(
                    "emission slice must be n×K, got {s:?}"
                )))
            }
        };
        let kb = k + 1;
        let check = |t: &Tensor| -> Result<()> {
            if t.shape() != [kb, kb] {
                return Err(Error::Dimension {
                    op: "lattice transitions",
                    left: t.shape().to_vec(),
                    right: vec![kb, kb],
                });
            }
            Ok(())
        };
        match &trans {
            LogTransitions::Static(t) => check(t)?,
            LogTransitions::Contextual(ts) => {
                if ts.len() != n + 1 {
                    return Err(Error::Shape(format!(
                        "contextual lattice of length {n} needs {} matrices, got {}",
                        n + 1,
                        ts.len()
                    )));
                }
                ts.iter().try_for_each(check)?;
            }
        }
        let pot = Self {
            log_emit,
            trans,
            n,
            k,
        };
        debug_assert!(
            pot.max_row_error() < 1e-9,
            "transition rows are not stochastic"
        );
        Ok(pot)
    }

    /// Builds from row vectors; an empty sentence is rejected.
    pub fn from_rows(log_emit: &[Vec<f64>], trans: LogTransitions) -> Result<Self> {
        if log_emit.is_empty() {
            return Err(Error::EmptySentence);
        }
        Self::new(Tensor::from_rows(log_emit)?, trans)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn num_tags(&self) -> usize {
        self.k
    }

    pub fn boundary(&self) -> usize {
        self.k
    }

    pub fn log_emit(&self) -> &Tensor {
        &self.log_emit
    }

    pub fn transitions(&self) -> &LogTransitions {
        &self.trans
    }

    /// Matrix scoring the move into position `pos` (`pos == n` is the end).
    #[inline]
    pub fn trans_at(&self, pos: usize) -> &Tensor {
        match &self.trans {
            LogTransitions::Static(t) => t,
            LogTransitions::Contextual(ts) => &ts[pos],
        }
    }

    #[inline]
    pub fn emit(&self, t: usize, tag: usize) -> f64 {
        self.log_emit.data()[t * self.k + tag]
    }

    /// Largest deviation of any transition row's probability mass from 1.
    pub fn max_row_error(&self) -> f64 {
        let one = |t: &Tensor| {
            let kb = self.k + 1;
            (0..kb)
                .map(|r| (t.row(r).iter().map(|x| x.exp()).sum::<f64>() - 1.0).abs())
                .fold(0.0, f64::max)
        };
        match &self.trans {
            LogTransitions::Static(t) => one(t),
            LogTransitions::Contextual(ts) => ts.iter().map(one).fold(0.0, f64::max),
        }
    }
}

/// Unary and pairwise state posteriors of one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorTable {
    /// `[n×K]`, `gamma[t][i] = p(z_t = i | x)`
    pub gamma: Tensor,
    /// `[(n+1)×(K+1)×(K+1)]`, `xi[p][i][j] = p(z_{p-1} = i, z_p = j | x)` with
    /// boundary-extended positions `-1` and `n`.
    pub xi: Tensor,
    pub log_marginal: f64,
}

impl PosteriorTable {
    pub fn len(&self) -> usize {
        self.gamma.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_tags(&self) -> usize {
        self.gamma.shape()[1]
    }

    #[inline]
    pub fn xi_at(&self, p: usize, i: usize, j: usize) -> f64 {
        let kb = self.num_tags() + 1;
        self.xi.data()[(p * kb + i) * kb + j]
    }

    /// The `(K+1)×(K+1)` pairwise slice for transition `p`.
    pub fn xi_slice(&self, p: usize) -> &[f64] {
        let kb = self.num_tags() + 1;
        &self.xi.data()[p * kb * kb..(p + 1) * kb * kb]
    }
}
