//! Forward, backward, posteriors and Viterbi in log space.

// Recursions index several arrays by the same tag, so range loops read clearest.
#![allow(clippy::needless_range_loop)]

use super::{LatticePotentials, PosteriorTable};
use crate::numerics::kernels::log_sum_exp;
use crate::numerics::Tensor;

/// Forward messages and the sentence log-marginal.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardResult {
    /// `[n×K]`, `alpha[t][i] = log p(x_1..x_t, z_t = i)`
    pub alpha: Tensor,
    pub log_marginal: f64,
}

pub fn forward(pot: &LatticePotentials) -> ForwardResult {
    let (n, k) = (pot.len(), pot.num_tags());
    let b = pot.boundary();
    let mut alpha = vec![0.0; n * k];
    let t0 = pot.trans_at(0);
    for j in 0..k {
        alpha[j] = t0.at(b, j) + pot.emit(0, j);
    }
    let mut buf = vec![0.0; k];
    for t in 1..n {
        let tr = pot.trans_at(t);
        let (prev, cur) = alpha.split_at_mut(t * k);
        let prev = &prev[(t - 1) * k..];
        for j in 0..k {
            for i in 0..k {
                buf[i] = prev[i] + tr.at(i, j);
            }
            cur[j] = log_sum_exp(&buf) + pot.emit(t, j);
        }
    }
    let end = pot.trans_at(n);
    for i in 0..k {
        buf[i] = alpha[(n - 1) * k + i] + end.at(i, b);
    }
    let log_marginal = log_sum_exp(&buf);
    ForwardResult {
        alpha: Tensor::from_parts(vec![n, k], alpha),
        log_marginal,
    }
}

/// Backward messages, `beta[t][i] = log p(x_{t+1}..x_n, end | z_t = i)`.
pub fn backward(pot: &LatticePotentials) -> Tensor {
    let (n, k) = (pot.len(), pot.num_tags());
    let b = pot.boundary();
    let mut beta = vec![0.0; n * k];
    let end = pot.trans_at(n);
    for i in 0..k {
        beta[(n - 1) * k + i] = end.at(i, b);
    }
    let mut buf = vec![0.0; k];
    for t in (0..n - 1).rev() {
        let tr = pot.trans_at(t + 1);
        let (cur, next) = beta.split_at_mut((t + 1) * k);
        let next = &next[..k];
        for i in 0..k {
            for j in 0..k {
                buf[j] = tr.at(i, j) + pot.emit(t + 1, j) + next[j];
            }
            cur[t * k + i] = log_sum_exp(&buf);
        }
    }
    Tensor::from_parts(vec![n, k], beta)
}

pub fn posteriors(pot: &LatticePotentials) -> PosteriorTable {
    let (n, k) = (pot.len(), pot.num_tags());
    let kb = k + 1;
    let b = pot.boundary();
    let fwd = forward(pot);
    let beta = backward(pot);
    let (alpha, z) = (fwd.alpha.data(), fwd.log_marginal);
    let beta = beta.data();

    let mut gamma = vec![0.0; n * k];
    for (g, (a, be)) in gamma.iter_mut().zip(alpha.iter().zip(beta)) {
        *g = (a + be - z).exp();
    }

    let mut xi = vec![0.0; (n + 1) * kb * kb];
    let t0 = pot.trans_at(0);
    for j in 0..k {
        xi[b * kb + j] = (t0.at(b, j) + pot.emit(0, j) + beta[j] - z).exp();
    }
    for t in 1..n {
        let tr = pot.trans_at(t);
        let slice = &mut xi[t * kb * kb..(t + 1) * kb * kb];
        for i in 0..k {
            let a = alpha[(t - 1) * k + i];
            for j in 0..k {
                slice[i * kb + j] = (a + tr.at(i, j) + pot.emit(t, j) + beta[t * k + j] - z).exp();
            }
        }
    }
    let end = pot.trans_at(n);
    let slice = &mut xi[n * kb * kb..];
    for i in 0..k {
        slice[i * kb + b] = (alpha[(n - 1) * k + i] + end.at(i, b) - z).exp();
    }

    PosteriorTable {
        gamma: Tensor::from_parts(vec![n, k], gamma),
        xi: Tensor::from_parts(vec![n + 1, kb, kb], xi),
        log_marginal: z,
    }
}

/// Best tag sequence and its joint log-probability, boundary factors included.
///
/// Ties resolve to the lexicographically smallest sequence (lowest tag id at
/// the earliest differing position): max-messages are computed right to left,
/// then the path is read left to right taking the lowest maximizing id.
pub fn viterbi(pot: &LatticePotentials) -> (Vec<usize>, f64) {
    let (n, k) = (pot.len(), pot.num_tags());
    let b = pot.boundary();
    let mut best = vec![0.0; n * k];
    let end = pot.trans_at(n);
    for i in 0..k {
        best[(n - 1) * k + i] = end.at(i, b);
    }
    for t in (0..n - 1).rev() {
        let tr = pot.trans_at(t + 1);
        for i in 0..k {
            let mut m = f64::NEG_INFINITY;
            for j in 0..k {
                let s = tr.at(i, j) + pot.emit(t + 1, j) + best[(t + 1) * k + j];
                if s > m {
                    m = s;
                }
            }
            best[t * k + i] = m;
        }
    }
    let pick = |prev: usize, t: usize| -> (usize, f64) {
        let tr = pot.trans_at(t);
        let mut arg = 0;
        let mut m = f64::NEG_INFINITY;
        for j in 0..k {
            let s = tr.at(prev, j) + pot.emit(t, j) + best[t * k + j];
            if s > m {
                m = s;
                arg = j;
            }
        }
        (arg, m)
    };
    let (first, score) = pick(b, 0);
    let mut path = Vec::with_capacity(n);
    path.push(first);
    for t in 1..n {
        let (next, _) = pick(path[t - 1], t);
        path.push(next);
    }
    (path, score)
}

/// Gradient of `log p(x)` with respect to every lattice entry, by the
/// reverse-mode sweep of the forward recursion (independent of [`backward`]).
pub struct MarginalAdjoint {
    /// `[n×K]`
    pub d_log_emit: Tensor,
    /// `n+1` matrices of `(K+1)×(K+1)`, indexed like the lattice transitions.
    pub d_log_trans: Vec<Tensor>,
}

pub fn marginal_adjoint(pot: &LatticePotentials, fwd: &ForwardResult) -> MarginalAdjoint {
    let (n, k) = (pot.len(), pot.num_tags());
    let kb = k + 1;
    let b = pot.boundary();
    let alpha = fwd.alpha.data();
    let z = fwd.log_marginal;
    let mut d_trans = vec![vec![0.0; kb * kb]; n + 1];
    let mut d_alpha = vec![0.0; n * k];

    let end = pot.trans_at(n);
    for i in 0..k {
        let w = (alpha[(n - 1) * k + i] + end.at(i, b) - z).exp();
        d_alpha[(n - 1) * k + i] = w;
        d_trans[n][i * kb + b] = w;
    }
    let mut d_emit = vec![0.0; n * k];
    for t in (1..n).rev() {
        let tr = pot.trans_at(t);
        for j in 0..k {
            let upstream = d_alpha[t * k + j];
            d_emit[t * k + j] = upstream;
            if upstream == 0.0 {
                continue;
            }
            // alpha[t][j] - emit = lse_i(alpha[t-1][i] + T[i][j])
            let pre = alpha[t * k + j] - pot.emit(t, j);
            for i in 0..k {
                let r = (alpha[(t - 1) * k + i] + tr.at(i, j) - pre).exp();
                let contrib = upstream * r;
                d_alpha[(t - 1) * k + i] += contrib;
                d_trans[t][i * kb + j] += contrib;
            }
        }
    }
    for j in 0..k {
        d_emit[j] = d_alpha[j];
        d_trans[0][b * kb + j] = d_alpha[j];
    }
    MarginalAdjoint {
        d_log_emit: Tensor::from_parts(vec![n, k], d_emit),
        d_log_trans: d_trans
            .into_iter()
            .map(|d| Tensor::from_parts(vec![kb, kb], d))
            .collect(),
    }
}
