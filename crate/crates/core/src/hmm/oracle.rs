//! Brute-force enumeration over all `K^n` tag sequences. Test oracles only.

use super::{LatticePotentials, PosteriorTable};
use crate::error::{Error, Result};
use crate::numerics::kernels::log_sum_exp;
use crate::numerics::Tensor;

pub const MAX_PATHS: usize = 1_000_000;

/// Joint log-probability of one tag sequence, boundary factors included.
pub fn path_log_score(pot: &LatticePotentials, path: &[usize]) -> f64 {
    let b = pot.boundary();
    let mut s = 0.0;
    let mut prev = b;
    for (t, &z) in path.iter().enumerate() {
        s += pot.trans_at(t).at(prev, z) + pot.emit(t, z);
        prev = z;
    }
    s + pot.trans_at(path.len()).at(prev, b)
}

fn check_size(pot: &LatticePotentials) -> Result<usize> {
    let paths = (pot.num_tags() as f64).powi(pot.len() as i32);
    if paths > MAX_PATHS as f64 {
        return Err(Error::OracleSize {
            paths,
            limit: MAX_PATHS,
        });
    }
    Ok(paths as usize)
}

/// Visits every sequence in lexicographic order.
fn enumerate(pot: &LatticePotentials, mut visit: impl FnMut(&[usize], f64)) -> Result<()> {
    check_size(pot)?;
    let (n, k) = (pot.len(), pot.num_tags());
    let mut path = vec![0usize; n];
    loop {
        visit(&path, path_log_score(pot, &path));
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(());
            }
            pos -= 1;
            path[pos] += 1;
            if path[pos] < k {
                break;
            }
            path[pos] = 0;
        }
    }
}

pub fn brute_force_marginal(pot: &LatticePotentials) -> Result<f64> {
    let mut scores = Vec::new();
    enumerate(pot, |_, s| scores.push(s))?;
    Ok(log_sum_exp(&scores))
}

pub fn brute_force_posteriors(pot: &LatticePotentials) -> Result<PosteriorTable> {
    let z = brute_force_marginal(pot)?;
    let (n, k) = (pot.len(), pot.num_tags());
    let kb = k + 1;
    let b = pot.boundary();
    let mut gamma = vec![0.0; n * k];
    let mut xi = vec![0.0; (n + 1) * kb * kb];
    enumerate(pot, |path, s| {
        let w = (s - z).exp();
        let mut prev = b;
        for (t, &cur) in path.iter().enumerate() {
            gamma[t * k + cur] += w;
            xi[(t * kb + prev) * kb + cur] += w;
            prev = cur;
        }
        xi[(n * kb + prev) * kb + b] += w;
    })?;
    Ok(PosteriorTable {
        gamma: Tensor::from_parts(vec![n, k], gamma),
        xi: Tensor::from_parts(vec![n + 1, kb, kb], xi),
        log_marginal: z,
    })
}

/// Highest-scoring sequence; the first maximum in lexicographic order wins.
pub fn brute_force_viterbi(pot: &LatticePotentials) -> Result<(Vec<usize>, f64)> {
    let mut best: Option<(Vec<usize>, f64)> = None;
    enumerate(pot, |path, s| {
        if best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((path.to_vec(), s));
        }
    })?;
    Ok(best.expect("at least one path"))
}

/// Random row-normalized lattice for property tests. Emission rows are
/// arbitrary log-scores (a sentence slice need not be normalized per token).
pub fn random_lattice<R: rand::Rng + ?Sized>(
    n: usize,
    k: usize,
    contextual: bool,
    rng: &mut R,
) -> LatticePotentials {
    use super::LogTransitions;
    let mut log_rows = |rows: usize, cols: usize| -> Tensor {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let raw: Vec<f64> = (0..cols).map(|_| rng.random_range(-2.0..2.0)).collect();
            let lse = log_sum_exp(&raw);
            data.extend(raw.into_iter().map(|x| x - lse));
        }
        Tensor::from_parts(vec![rows, cols], data)
    };
    let trans = if contextual {
        LogTransitions::Contextual((0..=n).map(|_| log_rows(k + 1, k + 1)).collect())
    } else {
        LogTransitions::Static(log_rows(k + 1, k + 1))
    };
    let emit = log_rows(n, k);
    LatticePotentials::new(emit, trans).expect("consistent shapes")
}
