//! Count-based Baum-Welch over explicit probability tables.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{posteriors, LatticePotentials, LogTransitions};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::par;

/// Smallest probability the M-step will assign.
pub const PROB_FLOOR: f64 = 1e-12;

/// Row-stochastic transition `(K+1)×(K+1)` (boundary = K) and emission `K×V` tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HmmParamsRepr", into = "HmmParamsRepr")]
pub struct HmmParams {
    trans: Tensor,
    emit: Tensor,
}

#[derive(Serialize, Deserialize)]
struct HmmParamsRepr {
    trans: Vec<Vec<f64>>,
    emit: Vec<Vec<f64>>,
}

impl TryFrom<HmmParamsRepr> for HmmParams {
    type Error = Error;
    fn try_from(r: HmmParamsRepr) -> Result<Self> {
        HmmParams::new(Tensor::from_rows(&r.trans)?, Tensor::from_rows(&r.emit)?)
    }
}

impl From<HmmParams> for HmmParamsRepr {
    fn from(p: HmmParams) -> Self {
        let rows = |t: &Tensor| (0..t.dims2().0).map(|r| t.row(r).to_vec()).collect();
        HmmParamsRepr {
            trans: rows(&p.trans),
            emit: rows(&p.emit),
        }
    }
}

impl HmmParams {
    pub fn new(trans: Tensor, emit: Tensor) -> Result<Self> {
        let k = match emit.shape() {
            [k, _] => *k,
            s => {
                return Err(Error::Shape(format!(
                    "emission table must be K×V, got {s:?}"
                )))
            }
        };
        if trans.shape() != [k + 1, k + 1] {
            return Err(Error::Dimension {
                op: "hmm params",
                left: trans.shape().to_vec(),
                right: vec![k + 1, k + 1],
            });
        }
        for (name, t) in [("transition", &trans), ("emission", &emit)] {
            let (rows, _) = t.dims2();
            for r in 0..rows {
                let row = t.row(r);
                if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                    return Err(Error::Data(format!(
                        "{name} row {r} has entries outside [0, 1]"
                    )));
                }
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(Error::Data(format!("{name} row {r} sums to {s}")));
                }
            }
        }
        Ok(Self { trans, emit })
    }

    /// Random tables with rows drawn uniformly on the simplex.
    pub fn random<R: Rng + ?Sized>(k: usize, v: usize, rng: &mut R) -> Result<Self> {
        if k == 0 || v == 0 {
            return Err(Error::Config("random HMM needs K ≥ 1 and V ≥ 1".into()));
        }
        let mut row = |len: usize| -> Vec<f64> {
            let raw: Vec<f64> = (0..len)
                .map(|_| -(1.0 - rng.random::<f64>()).ln())
                .collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / s).collect()
        };
        let mut trans = Vec::with_capacity(k + 1);
        for i in 0..=k {
            let mut r = row(k + 1);
            if i == k {
                // the boundary never transitions straight back to itself
                r[k] = 0.0;
                let s: f64 = r.iter().sum();
                r.iter_mut().for_each(|x| *x /= s);
            }
            trans.push(r);
        }
        let emit: Vec<Vec<f64>> = (0..k).map(|_| row(v)).collect();
        Self::new(Tensor::from_rows(&trans)?, Tensor::from_rows(&emit)?)
    }

    pub fn num_tags(&self) -> usize {
        self.emit.dims2().0
    }

    pub fn vocab_size(&self) -> usize {
        self.emit.dims2().1
    }

    pub fn trans(&self) -> &Tensor {
        &self.trans
    }

    pub fn emit(&self) -> &Tensor {
        &self.emit
    }

    pub fn log_trans(&self) -> Tensor {
        log_table(&self.trans)
    }

    pub fn log_emit(&self) -> Tensor {
        log_table(&self.emit)
    }

    /// Lattice for a sentence of word indices in `0..V`.
    pub fn potentials(&self, sentence: &[usize]) -> Result<LatticePotentials> {
        let lt = self.log_trans();
        let le = self.log_emit();
        self.potentials_with(sentence, &le, &lt)
    }

    fn potentials_with(
        &self,
        sentence: &[usize],
        le: &Tensor,
        lt: &Tensor,
    ) -> Result<LatticePotentials> {
        let v = self.vocab_size();
        let k = self.num_tags();
        if sentence.is_empty() {
            return Err(Error::EmptySentence);
        }
        let mut e = Vec::with_capacity(sentence.len() * k);
        for &w in sentence {
            if w >= v {
                return Err(Error::Index {
                    what: "vocabulary",
                    index: w,
                    len: v,
                });
            }
            e.extend((0..k).map(|tag| le.at(tag, w)));
        }
        LatticePotentials::new(
            Tensor::new(vec![sentence.len(), k], e)?,
            LogTransitions::Static(lt.clone()),
        )
    }

    /// Mean per-token log-likelihood of a corpus.
    pub fn per_token_log_likelihood(&self, corpus: &[Vec<usize>]) -> Result<f64> {
        let stats = self.expected_counts(corpus)?;
        Ok(stats.log_likelihood / stats.tokens as f64)
    }

    fn expected_counts(&self, corpus: &[Vec<usize>]) -> Result<Counts> {
        if corpus.is_empty() {
            return Err(Error::Data("empty corpus".into()));
        }
        let (k, v) = (self.num_tags(), self.vocab_size());
        let kb = k + 1;
        let lt = self.log_trans();
        let le = self.log_emit();
        let per_sentence = par::map(corpus, |_, s| {
            self.potentials_with(s, &le, &lt)
                .map(|pot| posteriors(&pot))
        });
        let mut c = Counts {
            trans: vec![0.0; kb * kb],
            emit: vec![0.0; k * v],
            log_likelihood: 0.0,
            tokens: 0,
        };
        for (s, post) in corpus.iter().zip(per_sentence) {
            let post = post?;
            c.log_likelihood += post.log_marginal;
            c.tokens += s.len();
            for (t, &w) in s.iter().enumerate() {
                for tag in 0..k {
                    c.emit[tag * v + w] += post.gamma.at(t, tag);
                }
            }
            for p in 0..=s.len() {
                for (acc, x) in c.trans.iter_mut().zip(post.xi_slice(p)) {
                    *acc += x;
                }
            }
        }
        Ok(c)
    }
}

struct Counts {
    trans: Vec<f64>,
    emit: Vec<f64>,
    log_likelihood: f64,
    tokens: usize,
}

fn log_table(t: &Tensor) -> Tensor {
    let data = t
        .data()
        .iter()
        .map(|&p| p.max(f64::MIN_POSITIVE).ln())
        .collect();
    Tensor::from_parts(t.shape().to_vec(), data)
}

/// Normalizes each row of counts, mixing in the floor so that every entry is
/// at least [`PROB_FLOOR`] and rows still sum to one.
fn normalize_rows(counts: &[f64], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(counts.len());
    let mass = 1.0 - width as f64 * PROB_FLOOR;
    for row in counts.chunks(width) {
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            out.extend(row.iter().map(|c| mass * c / s + PROB_FLOOR));
        } else {
            out.extend(std::iter::repeat_n(1.0 / width as f64, width));
        }
    }
    out
}

/// Result of classical Baum-Welch training.
#[derive(Clone, Debug)]
pub struct EmRun {
    pub params: HmmParams,
    /// Per-token log-likelihood evaluated at the start of each iteration,
    /// followed by the value for the final parameters.
    pub log_likelihood: Vec<f64>,
}

/// One E+M iteration; returns the new parameters and the old per-token log-likelihood.
pub fn em_iteration(params: &HmmParams, corpus: &[Vec<usize>]) -> Result<(HmmParams, f64)> {
    let (k, v) = (params.num_tags(), params.vocab_size());
    let c = params.expected_counts(corpus)?;
    let trans = normalize_rows(&c.trans, k + 1);
    let emit = normalize_rows(&c.emit, v);
    let next = HmmParams {
        trans: Tensor::from_parts(vec![k + 1, k + 1], trans),
        emit: Tensor::from_parts(vec![k, v], emit),
    };
    Ok((next, c.log_likelihood / c.tokens as f64))
}

/// Baum-Welch from a seeded random start over sentences of word indices `0..v`.
pub fn classical_em_train(
    corpus: &[Vec<usize>],
    k: usize,
    v: usize,
    iterations: usize,
    seed: u64,
) -> Result<EmRun> {
    if corpus.is_empty() {
        return Err(Error::Data("empty corpus".into()));
    }
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = HmmParams::random(k, v, &mut rng)?;
    let mut trace = Vec::with_capacity(iterations + 1);
    for _ in 0..iterations {
        let (next, ll) = em_iteration(&params, corpus)?;
        trace.push(ll);
        params = next;
    }
    trace.push(params.per_token_log_likelihood(corpus)?);
    Ok(EmRun {
        params,
        log_likelihood: trace,
    })
}
