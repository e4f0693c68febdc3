//! Minibatch training by direct marginal likelihood or generalized EM.

mod report;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Sentence;
use crate::error::{Error, Result};
use crate::hmm::{posteriors, PosteriorTable};
use crate::numerics::{
    adam_step, clip_global_norm, finite_diff_check, AdamConfig, GradCheckReport, Graph, ParamStore,
    Var,
};
use crate::par;
use crate::potentials::{expected_complete_nll, lattice_nll, BatchNll, NeuralHmm};

pub use report::{BatchRecord, EpochRecord, TrainReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Gradient of `log p(x)` through the forward recursion.
    Dml,
    /// Gradient steps on the expected complete-data log-likelihood under
    /// posteriors frozen at inner-loop entry.
    Em,
}

impl std::str::FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dml" => Ok(Self::Dml),
            "em" => Ok(Self::Em),
            _ => Err(Error::Usage(format!("unknown objective `{s}` (dml|em)"))),
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Dml => "dml",
            Self::Em => "em",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    pub batch_size: usize,
    /// Training sentences longer than this are skipped.
    pub max_len: usize,
    pub epochs: usize,
    pub max_inner_loops: usize,
    /// Relative change of the batch objective below which the inner loop stops.
    pub inner_convergence: f64,
    /// Global gradient norm limit; `f64::INFINITY` disables clipping.
    pub clip_norm: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Dml,
            batch_size: 256,
            max_len: 40,
            epochs: 5,
            max_inner_loops: 6,
            inner_convergence: 1e-4,
            clip_norm: 5.0,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("max_len", self.max_len),
            ("epochs", self.epochs),
            ("max_inner_loops", self.max_inner_loops),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.inner_convergence.is_nan() || self.inner_convergence <= 0.0 {
            return Err(Error::Config("inner_convergence must be positive".into()));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.adam.lr
            )));
        }
        Ok(())
    }
}

/// `−Σ log p(x)` over the batch.
pub fn dml_loss<R: Rng + ?Sized>(
    g: &mut Graph,
    model: &NeuralHmm,
    batch: &[&Sentence],
    training: bool,
    rng: &mut R,
) -> Result<BatchNll> {
    let inputs = model.lattice_inputs(g, batch, training, rng)?;
    lattice_nll(g, &inputs)
}

/// Posteriors of every sentence under the current parameters, evaluation mode.
pub fn batch_posteriors(model: &NeuralHmm, batch: &[&Sentence]) -> Result<Vec<PosteriorTable>> {
    let pots = model.potentials(batch)?;
    Ok(par::map(&pots, |_, p| posteriors(p)))
}

/// Expected complete-data negative log-likelihood under frozen posteriors.
pub fn em_surrogate_loss<R: Rng + ?Sized>(
    g: &mut Graph,
    model: &NeuralHmm,
    batch: &[&Sentence],
    posteriors: &[PosteriorTable],
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    let inputs = model.lattice_inputs(g, batch, training, rng)?;
    expected_complete_nll(g, &inputs, posteriors)
}

/// `|new − old| / |old| < tol`. Magnitudes are used because the objective is
/// a negative log-probability: the signed ratio would report convergence for
/// every improvement.
pub fn has_converged(old: f64, new: f64, tol: f64) -> bool {
    if old == 0.0 {
        return new == 0.0;
    }
    ((new - old) / old).abs() < tol
}

/// Outcome of one inner loop.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerLoop {
    /// Parameter updates applied.
    pub steps: usize,
    /// Objective value before each update, plus the value that stopped the loop.
    pub losses: Vec<f64>,
    /// Pre-clip gradient norm of each update.
    pub grad_norms: Vec<f64>,
}

fn objective_value<R: Rng + ?Sized>(
    model: &NeuralHmm,
    batch: &[&Sentence],
    frozen: Option<&[PosteriorTable]>,
    rng: &mut R,
) -> Result<(Graph, Var)> {
    let mut g = Graph::new();
    let loss = match frozen {
        None => dml_loss(&mut g, model, batch, true, rng)?.loss,
        Some(post) => em_surrogate_loss(&mut g, model, batch, post, true, rng)?,
    };
    Ok((g, loss))
}

/// Up to `max_inner_loops` Adam updates on one batch. After each update the
/// objective is re-evaluated (fresh dropout mask) and the loop stops once
/// its relative change falls below `inner_convergence`.
pub fn inner_loop<R: Rng + ?Sized>(
    model: &mut NeuralHmm,
    batch: &[&Sentence],
    config: &TrainConfig,
    rng: &mut R,
) -> Result<InnerLoop> {
    let frozen = match config.objective {
        Objective::Dml => None,
        Objective::Em => Some(batch_posteriors(model, batch)?),
    };
    let mut out = InnerLoop {
        steps: 0,
        losses: Vec::new(),
        grad_norms: Vec::new(),
    };
    loop {
        let (g, loss) = objective_value(model, batch, frozen.as_deref(), rng)?;
        let value = g.value(loss).data()[0];
        let converged = out
            .losses
            .last()
            .is_some_and(|&prev| has_converged(prev, value, config.inner_convergence));
        out.losses.push(value);
        if converged {
            break;
        }
        let store = model.params_mut();
        store.zero_grads();
        let grads = g.backward(loss);
        g.accumulate_param_grads(&grads, store);
        out.grad_norms.push(apply_update(store, config));
        out.steps += 1;
        if out.steps == config.max_inner_loops {
            break;
        }
    }
    Ok(out)
}

fn apply_update(store: &mut ParamStore, config: &TrainConfig) -> f64 {
    let norm = if config.clip_norm.is_finite() {
        clip_global_norm(store, config.clip_norm)
    } else {
        crate::numerics::global_grad_norm(store)
    };
    adam_step(store, &config.adam);
    norm
}

/// SHA-256 over parameter names, shapes and value bits, in store order.
pub fn param_checksum(store: &ParamStore) -> String {
    let mut h = Sha256::new();
    for (_, p) in store.iter() {
        h.update(p.name.as_bytes());
        h.update([0]);
        for &d in p.tensor.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for &x in p.tensor.data() {
            h.update(x.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Central-difference check of the evaluation-mode DML loss gradient.
pub fn check_dml_gradient(
    model: &NeuralHmm,
    batch: &[&Sentence],
    h: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut store = model.params().clone();
    let mut scratch = model.clone();
    finite_diff_check(&mut store, h, seed, |params| {
        *scratch.params_mut() = params.clone();
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loss = dml_loss(&mut g, &scratch, batch, false, &mut rng)?.loss;
        Ok((g, loss))
    })
}

/// Per-token log-likelihood in evaluation mode.
pub fn per_token_log_likelihood(
    model: &NeuralHmm,
    sentences: &[Sentence],
    batch_size: usize,
) -> Result<f64> {
    let (ll, tokens) = model.log_likelihood(sentences, batch_size)?;
    if tokens == 0 {
        return Err(Error::Data("no tokens to score".into()));
    }
    Ok(ll / tokens as f64)
}

/// Trains for `config.epochs` passes over the sentences no longer than
/// `config.max_len`, shuffled per epoch with a seeded generator.
pub fn train(
    model: &mut NeuralHmm,
    sentences: &[Sentence],
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    let started = Instant::now();
    let data: Vec<Sentence> = sentences
        .iter()
        .filter(|s| s.len() <= config.max_len)
        .cloned()
        .collect();
    if data.is_empty() {
        return Err(Error::Data(format!(
            "no training sentences of length ≤ {}",
            config.max_len
        )));
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::new(
        config,
        model.config(),
        data.len(),
        sentences.len() - data.len(),
    );
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Sentence> = chunk.iter().map(|&i| &data[i]).collect();
            let tokens = batch.iter().map(|s| s.len()).sum();
            let inner = inner_loop(model, &batch, config, &mut dropout_rng)?;
            let rec = BatchRecord {
                epoch,
                batch: bi,
                sentences: batch.len(),
                tokens,
                steps: inner.steps,
                loss: *inner.losses.last().expect("at least one evaluation"),
                initial_loss: inner.losses[0],
                grad_norm: inner.grad_norms[0],
            };
            log::debug!(
                "epoch {epoch} batch {bi}: {} steps, loss {:.4} -> {:.4}",
                rec.steps,
                rec.initial_loss,
                rec.loss
            );
            report.batches.push(rec);
        }
        let ll = per_token_log_likelihood(model, &data, config.batch_size)?;
        log::info!("epoch {epoch}: per-token log-likelihood {ll:.6}");
        report.epochs.push(EpochRecord {
            epoch,
            log_likelihood_per_token: ll,
        });
    }
    report.checksum = param_checksum(model.params());
    report.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests;
