use std::io::Write;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::Result;
use crate::potentials::ModelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    pub sentences: usize,
    pub tokens: usize,
    /// Parameter updates taken before the inner loop stopped.
    pub steps: usize,
    /// Batch objective at inner-loop entry.
    pub initial_loss: f64,
    /// Batch objective at the last evaluation.
    pub loss: f64,
    /// Pre-clip gradient norm of the first update.
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Evaluation-mode log-likelihood of the training set per token.
    pub log_likelihood_per_token: f64,
}

/// Training trace. Everything except `wall_clock_secs` is a function of the
/// inputs and seed, so the serialized form is reproducible byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub model: ModelConfig,
    pub train_sentences: usize,
    /// Sentences dropped by the length filter.
    pub skipped_sentences: usize,
    pub batches: Vec<BatchRecord>,
    pub epochs: Vec<EpochRecord>,
    /// SHA-256 over the final parameters.
    pub checksum: String,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Line<'a> {
    Config {
        config: &'a TrainConfig,
        model: &'a ModelConfig,
        train_sentences: usize,
        skipped_sentences: usize,
    },
    Batch(&'a BatchRecord),
    Epoch(&'a EpochRecord),
    Final {
        checksum: &'a str,
    },
}

impl TrainReport {
    pub(super) fn new(
        config: &TrainConfig,
        model: &ModelConfig,
        train_sentences: usize,
        skipped_sentences: usize,
    ) -> Self {
        Self {
            config: config.clone(),
            model: model.clone(),
            train_sentences,
            skipped_sentences,
            batches: Vec::new(),
            epochs: Vec::new(),
            checksum: String::new(),
            wall_clock_secs: 0.0,
        }
    }

    /// Batch records of one epoch.
    pub fn epoch_batches(&self, epoch: usize) -> impl Iterator<Item = &BatchRecord> {
        self.batches.iter().filter(move |b| b.epoch == epoch)
    }

    /// One JSON object per line: config, batches and epochs in order, then the checksum.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let mut emit = |line: Line<'_>| -> Result<()> {
            serde_json::to_writer(&mut w, &line).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
            Ok(())
        };
        emit(Line::Config {
            config: &self.config,
            model: &self.model,
            train_sentences: self.train_sentences,
            skipped_sentences: self.skipped_sentences,
        })?;
        let mut batches = self.batches.iter().peekable();
        for e in &self.epochs {
            while let Some(b) = batches.next_if(|b| b.epoch <= e.epoch) {
                emit(Line::Batch(b))?;
            }
            emit(Line::Epoch(e))?;
        }
        for b in batches {
            emit(Line::Batch(b))?;
        }
        emit(Line::Final {
            checksum: &self.checksum,
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }
}
