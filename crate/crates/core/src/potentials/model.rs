use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{EmissionMode, ModelConfig, TransitionMode};
use super::lattice_op::{batch_potentials, LatticeInputs, TransitionInputs};
use crate::data::{Sentence, Vocab, PAD, SOS, UNK};
use crate::error::{Error, Result};
use crate::hmm::{forward, viterbi, LatticePotentials};
use crate::numerics::kernels::{log_sum_exp, matmul_bt};
use crate::numerics::{
    char_cnn, dropout, lstm_step, pad_char_rows, ConvFilter, Graph, InitSpec, LstmLayer, ParamId,
    ParamStore, Tensor, Var,
};
use crate::par;

/// Word vectors `w_i` of the emission softmax.
#[derive(Clone, Debug, PartialEq)]
pub enum WordRepr {
    /// `[V×D]` output-layer weights.
    Lookup { weights: ParamId },
    /// Character CNN over each type's spelling, then linear + ReLU to `D`.
    CharCnn {
        char_embed: ParamId,
        filters: Vec<ConvFilter>,
        proj_weight: ParamId,
        proj_bias: ParamId,
    },
}

/// `p(x = i | z = k) ∝ exp(v_kᵀ w_i + b_i)` with `v_k = ReLU(W·e_k + c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmissionNet {
    pub tag_lookup: ParamId,
    pub tag_weight: ParamId,
    pub tag_bias: ParamId,
    pub words: WordRepr,
    pub word_bias: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TransitionContext {
    /// Free query vector `q`.
    Static { query: ParamId },
    /// Stacked LSTM over `[SOS, x_1, …]`; `h_{t−1}` replaces `q`.
    Lstm {
        embed: ParamId,
        layers: Vec<LstmLayer>,
    },
}

/// `T = Uᵀq + b` reshaped to `(K+1)×(K+1)` with a softmax per row.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionNet {
    pub u: ParamId,
    pub bias: ParamId,
    pub context: TransitionContext,
}

/// A neural HMM: configuration, frozen vocabulary and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralHmm {
    config: ModelConfig,
    vocab: Vocab,
    store: ParamStore,
    emission: EmissionNet,
    transition: TransitionNet,
    /// Padded `[V × max_word_len]` character ids of every type.
    type_chars: Vec<usize>,
}

/// Shared eval-mode quantities for decoding and scoring a corpus.
struct EvalTables {
    table: Tensor,
    unk_score: f64,
    static_trans: Option<Tensor>,
    oov_columns: HashMap<Vec<u32>, usize>,
}

impl NeuralHmm {
    /// Builds and initializes a model; the vocabulary is frozen.
    pub fn new(config: ModelConfig, mut vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        if vocab.num_types() == 0 {
            return Err(Error::Data("vocabulary has no word types".into()));
        }
        vocab.freeze();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (k, d, v) = (config.num_tags, config.hidden, vocab.num_types());
        let kb2 = (k + 1) * (k + 1);
        let linear = |fan_in| InitSpec::UniformFanIn { fan_in };

        let tag_lookup =
            store.init("emit.tag_lookup", &[k, d], InitSpec::GaussianUnit, &mut rng)?;
        let tag_weight = store.init("emit.tag_mlp.weight", &[d, d], linear(d), &mut rng)?;
        let tag_bias = store.init("emit.tag_mlp.bias", &[d], linear(d), &mut rng)?;
        let words = match config.emission {
            EmissionMode::Lookup => WordRepr::Lookup {
                weights: store.init("emit.word_weights", &[v, d], linear(d), &mut rng)?,
            },
            EmissionMode::CharCnn => {
                let e = config.char_embed_dim;
                let f = config.cnn_filters_per_width;
                let char_embed = store.init(
                    "emit.char_embed",
                    &[vocab.num_chars(), e],
                    InitSpec::GaussianUnit,
                    &mut rng,
                )?;
                let mut filters = Vec::with_capacity(config.cnn_max_width);
                for w in 1..=config.cnn_max_width {
                    filters.push(ConvFilter {
                        width: w,
                        weight: store.init(
                            format!("emit.conv{w}.weight"),
                            &[w * e, f],
                            linear(w * e),
                            &mut rng,
                        )?,
                        bias: store.init(
                            format!("emit.conv{w}.bias"),
                            &[f],
                            linear(w * e),
                            &mut rng,
                        )?,
                    });
                }
                let total = f * config.cnn_max_width;
                WordRepr::CharCnn {
                    char_embed,
                    filters,
                    proj_weight: store.init(
                        "emit.proj.weight",
                        &[total, d],
                        linear(total),
                        &mut rng,
                    )?,
                    proj_bias: store.init("emit.proj.bias", &[d], linear(total), &mut rng)?,
                }
            }
        };
        let word_bias = store.init("emit.word_bias", &[v], linear(d), &mut rng)?;

        let context = match config.transition {
            TransitionMode::Static => TransitionContext::Static {
                query: store.init("trans.query", &[d], InitSpec::GaussianUnit, &mut rng)?,
            },
            TransitionMode::Lstm => {
                let embed = store.init(
                    "trans.embed",
                    &[vocab.num_words(), d],
                    InitSpec::GaussianUnit,
                    &mut rng,
                )?;
                let layers = (0..config.lstm_layers)
                    .map(|l| LstmLayer::new(&mut store, &format!("trans.lstm{l}"), d, d, &mut rng))
                    .collect::<Result<Vec<_>>>()?;
                TransitionContext::Lstm { embed, layers }
            }
        };
        let u = store.init("trans.u", &[d, kb2], linear(d), &mut rng)?;
        let bias = store.init("trans.bias", &[kb2], linear(d), &mut rng)?;

        if let Some(eps) = config.init_uniform_eps {
            store.reinit_all(InitSpec::UniformEps { eps }, &mut rng)?;
        }
        let type_chars = match config.emission {
            EmissionMode::CharCnn => pad_char_rows(&vocab.type_chars(), config.max_word_len, PAD),
            EmissionMode::Lookup => Vec::new(),
        };
        Ok(Self {
            config,
            vocab,
            store,
            emission: EmissionNet {
                tag_lookup,
                tag_weight,
                tag_bias,
                words,
                word_bias,
            },
            transition: TransitionNet { u, bias, context },
            type_chars,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn emission_net(&self) -> &EmissionNet {
        &self.emission
    }

    pub fn transition_net(&self) -> &TransitionNet {
        &self.transition
    }

    pub fn num_tags(&self) -> usize {
        self.config.num_tags
    }

    /// Emission columns, i.e. real word types.
    pub fn num_types(&self) -> usize {
        self.vocab.num_types()
    }

    /// Score of a token without an emission column: uniform over the vocabulary.
    pub fn unk_score(&self) -> f64 {
        -(self.num_types() as f64).ln()
    }

    /// Overwrites parameter values, matching by name and shape.
    pub fn set_params(&mut self, values: Vec<(String, Tensor)>) -> Result<()> {
        if values.len() != self.store.len() {
            return Err(Error::Format(format!(
                "{} parameters supplied for a model with {}",
                values.len(),
                self.store.len()
            )));
        }
        for (name, t) in values {
            let id = self
                .store
                .id(&name)
                .ok_or_else(|| Error::Format(format!("unknown parameter `{name}`")))?;
            if self.store.value(id).shape() != t.shape() {
                return Err(Error::Format(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    self.store.value(id).shape()
                )));
            }
            *self.store.value_mut(id) = t;
        }
        Ok(())
    }

    fn tag_vectors(&self, g: &mut Graph) -> Result<Var> {
        let e = g.param(&self.store, self.emission.tag_lookup);
        let w = g.param(&self.store, self.emission.tag_weight);
        let b = g.param(&self.store, self.emission.tag_bias);
        let h = g.linear(e, w, b)?;
        Ok(g.relu(h))
    }

    /// `[V×D]` word vectors, followed by rows for `extra` spellings (char-CNN only).
    fn word_vectors(&self, g: &mut Graph, extra: &[Vec<u32>]) -> Result<Var> {
        match &self.emission.words {
            WordRepr::Lookup { weights } => {
                if !extra.is_empty() {
                    return Err(Error::Usage(
                        "lookup emissions cannot score unseen spellings".into(),
                    ));
                }
                Ok(g.param(&self.store, *weights))
            }
            WordRepr::CharCnn {
                char_embed,
                filters,
                proj_weight,
                proj_bias,
            } => {
                let mut ids = self.type_chars.clone();
                ids.extend(pad_char_rows(extra, self.config.max_word_len, PAD));
                let feats = char_cnn(
                    g,
                    &self.store,
                    &ids,
                    self.config.max_word_len,
                    *char_embed,
                    filters,
                )?;
                let w = g.param(&self.store, *proj_weight);
                let b = g.param(&self.store, *proj_bias);
                let h = g.linear(feats, w, b)?;
                Ok(g.relu(h))
            }
        }
    }

    /// `[K×V]` emission log-probabilities as a graph node.
    pub fn emission_table(&self, g: &mut Graph) -> Result<Var> {
        let v = self.tag_vectors(g)?;
        let w = self.word_vectors(g, &[])?;
        let logits = g.matmul_bt(v, w)?;
        let b = g.param(&self.store, self.emission.word_bias);
        let z = g.add_bias(logits, b)?;
        g.log_softmax(z, 1)
    }

    /// `[K×V]` emission log-probabilities; every row is a distribution over the vocabulary.
    pub fn emission_log_probs(&self) -> Result<Tensor> {
        let mut g = Graph::new();
        let t = self.emission_table(&mut g)?;
        Ok(g.value(t).clone())
    }

    /// `[K × (V+E)]` table whose first `V` columns equal the emission table and
    /// whose extra columns score the given spellings (word bias 0) under the
    /// same normalizer.
    fn extended_emission(&self, extra: &[Vec<u32>]) -> Result<Tensor> {
        if extra.is_empty() {
            return self.emission_log_probs();
        }
        let mut g = Graph::new();
        let v = self.tag_vectors(&mut g)?;
        let w = self.word_vectors(&mut g, extra)?;
        let (k, d) = g.value(v).dims2();
        let cols = g.value(w).dims2().0;
        let vocab = self.num_types();
        let mut logits = matmul_bt(g.value(v).data(), g.value(w).data(), k, d, cols);
        let bias = self.store.value(self.emission.word_bias).data();
        for row in logits.chunks_mut(cols) {
            for (x, b) in row.iter_mut().zip(bias) {
                *x += b;
            }
            let lse = log_sum_exp(&row[..vocab]);
            row.iter_mut().for_each(|x| *x -= lse);
        }
        Tensor::new(vec![k, cols], logits)
    }

    /// `(K+1)×(K+1)` transition log-probabilities as a graph node (static mode).
    pub fn static_transition(&self, g: &mut Graph) -> Result<Var> {
        let TransitionContext::Static { query } = &self.transition.context else {
            return Err(Error::Usage(
                "static transition requested from an LSTM transition model".into(),
            ));
        };
        let kb = self.num_tags() + 1;
        let q = g.param(&self.store, *query);
        let q = g.reshape(q, &[1, self.config.hidden])?;
        let t = self.transition_logits(g, q)?;
        let t = g.reshape(t, &[kb, kb])?;
        g.log_softmax(t, 1)
    }

    fn transition_logits(&self, g: &mut Graph, q: Var) -> Result<Var> {
        let u = g.param(&self.store, self.transition.u);
        let b = g.param(&self.store, self.transition.bias);
        g.linear(q, u, b)
    }

    /// Static transition log-matrix.
    pub fn transition_log_matrix(&self) -> Result<Tensor> {
        let mut g = Graph::new();
        let t = self.static_transition(&mut g)?;
        Ok(g.value(t).clone())
    }

    /// Per-step `[B×(K+1)²]` transition log-matrices (LSTM mode). Step `p`
    /// follows the LSTM after `SOS, x_1..x_p`, so it scores the move into
    /// 0-based position `p`; step `n` scores the move into the end.
    pub fn contextual_transitions<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        sentences: &[&[u32]],
        training: bool,
        rng: &mut R,
    ) -> Result<Vec<Var>> {
        let TransitionContext::Lstm { embed, layers } = &self.transition.context else {
            return Err(Error::Usage(
                "contextual transitions requested from a static transition model".into(),
            ));
        };
        let bsz = sentences.len();
        let steps = sentences.iter().map(|s| s.len()).max().unwrap_or(0) + 1;
        let (d, kb) = (self.config.hidden, self.num_tags() + 1);
        let rate = self.config.dropout;
        let table = g.param(&self.store, *embed);
        let zero = g.constant(Tensor::zeros(&[bsz, d]));
        let mut state = vec![(zero, zero); layers.len()];
        let mut out = Vec::with_capacity(steps);
        for p in 0..steps {
            let ids: Vec<usize> = sentences
                .iter()
                .map(|s| match p {
                    0 => SOS,
                    _ => s.get(p - 1).copied().unwrap_or(PAD),
                } as usize)
                .collect();
            let mut x = g.gather_rows(table, &ids)?;
            x = dropout(g, x, rate, training, rng)?;
            for (layer, st) in layers.iter().zip(state.iter_mut()) {
                *st = lstm_step(g, &self.store, layer, x, *st)?;
                x = dropout(g, st.0, rate, training, rng)?;
            }
            let t = self.transition_logits(g, x)?;
            let t = g.reshape(t, &[bsz * kb, kb])?;
            let t = g.log_softmax(t, 1)?;
            out.push(g.reshape(t, &[bsz, kb * kb])?);
        }
        Ok(out)
    }

    /// The `n+1` contextual transition log-matrices of one sentence.
    pub fn transition_log_matrices_contextual(&self, sentence: &[u32]) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let steps = self.contextual_transitions(&mut g, &[sentence], false, &mut rng)?;
        let kb = self.num_tags() + 1;
        steps
            .iter()
            .map(|&s| g.value(s).clone().reshape(vec![kb, kb]))
            .collect()
    }

    fn columns(
        &self,
        s: &Sentence,
        oov: Option<&HashMap<Vec<u32>, usize>>,
    ) -> Result<Vec<Option<usize>>> {
        if s.is_empty() {
            return Err(Error::EmptySentence);
        }
        s.words
            .iter()
            .enumerate()
            .map(|(t, &w)| {
                if w as usize >= self.vocab.num_words() {
                    return Err(Error::Vocab(format!(
                        "word id {w} outside a vocabulary of {}",
                        self.vocab.num_words()
                    )));
                }
                Ok(match (self.vocab.column(w), oov) {
                    (Some(c), _) => Some(c),
                    (None, Some(map)) if w == UNK => {
                        s.chars.get(t).and_then(|c| map.get(c).copied())
                    }
                    (None, _) => None,
                })
            })
            .collect()
    }

    /// Graph inputs of the batch lattices.
    pub fn lattice_inputs<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        sentences: &[&Sentence],
        training: bool,
        rng: &mut R,
    ) -> Result<LatticeInputs> {
        if sentences.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let columns = sentences
            .iter()
            .map(|s| self.columns(s, None))
            .collect::<Result<Vec<_>>>()?;
        let table = self.emission_table(g)?;
        let transitions = match self.config.transition {
            TransitionMode::Static => TransitionInputs::Static(self.static_transition(g)?),
            TransitionMode::Lstm => {
                let words: Vec<&[u32]> = sentences.iter().map(|s| s.words.as_slice()).collect();
                TransitionInputs::Contextual(self.contextual_transitions(g, &words, training, rng)?)
            }
        };
        Ok(LatticeInputs {
            table,
            transitions,
            columns,
            unk_score: self.unk_score(),
        })
    }

    /// Lattices of a batch in evaluation mode (no dropout).
    pub fn potentials(&self, sentences: &[&Sentence]) -> Result<Vec<LatticePotentials>> {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let inputs = self.lattice_inputs(&mut g, sentences, false, &mut rng)?;
        batch_potentials(&g, &inputs)
    }

    fn eval_tables(&self, sentences: &[Sentence]) -> Result<EvalTables> {
        let mut oov_columns = HashMap::new();
        let mut extra = Vec::new();
        if self.config.emission == EmissionMode::CharCnn {
            for s in sentences {
                for (&w, c) in s.words.iter().zip(&s.chars) {
                    if w == UNK && !oov_columns.contains_key(c) {
                        oov_columns.insert(c.clone(), self.num_types() + extra.len());
                        extra.push(c.clone());
                    }
                }
            }
        }
        Ok(EvalTables {
            table: self.extended_emission(&extra)?,
            unk_score: self.unk_score(),
            static_trans: match self.config.transition {
                TransitionMode::Static => Some(self.transition_log_matrix()?),
                TransitionMode::Lstm => None,
            },
            oov_columns,
        })
    }

    /// Runs `f` on each batch's eval-mode lattices, in corpus order.
    fn for_each_batch(
        &self,
        sentences: &[Sentence],
        batch_size: usize,
        mut f: impl FnMut(usize, Vec<LatticePotentials>) -> Result<()>,
    ) -> Result<()> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let tables = self.eval_tables(sentences)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (bi, chunk) in sentences.chunks(batch_size).enumerate() {
            let columns = chunk
                .iter()
                .map(|s| self.columns(s, Some(&tables.oov_columns)))
                .collect::<Result<Vec<_>>>()?;
            let mut g = Graph::new();
            let table = g.constant(tables.table.clone());
            let transitions = match &tables.static_trans {
                Some(t) => TransitionInputs::Static(g.constant(t.clone())),
                None => {
                    let words: Vec<&[u32]> = chunk.iter().map(|s| s.words.as_slice()).collect();
                    TransitionInputs::Contextual(
                        self.contextual_transitions(&mut g, &words, false, &mut rng)?,
                    )
                }
            };
            let inputs = LatticeInputs {
                table,
                transitions,
                columns,
                unk_score: tables.unk_score,
            };
            f(bi * batch_size, batch_potentials(&g, &inputs)?)?;
        }
        Ok(())
    }

    /// Viterbi tag sequence of every sentence (any length).
    pub fn decode(&self, sentences: &[Sentence], batch_size: usize) -> Result<Vec<Vec<usize>>> {
        let mut out = Vec::with_capacity(sentences.len());
        self.for_each_batch(sentences, batch_size, |_, pots| {
            out.extend(par::map(&pots, |_, p| viterbi(p).0));
            Ok(())
        })?;
        Ok(out)
    }

    /// Total `log p(x)` over the sentences and their token count.
    pub fn log_likelihood(
        &self,
        sentences: &[Sentence],
        batch_size: usize,
    ) -> Result<(f64, usize)> {
        let mut total = 0.0;
        let mut tokens = 0;
        self.for_each_batch(sentences, batch_size, |offset, pots| {
            let zs = par::map(&pots, |_, p| forward(p).log_marginal);
            for (i, (z, p)) in zs.into_iter().zip(&pots).enumerate() {
                if !z.is_finite() {
                    return Err(Error::Numeric {
                        sentence: offset + i,
                        value: z,
                    });
                }
                total += z;
                tokens += p.len();
            }
            Ok(())
        })?;
        Ok((total, tokens))
    }
}
