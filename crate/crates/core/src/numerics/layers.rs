//! Layer primitives composed from graph ops.

use std::sync::atomic::{AtomicBool, Ordering};

use rand::Rng;

use super::{Graph, InitSpec, ParamId, ParamStore, Var};
use crate::error::{Error, Result};

/// Inverted dropout. Identity when `training` is false or `rate` is 0.
pub fn dropout<R: Rng + ?Sized>(
    g: &mut Graph,
    x: Var,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    check_dropout_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = (0..g.value(x).len())
        .map(|_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep
            }
        })
        .collect();
    g.mask(x, mask)
}

pub fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    Ok(())
}

/// A single-width convolution bank for the character CNN.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvFilter {
    pub width: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Character CNN over a padded `[words × max_len]` id matrix: per width,
/// convolution then max-over-time pooling; outputs concatenated by width.
pub fn char_cnn(
    g: &mut Graph,
    store: &ParamStore,
    char_ids: &[usize],
    max_len: usize,
    embed: ParamId,
    filters: &[ConvFilter],
) -> Result<Var> {
    if max_len == 0 || !char_ids.len().is_multiple_of(max_len) {
        return Err(Error::Shape(format!(
            "char matrix of {} ids is not a multiple of max_len {max_len}",
            char_ids.len()
        )));
    }
    let words = char_ids.len() / max_len;
    let table = g.param(store, embed);
    let emb = g.gather_rows(table, char_ids)?;
    let mut pooled = Vec::with_capacity(filters.len());
    for f in filters {
        let w = g.param(store, f.weight);
        let b = g.param(store, f.bias);
        pooled.push(g.conv_max_pool(emb, w, b, words, max_len, f.width)?);
    }
    g.concat_cols(&pooled)
}

static TRUNCATION_LOGGED: AtomicBool = AtomicBool::new(false);

/// Pads (or truncates) each word's characters to `max_len` with `pad`.
pub fn pad_char_rows(words: &[Vec<u32>], max_len: usize, pad: u32) -> Vec<usize> {
    let mut out = Vec::with_capacity(words.len() * max_len);
    for w in words {
        if w.len() > max_len && !TRUNCATION_LOGGED.swap(true, Ordering::Relaxed) {
            log::warn!("word of {} characters truncated to {max_len}", w.len());
        }
        out.extend(w.iter().take(max_len).map(|&c| c as usize));
        out.extend(std::iter::repeat_n(
            pad as usize,
            max_len.saturating_sub(w.len()),
        ));
    }
    out
}

/// One LSTM layer; gate order in the fused weight is input, forget, output, candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer {
    /// `[(input + hidden) × 4·hidden]`
    pub weight: ParamId,
    /// `[4·hidden]`
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.init(
            format!("{name}.weight"),
            &[input + hidden, 4 * hidden],
            InitSpec::LstmGaussian {
                hidden_units: hidden,
            },
            rng,
        )?;
        let bias = store.init(
            format!("{name}.bias"),
            &[4 * hidden],
            InitSpec::ForgetBiasOne {
                hidden_units: hidden,
            },
            rng,
        )?;
        Ok(Self {
            weight,
            bias,
            input,
            hidden,
        })
    }
}

/// One LSTM step on a batch: `x[B×input]`, `h, c[B×hidden]` → `(h', c')`.
pub fn lstm_step(
    g: &mut Graph,
    store: &ParamStore,
    layer: &LstmLayer,
    x: Var,
    state: (Var, Var),
) -> Result<(Var, Var)> {
    let (h, c) = state;
    let hd = layer.hidden;
    if g.shape(h) != g.shape(c) || g.shape(h).get(1) != Some(&hd) {
        return Err(Error::Dimension {
            op: "lstm_step",
            left: g.shape(h).to_vec(),
            right: vec![hd],
        });
    }
    let xh = g.concat_cols(&[x, h])?;
    let w = g.param(store, layer.weight);
    let b = g.param(store, layer.bias);
    let z = g.linear(xh, w, b)?;
    let zi = g.slice_cols(z, 0, hd)?;
    let zf = g.slice_cols(z, hd, 2 * hd)?;
    let zo = g.slice_cols(z, 2 * hd, 3 * hd)?;
    let zg = g.slice_cols(z, 3 * hd, 4 * hd)?;
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let o = g.sigmoid(zo);
    let cand = g.tanh(zg);
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_next = g.add(keep, write)?;
    let squashed = g.tanh(c_next);
    let h_next = g.mul(o, squashed)?;
    Ok((h_next, c_next))
}
