use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmissionMode {
    Lookup,
    CharCnn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransitionMode {
    Static,
    Lstm,
}

impl FromStr for EmissionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lookup" => Ok(Self::Lookup),
            "char-cnn" => Ok(Self::CharCnn),
            _ => Err(Error::Usage(format!(
                "unknown emission mode `{s}` (lookup|char-cnn)"
            ))),
        }
    }
}

impl FromStr for TransitionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(Self::Static),
            "lstm" => Ok(Self::Lstm),
            _ => Err(Error::Usage(format!(
                "unknown transition mode `{s}` (static|lstm)"
            ))),
        }
    }
}

impl fmt::Display for EmissionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Lookup => "lookup",
            Self::CharCnn => "char-cnn",
        })
    }
}

impl fmt::Display for TransitionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Static => "static",
            Self::Lstm => "lstm",
        })
    }
}

pub const DEFAULT_HIDDEN: usize = 512;
pub const DEFAULT_HIDDEN_CHAR_CNN: usize = 128;

/// Architecture of a neural HMM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of real tags `K`.
    pub num_tags: usize,
    /// Hidden size `D` shared by tag, word, query and LSTM vectors.
    pub hidden: usize,
    pub emission: EmissionMode,
    pub transition: TransitionMode,
    pub cnn_filters_per_width: usize,
    /// Convolution widths are `1..=cnn_max_width`.
    pub cnn_max_width: usize,
    pub char_embed_dim: usize,
    /// Characters per word seen by the CNN; longer words are truncated.
    pub max_word_len: usize,
    /// Vertical LSTM dropout; 0 disables it.
    pub dropout: f64,
    pub lstm_layers: usize,
    /// When set, every parameter is drawn from `U(-eps, eps)` instead.
    pub init_uniform_eps: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::new(45, EmissionMode::Lookup, TransitionMode::Static)
    }
}

impl ModelConfig {
    /// Defaults for the given modes; `hidden` is 128 with char-CNN emissions, else 512.
    pub fn new(num_tags: usize, emission: EmissionMode, transition: TransitionMode) -> Self {
        Self {
            num_tags,
            hidden: match emission {
                EmissionMode::Lookup => DEFAULT_HIDDEN,
                EmissionMode::CharCnn => DEFAULT_HIDDEN_CHAR_CNN,
            },
            emission,
            transition,
            cnn_filters_per_width: 32,
            cnn_max_width: 7,
            char_embed_dim: 15,
            max_word_len: 24,
            dropout: 0.5,
            lstm_layers: 3,
            init_uniform_eps: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_tags", self.num_tags),
            ("hidden", self.hidden),
            ("cnn_filters_per_width", self.cnn_filters_per_width),
            ("cnn_max_width", self.cnn_max_width),
            ("char_embed_dim", self.char_embed_dim),
            ("lstm_layers", self.lstm_layers),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.max_word_len < self.cnn_max_width {
            return Err(Error::Config(format!(
                "max_word_len {} is shorter than the widest filter {}",
                self.max_word_len, self.cnn_max_width
            )));
        }
        crate::numerics::check_dropout_rate(self.dropout)?;
        if let Some(eps) = self.init_uniform_eps {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::Config(format!(
                    "init_uniform_eps must be positive, got {eps}"
                )));
            }
        }
        Ok(())
    }

    /// `key=value` pairs in a fixed order, used by the model file header.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("num_tags", self.num_tags.to_string()),
            ("hidden", self.hidden.to_string()),
            ("emission", self.emission.to_string()),
            ("transition", self.transition.to_string()),
            (
                "cnn_filters_per_width",
                self.cnn_filters_per_width.to_string(),
            ),
            ("cnn_max_width", self.cnn_max_width.to_string()),
            ("char_embed_dim", self.char_embed_dim.to_string()),
            ("max_word_len", self.max_word_len.to_string()),
            // bit pattern keeps the round trip exact
            ("dropout", format!("{:016x}", self.dropout.to_bits())),
            ("lstm_layers", self.lstm_layers.to_string()),
            (
                "init_uniform_eps",
                self.init_uniform_eps
                    .map_or("none".to_string(), |e| format!("{:016x}", e.to_bits())),
            ),
        ]
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut c = Self::default();
        let mut seen = std::collections::HashSet::new();
        let int = |k: &str, v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad value for {k}: `{v}`")))
        };
        let bits = |k: &str, v: &str| {
            u64::from_str_radix(v, 16)
                .map(f64::from_bits)
                .map_err(|_| Error::Format(format!("bad value for {k}: `{v}`")))
        };
        for (k, v) in pairs {
            if !seen.insert(k.to_string()) {
                return Err(Error::Format(format!("duplicate config key {k}")));
            }
            match k {
                "num_tags" => c.num_tags = int(k, v)?,
                "hidden" => c.hidden = int(k, v)?,
                "emission" => {
                    c.emission = v
                        .parse()
                        .map_err(|_| Error::Format(format!("bad emission `{v}`")))?
                }
                "transition" => {
                    c.transition = v
                        .parse()
                        .map_err(|_| Error::Format(format!("bad transition `{v}`")))?
                }
                "cnn_filters_per_width" => c.cnn_filters_per_width = int(k, v)?,
                "cnn_max_width" => c.cnn_max_width = int(k, v)?,
                "char_embed_dim" => c.char_embed_dim = int(k, v)?,
                "max_word_len" => c.max_word_len = int(k, v)?,
                "dropout" => c.dropout = bits(k, v)?,
                "lstm_layers" => c.lstm_layers = int(k, v)?,
                "init_uniform_eps" => {
                    c.init_uniform_eps = if v == "none" { None } else { Some(bits(k, v)?) }
                }
                _ => return Err(Error::Format(format!("unknown config key {k}"))),
            }
        }
        if seen.len() != Self::default().to_pairs().len() {
            return Err(Error::Format("model header is missing config keys".into()));
        }
        c.validate().map_err(|e| Error::Format(e.to_string()))?;
        Ok(c)
    }
}
