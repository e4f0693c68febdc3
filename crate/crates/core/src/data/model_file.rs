//! Model file: a text header, a little-endian binary payload, and a SHA-256
//! trailer over everything before it.
//!
//! ```text
//! NHMM-MODEL
//! version=1
//! <config key=value lines>
//! words=<n> chars=<n> params=<n>   (one per line)
//! end
//! payload: words, chars as (u32 len, utf-8); params as
//!          (u32 len, name, u32 ndim, u64 dims…, f64 values…)
//! trailer: 32 bytes
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::vocab::Vocab;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::potentials::{ModelConfig, NeuralHmm};

pub const MAGIC: &str = "NHMM-MODEL";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn write_model(model: &NeuralHmm) -> Result<Vec<u8>> {
    let vocab = model.vocab();
    let params = model.params();
    let mut out = format!("{MAGIC}\nversion={FORMAT_VERSION}\n").into_bytes();
    for (k, v) in model.config().to_pairs() {
        out.extend_from_slice(format!("{k}={v}\n").as_bytes());
    }
    out.extend_from_slice(
        format!(
            "words={}\nchars={}\nparams={}\nend\n",
            vocab.num_words(),
            vocab.num_chars(),
            params.len()
        )
        .as_bytes(),
    );
    for w in vocab.words() {
        put_str(&mut out, w);
    }
    for c in vocab.chars() {
        put_str(&mut out, c);
    }
    for (_, p) in params.iter() {
        if !p.tensor.is_finite() {
            return Err(Error::Check(format!(
                "parameter `{}` holds non-finite values",
                p.name
            )));
        }
        put_str(&mut out, &p.name);
        out.extend_from_slice(&(p.tensor.ndim() as u32).to_le_bytes());
        for &d in p.tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in p.tensor.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format("model payload is truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("invalid utf-8 in model payload".into()))
    }

    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.buf[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("unterminated model header".into()))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| Error::Format("invalid model header".into()))
    }
}

pub fn read_model(bytes: &[u8]) -> Result<NeuralHmm> {
    if !bytes.starts_with(format!("{MAGIC}\n").as_bytes()) {
        return Err(Error::Format("not a model file".into()));
    }
    if bytes.len() < MAGIC.len() + 1 + DIGEST_LEN {
        return Err(Error::Corruption("model file is truncated".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != trailer {
        return Err(Error::Corruption("model checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 0 };
    r.line()?;
    let version = r.line()?;
    if version != format!("version={FORMAT_VERSION}") {
        return Err(Error::Format(format!(
            "unsupported model `{version}`, expected version={FORMAT_VERSION}"
        )));
    }
    let mut pairs = Vec::new();
    loop {
        let line = r.line()?;
        if line == "end" {
            break;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad header line `{line}`")))?;
        pairs.push((k, v));
    }
    let mut count = |key: &str| -> Result<usize> {
        let i = pairs
            .iter()
            .position(|(k, _)| *k == key)
            .ok_or_else(|| Error::Format(format!("model header lacks `{key}`")))?;
        let (_, v) = pairs.remove(i);
        v.parse()
            .map_err(|_| Error::Format(format!("bad `{key}` count")))
    };
    let (nw, nc, np) = (count("words")?, count("chars")?, count("params")?);
    let config = ModelConfig::from_pairs(pairs)?;
    let words = (0..nw).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
    let chars = (0..nc).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
    let vocab = Vocab::from_lists(words, chars).map_err(|e| Error::Format(e.to_string()))?;
    let mut params = Vec::with_capacity(np);
    for _ in 0..np {
        let name = r.string()?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Format("tensor too large".into()))?,
        )?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Format(format!(
                "parameter `{name}` holds non-finite values"
            )));
        }
        params.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes after model payload".into()));
    }
    let mut model = NeuralHmm::new(config, vocab, 0)?;
    model.set_params(params)?;
    Ok(model)
}

pub fn save_model(model: &NeuralHmm, path: &Path) -> Result<()> {
    std::fs::write(path, write_model(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<NeuralHmm> {
    read_model(&std::fs::read(path)?)
}
