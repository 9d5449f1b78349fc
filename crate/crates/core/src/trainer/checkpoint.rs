//! Binary checkpoints.
//!
//! Layout (little endian): magic `QTCK`, u32 version, u32-length config text,
//! u32-length vocabulary TSV, u32 tensor count, then per tensor a u32-length
//! name, u32 rows, u32 cols and `rows * cols` f32 values in row-major order.
//! Optimizer moments travel as extra tensors named `adam.m.<name>` and
//! `adam.v.<name>`; the step counters live in the config text.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{QtModel, TrainConfig};
use crate::corpus::Vocabulary;
use crate::encoder::Encoder;
use crate::error::{QtError, Result};
use crate::numkern::Mat;
use crate::optim::Adam;

pub const MAGIC: &[u8; 4] = b"QTCK";
pub const VERSION: u32 = 1;

const STEP_KEY: &str = "step";
const ADAM_T_KEY: &str = "adam_t";

/// Decoded checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: QtModel<f32>,
    pub step: u64,
    pub adam: Option<Adam<f32>>,
}

fn put_u32(out: &mut Vec<u8>, x: usize) -> Result<()> {
    let x = u32::try_from(x).map_err(|_| QtError::Format(format!("{x} does not fit in a u32 field")))?;
    out.extend_from_slice(&x.to_le_bytes());
    Ok(())
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) -> Result<()> {
    put_u32(out, b.len())?;
    out.extend_from_slice(b);
    Ok(())
}

fn put_tensor(out: &mut Vec<u8>, name: &str, m: &Mat<f32>) -> Result<()> {
    put_bytes(out, name.as_bytes())?;
    put_u32(out, m.rows())?;
    put_u32(out, m.cols())?;
    for x in m.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(())
}

pub fn encode_checkpoint(model: &QtModel<f32>, adam: Option<&Adam<f32>>, step: u64) -> Result<Vec<u8>> {
    let mut config = model.config.to_kv();
    config.push_str(&format!("{STEP_KEY}={step}\n"));
    if let Some(a) = adam {
        config.push_str(&format!("{ADAM_T_KEY}={}\n", a.step_count()));
    }
    let tensors = model.tensors();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_bytes(&mut out, config.as_bytes())?;
    put_bytes(&mut out, model.vocab.to_tsv().as_bytes())?;
    let count = tensors.len() * if adam.is_some() { 3 } else { 1 };
    put_u32(&mut out, count)?;
    for t in &tensors {
        put_tensor(&mut out, &t.name, t.value)?;
    }
    if let Some(a) = adam {
        if a.first_moments().len() != tensors.len() {
            return Err(QtError::Shape("optimizer state does not match the model".into()));
        }
        for (prefix, moments) in [("adam.m.", a.first_moments()), ("adam.v.", a.second_moments())] {
            for (t, m) in tensors.iter().zip(moments) {
                put_tensor(&mut out, &format!("{prefix}{}", t.name), m)?;
            }
        }
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, model: &QtModel<f32>, adam: Option<&Adam<f32>>, step: u64) -> Result<()> {
    let bytes = encode_checkpoint(model, adam, step)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            QtError::Format(format!("truncated checkpoint: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn text(&mut self, what: &str) -> Result<&'a str> {
        let n = self.u32()?;
        std::str::from_utf8(self.take(n)?).map_err(|_| QtError::Format(format!("{what} is not UTF-8")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(QtError::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(QtError::Format(format!("unsupported checkpoint version {version}")));
    }

    let config_text = r.text("config")?;
    let mut step = 0;
    let mut adam_t = None;
    let mut plain = String::new();
    for line in config_text.lines() {
        let parse = |v: &str| v.parse::<u64>().map_err(|_| QtError::Format(format!("bad counter line {line:?}")));
        match line.split_once('=') {
            Some((STEP_KEY, v)) => step = parse(v)?,
            Some((ADAM_T_KEY, v)) => adam_t = Some(parse(v)?),
            _ => {
                plain.push_str(line);
                plain.push('\n');
            }
        }
    }
    let config = TrainConfig::from_kv(&plain)?;
    let vocab = Vocabulary::from_tsv(r.text("vocabulary")?)?;

    let count = r.u32()?;
    let mut tensors: HashMap<String, Mat<f32>> = HashMap::with_capacity(count);
    for _ in 0..count {
        let name = r.text("tensor name")?.to_string();
        let (rows, cols) = (r.u32()?, r.u32()?);
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| QtError::Format(format!("tensor {name} is too large")))?;
        let data = r.take(n)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let m = Mat::new(rows, cols, data).map_err(|e| QtError::Format(format!("tensor {name}: {e}")))?;
        if tensors.insert(name.clone(), m).is_some() {
            return Err(QtError::Format(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(QtError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let mut take = |name: &str| {
        tensors.remove(name).ok_or_else(|| QtError::Format(format!("missing tensor {name}")))
    };
    let f = Encoder::assemble(config.encoder, |n| take(&format!("f.{n}")))?;
    let g = Encoder::assemble(config.encoder, |n| take(&format!("g.{n}")))?;
    if f.vocab_size() != vocab.len() || g.vocab_size() != vocab.len() {
        return Err(QtError::Format("embedding rows disagree with the vocabulary".into()));
    }
    let model = QtModel { config, vocab, f, g };

    let adam = match adam_t {
        None => None,
        Some(t) => {
            let names: Vec<String> = model.tensors().iter().map(|t| t.name.clone()).collect();
            let m = names.iter().map(|n| take(&format!("adam.m.{n}"))).collect::<Result<Vec<_>>>()?;
            let v = names.iter().map(|n| take(&format!("adam.v.{n}"))).collect::<Result<Vec<_>>>()?;
            if m.iter().zip(model.shapes()).any(|(a, s)| a.shape() != s) {
                return Err(QtError::Format("optimizer moments do not match parameter shapes".into()));
            }
            Some(Adam::from_state(model.config.adam, t, m, v)?)
        }
    };
    if let Some(name) = tensors.keys().next() {
        return Err(QtError::Format(format!("unexpected tensor {name}")));
    }
    Ok(Checkpoint { model, step, adam })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
