//! Single-file checkpoint container.
//!
//! Layout: magic `LHG1`, `u32` format version, `u32` section count, then one
//! table entry per section (`u16` name length, name bytes, `u64` offset,
//! `u64` length) followed by the section payloads. Integers and floats are
//! little-endian; floats are 64-bit.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Checkpoint, EpochLog, FeatureNorm, ListenerModel, OptimState, OptimizerKind, TrainConfig};
use crate::error::{Error, Result};
use crate::layers::{num_params, Params};

pub const MAGIC: &[u8; 4] = b"LHG1";
pub const FORMAT_VERSION: u32 = 1;
const SECTIONS: [&str; 6] = ["config", "params", "norm", "optim", "state", "rng"];

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    section: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let Some(end) = end else {
            return Err(Error::Checkpoint(format!("section `{}` is truncated", self.section)));
        };
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n > self.data.len() / 8 {
            return Err(Error::Checkpoint(format!("section `{}` declares {n} values", self.section)));
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Checkpoint(format!("section `{}` has trailing bytes", self.section)));
        }
        Ok(())
    }
}

fn flat_params<P: Params<f64>>(p: &P) -> Vec<f64> {
    let mut out = Vec::with_capacity(num_params(p));
    p.visit("", &mut |_, d| out.extend_from_slice(d));
    out
}

pub fn checkpoint_to_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let mut payloads: Vec<Vec<u8>> = Vec::new();
    payloads.push(ckpt.config.format().into_bytes());

    let mut w = Writer::default();
    w.f64s(&flat_params(&ckpt.model));
    payloads.push(w.0);

    let mut w = Writer::default();
    w.f64s(&ckpt.norm.mean);
    w.f64s(&ckpt.norm.std);
    payloads.push(w.0);

    let mut w = Writer::default();
    w.u64(ckpt.optim.step);
    w.f64s(&ckpt.optim.m);
    w.f64s(&ckpt.optim.v);
    payloads.push(w.0);

    let mut w = Writer::default();
    w.u64(ckpt.epoch as u64);
    w.u64(ckpt.log.len() as u64);
    for e in &ckpt.log {
        w.u64(e.epoch as u64);
        for v in [e.train_reg, e.train_con, e.val_reg, e.val_con] {
            w.0.extend_from_slice(&v.to_le_bytes());
        }
    }
    payloads.push(w.0);

    let mut w = Writer::default();
    w.0.extend_from_slice(&ckpt.rng.get_seed());
    w.u64(ckpt.rng.get_stream());
    w.0.extend_from_slice(&ckpt.rng.get_word_pos().to_le_bytes());
    payloads.push(w.0);

    let table_len: usize = SECTIONS.iter().map(|n| 2 + n.len() + 16).sum();
    let mut offset = (4 + 4 + 4 + table_len) as u64;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(SECTIONS.len() as u32).to_le_bytes());
    for (name, payload) in SECTIONS.iter().zip(&payloads) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        offset += payload.len() as u64;
    }
    for p in payloads {
        out.extend_from_slice(&p);
    }
    out
}

fn section_table(data: &[u8]) -> Result<Vec<(String, &[u8])>> {
    let mut r = Reader { data, pos: 0, section: "header" };
    if r.take(4).map_err(|_| Error::Checkpoint("file too short".into()))? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic bytes)".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    let count = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
    if count > 64 {
        return Err(Error::Checkpoint(format!("implausible section count {count}")));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Checkpoint("section name is not UTF-8".into()))?;
        let offset = r.u64()? as usize;
        let length = r.u64()? as usize;
        let body = offset
            .checked_add(length)
            .filter(|&end| end <= data.len())
            .map(|end| &data[offset..end])
            .ok_or_else(|| Error::Checkpoint(format!("section `{name}` lies outside the file")))?;
        out.push((name, body));
    }
    Ok(out)
}

pub fn checkpoint_from_bytes(data: &[u8]) -> Result<Checkpoint> {
    let table = section_table(data)?;
    let get = |name: &'static str| -> Result<Reader<'_>> {
        table
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, body)| Reader { data: body, pos: 0, section: name })
            .ok_or_else(|| Error::Checkpoint(format!("missing section `{name}`")))
    };

    let cfg_text = std::str::from_utf8(get("config")?.data).map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
    let config = TrainConfig::parse(cfg_text)?;

    let mut r = get("params")?;
    let flat = r.f64s()?;
    r.finish()?;
    let mut model = ListenerModel::<f64>::zeros(&config);
    if flat.len() != num_params(&model) {
        return Err(Error::Checkpoint(format!(
            "{} parameters stored, configuration needs {}",
            flat.len(),
            num_params(&model)
        )));
    }
    let mut k = 0;
    model.visit_mut("", &mut |_, d| {
        d.copy_from_slice(&flat[k..k + d.len()]);
        k += d.len();
    });

    let mut r = get("norm")?;
    let norm = FeatureNorm { mean: r.f64s()?, std: r.f64s()? };
    r.finish()?;
    if norm.mean.len() != 3 * config.n_mfcc || norm.std.len() != norm.mean.len() {
        return Err(Error::Checkpoint("normalizer width does not match the configuration".into()));
    }

    let mut r = get("optim")?;
    let step = r.u64()?;
    let m = r.f64s()?;
    let v = r.f64s()?;
    r.finish()?;
    let expected = match config.optimizer {
        OptimizerKind::Adam => flat.len(),
        OptimizerKind::Sgd => 0,
    };
    if m.len() != expected || v.len() != expected {
        return Err(Error::Checkpoint("optimizer state does not match the parameters".into()));
    }
    let optim = OptimState { kind: config.optimizer, step, m, v };

    let mut r = get("state")?;
    let epoch = r.u64()? as usize;
    let n = r.u64()? as usize;
    if n > data.len() / 40 {
        return Err(Error::Checkpoint(format!("implausible log length {n}")));
    }
    let mut log = Vec::with_capacity(n);
    for _ in 0..n {
        log.push(EpochLog {
            epoch: r.u64()? as usize,
            train_reg: r.f64()?,
            train_con: r.f64()?,
            val_reg: r.f64()?,
            val_con: r.f64()?,
        });
    }
    r.finish()?;

    let mut r = get("rng")?;
    let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
    r.finish()?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);

    Ok(Checkpoint { config, model, norm, optim, epoch, log, rng })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_to_bytes(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&data)
}
