//! Binary checkpoints.
//!
//! Layout, all integers little-endian `u64` unless noted:
//!
//! ```text
//! magic "AMMICKPT" | version u32
//! config text | config hash | model hash          (strings: length, UTF-8 bytes)
//! epoch | batch | prior_inits | stale_epochs | best_epoch | finished u8
//! best_score f64 | epoch sums (3 × f64, batches)
//! params | best_params                          (stores: count, then name, rows, cols, f64 values)
//! encoder Adam | prior Adam                     (t, beta1, beta2, eps, first store, second store)
//! trace   (count, then epoch, batch, encoder f64, has_prior u8, prior f64, objective f64)
//! history (count, then epoch, encoder f64, has_prior u8, prior f64, nats f64, bits f64, score f64)
//! SHA-256 of everything above (32 bytes)
//! ```
//!
//! Floats are stored as their IEEE bit patterns, so a round trip is exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::Hyperparams;
use super::trainer::{BatchRecord, EpochMetrics, EpochSums, TrainState};
use crate::error::{Error, Result};
use crate::nn::{AdamState, ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"AMMICKPT";
const VERSION: u32 = 1;

/// A training state together with the configuration that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub hyper: Hyperparams,
    pub state: TrainState,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn opt(&mut self, v: Option<f64>) {
        self.u8(u8::from(v.is_some()));
        self.f64(v.unwrap_or(0.0));
    }
    fn tensor(&mut self, t: &Tensor) {
        self.usize(t.rows());
        self.usize(t.cols());
        for &v in t.data() {
            self.f64(v);
        }
    }
    fn tensors<'a>(&mut self, items: impl ExactSizeIterator<Item = (&'a str, &'a Tensor)>) {
        self.usize(items.len());
        for (name, t) in items {
            self.str(name);
            self.tensor(t);
        }
    }
    fn adam(&mut self, a: &AdamState) {
        self.u64(a.t);
        self.f64(a.beta1);
        self.f64(a.beta2);
        self.f64(a.eps);
        self.tensors(a.first.iter().map(|(k, v)| (k.as_str(), v)));
        self.tensors(a.second.iter().map(|(k, v)| (k.as_str(), v)));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn corrupt(what: &str) -> Error {
    Error::Checkpoint(format!("malformed checkpoint: {what}"))
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| corrupt("truncated"))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("size overflow"))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(corrupt("flag")),
        }
    }
    fn str(&mut self) -> Result<String> {
        let n = self.usize()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("string"))
    }
    fn opt(&mut self) -> Result<Option<f64>> {
        let some = self.bool()?;
        let v = self.f64()?;
        Ok(some.then_some(v))
    }
    fn tensor(&mut self) -> Result<Tensor> {
        let (r, c) = (self.usize()?, self.usize()?);
        let n = r.checked_mul(c).ok_or_else(|| corrupt("tensor size"))?;
        if n.saturating_mul(8) > self.buf.len() - self.pos {
            return Err(corrupt("truncated"));
        }
        let data = (0..n).map(|_| self.f64()).collect::<Result<_>>()?;
        Tensor::new(r, c, data)
    }
    fn tensors(&mut self) -> Result<BTreeMap<String, Tensor>> {
        let n = self.usize()?;
        let mut out = BTreeMap::new();
        for _ in 0..n {
            let name = self.str()?;
            out.insert(name, self.tensor()?);
        }
        Ok(out)
    }
    fn store(&mut self) -> Result<ParamStore> {
        let mut s = ParamStore::new();
        for (k, v) in self.tensors()? {
            s.insert(k, v);
        }
        Ok(s)
    }
    fn adam(&mut self) -> Result<AdamState> {
        Ok(AdamState {
            t: self.u64()?,
            beta1: self.f64()?,
            beta2: self.f64()?,
            eps: self.f64()?,
            first: self.tensors()?,
            second: self.tensors()?,
        })
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let s = &self.state;
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.0.extend_from_slice(&VERSION.to_le_bytes());
        w.str(&self.hyper.canonical());
        w.str(&self.hyper.config_hash());
        w.str(&self.hyper.model_hash());
        w.usize(s.epoch);
        w.usize(s.batch);
        w.u64(s.prior_inits);
        w.usize(s.stale_epochs);
        w.usize(s.best_epoch);
        w.u8(u8::from(s.finished));
        w.f64(s.best_score);
        w.f64(s.sums.encoder_loss);
        w.f64(s.sums.prior_loss);
        w.f64(s.sums.objective);
        w.usize(s.sums.batches);
        w.tensors(s.params.iter());
        w.tensors(s.best_params.iter());
        w.adam(&s.encoder_adam);
        w.adam(&s.prior_adam);
        w.usize(s.trace.len());
        for r in &s.trace {
            w.usize(r.epoch);
            w.usize(r.batch);
            w.f64(r.encoder_loss);
            w.opt(r.prior_loss);
            w.f64(r.objective);
        }
        w.usize(s.history.len());
        for h in &s.history {
            w.usize(h.epoch);
            w.f64(h.encoder_loss);
            w.opt(h.prior_loss);
            w.f64(h.objective_nats);
            w.f64(h.objective_bits);
            w.f64(h.validation_score);
        }
        let digest = Sha256::digest(&w.0);
        w.0.extend_from_slice(&digest);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checkpoint("integrity check failed: file is corrupted".into()));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("four bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {version}, this build reads {VERSION}"
            )));
        }
        let mut r = Reader { buf: body, pos: 12 };
        let hyper = Hyperparams::from_toml(&r.str()?)?;
        let (config_hash, model_hash) = (r.str()?, r.str()?);
        if config_hash != hyper.config_hash() || model_hash != hyper.model_hash() {
            return Err(Error::Checkpoint("stored hashes do not match the stored config".into()));
        }
        let epoch = r.usize()?;
        let batch = r.usize()?;
        let prior_inits = r.u64()?;
        let stale_epochs = r.usize()?;
        let best_epoch = r.usize()?;
        let finished = r.bool()?;
        let best_score = r.f64()?;
        let sums = EpochSums {
            encoder_loss: r.f64()?,
            prior_loss: r.f64()?,
            objective: r.f64()?,
            batches: r.usize()?,
        };
        let params = r.store()?;
        let best_params = r.store()?;
        let encoder_adam = r.adam()?;
        let prior_adam = r.adam()?;
        let n = r.usize()?;
        let mut trace = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            trace.push(BatchRecord {
                epoch: r.usize()?,
                batch: r.usize()?,
                encoder_loss: r.f64()?,
                prior_loss: r.opt()?,
                objective: r.f64()?,
            });
        }
        let n = r.usize()?;
        let mut history = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            history.push(EpochMetrics {
                epoch: r.usize()?,
                encoder_loss: r.f64()?,
                prior_loss: r.opt()?,
                objective_nats: r.f64()?,
                objective_bits: r.f64()?,
                validation_score: r.f64()?,
            });
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self {
            hyper,
            state: TrainState {
                params,
                encoder_adam,
                prior_adam,
                epoch,
                batch,
                sums,
                prior_inits,
                trace,
                history,
                best_score,
                best_epoch,
                best_params,
                stale_epochs,
                finished,
            },
        })
    }

    /// Writes via a temporary file and rename, so a crash never leaves a
    /// half-written checkpoint under `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads and checks that the checkpoint was written under `hyper`.
    pub fn load_matching(path: &Path, hyper: &Hyperparams) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.hyper.config_hash() != hyper.config_hash() {
            return Err(Error::Checkpoint(format!(
                "checkpoint config hash {} does not match {}",
                ck.hyper.config_hash(),
                hyper.config_hash()
            )));
        }
        Ok(ck)
    }
}
