use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::markov::MAX_ORDER;
use crate::objectives::BMMI_LIMIT;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Adversarial training against a learned prior.
    Ammi,
    /// Exact entropy by enumeration; no prior.
    Bmmi,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Ammi => "ammi",
            ModelKind::Bmmi => "bmmi",
        })
    }
}

/// Every training setting. The config file is flat TOML whose keys are
/// exactly these field names; absent keys keep their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub model: ModelKind,
    /// Parameters start uniform on `[-alpha, alpha]`.
    pub alpha: f64,
    pub batch_size: usize,
    /// Prior steps per encoder step.
    pub inner_steps: usize,
    /// Prior learning rate.
    pub adv_lr: f64,
    /// Encoder learning rate.
    pub lr: f64,
    /// Weight of the code-entropy term.
    pub beta: f64,
    /// Code length in bits.
    pub m: usize,
    /// Markov order of the encoder.
    pub o: usize,
    /// Markov order of the posterior over the paired document.
    pub h: usize,
    /// Markov order of the prior.
    pub r: usize,
    pub encoder_hidden: usize,
    pub encoder_layers: usize,
    pub prior_embed_dim: usize,
    pub prior_hidden: usize,
    pub prior_layers: usize,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip_norm: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    /// Neighbors retrieved by the validation task.
    pub k: usize,
    pub vocab_size: usize,
    pub seed: u64,
    pub train_path: String,
    pub validation_path: String,
    pub test_path: String,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            model: ModelKind::Ammi,
            alpha: 0.1,
            batch_size: 64,
            inner_steps: 2,
            adv_lr: 0.003,
            lr: 0.001,
            beta: 2.0,
            m: 16,
            o: 0,
            h: 0,
            r: 3,
            encoder_hidden: 512,
            encoder_layers: 1,
            prior_embed_dim: 64,
            prior_hidden: 512,
            prior_layers: 2,
            clip_norm: 0.0,
            patience: 10,
            max_epochs: 50,
            k: 100,
            vocab_size: 2000,
            seed: 0,
            train_path: String::new(),
            validation_path: String::new(),
            test_path: String::new(),
        }
    }
}

fn parse_table(text: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>().map_err(|e| Error::Config(e.to_string()))
}

fn override_table<S: AsRef<str>>(mut table: toml::Table, overrides: &[S]) -> Result<toml::Table> {
    for o in overrides {
        let (key, value) = o
            .as_ref()
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{}` is not KEY=VALUE", o.as_ref())))?;
        let key = key.trim();
        if !table.contains_key(key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        let value = value.trim();
        let parsed = parse_table(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        // Let integers stand in for floats: `--set beta=3`.
        let parsed = match (&table[key], parsed) {
            (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (_, v) => v,
        };
        table.insert(key.to_string(), parsed);
    }
    Ok(table)
}

/// Applies `KEY=VALUE` overrides to any flat settings struct. Values are
/// TOML literals; anything that does not parse as one is taken as a bare
/// string. Unknown keys are rejected.
pub fn apply_overrides<T, S>(value: &T, overrides: &[S]) -> Result<T>
where
    T: Serialize + serde::de::DeserializeOwned,
    S: AsRef<str>,
{
    let table = match toml::Value::try_from(value).map_err(|e| Error::Config(e.to_string()))? {
        toml::Value::Table(t) => t,
        _ => return Err(Error::Config("settings must serialize to a table".into())),
    };
    toml::Value::Table(override_table(table, overrides)?)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))
}

impl Hyperparams {
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_table(parse_table(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        if let Some((k, _)) = table.iter().find(|(_, v)| v.is_table() || v.is_array()) {
            return Err(Error::Config(format!("`{k}`: the config is flat key = value")));
        }
        let hp: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        hp.validate()?;
        Ok(hp)
    }

    fn to_table(&self) -> toml::Table {
        match toml::Value::try_from(self).expect("hyperparameters serialize") {
            toml::Value::Table(t) => t,
            _ => unreachable!("a struct serializes to a table"),
        }
    }

    /// Applies `KEY=VALUE` overrides; see [`apply_overrides`].
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        Self::from_table(override_table(self.to_table(), overrides)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.m == 0 {
            return bad("m must be positive".into());
        }
        if self.h < self.o || self.r < self.o {
            return bad(format!(
                "orders must satisfy h >= o and r >= o (o={}, h={}, r={})",
                self.o, self.h, self.r
            ));
        }
        if self.h.max(self.r) > MAX_ORDER {
            return bad(format!("orders above {MAX_ORDER} are not supported"));
        }
        if self.batch_size == 0 || self.inner_steps == 0 {
            return bad("batch_size and inner_steps must be at least 1".into());
        }
        for (name, v) in [("alpha", self.alpha), ("adv_lr", self.adv_lr), ("lr", self.lr)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a finite non-negative number"));
            }
        }
        if !(self.beta.is_finite() && self.clip_norm.is_finite() && self.clip_norm >= 0.0) {
            return bad("beta and clip_norm must be finite, clip_norm >= 0".into());
        }
        if self.beta < 1.0 {
            log::warn!("beta = {} is below 1", self.beta);
        }
        if self.encoder_hidden == 0 || self.prior_hidden == 0 || self.prior_embed_dim == 0 {
            return bad("layer widths must be positive".into());
        }
        if !(1..=3).contains(&self.encoder_layers) || !(1..=3).contains(&self.prior_layers) {
            return bad("encoder_layers and prior_layers must be 1, 2 or 3".into());
        }
        if self.model == ModelKind::Bmmi && self.m > BMMI_LIMIT {
            return bad(format!("bmmi needs m <= {BMMI_LIMIT}"));
        }
        if self.seed > i64::MAX as u64 {
            return bad(format!("seed must be at most {}", i64::MAX));
        }
        if self.k == 0 || self.max_epochs == 0 || self.vocab_size == 0 {
            return bad("k, max_epochs and vocab_size must be positive".into());
        }
        Ok(())
    }

    /// `key = value` lines in key order; the basis of the config hash.
    pub fn canonical(&self) -> String {
        toml::to_string(&self.to_table()).expect("a flat table serializes")
    }

    /// Hex SHA-256 of [`Hyperparams::canonical`].
    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    /// Hash of the settings that shape the model. Resuming or evaluating a
    /// checkpoint requires these to match.
    pub fn model_hash(&self) -> String {
        let shape = format!(
            "{} m={} o={} h={} r={} eh={} el={} pe={} ph={} pl={} v={}",
            self.model,
            self.m,
            self.o,
            self.h,
            self.r,
            self.encoder_hidden,
            self.encoder_layers,
            self.prior_embed_dim,
            self.prior_hidden,
            self.prior_layers,
            self.vocab_size
        );
        hex::encode(Sha256::digest(shape.as_bytes()))
    }
}

impl FromStr for Hyperparams {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_toml(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_file() {
        let hp = Hyperparams::from_toml("").unwrap();
        assert_eq!(hp, Hyperparams::default());
        assert_eq!((hp.alpha, hp.batch_size, hp.inner_steps), (0.1, 64, 2));
        assert_eq!((hp.adv_lr, hp.lr, hp.beta, hp.o, hp.r), (0.003, 0.001, 2.0, 0, 3));
        assert_eq!(hp.patience, 10);
    }

    #[test]
    fn canonical_text_round_trips() {
        let hp = Hyperparams {
            beta: 2.5,
            model: ModelKind::Bmmi,
            ..Default::default()
        };
        assert_eq!(Hyperparams::from_toml(&hp.canonical()).unwrap(), hp);
    }

    #[test]
    fn overrides_change_the_hash() {
        let hp = Hyperparams::default();
        let b = hp.with_overrides(&["beta=3", "model = bmmi", "train_path=data/x.jsonl"]).unwrap();
        assert_eq!(b.beta, 3.0);
        assert_eq!(b.model, ModelKind::Bmmi);
        assert_eq!(b.train_path, "data/x.jsonl");
        assert_ne!(hp.config_hash(), b.config_hash());
        assert_eq!(hp.config_hash(), Hyperparams::default().config_hash());
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let hp = Hyperparams::default();
        assert!(hp.with_overrides(&["nope=1"]).is_err());
        assert!(hp.with_overrides(&["beta"]).is_err());
        assert!(hp.with_overrides(&["o=2", "r=1"]).is_err());
        assert!(hp.with_overrides(&["inner_steps=0"]).is_err());
        assert!(hp.with_overrides(&["model=bmmi", "m=17"]).is_err());
        assert!(hp.with_overrides(&["lr=\"fast\""]).is_err());
        assert!(Hyperparams::from_toml("extra = 1").is_err());
        assert!(Hyperparams::from_toml("[section]\nm = 3").is_err());
    }
}
