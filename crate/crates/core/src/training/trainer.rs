use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Hyperparams, ModelKind};
use crate::error::{Error, Result};
use crate::hashing::{label_precision, pair_precision, tfidf_rows, CodeEncoder, Corpus, Document, Split};
use crate::nn::{AdamState, Gradients, Graph, ParamStore, PriorNet, SparseRows};
use crate::objectives::{ammi_losses, ammi_single_losses, bmmi_loss};

/// Random streams drawn from the run seed.
pub(crate) const INIT_STREAM: u64 = 0;
pub(crate) const SHUFFLE_STREAM: u64 = 1 << 32;

pub(crate) fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// The networks of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub hyper: Hyperparams,
    /// Codes of the primary document, collection `psi`.
    pub encoder: CodeEncoder,
    /// Codes of the paired document, collection `phi`; predictive runs only.
    pub posterior: Option<CodeEncoder>,
    /// The adversary, collection `theta`; adversarial runs only.
    pub prior: Option<PriorNet>,
}

impl Model {
    pub fn new(hyper: &Hyperparams, vocab_size: usize, predictive: bool) -> Result<Self> {
        hyper.validate()?;
        if predictive && hyper.model == ModelKind::Bmmi {
            return Err(Error::Config("the brute-force objective has no paired variant".into()));
        }
        let encoder = |name: &str, order: usize| {
            CodeEncoder::new(name, vocab_size, hyper.encoder_hidden, hyper.encoder_layers, hyper.m, order)
        };
        let prior = match hyper.model {
            ModelKind::Ammi => Some(PriorNet::new(
                "theta",
                hyper.m,
                hyper.r,
                hyper.prior_embed_dim,
                &vec![hyper.prior_hidden; hyper.prior_layers],
            )?),
            ModelKind::Bmmi => None,
        };
        Ok(Self {
            hyper: hyper.clone(),
            encoder: encoder("psi", hyper.o)?,
            posterior: if predictive { Some(encoder("phi", hyper.h)?) } else { None },
            prior,
        })
    }

    /// Model matching a corpus: predictive when the corpus has pairs and the
    /// objective is adversarial.
    pub fn for_corpus(hyper: &Hyperparams, corpus: &Corpus) -> Result<Self> {
        let predictive = corpus.has_pairs() && hyper.model == ModelKind::Ammi;
        Self::new(hyper, corpus.vocab_size(), predictive)
    }

    pub fn is_predictive(&self) -> bool {
        self.posterior.is_some()
    }

    /// Encoder of the candidate side in pair matching.
    pub fn target_encoder(&self) -> &CodeEncoder {
        self.posterior.as_ref().unwrap_or(&self.encoder)
    }

    pub fn init_params(&self) -> ParamStore {
        let mut store = ParamStore::new();
        let mut r = rng(self.hyper.seed, INIT_STREAM);
        let alpha = self.hyper.alpha;
        self.encoder.init(&mut store, alpha, &mut r);
        if let Some(p) = &self.posterior {
            p.init(&mut store, alpha, &mut r);
        }
        if let Some(p) = &self.prior {
            p.init(&mut store, alpha, &mut r);
        }
        store
    }

    /// Top-`k` label precision, or pair-matching precision for predictive
    /// models and unlabelled corpora.
    pub fn score(&self, store: &ParamStore, corpus: &Corpus, split: Split, k: usize) -> Result<f64> {
        let labelled = corpus.is_labeled(split) && corpus.is_labeled(Split::Train);
        if !self.is_predictive() && labelled {
            label_precision(&self.encoder, store, corpus, split, k)
        } else if !corpus.queries_with_pairs(split).is_empty() {
            pair_precision(&self.encoder, self.target_encoder(), store, corpus, split, k)
        } else {
            Err(Error::Retrieval(format!(
                "{} split has neither labels nor pairs to score",
                split.name()
            )))
        }
    }
}

/// Losses of one encoder step.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    pub encoder_loss: f64,
    /// Prior cross entropy after the inner steps; absent without a prior.
    pub prior_loss: Option<f64>,
    /// Code entropy estimate minus the conditional term, in nats.
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub encoder_loss: f64,
    pub prior_loss: Option<f64>,
    pub objective_nats: f64,
    pub objective_bits: f64,
    pub validation_score: f64,
}

/// Running sums of the current epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochSums {
    pub encoder_loss: f64,
    pub prior_loss: f64,
    pub objective: f64,
    pub batches: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ParamStore,
    pub encoder_adam: AdamState,
    pub prior_adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed batches of the current epoch.
    pub batch: usize,
    pub sums: EpochSums,
    /// How many times the prior was initialized; stays 1.
    pub prior_inits: u64,
    pub trace: Vec<BatchRecord>,
    pub history: Vec<EpochMetrics>,
    pub best_score: f64,
    pub best_epoch: usize,
    pub best_params: ParamStore,
    pub stale_epochs: usize,
    pub finished: bool,
}

impl TrainState {
    pub fn new(model: &Model) -> Self {
        let params = model.init_params();
        Self {
            best_params: params.clone(),
            params,
            encoder_adam: AdamState::new(),
            prior_adam: AdamState::new(),
            epoch: 0,
            batch: 0,
            sums: EpochSums::default(),
            prior_inits: u64::from(model.prior.is_some()),
            trace: Vec::new(),
            history: Vec::new(),
            best_score: f64::NEG_INFINITY,
            best_epoch: 0,
            stale_epochs: 0,
            finished: false,
        }
    }
}

/// Training examples: the primary document and, in the predictive setting,
/// its partner.
pub struct Trainer<'a> {
    pub model: Model,
    corpus: &'a Corpus,
    primary: Vec<&'a Document>,
    paired: Vec<&'a Document>,
}

impl<'a> Trainer<'a> {
    pub fn new(hyper: &Hyperparams, corpus: &'a Corpus) -> Result<Self> {
        let model = Model::for_corpus(hyper, corpus)?;
        Self::with_model(model, corpus)
    }

    pub fn with_model(model: Model, corpus: &'a Corpus) -> Result<Self> {
        let (mut primary, mut paired) = (Vec::new(), Vec::new());
        if model.is_predictive() {
            for d in corpus.queries_with_pairs(Split::Train) {
                let id = d.pair_id.as_deref().expect("filtered on pairs");
                let x = corpus
                    .find(id)
                    .ok_or_else(|| Error::Corpus(format!("`{}` pairs with unknown `{id}`", d.id)))?;
                primary.push(d);
                paired.push(x);
            }
        } else {
            primary = corpus.train.iter().collect();
        }
        if primary.is_empty() {
            return Err(Error::Corpus("no training documents".into()));
        }
        if corpus.vocab_size() != model.encoder.net.in_dim() {
            return Err(Error::Shape(format!(
                "corpus has {} terms, model expects {}",
                corpus.vocab_size(),
                model.encoder.net.in_dim()
            )));
        }
        Ok(Self {
            model,
            corpus,
            primary,
            paired,
        })
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.model.hyper
    }

    pub fn num_examples(&self) -> usize {
        self.primary.len()
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.primary.len().div_ceil(self.hyper().batch_size)
    }

    pub fn init_state(&self) -> TrainState {
        TrainState::new(&self.model)
    }

    /// Example order of an epoch; depends only on the seed and the epoch.
    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.primary.len()).collect();
        order.shuffle(&mut rng(self.hyper().seed, SHUFFLE_STREAM + epoch as u64));
        order
    }

    /// Trains until finished, or until `max_batches` more batches are done.
    pub fn run(&self, state: &mut TrainState, max_batches: Option<usize>) -> Result<()> {
        let mut budget = max_batches.unwrap_or(usize::MAX);
        while !state.finished && budget > 0 {
            let order = self.epoch_order(state.epoch);
            let bs = self.hyper().batch_size;
            while state.batch < self.batches_per_epoch() && budget > 0 {
                let idx = &order[state.batch * bs..((state.batch + 1) * bs).min(order.len())];
                self.step(state, idx)?;
                state.batch += 1;
                budget -= 1;
            }
            if state.batch == self.batches_per_epoch() {
                self.end_epoch(state)?;
            }
        }
        Ok(())
    }

    pub fn train(&self) -> Result<TrainState> {
        let mut state = self.init_state();
        self.run(&mut state, None)?;
        Ok(state)
    }

    fn rows(&self, docs: &[&Document]) -> Result<Rc<SparseRows>> {
        Ok(Rc::new(tfidf_rows(docs, self.corpus.vocab_size())?))
    }

    fn clip(&self, grads: &mut Gradients) {
        if self.hyper().clip_norm > 0.0 {
            grads.clip_global_norm(self.hyper().clip_norm);
        }
    }

    fn global_batch(&self, state: &TrainState) -> usize {
        state.epoch * self.batches_per_epoch() + state.batch
    }

    fn step(&self, state: &mut TrainState, idx: &[usize]) -> Result<()> {
        let hp = self.hyper().clone();
        let m = hp.m;
        let y: Vec<&Document> = idx.iter().map(|&i| self.primary[i]).collect();
        let xy = self.rows(&y)?;
        let batch = self.global_batch(state);
        let non_finite = |detail: String| Error::NonFiniteLoss { batch, detail };

        let record = match &self.model.prior {
            None => {
                let mut g = Graph::new();
                let e = self.model.encoder.logits(&mut g, &state.params, xy)?;
                let loss = bmmi_loss(&mut g, e, m)?;
                let value = g.value(loss).item();
                if !value.is_finite() {
                    return Err(non_finite(format!("bmmi loss = {value}")));
                }
                let mut grads = g.backward(loss)?;
                self.clip(&mut grads);
                state.encoder_adam.step(&mut state.params, &grads, hp.lr)?;
                BatchRecord {
                    epoch: state.epoch,
                    batch: state.batch,
                    encoder_loss: value,
                    prior_loss: None,
                    objective: -value,
                }
            }
            Some(prior) => {
                // Inner loop: the encoder's current tables are constants.
                let fixed = self
                    .model
                    .encoder
                    .net
                    .evaluate_logits_sparse(&state.params, &xy)?;
                for _ in 0..hp.inner_steps {
                    let mut g = Graph::new();
                    let e = g.constant(fixed.clone());
                    let t = prior.logits(&mut g, &state.params)?;
                    let h = g.markov_cross_entropy(e, t, m)?;
                    let loss = g.mean(h);
                    let value = g.value(loss).item();
                    if !value.is_finite() {
                        return Err(non_finite(format!("prior cross entropy = {value}")));
                    }
                    let mut grads = g.backward(loss)?.restrict("theta");
                    self.clip(&mut grads);
                    state.prior_adam.step(&mut state.params, &grads, hp.adv_lr)?;
                }

                let mut g = Graph::new();
                let e = self.model.encoder.logits(&mut g, &state.params, xy)?;
                let t = prior.logits(&mut g, &state.params)?;
                let losses = match &self.model.posterior {
                    Some(post) => {
                        let x: Vec<&Document> = idx.iter().map(|&i| self.paired[i]).collect();
                        let q = post.logits(&mut g, &state.params, self.rows(&x)?)?;
                        ammi_losses(&mut g, e, q, t, m, hp.beta)?
                    }
                    None => ammi_single_losses(&mut g, e, t, m, hp.beta)?,
                };
                let enc = g.value(losses.encoder_loss).item();
                let pri = g.value(losses.prior_loss).item();
                let cond = g.value(losses.conditional).item();
                if !(enc.is_finite() && pri.is_finite()) {
                    return Err(non_finite(format!(
                        "encoder loss = {enc}, prior cross entropy = {pri}, conditional = {cond}"
                    )));
                }
                let mut grads = g.backward(losses.encoder_loss)?;
                self.clip(&mut grads);
                state.encoder_adam.step(&mut state.params, &grads, hp.lr)?;
                BatchRecord {
                    epoch: state.epoch,
                    batch: state.batch,
                    encoder_loss: enc,
                    prior_loss: Some(pri),
                    objective: pri - cond,
                }
            }
        };
        state.sums.encoder_loss += record.encoder_loss;
        state.sums.prior_loss += record.prior_loss.unwrap_or(0.0);
        state.sums.objective += record.objective;
        state.sums.batches += 1;
        state.trace.push(record);
        Ok(())
    }

    fn end_epoch(&self, state: &mut TrainState) -> Result<()> {
        let score = self
            .model
            .score(&state.params, self.corpus, Split::Validation, self.hyper().k)?;
        let n = state.sums.batches as f64;
        let objective = state.sums.objective / n;
        state.history.push(EpochMetrics {
            epoch: state.epoch + 1,
            encoder_loss: state.sums.encoder_loss / n,
            prior_loss: self.model.prior.as_ref().map(|_| state.sums.prior_loss / n),
            objective_nats: objective,
            objective_bits: objective / std::f64::consts::LN_2,
            validation_score: score,
        });
        log::info!(
            "epoch {} objective {:.4} nats validation {:.4}",
            state.epoch + 1,
            objective,
            score
        );
        if score > state.best_score {
            state.best_score = score;
            state.best_epoch = state.epoch + 1;
            state.best_params = state.params.clone();
            state.stale_epochs = 0;
        } else {
            state.stale_epochs += 1;
        }
        state.epoch += 1;
        state.batch = 0;
        state.sums = EpochSums::default();
        state.finished = state.stale_epochs >= self.hyper().patience || state.epoch >= self.hyper().max_epochs;
        Ok(())
    }
}

/// Adversarial training to completion; the returned state holds the best
/// parameters in `best_params`.
pub fn train_ammi(corpus: &Corpus, hyper: &Hyperparams) -> Result<TrainState> {
    let hp = Hyperparams {
        model: ModelKind::Ammi,
        ..hyper.clone()
    };
    Trainer::new(&hp, corpus)?.train()
}

/// Brute-force training to completion.
pub fn train_bmmi(corpus: &Corpus, hyper: &Hyperparams) -> Result<TrainState> {
    let hp = Hyperparams {
        model: ModelKind::Bmmi,
        ..hyper.clone()
    };
    Trainer::new(&hp, corpus)?.train()
}
