//! Prior-order sweeps and hyperparameter search.

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;

use super::config::{Hyperparams, ModelKind};
use super::trainer::{rng, Trainer};
use crate::error::{Error, Result};
use crate::hashing::{Corpus, Document};
use crate::markov::{self, MarkovParams};
use crate::nn::{AdamState, Graph, ParamStore, PriorNet, Tensor};
use crate::objectives::BMMI_LIMIT;

const BATCH_STREAM: u64 = 2 << 32;
const PRIOR_STREAM: u64 = 3 << 32;
const GRID_STREAM: u64 = 4 << 32;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderSweepOptions {
    /// Fraction of `max_epochs` for which the encoder is trained.
    pub partial_fraction: f64,
    /// Upper bound on prior optimization steps per order.
    pub steps: usize,
    pub lr: f64,
    /// Stop once this many steps pass without improving the best value.
    pub patience: usize,
    /// Documents in the frozen batch the priors are fitted to; `None` uses
    /// the training batch size. Larger batches give a smoother code mixture.
    pub batch: Option<usize>,
}

impl Default for OrderSweepOptions {
    fn default() -> Self {
        Self {
            partial_fraction: 0.2,
            steps: 4000,
            lr: 0.003,
            patience: 400,
            batch: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderSweepRow {
    pub o: usize,
    pub r: usize,
    /// Best batch cross entropy reached by the optimized prior, nats.
    pub cross_entropy: f64,
    /// Entropy of the batch's code mixture by enumeration, nats.
    pub reference: f64,
    /// Smallest cross entropy any order-`r` Markov prior can reach, nats.
    pub projection: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderSweepReport {
    pub m: usize,
    pub o: usize,
    pub batch_size: usize,
    pub partial_epochs: usize,
    pub options: OrderSweepOptions,
    pub rows: Vec<OrderSweepRow>,
}

/// The order-`r` prior minimizing the mean cross entropy from `tables`:
/// each conditional is the ratio of mixture window marginals. Returns the
/// prior and the mean cross entropy it attains.
pub fn markov_projection(tables: &[MarkovParams], r: usize) -> Result<(MarkovParams, f64)> {
    let first = tables
        .first()
        .ok_or_else(|| Error::InvalidParams("projection of an empty batch".into()))?;
    let m = first.m();
    let cells = 2usize << r;
    let mut mu = vec![0.0; m * cells];
    for t in tables {
        let marg = markov::marginals(t, r)?;
        for i in 0..m {
            for (acc, v) in mu[i * cells..(i + 1) * cells].iter_mut().zip(marg.row(i)) {
                *acc += v;
            }
        }
    }
    let mut probs = Vec::with_capacity(m << r);
    for i in 0..m {
        for ctx in 0..(1usize << r) {
            let (zero, one) = (mu[i * cells + (ctx << 1)], mu[i * cells + (ctx << 1 | 1)]);
            probs.push(if zero + one > 0.0 { one / (zero + one) } else { 0.5 });
        }
    }
    let q = MarkovParams::new(m, r, probs)?;
    let mut total = 0.0;
    for t in tables {
        total += markov::cross_entropy(t, &q)?;
    }
    Ok((q, total / tables.len() as f64))
}

/// Optimizes a fresh prior network of order `r` against fixed encoder
/// logits; returns the best mean cross entropy and the steps taken.
pub fn fit_prior(
    encoder_logits: &Tensor,
    hyper: &Hyperparams,
    r: usize,
    opts: &OrderSweepOptions,
) -> Result<(f64, usize)> {
    let m = hyper.m;
    let prior = PriorNet::new(
        "theta",
        m,
        r,
        hyper.prior_embed_dim,
        &vec![hyper.prior_hidden; hyper.prior_layers],
    )?;
    let mut store = ParamStore::new();
    prior.init(&mut store, hyper.alpha, &mut rng(hyper.seed, PRIOR_STREAM + r as u64));
    let mut adam = AdamState::new();
    let (mut best, mut since, mut steps) = (f64::INFINITY, 0usize, 0usize);
    while steps < opts.steps && since < opts.patience {
        let mut g = Graph::new();
        let e = g.constant(encoder_logits.clone());
        let t = prior.logits(&mut g, &store)?;
        let h = g.markov_cross_entropy(e, t, m)?;
        let loss = g.mean(h);
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                batch: steps,
                detail: format!("prior cross entropy = {value} at order {r}"),
            });
        }
        if value < best - 1e-12 * best.abs().max(1.0) {
            best = value;
            since = 0;
        } else {
            since += 1;
        }
        let grads = g.backward(loss)?;
        adam.step(&mut store, &grads, opts.lr)?;
        steps += 1;
    }
    // Value after the last step.
    let mut g = Graph::new();
    let e = g.constant(encoder_logits.clone());
    let t = prior.logits(&mut g, &store)?;
    let h = g.markov_cross_entropy(e, t, m)?;
    let loss = g.mean(h);
    Ok((best.min(g.value(loss).item()), steps))
}

/// Trains a brute-force encoder of order `o` for a fraction of the epoch
/// budget, freezes it, and for each `r` fits a fresh order-`r` prior on one
/// fixed batch.
pub fn order_sweep(
    corpus: &Corpus,
    hyper: &Hyperparams,
    r_list: &[usize],
    opts: &OrderSweepOptions,
) -> Result<OrderSweepReport> {
    if r_list.is_empty() {
        return Err(Error::Config("empty list of prior orders".into()));
    }
    if hyper.m > BMMI_LIMIT {
        return Err(Error::EnumerationLimit {
            m: hyper.m,
            limit: BMMI_LIMIT,
        });
    }
    if let Some(&r) = r_list.iter().find(|&&r| r < hyper.o) {
        return Err(Error::Order {
            what: "prior",
            required: hyper.o,
            actual: r,
        });
    }
    let partial_epochs = ((hyper.max_epochs as f64 * opts.partial_fraction).ceil() as usize).max(1);
    let hp = Hyperparams {
        model: ModelKind::Bmmi,
        max_epochs: partial_epochs,
        patience: usize::MAX,
        ..hyper.clone()
    };
    let trainer = Trainer::new(&hp, corpus)?;
    let state = trainer.train()?;

    let mut docs: Vec<&Document> = corpus.train.iter().collect();
    rand::seq::SliceRandom::shuffle(docs.as_mut_slice(), &mut rng(hyper.seed, BATCH_STREAM));
    docs.truncate(opts.batch.unwrap_or(hyper.batch_size));
    let encoder = &trainer.model.encoder;
    let x = crate::hashing::tfidf_rows(&docs, corpus.vocab_size())?;
    let logits = encoder.net.evaluate_logits_sparse(&state.params, &x)?;
    let tables = encoder.tables(&state.params, &docs)?;
    let reference = markov::mixture_entropy(&tables)?;

    let mut rows = Vec::new();
    for &r in r_list {
        let (ce, steps) = fit_prior(&logits, hyper, r, opts)?;
        let (_, projection) = markov_projection(&tables, r)?;
        log::info!("order {r}: cross entropy {ce:.5}, projection {projection:.5}, reference {reference:.5}");
        rows.push(OrderSweepRow {
            o: hyper.o,
            r,
            cross_entropy: ce,
            reference,
            projection,
            steps,
        });
    }
    Ok(OrderSweepReport {
        m: hyper.m,
        o: hyper.o,
        batch_size: docs.len(),
        partial_epochs,
        options: opts.clone(),
        rows,
    })
}

pub fn order_sweep_csv(report: &OrderSweepReport) -> String {
    let mut s = String::from("o,r,cross_entropy_nats,reference_nats,projection_nats,cross_entropy_bits,reference_bits,steps\n");
    let ln2 = std::f64::consts::LN_2;
    for row in &report.rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.o,
            row.r,
            row.cross_entropy,
            row.reference,
            row.projection,
            row.cross_entropy / ln2,
            row.reference / ln2,
            row.steps
        ));
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SearchMode {
    Grid,
    Random,
}

/// Candidate values per key. The spec file is TOML: `mode = "grid"` or
/// `"random"`, `trials = N` for random mode, and one array per swept key.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpace {
    pub mode: SearchMode,
    pub trials: usize,
    pub axes: BTreeMap<String, Vec<String>>,
}

impl SearchSpace {
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut space = Self {
            mode: SearchMode::Grid,
            trials: 0,
            axes: BTreeMap::new(),
        };
        for (k, v) in table {
            match (k.as_str(), v) {
                ("mode", toml::Value::String(s)) => {
                    space.mode = match s.as_str() {
                        "grid" => SearchMode::Grid,
                        "random" => SearchMode::Random,
                        other => return Err(Error::Config(format!("unknown search mode `{other}`"))),
                    }
                }
                ("trials", toml::Value::Integer(n)) if n >= 0 => space.trials = n as usize,
                (_, toml::Value::Array(values)) if !values.is_empty() => {
                    let values = values.iter().map(|v| v.to_string()).collect();
                    space.axes.insert(k, values);
                }
                (key, _) => return Err(Error::Config(format!("bad search entry `{key}`"))),
            }
        }
        if space.axes.is_empty() {
            return Err(Error::Config("search space has no keys".into()));
        }
        // Reject unknown keys before running anything.
        for (k, v) in &space.axes {
            Hyperparams::default().with_overrides(&[format!("{k}={}", v[0])])?;
        }
        Ok(space)
    }

    /// Override lists, one per run: the full product in grid mode, `trials`
    /// uniform draws in random mode.
    pub fn assignments(&self, seed: u64) -> Vec<Vec<String>> {
        let keys: Vec<&String> = self.axes.keys().collect();
        let pick = |choice: &[usize]| -> Vec<String> {
            keys.iter()
                .zip(choice)
                .map(|(k, &i)| format!("{k}={}", self.axes[*k][i]))
                .collect()
        };
        match self.mode {
            SearchMode::Grid => {
                let mut out = Vec::new();
                let mut choice = vec![0usize; keys.len()];
                loop {
                    out.push(pick(&choice));
                    let mut d = keys.len();
                    loop {
                        if d == 0 {
                            return out;
                        }
                        d -= 1;
                        choice[d] += 1;
                        if choice[d] < self.axes[keys[d]].len() {
                            break;
                        }
                        choice[d] = 0;
                    }
                }
            }
            SearchMode::Random => {
                let mut r = rng(seed, GRID_STREAM);
                (0..self.trials)
                    .map(|_| {
                        let choice: Vec<usize> = keys.iter().map(|k| r.gen_range(0..self.axes[*k].len())).collect();
                        pick(&choice)
                    })
                    .collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SearchRun {
    pub index: usize,
    pub seed: u64,
    pub overrides: Vec<String>,
    pub config_hash: String,
    pub best_score: f64,
    pub best_epoch: usize,
}

/// Trains one model per assignment, run `i` with seed `base.seed + i`.
pub fn run_search(corpus: &Corpus, base: &Hyperparams, space: &SearchSpace) -> Result<Vec<SearchRun>> {
    space
        .assignments(base.seed)
        .into_iter()
        .enumerate()
        .map(|(index, overrides)| {
            let seed = base.seed.wrapping_add(index as u64);
            let mut all = overrides.clone();
            all.push(format!("seed={seed}"));
            let hp = base.with_overrides(&all)?;
            let state = Trainer::new(&hp, corpus)?.train()?;
            log::info!("run {index} {overrides:?}: best {:.4}", state.best_score);
            Ok(SearchRun {
                index,
                seed,
                overrides,
                config_hash: hp.config_hash(),
                best_score: state.best_score,
                best_epoch: state.best_epoch,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::brute;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn projection_is_the_best_markov_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tables: Vec<MarkovParams> = (0..5).map(|_| MarkovParams::random(6, 0, &mut rng)).collect();
        for r in 0..3 {
            let (q, value) = markov_projection(&tables, r).unwrap();
            let reference = markov::mixture_entropy(&tables).unwrap();
            assert!(value >= reference - 1e-9);
            // Random perturbations never do better.
            for _ in 0..20 {
                let probs: Vec<f64> = q.probs().iter().map(|p| (p + rng.gen_range(-0.05..0.05)).clamp(0.01, 0.99)).collect();
                let other = MarkovParams::new(6, r, probs).unwrap();
                let v: f64 = tables.iter().map(|t| brute::cross_entropy(t, &other).unwrap()).sum::<f64>() / 5.0;
                assert!(v >= value - 1e-12);
            }
        }
    }

    #[test]
    fn full_order_projection_reaches_the_mixture_entropy() {
        // Order m - 1 sees every earlier bit, so the projection is exact.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tables: Vec<MarkovParams> = (0..4).map(|_| MarkovParams::random(5, 1, &mut rng)).collect();
        let (_, value) = markov_projection(&tables, 4).unwrap();
        let reference = markov::mixture_entropy(&tables).unwrap();
        assert!((value - reference).abs() < 1e-9);
    }

    #[test]
    fn grid_and_random_assignments() {
        let space = SearchSpace::from_toml("beta = [1, 2]\nlr = [0.1, 0.01, 0.001]").unwrap();
        let runs = space.assignments(0);
        assert_eq!(runs.len(), 6);
        assert_eq!(runs[0], ["beta=1", "lr=0.1"]);
        assert_eq!(runs[5], ["beta=2", "lr=0.001"]);
        let space = SearchSpace::from_toml("mode = \"random\"\ntrials = 4\nbeta = [1, 2]").unwrap();
        let a = space.assignments(7);
        assert_eq!(a.len(), 4);
        assert_eq!(a, space.assignments(7));
        assert!(SearchSpace::from_toml("bogus = [1]").is_err());
        assert!(SearchSpace::from_toml("mode = \"grid\"").is_err());
    }
}
