//! Synthetic corpora with planted structure.
//!
//! Topic documents mix words from a topic-specific block of the vocabulary
//! with background words from the whole vocabulary, both Zipfian. Paired
//! documents additionally share the entity words of a common event.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{RawDocument, RawSplits};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopicCorpusConfig {
    pub topics: usize,
    pub vocab: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a token comes from the document's topic block.
    pub purity: f64,
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for TopicCorpusConfig {
    fn default() -> Self {
        Self {
            topics: 4,
            vocab: 2000,
            train: 2000,
            validation: 500,
            test: 500,
            min_len: 40,
            max_len: 120,
            purity: 0.5,
            zipf_exponent: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairedCorpusConfig {
    pub topics: usize,
    pub vocab: usize,
    pub entities: usize,
    pub entities_per_event: usize,
    /// Probability that a token is one of the event's entity words.
    pub entity_rate: f64,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub purity: f64,
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for PairedCorpusConfig {
    fn default() -> Self {
        Self {
            topics: 20,
            vocab: 1000,
            entities: 1000,
            entities_per_event: 4,
            entity_rate: 0.3,
            train: 4000,
            validation: 500,
            test: 500,
            min_len: 40,
            max_len: 120,
            purity: 0.5,
            zipf_exponent: 1.0,
            seed: 0,
        }
    }
}

fn zipf(n: usize, s: f64) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new((1..=n).map(|k| (k as f64).powf(-s)))
        .map_err(|e| Error::Config(format!("word distribution: {e}")))
}

struct Vocab {
    topic: Vec<(usize, WeightedIndex<f64>)>,
    background: WeightedIndex<f64>,
}

impl Vocab {
    fn new(topics: usize, vocab: usize, s: f64) -> Result<Self> {
        if topics == 0 || vocab < topics {
            return Err(Error::Config(format!("{topics} topics over {vocab} words")));
        }
        let block = vocab / topics;
        Ok(Self {
            topic: (0..topics).map(|t| Ok((t * block, zipf(block, s)?))).collect::<Result<_>>()?,
            background: zipf(vocab, s)?,
        })
    }

    fn word<R: Rng>(&self, topic: usize, purity: f64, rng: &mut R) -> String {
        let idx = if rng.gen_bool(purity) {
            let (start, dist) = &self.topic[topic];
            start + dist.sample(rng)
        } else {
            self.background.sample(rng)
        };
        format!("w{idx:05}")
    }
}

fn check_common(min_len: usize, max_len: usize, purity: f64) -> Result<()> {
    if min_len == 0 || max_len < min_len {
        return Err(Error::Config(format!("document length range {min_len}..={max_len}")));
    }
    if !(0.0..=1.0).contains(&purity) {
        return Err(Error::Config(format!("purity {purity} outside [0, 1]")));
    }
    Ok(())
}

/// Documents labelled `topicK`. Ids are `d00000, d00001, ...` in generation
/// order, which is independent of the topics.
pub fn topic_corpus(cfg: &TopicCorpusConfig) -> Result<RawSplits> {
    check_common(cfg.min_len, cfg.max_len, cfg.purity)?;
    let vocab = Vocab::new(cfg.topics, cfg.vocab, cfg.zipf_exponent)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut next = 0usize;
    let mut make = |n: usize, rng: &mut ChaCha8Rng| -> Vec<RawDocument> {
        (0..n)
            .map(|_| {
                let topic = rng.gen_range(0..cfg.topics);
                let len = rng.gen_range(cfg.min_len..=cfg.max_len);
                let mut counts = BTreeMap::new();
                for _ in 0..len {
                    *counts.entry(vocab.word(topic, cfg.purity, rng)).or_insert(0) += 1;
                }
                let id = format!("d{next:05}");
                next += 1;
                RawDocument {
                    id,
                    labels: vec![format!("topic{topic}")],
                    counts,
                    pair_id: None,
                }
            })
            .collect()
    };
    Ok(RawSplits {
        train: make(cfg.train, &mut rng),
        validation: make(cfg.validation, &mut rng),
        test: make(cfg.test, &mut rng),
    })
}

/// Pairs of documents about the same event. Event `i` yields `y{i}` (whose
/// `pair_id` is `x{i}`) and `x{i}`; both carry the event's topic label and
/// both land in the same split. Event numbers are a seeded permutation, so
/// id order says nothing about the split and retrieval ties broken by id
/// favour no split.
pub fn paired_corpus(cfg: &PairedCorpusConfig) -> Result<RawSplits> {
    check_common(cfg.min_len, cfg.max_len, cfg.purity)?;
    if cfg.entities_per_event > cfg.entities || !(0.0..=1.0).contains(&cfg.entity_rate) {
        return Err(Error::Config("bad entity settings".into()));
    }
    let vocab = Vocab::new(cfg.topics, cfg.vocab, cfg.zipf_exponent)?;
    let pool: Vec<usize> = (0..cfg.entities).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut numbers: Vec<usize> = (0..cfg.train + cfg.validation + cfg.test).collect();
    numbers.shuffle(&mut rng);
    let mut numbers = numbers.into_iter();
    let mut make = |n: usize, rng: &mut ChaCha8Rng| -> Vec<RawDocument> {
        let mut docs = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let next = numbers.next().expect("one number per event");
            let topic = rng.gen_range(0..cfg.topics);
            let entities: Vec<usize> = pool.choose_multiple(rng, cfg.entities_per_event).copied().collect();
            let emit = |rng: &mut ChaCha8Rng| {
                let len = rng.gen_range(cfg.min_len..=cfg.max_len);
                let mut counts = BTreeMap::new();
                for _ in 0..len {
                    let word = if !entities.is_empty() && rng.gen_bool(cfg.entity_rate) {
                        format!("e{:05}", entities[rng.gen_range(0..entities.len())])
                    } else {
                        vocab.word(topic, cfg.purity, rng)
                    };
                    *counts.entry(word).or_insert(0) += 1;
                }
                counts
            };
            let (cy, cx) = (emit(rng), emit(rng));
            let label = vec![format!("topic{topic}")];
            docs.push(RawDocument {
                id: format!("y{next:05}"),
                labels: label.clone(),
                counts: cy,
                pair_id: Some(format!("x{next:05}")),
            });
            docs.push(RawDocument {
                id: format!("x{next:05}"),
                labels: label,
                counts: cx,
                pair_id: None,
            });
        }
        docs
    };
    Ok(RawSplits {
        train: make(cfg.train, &mut rng),
        validation: make(cfg.validation, &mut rng),
        test: make(cfg.test, &mut rng),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topic_corpus_is_deterministic_and_sized() {
        let cfg = TopicCorpusConfig {
            train: 30,
            validation: 5,
            test: 7,
            ..Default::default()
        };
        let a = topic_corpus(&cfg).unwrap();
        assert_eq!(a, topic_corpus(&cfg).unwrap());
        assert_eq!((a.train.len(), a.validation.len(), a.test.len()), (30, 5, 7));
        for d in &a.train {
            let n: u32 = d.counts.values().sum();
            assert!((40..=120).contains(&(n as usize)));
        }
        let b = topic_corpus(&TopicCorpusConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn topic_words_dominate_their_block() {
        let cfg = TopicCorpusConfig {
            topics: 2,
            vocab: 100,
            train: 50,
            validation: 0,
            test: 0,
            purity: 0.9,
            ..Default::default()
        };
        let c = topic_corpus(&cfg).unwrap();
        for d in &c.train {
            let own = if d.labels[0] == "topic0" { 0 } else { 50 };
            let total: u32 = d.counts.values().sum();
            let inside: u32 = d
                .counts
                .iter()
                .filter(|(w, _)| {
                    let i: usize = w[1..].parse().unwrap();
                    (own..own + 50).contains(&i)
                })
                .map(|(_, c)| c)
                .sum();
            assert!(inside as f64 / total as f64 > 0.8);
        }
    }

    #[test]
    fn pairs_share_entities_and_resolve() {
        let cfg = PairedCorpusConfig {
            train: 10,
            validation: 2,
            test: 2,
            entity_rate: 0.5,
            ..Default::default()
        };
        let c = paired_corpus(&cfg).unwrap();
        assert_eq!(c.train.len(), 20);
        for pair in c.train.chunks(2) {
            assert_eq!(pair[0].pair_id.as_deref(), Some(pair[1].id.as_str()));
            let ents = |d: &RawDocument| -> Vec<String> {
                d.counts.keys().filter(|w| w.starts_with('e')).cloned().collect()
            };
            let (a, b) = (ents(&pair[0]), ents(&pair[1]));
            assert!(a.iter().any(|w| b.contains(w)));
        }
    }
}
