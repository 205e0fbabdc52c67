use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::SparseRows;

/// A tokenized document as stored on disk, one JSON object per line.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    #[serde(default)]
    pub labels: Vec<String>,
    pub counts: BTreeMap<String, u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_id: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RawSplits {
    pub train: Vec<RawDocument>,
    pub validation: Vec<RawDocument>,
    pub test: Vec<RawDocument>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub id: String,
    /// `(term, count)` in term order, vocabulary terms only.
    pub tokens: Vec<(u32, u32)>,
    /// `(term, weight)` in term order with unit L2 norm, or empty.
    pub tfidf: Vec<(u32, f64)>,
    /// Sorted label indices.
    pub labels: Vec<u32>,
    pub pair_id: Option<String>,
}

impl Document {
    /// True when no vocabulary term occurs, so the weight vector is zero.
    pub fn is_empty(&self) -> bool {
        self.tfidf.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

/// Vocabulary, idf and label names shared by all splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub terms: Vec<String>,
    pub idf: Vec<f64>,
    pub labels: Vec<String>,
}

impl Vocabulary {
    /// Weights documents as `(1 + ln tf) · idf` normalized to unit length.
    /// Terms and labels outside the vocabulary are dropped.
    pub fn vectorize(&self, docs: &[RawDocument]) -> Result<Vec<Document>> {
        if self.terms.len() != self.idf.len() {
            return Err(Error::Corpus(format!(
                "{} terms but {} idf weights",
                self.terms.len(),
                self.idf.len()
            )));
        }
        let index: HashMap<&str, u32> = self.terms.iter().enumerate().map(|(i, t)| (t.as_str(), i as u32)).collect();
        let label_index: HashMap<&str, u32> =
            self.labels.iter().enumerate().map(|(i, l)| (l.as_str(), i as u32)).collect();
        Ok(docs
            .iter()
            .map(|d| {
                let mut tokens: Vec<(u32, u32)> = d
                    .counts
                    .iter()
                    .filter(|(_, &c)| c > 0)
                    .filter_map(|(t, &c)| index.get(t.as_str()).map(|&i| (i, c)))
                    .collect();
                tokens.sort_unstable();
                let mut tfidf: Vec<(u32, f64)> = tokens
                    .iter()
                    .map(|&(i, c)| (i, (1.0 + (c as f64).ln()) * self.idf[i as usize]))
                    .collect();
                let norm = tfidf.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
                if norm > 0.0 {
                    tfidf.iter_mut().for_each(|(_, w)| *w /= norm);
                }
                let mut labels: Vec<u32> = d.labels.iter().filter_map(|l| label_index.get(l.as_str()).copied()).collect();
                labels.sort_unstable();
                labels.dedup();
                Document {
                    id: d.id.clone(),
                    tokens,
                    tfidf,
                    labels,
                    pair_id: d.pair_id.clone(),
                }
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub train: Vec<Document>,
    pub validation: Vec<Document>,
    pub test: Vec<Document>,
}

impl Corpus {
    pub fn vocab_size(&self) -> usize {
        self.vocab.terms.len()
    }

    pub fn split(&self, split: Split) -> &[Document] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &Document> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }

    pub fn is_labeled(&self, split: Split) -> bool {
        let docs = self.split(split);
        !docs.is_empty() && docs.iter().all(|d| !d.labels.is_empty())
    }

    /// Documents of `split` that name a partner.
    pub fn queries_with_pairs(&self, split: Split) -> Vec<&Document> {
        self.split(split).iter().filter(|d| d.pair_id.is_some()).collect()
    }

    pub fn has_pairs(&self) -> bool {
        self.train.iter().any(|d| d.pair_id.is_some())
    }

    /// Every document that some other document names as its partner.
    pub fn pair_targets(&self) -> Vec<&Document> {
        let wanted: HashSet<&str> = self.all().filter_map(|d| d.pair_id.as_deref()).collect();
        self.all().filter(|d| wanted.contains(d.id.as_str())).collect()
    }

    pub fn find(&self, id: &str) -> Option<&Document> {
        self.all().find(|d| d.id == id)
    }

    /// Checks disjoint ids across splits and that every partner resolves.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for d in self.all() {
            if !seen.insert(d.id.as_str()) {
                return Err(Error::Corpus(format!("document id `{}` appears twice", d.id)));
            }
        }
        for d in self.all() {
            if let Some(p) = &d.pair_id {
                if !seen.contains(p.as_str()) {
                    return Err(Error::Corpus(format!("`{}` pairs with unknown `{p}`", d.id)));
                }
            }
        }
        Ok(())
    }
}

/// Sparse weight rows for a set of documents, ready for the first layer.
pub fn tfidf_rows(docs: &[&Document], vocab_size: usize) -> Result<SparseRows> {
    SparseRows::from_rows(vocab_size, docs.iter().map(|d| d.tfidf.as_slice()))
}

/// Fits the vocabulary (the `vocab_size` train terms of highest document
/// frequency, ties by term) and idf on the train split, then weights every
/// split as `(1 + ln tf) · idf` normalized to unit length, with
/// `idf = ln((1 + D) / (1 + df)) + 1`.
pub fn build_tfidf(raw: &RawSplits, vocab_size: usize) -> Result<Corpus> {
    let mut df: HashMap<&str, usize> = HashMap::new();
    for d in &raw.train {
        for (term, &c) in &d.counts {
            if c > 0 {
                *df.entry(term.as_str()).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = df.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.truncate(vocab_size);
    if ranked.is_empty() {
        return Err(Error::Corpus("empty vocabulary".into()));
    }
    // Vocabulary indices follow term order so the layout does not depend on
    // frequency ties.
    ranked.sort_by(|a, b| a.0.cmp(b.0));
    let n_train = raw.train.len() as f64;
    let terms: Vec<String> = ranked.iter().map(|(t, _)| t.to_string()).collect();
    let idf: Vec<f64> = ranked
        .iter()
        .map(|&(_, df)| ((1.0 + n_train) / (1.0 + df as f64)).ln() + 1.0)
        .collect();
    let labels: Vec<String> = [&raw.train, &raw.validation, &raw.test]
        .into_iter()
        .flatten()
        .flat_map(|d| d.labels.iter().cloned())
        .collect::<BTreeSet<String>>()
        .into_iter()
        .collect();
    let vocab = Vocabulary { terms, idf, labels };
    let corpus = Corpus {
        train: vocab.vectorize(&raw.train)?,
        validation: vocab.vectorize(&raw.validation)?,
        test: vocab.vectorize(&raw.test)?,
        vocab,
    };
    corpus.validate()?;
    let empty = corpus.all().filter(|d| d.is_empty()).count();
    if empty > 0 {
        log::warn!("{empty} documents contain no vocabulary term");
    }
    Ok(corpus)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<RawDocument>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = serde_json::from_str(&line)
            .map_err(|e| Error::Corpus(format!("{}:{}: {e}", path.display(), n + 1)))?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_jsonl(path: &Path, docs: &[RawDocument]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for d in docs {
        serde_json::to_writer(&mut out, d)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_splits(train: &Path, validation: &Path, test: &Path) -> Result<RawSplits> {
    Ok(RawSplits {
        train: read_jsonl(train)?,
        validation: read_jsonl(validation)?,
        test: read_jsonl(test)?,
    })
}

/// Writes `train.jsonl`, `validation.jsonl` and `test.jsonl` into `dir`.
pub fn write_splits(dir: &Path, raw: &RawSplits) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_jsonl(&dir.join("train.jsonl"), &raw.train)?;
    write_jsonl(&dir.join("validation.jsonl"), &raw.validation)?;
    write_jsonl(&dir.join("test.jsonl"), &raw.test)
}

pub fn write_vocabulary(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), vocab)?;
    Ok(())
}

pub fn read_vocabulary(path: &Path) -> Result<Vocabulary> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// Lowercased alphabetic tokens of at least two letters.
pub fn tokenize(text: &str) -> BTreeMap<String, u32> {
    let mut counts = BTreeMap::new();
    for word in text.split(|c: char| !c.is_alphabetic()) {
        if word.chars().count() >= 2 {
            *counts.entry(word.to_lowercase()).or_insert(0) += 1;
        }
    }
    counts
}

/// Loads the "bydate" distribution of 20 Newsgroups: `root` holds
/// `20news-bydate-train/<group>/<file>` and `20news-bydate-test/...`. Every
/// `holdout`-th train document (in path order) becomes validation. Message
/// headers, up to the first blank line, are dropped.
pub fn load_newsgroups(root: &Path, holdout: usize) -> Result<RawSplits> {
    let read_dir = |dir: &Path| -> Result<Vec<RawDocument>> {
        let mut groups: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        groups.sort();
        let mut docs = Vec::new();
        for g in groups {
            let group = g.file_name().unwrap_or_default().to_string_lossy().to_string();
            let mut files: Vec<_> = fs::read_dir(&g)
                .map_err(|e| Error::io(&g, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            files.sort();
            for f in files {
                let bytes = fs::read(&f).map_err(|e| Error::io(&f, e))?;
                let text = String::from_utf8_lossy(&bytes);
                let body = text.split_once("\n\n").map_or(text.as_ref(), |(_, b)| b);
                let name = f.file_name().unwrap_or_default().to_string_lossy();
                docs.push(RawDocument {
                    id: format!("{group}/{name}"),
                    labels: vec![group.clone()],
                    counts: tokenize(body),
                    pair_id: None,
                });
            }
        }
        Ok(docs)
    };
    let all_train = read_dir(&root.join("20news-bydate-train"))?;
    let test = read_dir(&root.join("20news-bydate-test"))?;
    let holdout = holdout.max(2);
    let (mut train, mut validation) = (Vec::new(), Vec::new());
    for (i, d) in all_train.into_iter().enumerate() {
        if i % holdout == holdout - 1 {
            validation.push(d);
        } else {
            train.push(d);
        }
    }
    Ok(RawSplits {
        train,
        validation,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(id: &str, words: &[(&str, u32)]) -> RawDocument {
        RawDocument {
            id: id.into(),
            labels: vec!["a".into()],
            counts: words.iter().map(|&(w, c)| (w.to_string(), c)).collect(),
            pair_id: None,
        }
    }

    #[test]
    fn single_repeated_term_has_unit_weight() {
        let splits = RawSplits {
            train: vec![raw("d", &[("cat", 5)])],
            ..Default::default()
        };
        let c = build_tfidf(&splits, 10).unwrap();
        assert_eq!(c.train[0].tfidf, vec![(0, 1.0)]);
    }

    #[test]
    fn three_document_weights_match_hand_computation() {
        // df: a=3, b=2, c=1, D=3.
        let splits = RawSplits {
            train: vec![
                raw("d1", &[("a", 1), ("b", 2)]),
                raw("d2", &[("a", 3), ("b", 1), ("c", 1)]),
                raw("d3", &[("a", 1)]),
            ],
            ..Default::default()
        };
        let c = build_tfidf(&splits, 10).unwrap();
        assert_eq!(c.vocab.terms, ["a", "b", "c"]);
        let idf_a = 1.0; // ln(4/4) + 1
        let idf_b = (4.0f64 / 3.0).ln() + 1.0;
        let idf_c = 2f64.ln() + 1.0;
        for (got, want) in c.vocab.idf.iter().zip([idf_a, idf_b, idf_c]) {
            assert!((got - want).abs() < 1e-12);
        }
        let raw2 = [(1.0 + 3f64.ln()) * idf_a, idf_b, idf_c];
        let norm = raw2.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (k, (i, w)) in c.train[1].tfidf.iter().enumerate() {
            assert_eq!(*i as usize, k);
            assert!((w - raw2[k] / norm).abs() < 1e-10);
        }
        let d1 = [idf_a, (1.0 + 2f64.ln()) * idf_b];
        let n1 = d1.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((c.train[0].tfidf[1].1 - d1[1] / n1).abs() < 1e-10);
    }

    #[test]
    fn vocabulary_is_truncated_by_document_frequency_and_fitted_on_train() {
        let splits = RawSplits {
            train: vec![raw("d1", &[("x", 1), ("y", 1)]), raw("d2", &[("x", 1), ("z", 1)])],
            validation: vec![raw("v", &[("q", 4), ("x", 1)])],
            test: vec![raw("t", &[("q", 1)])],
        };
        let c = build_tfidf(&splits, 2).unwrap();
        assert_eq!(c.vocab.terms, ["x", "y"]);
        assert_eq!(c.validation[0].tfidf, vec![(0, 1.0)]);
        assert!(c.test[0].is_empty());
        assert!(build_tfidf(&RawSplits::default(), 5).is_err());
    }

    #[test]
    fn duplicate_ids_and_dangling_pairs_are_rejected() {
        let mut splits = RawSplits {
            train: vec![raw("d", &[("x", 1)]), raw("d", &[("y", 1)])],
            ..Default::default()
        };
        assert!(build_tfidf(&splits, 5).is_err());
        splits.train[1].id = "e".into();
        splits.train[1].pair_id = Some("nope".into());
        assert!(build_tfidf(&splits, 5).is_err());
        splits.train[1].pair_id = Some("d".into());
        assert!(build_tfidf(&splits, 5).is_ok());
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut docs = vec![raw("a", &[("w", 2)]), raw("b", &[])];
        docs[1].pair_id = Some("a".into());
        let path = dir.path().join("x.jsonl");
        write_jsonl(&path, &docs).unwrap();
        assert_eq!(read_jsonl(&path).unwrap(), docs);
    }

    #[test]
    fn tokenizer_lowercases_and_counts() {
        let t = tokenize("The cat, the CAT; a dog-house 42");
        assert_eq!(t["the"], 2);
        assert_eq!(t["cat"], 2);
        assert_eq!(t["house"], 1);
        assert!(!t.contains_key("a"));
    }
}
