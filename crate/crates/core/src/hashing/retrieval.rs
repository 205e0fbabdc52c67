use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::markov::{hamming_words, BitVector};

/// Codes of indexed documents, stored as one contiguous word array so a
/// query is a single linear popcount scan.
#[derive(Clone, Debug, Default)]
pub struct CodeIndex {
    m: usize,
    words_per_code: usize,
    ids: Vec<String>,
    words: Vec<u64>,
    labels: Vec<Vec<u32>>,
    by_id: HashMap<String, usize>,
    /// Position of each entry in id order, the retrieval tie-break.
    rank: Vec<u32>,
    by_rank: Vec<usize>,
}

/// A retrieved entry: position in the index and Hamming distance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Neighbor {
    pub entry: usize,
    pub distance: u32,
}

impl CodeIndex {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            words_per_code: m.div_ceil(64),
            ..Default::default()
        }
    }

    /// Builds an index from `(id, code, labels)` triples.
    pub fn build<I>(m: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, BitVector, Vec<u32>)>,
    {
        let mut index = Self::new(m);
        for (id, code, labels) in entries {
            index.insert(id, &code, labels)?;
        }
        index.finish();
        Ok(index)
    }

    fn insert(&mut self, id: String, code: &BitVector, labels: Vec<u32>) -> Result<()> {
        if code.len() != self.m {
            return Err(Error::Retrieval(format!(
                "code of `{id}` has {} bits, index holds {}",
                code.len(),
                self.m
            )));
        }
        if self.by_id.insert(id.clone(), self.ids.len()).is_some() {
            return Err(Error::Retrieval(format!("`{id}` indexed twice")));
        }
        self.ids.push(id);
        self.words.extend_from_slice(code.words());
        self.labels.push(labels);
        Ok(())
    }

    fn finish(&mut self) {
        let mut order: Vec<usize> = (0..self.ids.len()).collect();
        order.sort_by(|&a, &b| self.ids[a].cmp(&self.ids[b]));
        self.rank = vec![0; order.len()];
        for (r, &i) in order.iter().enumerate() {
            self.rank[i] = r as u32;
        }
        self.by_rank = order;
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, entry: usize) -> &str {
        &self.ids[entry]
    }

    pub fn labels(&self, entry: usize) -> &[u32] {
        &self.labels[entry]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    fn code_words(&self, entry: usize) -> &[u64] {
        &self.words[entry * self.words_per_code..(entry + 1) * self.words_per_code]
    }

    pub fn code(&self, entry: usize) -> BitVector {
        let mut v = BitVector::zeros(self.m);
        for i in 0..self.m {
            v.set(i, (self.code_words(entry)[i / 64] >> (i % 64)) & 1 == 1);
        }
        v
    }

    fn check_query(&self, query: &BitVector) -> Result<()> {
        if query.len() != self.m {
            return Err(Error::Retrieval(format!(
                "query has {} bits, index holds {}",
                query.len(),
                self.m
            )));
        }
        Ok(())
    }

    /// Distances from `query` to every entry, in entry order.
    pub fn distances(&self, query: &BitVector) -> Result<Vec<u32>> {
        self.check_query(query)?;
        let q = query.words();
        Ok(self
            .words
            .chunks_exact(self.words_per_code.max(1))
            .map(|w| hamming_words(q, w))
            .collect())
    }

    /// The `k` nearest entries ordered by (distance, id), skipping the entry
    /// named `exclude`.
    pub fn nearest(&self, query: &BitVector, k: usize, exclude: Option<&str>) -> Result<Vec<Neighbor>> {
        let skip = exclude.and_then(|id| self.position(id));
        let available = self.len() - usize::from(skip.is_some());
        if k > available {
            return Err(Error::Retrieval(format!("K = {k} exceeds the {available} candidates")));
        }
        let dist = self.distances(query)?;
        let mut keys: Vec<u64> = dist
            .iter()
            .enumerate()
            .filter(|&(i, _)| Some(i) != skip)
            .map(|(i, &d)| ((d as u64) << 32) | self.rank[i] as u64)
            .collect();
        if k == 0 {
            return Ok(Vec::new());
        }
        if k < keys.len() {
            keys.select_nth_unstable(k - 1);
            keys.truncate(k);
        }
        keys.sort_unstable();
        Ok(keys
            .into_iter()
            .map(|key| Neighbor {
                entry: self.by_rank[(key & 0xffff_ffff) as usize],
                distance: (key >> 32) as u32,
            })
            .collect())
    }

    /// Number of distinct codes among the entries.
    pub fn count_distinct_codes(&self) -> usize {
        let set: HashSet<&[u64]> = (0..self.len()).map(|i| self.code_words(i)).collect();
        set.len()
    }
}

/// A retrieval query.
#[derive(Clone, Debug)]
pub struct Query {
    pub id: String,
    pub code: BitVector,
    pub labels: Vec<u32>,
    pub pair_id: Option<String>,
}

fn shares_label(a: &[u32], b: &[u32]) -> bool {
    // Both sorted.
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Equal => return true,
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
        }
    }
    false
}

/// Mean over queries of the fraction of the `k` nearest entries sharing at
/// least one label with the query. A query is never its own neighbor.
pub fn top_k_precision(queries: &[Query], index: &CodeIndex, k: usize) -> Result<f64> {
    if k == 0 || queries.is_empty() {
        return Err(Error::Retrieval("precision needs K >= 1 and at least one query".into()));
    }
    if let Some(i) = (0..index.len()).find(|&i| index.labels(i).is_empty()) {
        return Err(Error::Retrieval(format!("indexed `{}` has no labels", index.id(i))));
    }
    let per: Vec<f64> = queries
        .par_iter()
        .map(|q| {
            let hits = index
                .nearest(&q.code, k, Some(&q.id))?
                .iter()
                .filter(|n| shares_label(&q.labels, index.labels(n.entry)))
                .count();
            Ok(hits as f64 / k as f64)
        })
        .collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Fraction of queries whose partner is among their `k` nearest entries.
pub fn pair_matching_precision(queries: &[Query], index: &CodeIndex, k: usize) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::Retrieval("no queries".into()));
    }
    let hits: Vec<bool> = queries
        .par_iter()
        .map(|q| {
            let pair = q
                .pair_id
                .as_deref()
                .ok_or_else(|| Error::Retrieval(format!("`{}` has no pair", q.id)))?;
            let target = index
                .position(pair)
                .ok_or_else(|| Error::Retrieval(format!("pair `{pair}` of `{}` is not indexed", q.id)))?;
            Ok(index.nearest(&q.code, k, Some(&q.id))?.iter().any(|n| n.entry == target))
        })
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DriftRow {
    pub threshold: u32,
    /// Nearest entry at distance at least `threshold`, if any.
    pub id: Option<String>,
    pub distance: Option<u32>,
}

/// For each threshold `d`, the closest entry at Hamming distance `>= d`
/// (ties by id).
pub fn drift_report(query: &BitVector, index: &CodeIndex, thresholds: &[u32]) -> Result<Vec<DriftRow>> {
    if index.is_empty() {
        return Err(Error::Retrieval("empty index".into()));
    }
    if let Some(&t) = thresholds.iter().find(|&&t| t as usize > index.m()) {
        return Err(Error::Retrieval(format!("threshold {t} exceeds {} bits", index.m())));
    }
    let dist = index.distances(query)?;
    Ok(thresholds
        .iter()
        .map(|&t| {
            let best = (0..index.len())
                .filter(|&i| dist[i] >= t)
                .min_by(|&a, &b| dist[a].cmp(&dist[b]).then(index.id(a).cmp(index.id(b))));
            DriftRow {
                threshold: t,
                id: best.map(|i| index.id(i).to_string()),
                distance: best.map(|i| dist[i]),
            }
        })
        .collect())
}

pub fn format_drift_report(query_id: &str, rows: &[DriftRow]) -> String {
    let mut s = format!("query {query_id}\n");
    for r in rows {
        match (&r.id, r.distance) {
            (Some(id), Some(d)) => writeln!(s, "  >= {:>3}: {id} (distance {d})", r.threshold),
            _ => writeln!(s, "  >= {:>3}: none", r.threshold),
        }
        .expect("writing to a string");
    }
    s
}

/// Presence bits over the vocabulary, the bag-of-words baseline code.
pub fn presence_code(tokens: &[(u32, u32)], vocab_size: usize) -> BitVector {
    let mut v = BitVector::zeros(vocab_size);
    for &(t, c) in tokens {
        if c > 0 {
            v.set(t as usize, true);
        }
    }
    v
}
