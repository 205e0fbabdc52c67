use std::rc::Rc;

use rand::Rng;
use rayon::prelude::*;

use super::corpus::{tfidf_rows, Corpus, Document, Split};
use super::retrieval::{pair_matching_precision, presence_code, top_k_precision, CodeIndex, Query};
use crate::error::{Error, Result};
use crate::markov::{viterbi, BitVector, MarkovParams};
use crate::nn::{FeedForward, Graph, Input, NodeId, ParamStore, SparseRows};

/// Rows evaluated per block when encoding many documents.
const BLOCK: usize = 512;

/// A document encoder: TFIDF through a feedforward network to the logits of
/// an order-`o` Markov table over `m` bits.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeEncoder {
    pub net: FeedForward,
    pub m: usize,
    pub order: usize,
}

impl CodeEncoder {
    pub fn new(collection: &str, input: usize, hidden: usize, layers: usize, m: usize, order: usize) -> Result<Self> {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat(hidden).take(layers));
        dims.push(m << order);
        Ok(Self {
            net: FeedForward::new(collection, &dims, true)?,
            m,
            order,
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, alpha: f64, rng: &mut R) {
        self.net.init(store, alpha, rng);
    }

    pub fn logits(&self, g: &mut Graph, store: &ParamStore, x: Rc<SparseRows>) -> Result<NodeId> {
        self.net.logits(g, store, Input::Sparse(x))
    }

    /// Markov tables of each document.
    pub fn tables(&self, store: &ParamStore, docs: &[&Document]) -> Result<Vec<MarkovParams>> {
        let mut out = Vec::with_capacity(docs.len());
        for chunk in docs.chunks(BLOCK) {
            let x = tfidf_rows(chunk, self.net.in_dim())?;
            let logits = self.net.evaluate_logits_sparse(store, &x)?;
            for r in 0..logits.rows() {
                out.push(MarkovParams::from_logits(self.m, self.order, logits.row(r))?);
            }
        }
        Ok(out)
    }

    /// Most probable code of each document.
    pub fn encode(&self, store: &ParamStore, docs: &[&Document]) -> Result<Vec<BitVector>> {
        let tables = self.tables(store, docs)?;
        Ok(tables.par_iter().map(|t| viterbi(t).0).collect())
    }

    pub fn encode_one(&self, store: &ParamStore, doc: &Document) -> Result<BitVector> {
        Ok(self.encode(store, &[doc])?.pop().expect("one document"))
    }
}

pub fn index_documents(docs: &[&Document], codes: Vec<BitVector>, m: usize) -> Result<CodeIndex> {
    CodeIndex::build(
        m,
        docs.iter()
            .zip(codes)
            .map(|(d, c)| (d.id.clone(), c, d.labels.clone())),
    )
}

pub fn queries(docs: &[&Document], codes: Vec<BitVector>) -> Vec<Query> {
    docs.iter()
        .zip(codes)
        .map(|(d, code)| Query {
            id: d.id.clone(),
            code,
            labels: d.labels.clone(),
            pair_id: d.pair_id.clone(),
        })
        .collect()
}

/// Top-`k` label precision of `split` documents retrieving from the train
/// split, both encoded by `encoder`.
pub fn label_precision(
    encoder: &CodeEncoder,
    store: &ParamStore,
    corpus: &Corpus,
    split: Split,
    k: usize,
) -> Result<f64> {
    let train: Vec<&Document> = corpus.train.iter().collect();
    let index = index_documents(&train, encoder.encode(store, &train)?, encoder.m)?;
    let docs: Vec<&Document> = corpus.split(split).iter().collect();
    top_k_precision(&queries(&docs, encoder.encode(store, &docs)?), &index, k)
}

/// Pair-matching precision of the `split` documents that name a partner.
/// Queries are encoded by `query_encoder`; the candidates, every partner
/// document in the corpus, by `target_encoder`.
pub fn pair_precision(
    query_encoder: &CodeEncoder,
    target_encoder: &CodeEncoder,
    store: &ParamStore,
    corpus: &Corpus,
    split: Split,
    k: usize,
) -> Result<f64> {
    let targets = corpus.pair_targets();
    let index = index_documents(&targets, target_encoder.encode(store, &targets)?, target_encoder.m)?;
    let docs = corpus.queries_with_pairs(split);
    if docs.is_empty() {
        return Err(Error::Retrieval(format!("no paired documents in {}", split.name())));
    }
    pair_matching_precision(&queries(&docs, query_encoder.encode(store, &docs)?), &index, k)
}

/// Label precision when every document receives the same code, so ranking
/// is by id alone.
pub fn constant_code_precision(corpus: &Corpus, split: Split, m: usize, k: usize) -> Result<f64> {
    let train: Vec<&Document> = corpus.train.iter().collect();
    let index = index_documents(&train, vec![BitVector::zeros(m); train.len()], m)?;
    let docs: Vec<&Document> = corpus.split(split).iter().collect();
    top_k_precision(&queries(&docs, vec![BitVector::zeros(m); docs.len()]), &index, k)
}

/// Label precision of word-presence codes over the whole vocabulary.
pub fn bow_precision(corpus: &Corpus, split: Split, k: usize) -> Result<f64> {
    let v = corpus.vocab_size();
    let code = |d: &&Document| presence_code(&d.tokens, v);
    let train: Vec<&Document> = corpus.train.iter().collect();
    let index = index_documents(&train, train.iter().map(code).collect(), v)?;
    let docs: Vec<&Document> = corpus.split(split).iter().collect();
    top_k_precision(&queries(&docs, docs.iter().map(code).collect()), &index, k)
}
