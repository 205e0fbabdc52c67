//! Document hashing: TFIDF corpora, encoders from documents to codes,
//! Hamming-distance retrieval and its evaluation.

mod corpus;
mod encoder;
mod retrieval;
pub mod synth;

pub use corpus::{
    build_tfidf, load_newsgroups, read_jsonl, read_splits, read_vocabulary, tfidf_rows, tokenize,
    write_jsonl, write_splits, write_vocabulary, Corpus, Document, RawDocument, RawSplits, Split,
    Vocabulary,
};
pub use encoder::{
    bow_precision, constant_code_precision, index_documents, label_precision, pair_precision,
    queries, CodeEncoder,
};
pub use retrieval::{
    drift_report, format_drift_report, pair_matching_precision, presence_code, top_k_precision,
    CodeIndex, DriftRow, Neighbor, Query,
};
