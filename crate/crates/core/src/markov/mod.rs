//! Markov distributions over binary codes and the exact dynamic programs on
//! them: forward context marginals, window marginals, cross entropy,
//! entropy, Viterbi decoding and sampling.
//!
//! Conventions used throughout:
//! - positions are zero-based, `0..m`;
//! - bits before position 0 are fixed to zero;
//! - the context `(z_{i-o}, ..., z_{i-1})` is the integer whose bit `j-1` is
//!   `z_{i-j}`, so the most recent bit is the lowest-order bit;
//! - entropies are in nats.

mod bitvec;
pub mod brute;
mod dp;
mod mixture;
mod params;

pub use bitvec::BitVector;
pub(crate) use bitvec::hamming_words;
pub use dp::{
    cross_entropy, cross_entropy_grad, entropy, forward, marginals, sample, sample_seeded, viterbi,
    CrossEntropyGrad, ForwardTable, MarginalTable,
};
pub use mixture::{mixture_entropy, mixture_entropy_grad, MixtureEntropy, MIXTURE_LIMIT};
pub use params::{
    clamp_prob, context_of, logit_bound, sigmoid, softplus, MarkovParams, MAX_ORDER, PROB_FLOOR,
};
