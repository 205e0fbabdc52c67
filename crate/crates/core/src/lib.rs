//! Learning discrete structured codes by adversarially maximizing mutual
//! information.
//!
//! Codes are binary vectors `z ∈ {0,1}^m` under order-`o` Markov
//! distributions. Entropies and cross entropies of these distributions are
//! computed exactly by dynamic programming ([`markov`]); a small reverse-mode
//! engine ([`nn`]) carries gradients from those programs into feedforward
//! encoders; [`objectives`] assembles the batch estimators; [`training`]
//! runs the alternating optimization; [`hashing`] applies the learned codes
//! to document retrieval; [`oracle`] checks the dynamic programs against
//! enumeration and the gradients against finite differences.

pub mod error;
pub mod hashing;
pub mod markov;
pub mod nn;
pub mod objectives;
pub mod oracle;
pub mod training;

pub use error::{Error, Result};
