//! Batch estimators of the entropy terms and the losses built from them.
//!
//! Table-level estimators take [`MarkovParams`] and return a
//! [`BatchEstimate`]; the loss builders record the same quantities on a
//! [`Graph`] so that gradients reach the networks producing the logits.
//! All values are in nats.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::markov::{self, MarkovParams};
use crate::nn::{Graph, NodeId};

/// Largest code length for which the brute-force objective is trained.
pub const BMMI_LIMIT: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimator {
    /// `H+(Z|X)`: cross entropy of each encoder table against its posterior table.
    CondCrossEntropy,
    /// `H+(Z)`: cross entropy of each encoder table against the shared prior.
    PriorCrossEntropy,
    /// `H(Z|Y)`: entropy of each encoder table.
    CondEntropy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchEstimate {
    pub value: f64,
    pub per_sample: Vec<f64>,
    pub kind: Estimator,
    pub n: usize,
}

impl BatchEstimate {
    fn from_samples(kind: Estimator, per_sample: Vec<f64>) -> Result<Self> {
        if per_sample.is_empty() {
            return Err(Error::InvalidParams("empty batch".into()));
        }
        if let Some(i) = per_sample.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss {
                batch: 0,
                detail: format!("{kind:?} sample {i} is {}", per_sample[i]),
            });
        }
        let n = per_sample.len();
        // Sequential sum keeps the value reproducible regardless of threading.
        let value = per_sample.iter().sum::<f64>() / n as f64;
        Ok(Self {
            value,
            per_sample,
            kind,
            n,
        })
    }
}

pub fn cond_cross_entropy_batch(
    encoder: &[MarkovParams],
    posterior: &[MarkovParams],
) -> Result<BatchEstimate> {
    if encoder.len() != posterior.len() {
        return Err(Error::Shape(format!(
            "{} encoder tables for {} posterior tables",
            encoder.len(),
            posterior.len()
        )));
    }
    let per = encoder
        .par_iter()
        .zip(posterior)
        .map(|(p, q)| markov::cross_entropy(p, q))
        .collect::<Result<Vec<_>>>()?;
    BatchEstimate::from_samples(Estimator::CondCrossEntropy, per)
}

pub fn prior_cross_entropy_batch(encoder: &[MarkovParams], prior: &MarkovParams) -> Result<BatchEstimate> {
    let per = encoder
        .par_iter()
        .map(|p| markov::cross_entropy(p, prior))
        .collect::<Result<Vec<_>>>()?;
    BatchEstimate::from_samples(Estimator::PriorCrossEntropy, per)
}

pub fn cond_entropy_batch(encoder: &[MarkovParams]) -> Result<BatchEstimate> {
    let per = encoder.par_iter().map(markov::entropy).collect();
    BatchEstimate::from_samples(Estimator::CondEntropy, per)
}

/// Entropy of the empirical code marginal `(1/N) sum_l p(z|y_l)`, by
/// enumerating all `2^m` codes.
pub fn brute_entropy_batch(encoder: &[MarkovParams]) -> Result<f64> {
    markov::mixture_entropy(encoder)
}

/// The two scalar losses of one adversarial round.
#[derive(Clone, Copy, Debug)]
pub struct AmmiLosses {
    /// `H+(Z)` with the encoder held constant: minimized by the prior.
    pub prior_loss: NodeId,
    /// The conditional term minus `beta · H+(Z)` with the prior held
    /// constant: minimized by the encoder (and posterior).
    pub encoder_loss: NodeId,
    /// Batch mean of the conditional term.
    pub conditional: NodeId,
    /// Batch mean of `H+(Z)` (shares the encoder-side gradient path).
    pub prior_cross_entropy: NodeId,
}

fn warn_beta(beta: f64) {
    if beta < 1.0 {
        log::warn!("entropy weight beta = {beta} is below 1");
    }
}

fn shared_prior_terms(
    g: &mut Graph,
    encoder: NodeId,
    prior: NodeId,
    m: usize,
) -> Result<(NodeId, NodeId)> {
    let frozen_encoder = g.detach(encoder);
    let h_prior = g.markov_cross_entropy(frozen_encoder, prior, m)?;
    let prior_loss = g.mean(h_prior);

    let frozen_prior = g.detach(prior);
    let h = g.markov_cross_entropy(encoder, frozen_prior, m)?;
    Ok((prior_loss, g.mean(h)))
}

fn finish(
    g: &mut Graph,
    conditional: NodeId,
    prior_loss: NodeId,
    prior_cross_entropy: NodeId,
    beta: f64,
) -> Result<AmmiLosses> {
    let weighted = g.scale(prior_cross_entropy, beta);
    let encoder_loss = g.sub(conditional, weighted)?;
    Ok(AmmiLosses {
        prior_loss,
        encoder_loss,
        conditional,
        prior_cross_entropy,
    })
}

/// Losses of the two-variable game. `encoder` holds `N` rows of order-`o`
/// logits for `p(z|y_l)`, `posterior` `N` rows of order-`h` logits for
/// `q(z|x_l)`, `prior` one row of order-`r` logits.
pub fn ammi_losses(
    g: &mut Graph,
    encoder: NodeId,
    posterior: NodeId,
    prior: NodeId,
    m: usize,
    beta: f64,
) -> Result<AmmiLosses> {
    warn_beta(beta);
    let (prior_loss, prior_ce) = shared_prior_terms(g, encoder, prior, m)?;
    let h_cond = g.markov_cross_entropy(encoder, posterior, m)?;
    let conditional = g.mean(h_cond);
    finish(g, conditional, prior_loss, prior_ce, beta)
}

/// Losses of the single-variable game: the conditional term is the encoder's
/// own entropy `H(Z|Y)`.
pub fn ammi_single_losses(
    g: &mut Graph,
    encoder: NodeId,
    prior: NodeId,
    m: usize,
    beta: f64,
) -> Result<AmmiLosses> {
    warn_beta(beta);
    let (prior_loss, prior_ce) = shared_prior_terms(g, encoder, prior, m)?;
    let h_cond = g.markov_entropy(encoder, m)?;
    let conditional = g.mean(h_cond);
    finish(g, conditional, prior_loss, prior_ce, beta)
}

/// `-(H(Z) - H(Z|Y))` with `H(Z)` by enumeration over the batch mixture.
pub fn bmmi_loss(g: &mut Graph, encoder: NodeId, m: usize) -> Result<NodeId> {
    if m > BMMI_LIMIT {
        return Err(Error::EnumerationLimit { m, limit: BMMI_LIMIT });
    }
    let h_z = g.mixture_entropy(encoder, m)?;
    let h_cond = g.markov_entropy(encoder, m)?;
    let h_cond = g.mean(h_cond);
    g.sub(h_cond, h_z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::brute;
    use crate::nn::{init_uniform, ParamStore, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    fn random_tables(n: usize, m: usize, o: usize, seed: u64) -> Vec<MarkovParams> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| MarkovParams::random(m, o, &mut rng)).collect()
    }

    #[test]
    fn estimates_match_enumeration() {
        let p = random_tables(4, 8, 0, 1);
        let q = random_tables(4, 8, 1, 2);
        let est = cond_cross_entropy_batch(&p, &q).unwrap();
        let want: f64 = p.iter().zip(&q).map(|(a, b)| brute::cross_entropy(a, b).unwrap()).sum::<f64>() / 4.0;
        assert!(rel(est.value, want) <= 1e-8);
        assert_eq!(est.n, 4);

        let p = random_tables(8, 10, 0, 3);
        let prior = random_tables(1, 10, 3, 4).pop().unwrap();
        let est = prior_cross_entropy_batch(&p, &prior).unwrap();
        let probs: Vec<Vec<f64>> = p.iter().map(|t| brute::code_probabilities(t).unwrap()).collect();
        let qz = brute::code_probabilities(&prior).unwrap();
        let mut want = 0.0;
        for pz in &probs {
            for (a, b) in pz.iter().zip(&qz) {
                want -= a * b.ln();
            }
        }
        want /= 8.0;
        assert!(rel(est.value, want) <= 1e-8);

        let p = random_tables(4, 9, 1, 5);
        let est = cond_entropy_batch(&p).unwrap();
        let want: f64 = p.iter().map(|t| brute::entropy(t).unwrap()).sum::<f64>() / 4.0;
        assert!(rel(est.value, want) <= 1e-8);
    }

    #[test]
    fn value_is_the_mean_of_contributions() {
        let p = random_tables(7, 6, 1, 6);
        let est = cond_entropy_batch(&p).unwrap();
        let mean = est.per_sample.iter().sum::<f64>() / 7.0;
        assert!((est.value - mean).abs() <= 1e-12);
    }

    #[test]
    fn trivial_cases() {
        let uni = vec![MarkovParams::uniform(16, 0); 3];
        let ln2 = 2f64.ln();
        assert!((cond_entropy_batch(&uni).unwrap().value - 16.0 * ln2).abs() < 1e-9);
        assert!((cond_cross_entropy_batch(&uni, &uni).unwrap().value - 16.0 * ln2).abs() < 1e-9);
        let p = random_tables(3, 6, 0, 7);
        let same = cond_cross_entropy_batch(&p, &p).unwrap().value;
        assert!((same - cond_entropy_batch(&p).unwrap().value).abs() < 1e-12);

        let one = MarkovParams::constant(8, 0, 1.0).unwrap();
        assert!(brute_entropy_batch(&[one.clone()]).unwrap() < 1e-4);
        let zero = MarkovParams::constant(8, 0, 0.0).unwrap();
        assert!((brute_entropy_batch(&[one, zero]).unwrap() - ln2).abs() < 1e-4);
        assert!(cond_entropy_batch(&[]).is_err());
    }

    #[test]
    fn brute_entropy_matches_direct_mixture() {
        let p = random_tables(4, 8, 0, 8);
        let probs: Vec<Vec<f64>> = p.iter().map(|t| brute::code_probabilities(t).unwrap()).collect();
        let mut want = 0.0;
        for z in 0..256 {
            let avg: f64 = probs.iter().map(|v| v[z]).sum::<f64>() / 4.0;
            want -= avg * avg.ln();
        }
        assert!(rel(brute_entropy_batch(&p).unwrap(), want) <= 1e-10);
    }

    fn logits_store(seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        s.insert("psi", init_uniform(5, 8, 2.0, &mut rng));
        s.insert("phi", init_uniform(5, 16, 2.0, &mut rng));
        s.insert("theta", init_uniform(1, 64, 2.0, &mut rng));
        s
    }

    #[test]
    fn stop_gradients_are_exact() {
        let s = logits_store(9);
        let mut g = Graph::new();
        let p = g.param(&s, "psi").unwrap();
        let q = g.param(&s, "phi").unwrap();
        let t = g.param(&s, "theta").unwrap();
        let l = ammi_losses(&mut g, p, q, t, 8, 2.0).unwrap();
        let prior = g.backward(l.prior_loss).unwrap();
        assert!(prior.get("psi").is_none() && prior.get("phi").is_none());
        assert!(prior.get("theta").is_some());
        let enc = g.backward(l.encoder_loss).unwrap();
        assert!(enc.get("theta").is_none());
        assert!(enc.get("psi").is_some() && enc.get("phi").is_some());
    }

    #[test]
    fn ammi_losses_compose_from_enumeration() {
        let s = logits_store(10);
        let tabs = |name: &str, o: usize| -> Vec<MarkovParams> {
            let t = s.get(name).unwrap();
            (0..t.rows())
                .map(|r| MarkovParams::from_logits(8, o, t.row(r)).unwrap())
                .collect()
        };
        let (p, q, th) = (tabs("psi", 0), tabs("phi", 1), tabs("theta", 3).pop().unwrap());
        let cond: f64 = p.iter().zip(&q).map(|(a, b)| brute::cross_entropy(a, b).unwrap()).sum::<f64>() / 5.0;
        let prior: f64 = p.iter().map(|a| brute::cross_entropy(a, &th).unwrap()).sum::<f64>() / 5.0;
        let ent: f64 = p.iter().map(|a| brute::entropy(a).unwrap()).sum::<f64>() / 5.0;

        let mut g = Graph::new();
        let (pn, qn, tn) = (
            g.param(&s, "psi").unwrap(),
            g.param(&s, "phi").unwrap(),
            g.param(&s, "theta").unwrap(),
        );
        let l = ammi_losses(&mut g, pn, qn, tn, 8, 2.0).unwrap();
        assert!(rel(g.value(l.prior_loss).item(), prior) <= 1e-8);
        assert!(rel(g.value(l.encoder_loss).item(), cond - 2.0 * prior) <= 1e-8);
        let single = ammi_single_losses(&mut g, pn, tn, 8, 1.0).unwrap();
        assert!(rel(g.value(single.encoder_loss).item(), ent - prior) <= 1e-8);
    }

    #[test]
    fn bmmi_trivial_values() {
        // Identical rows: no information.
        let mut s = ParamStore::new();
        let row = init_uniform(1, 6, 1.0, &mut ChaCha8Rng::seed_from_u64(11));
        let mut rows = Tensor::zeros(3, 6);
        for r in 0..3 {
            rows.row_mut(r).copy_from_slice(row.data());
        }
        s.insert("psi", rows);
        let mut g = Graph::new();
        let p = g.param(&s, "psi").unwrap();
        let l = bmmi_loss(&mut g, p, 6).unwrap();
        assert!(g.value(l).item().abs() < 1e-10);

        // Four distinct deterministic codes.
        let mut t = Tensor::zeros(4, 6);
        for r in 0..4 {
            for k in 0..6 {
                t.row_mut(r)[k] = if (r >> (k % 2)) & 1 == 1 { 30.0 } else { -30.0 };
            }
        }
        s.insert("psi", t);
        let mut g = Graph::new();
        let p = g.param(&s, "psi").unwrap();
        let l = bmmi_loss(&mut g, p, 6).unwrap();
        assert!((g.value(l).item() + 4f64.ln()).abs() < 1e-4);

        let mut g = Graph::new();
        s.insert("big", Tensor::zeros(2, 17));
        let p = g.param(&s, "big").unwrap();
        assert!(bmmi_loss(&mut g, p, 17).is_err());
    }
}
