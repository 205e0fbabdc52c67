//! Exact quantities by enumerating all `2^m` codes.
//!
//! Every code probability is computed directly as a product of its `m`
//! conditional factors, with no shared recursion, so these functions stay
//! independent of the dynamic programs they are used to check.

use super::{context_of, BitVector, MarkovParams};
use crate::error::{Error, Result};

/// Largest code length accepted by the enumeration routines.
pub const ENUMERATION_LIMIT: usize = 20;

fn guard(m: usize) -> Result<()> {
    if m > ENUMERATION_LIMIT {
        return Err(Error::EnumerationLimit {
            m,
            limit: ENUMERATION_LIMIT,
        });
    }
    Ok(())
}

/// Bits of code index `x`: bit `i` of the integer is `z_i`.
pub fn code_bits(x: usize, m: usize) -> Vec<u8> {
    (0..m).map(|i| ((x >> i) & 1) as u8).collect()
}

pub fn prob(p: &MarkovParams, bits: &[u8]) -> f64 {
    (0..p.m())
        .map(|i| p.factor(i, context_of(bits, i, p.order()), bits[i] as usize))
        .product()
}

/// Probability of every code, indexed as in [`code_bits`].
pub fn code_probabilities(p: &MarkovParams) -> Result<Vec<f64>> {
    guard(p.m())?;
    Ok((0..1usize << p.m())
        .map(|x| prob(p, &code_bits(x, p.m())))
        .collect())
}

pub fn cross_entropy(p: &MarkovParams, q: &MarkovParams) -> Result<f64> {
    guard(p.m())?;
    if p.m() != q.m() {
        return Err(Error::Shape(format!("code lengths {} and {}", p.m(), q.m())));
    }
    let mut h = 0.0;
    for x in 0..1usize << p.m() {
        let bits = code_bits(x, p.m());
        h -= prob(p, &bits) * q.log_prob(&bits);
    }
    Ok(h)
}

pub fn entropy(p: &MarkovParams) -> Result<f64> {
    cross_entropy(p, p)
}

/// First code (in index order) attaining the maximum log-probability.
pub fn argmax(p: &MarkovParams) -> Result<(BitVector, f64)> {
    guard(p.m())?;
    let mut best = (0usize, f64::NEG_INFINITY);
    for x in 0..1usize << p.m() {
        let lp = p.log_prob(&code_bits(x, p.m()));
        if lp > best.1 {
            best = (x, lp);
        }
    }
    Ok((BitVector::from_bits(&code_bits(best.0, p.m())), best.1))
}

/// `out[i][c]`: probability that the `o` bits before position `i` encode to `c`.
pub fn context_marginals(p: &MarkovParams) -> Result<Vec<Vec<f64>>> {
    let probs = code_probabilities(p)?;
    let mut out = vec![vec![0.0; p.num_contexts()]; p.m()];
    for (x, &px) in probs.iter().enumerate() {
        let bits = code_bits(x, p.m());
        for (i, row) in out.iter_mut().enumerate() {
            row[context_of(&bits, i, p.order())] += px;
        }
    }
    Ok(out)
}

/// `out[i][w]`: probability of the `target + 1` bits ending at position `i`,
/// with `w = (context << 1) | z_i`.
pub fn window_marginals(p: &MarkovParams, target: usize) -> Result<Vec<Vec<f64>>> {
    let probs = code_probabilities(p)?;
    let mut out = vec![vec![0.0; 1 << (target + 1)]; p.m()];
    for (x, &px) in probs.iter().enumerate() {
        let bits = code_bits(x, p.m());
        for (i, row) in out.iter_mut().enumerate() {
            row[(context_of(&bits, i, target) << 1) | bits[i] as usize] += px;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_examples() {
        let u = MarkovParams::uniform(4, 0);
        assert!((prob(&u, &[1, 0, 1, 1]) - 1.0 / 16.0).abs() < 1e-15);
        assert!((entropy(&u).unwrap() - 4.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let p = MarkovParams::new(3, 1, vec![0.3, 0.6, 0.2, 0.9, 0.5, 0.1]).unwrap();
        let s: f64 = code_probabilities(&p).unwrap().iter().sum();
        assert!((s - 1.0).abs() < 1e-14);
    }

    #[test]
    fn guard_rejects_long_codes() {
        let p = MarkovParams::uniform(21, 0);
        assert!(matches!(entropy(&p), Err(Error::EnumerationLimit { .. })));
        assert!(argmax(&p).is_err());
    }
}
