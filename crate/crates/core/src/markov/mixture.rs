//! Entropy of an equal-weight mixture of Markov distributions, by explicit
//! enumeration of the code space.

use rayon::prelude::*;

use super::MarkovParams;
use crate::error::{Error, Result};

/// Code spaces beyond `2^MIXTURE_LIMIT` are not enumerated.
pub const MIXTURE_LIMIT: usize = 20;

/// Value and per-component gradients (with respect to each component's
/// one-bit probabilities) of the mixture entropy.
#[derive(Clone, Debug)]
pub struct MixtureEntropy {
    pub value: f64,
    pub grads: Vec<Vec<f64>>,
}

fn check(components: &[MarkovParams]) -> Result<(usize, usize)> {
    let first = components
        .first()
        .ok_or_else(|| Error::InvalidParams("mixture of zero components".into()))?;
    let (m, order) = (first.m(), first.order());
    if m > MIXTURE_LIMIT {
        return Err(Error::EnumerationLimit {
            m,
            limit: MIXTURE_LIMIT,
        });
    }
    if components.iter().any(|c| c.m() != m || c.order() != order) {
        return Err(Error::Shape("mixture components differ in shape".into()));
    }
    Ok((m, order))
}

/// Probabilities of all `2^m` codes (bit `i` of the index is `z_i`), grown
/// one position at a time.
pub(crate) fn code_table(p: &MarkovParams) -> Vec<f64> {
    let (m, o) = (p.m(), p.order());
    let mut table = vec![0.0; 1 << m];
    table[0] = 1.0;
    for i in 0..m {
        let half = 1usize << i;
        for x in 0..half {
            let v = table[x];
            let p1 = p.prob(i, context_at(x, i, o));
            table[x | half] = v * p1;
            table[x] = v * (1.0 - p1);
        }
    }
    table
}

#[inline]
fn context_at(x: usize, i: usize, order: usize) -> usize {
    let mut ctx = 0;
    for j in 1..=order.min(i) {
        ctx |= ((x >> (i - j)) & 1) << (j - 1);
    }
    ctx
}

/// Gradient of `sum_x adjoint[x] · table[x]` with respect to the one-bit
/// probabilities, by running [`code_table`] backwards. Each parent entry is
/// the sum of its two children, so the forward values are recovered in
/// place and the whole pass is `O(2^m)`.
fn table_grad(p: &MarkovParams, mut table: Vec<f64>, mut adjoint: Vec<f64>) -> Vec<f64> {
    let (m, o) = (p.m(), p.order());
    let mut grad = vec![0.0; m << o];
    for i in (0..m).rev() {
        let half = 1usize << i;
        for x in 0..half {
            let ctx = context_at(x, i, o);
            let p1 = p.prob(i, ctx);
            let (a0, a1) = (adjoint[x], adjoint[x | half]);
            let v = table[x] + table[x | half];
            grad[(i << o) + ctx] += v * (a1 - a0);
            adjoint[x] = a1 * p1 + a0 * (1.0 - p1);
            table[x] = v;
        }
    }
    grad
}

fn mixture(tables: &[Vec<f64>]) -> Vec<f64> {
    let n = tables.len() as f64;
    let mut avg = vec![0.0; tables[0].len()];
    // Fixed component order keeps the sum reproducible.
    for t in tables {
        for (a, v) in avg.iter_mut().zip(t) {
            *a += v;
        }
    }
    for a in &mut avg {
        *a /= n;
    }
    avg
}

fn entropy_of(dist: &[f64]) -> f64 {
    -dist
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// `sum_z pbar(z) ln(1 / pbar(z))` with `pbar` the average of the components.
pub fn mixture_entropy(components: &[MarkovParams]) -> Result<f64> {
    check(components)?;
    let tables: Vec<Vec<f64>> = components.par_iter().map(code_table).collect();
    Ok(entropy_of(&mixture(&tables)))
}

pub fn mixture_entropy_grad(components: &[MarkovParams]) -> Result<MixtureEntropy> {
    check(components)?;
    let n = components.len() as f64;
    let tables: Vec<Vec<f64>> = components.par_iter().map(code_table).collect();
    let avg = mixture(&tables);
    let value = entropy_of(&avg);
    // d value / d p_l(z) = -(ln pbar(z) + 1) / n
    let weight: Vec<f64> = avg
        .iter()
        .map(|&p| if p > 0.0 { -(p.ln() + 1.0) / n } else { 0.0 })
        .collect();

    let grads = components
        .par_iter()
        .zip(tables)
        .map(|(p, table)| table_grad(p, table, weight.clone()))
        .collect();
    Ok(MixtureEntropy { value, grads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::brute;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn code_table_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for o in 0..3 {
            let p = MarkovParams::random(7, o, &mut rng);
            let fast = code_table(&p);
            let slow = brute::code_probabilities(&p).unwrap();
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn point_masses() {
        let det = MarkovParams::constant(6, 0, 1.0).unwrap();
        assert!(mixture_entropy(&[det.clone()]).unwrap() < 1e-4);
        let other = MarkovParams::constant(6, 0, 0.0).unwrap();
        let h = mixture_entropy(&[det, other]).unwrap();
        assert!((h - 2f64.ln()).abs() < 1e-4);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for o in 0..2 {
            let comps: Vec<MarkovParams> = (0..3)
                .map(|_| {
                    let p = MarkovParams::random(5, o, &mut rng);
                    MarkovParams::new(5, o, p.probs().iter().map(|x| 0.05 + 0.9 * x).collect()).unwrap()
                })
                .collect();
            let g = mixture_entropy_grad(&comps).unwrap();
            let h = 1e-6;
            for l in 0..comps.len() {
                for k in 0..comps[l].probs().len() {
                    let eval = |delta: f64| {
                        let mut cs = comps.clone();
                        let mut probs = cs[l].probs().to_vec();
                        probs[k] += delta;
                        cs[l] = MarkovParams::new(5, o, probs).unwrap();
                        mixture_entropy(&cs).unwrap()
                    };
                    let fd = (eval(h) - eval(-h)) / (2.0 * h);
                    assert!((fd - g.grads[l][k]).abs() < 1e-6 * (1.0 + fd.abs()));
                }
            }
        }
    }

    #[test]
    fn rejects_mismatched_or_large_inputs() {
        assert!(mixture_entropy(&[]).is_err());
        let a = MarkovParams::uniform(3, 0);
        let b = MarkovParams::uniform(3, 1);
        assert!(mixture_entropy(&[a, b]).is_err());
        assert!(mixture_entropy(&[MarkovParams::uniform(21, 0)]).is_err());
    }
}
