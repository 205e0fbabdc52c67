//! Dynamic programs over order-`o` Markov distributions on `{0,1}^m`.
//!
//! All tables are kept in probability space. Rows of the forward and window
//! tables are distributions over at most `2^(o'+1)` cells, so nothing
//! underflows along the chain; logs only appear in the final cross-entropy
//! sum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BitVector, MarkovParams};
use crate::error::{Error, Result};

/// Context marginals: row `i` is the distribution of the `o` bits that
/// precede (zero-based) position `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTable {
    m: usize,
    order: usize,
    pi: Vec<f64>,
}

impl ForwardTable {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn get(&self, i: usize, ctx: usize) -> f64 {
        self.pi[(i << self.order) + ctx]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = 1 << self.order;
        &self.pi[i * n..(i + 1) * n]
    }
}

/// Window marginals: row `i` is the distribution of the `o'+1` bits ending
/// at position `i`, encoded as `w = (context << 1) | z_i` with the context
/// encoded as in [`super::context_of`].
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalTable {
    m: usize,
    order: usize,
    mu: Vec<f64>,
}

impl MarginalTable {
    pub fn m(&self) -> usize {
        self.m
    }

    /// The window order `o'`; windows span `o' + 1` bits.
    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn get(&self, i: usize, window: usize) -> f64 {
        self.mu[(i << (self.order + 1)) + window]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = 1 << (self.order + 1);
        &self.mu[i * n..(i + 1) * n]
    }
}

/// Forward recursion in `O(m 2^o)`.
pub fn forward(p: &MarkovParams) -> ForwardTable {
    let (m, order) = (p.m(), p.order());
    let n = p.num_contexts();
    let mask = n - 1;
    let mut pi = vec![0.0; m * n];
    pi[0] = 1.0;
    for i in 0..m.saturating_sub(1) {
        for c in 0..n {
            let mass = pi[i * n + c];
            if mass == 0.0 {
                continue;
            }
            let p1 = p.prob(i, c);
            let next = (i + 1) * n;
            pi[next + ((c << 1) & mask)] += mass * (1.0 - p1);
            pi[next + (((c << 1) | 1) & mask)] += mass * p1;
        }
    }
    ForwardTable { m, order, pi }
}

/// Index bookkeeping for one window cell: where its leading context sits and
/// whether it is feasible at all near the start of the code.
struct WindowCell {
    /// Position whose context is the window's leading `o` bits, clipped at 0.
    start: usize,
    /// Leading context (meaningful when the start was not clipped).
    lead: Option<usize>,
}

fn window_cell(i: usize, w: usize, o: usize, target: usize) -> Option<WindowCell> {
    let span = target - o;
    if i >= span {
        let lead = (w >> (span + 1)) & ((1 << o) - 1);
        Some(WindowCell {
            start: i - span,
            lead: Some(lead),
        })
    } else if (w >> (i + 1)) == 0 {
        // Bits before the start of the code are fixed to zero.
        Some(WindowCell {
            start: 0,
            lead: None,
        })
    } else {
        None
    }
}

#[inline]
fn cell_factor(p: &MarkovParams, i: usize, w: usize, j: usize) -> f64 {
    let k = i - j;
    let bit = (w >> k) & 1;
    let ctx = (w >> (k + 1)) & (p.num_contexts() - 1);
    p.factor(j, ctx, bit)
}

fn check_target(p: &MarkovParams, target: usize) -> Result<()> {
    if target < p.order() {
        return Err(Error::Order {
            what: "window marginals",
            required: target,
            actual: p.order(),
        });
    }
    if target + 1 > super::MAX_ORDER + 1 {
        return Err(Error::InvalidParams(format!("window order {target} too large")));
    }
    Ok(())
}

/// Marginals of every length-`(target+1)` window, in `O(m 2^target)`.
///
/// Each cell is the forward mass of its leading `o` bits times the factors
/// of the remaining `target - o + 1` positions.
pub fn marginals(p: &MarkovParams, target: usize) -> Result<MarginalTable> {
    check_target(p, target)?;
    let pi = forward(p);
    Ok(marginals_from(p, &pi, target))
}

fn marginals_from(p: &MarkovParams, pi: &ForwardTable, target: usize) -> MarginalTable {
    let (m, o) = (p.m(), p.order());
    let nw = 1 << (target + 1);
    let mut mu = vec![0.0; m * nw];
    for i in 0..m {
        for w in 0..nw {
            let Some(cell) = window_cell(i, w, o, target) else {
                continue;
            };
            let mut v = match cell.lead {
                Some(lead) => pi.get(cell.start, lead),
                None => 1.0,
            };
            for j in cell.start..=i {
                v *= cell_factor(p, i, w, j);
            }
            mu[i * nw + w] = v;
        }
    }
    MarginalTable {
        m,
        order: target,
        mu,
    }
}

fn check_pair(p: &MarkovParams, q: &MarkovParams) -> Result<()> {
    if p.m() != q.m() {
        return Err(Error::Shape(format!(
            "cross entropy between codes of length {} and {}",
            p.m(),
            q.m()
        )));
    }
    if q.order() < p.order() {
        return Err(Error::Order {
            what: "cross entropy",
            required: q.order(),
            actual: p.order(),
        });
    }
    Ok(())
}

/// `H(p, q) = -sum_z p(z) ln q(z)` in nats, in `O(m 2^{q.o})`.
pub fn cross_entropy(p: &MarkovParams, q: &MarkovParams) -> Result<f64> {
    check_pair(p, q)?;
    let mu = marginals(p, q.order())?;
    let nw = 1 << (q.order() + 1);
    let mut h = 0.0;
    for i in 0..p.m() {
        for w in 0..nw {
            let mass = mu.get(i, w);
            if mass != 0.0 {
                h -= mass * q.log_factor(i, w >> 1, w & 1);
            }
        }
    }
    Ok(h)
}

/// Entropy in nats; equals `cross_entropy(p, p)`.
pub fn entropy(p: &MarkovParams) -> f64 {
    cross_entropy(p, p).expect("a distribution is compatible with itself")
}

/// Cross entropy together with its gradient with respect to both tables'
/// one-bit probabilities (same layout as [`MarkovParams::probs`]).
#[derive(Clone, Debug)]
pub struct CrossEntropyGrad {
    pub value: f64,
    pub d_p: Vec<f64>,
    pub d_q: Vec<f64>,
}

/// Reverse-mode pass through the window marginals and the forward recursion.
pub fn cross_entropy_grad(p: &MarkovParams, q: &MarkovParams) -> Result<CrossEntropyGrad> {
    check_pair(p, q)?;
    let (m, o, target) = (p.m(), p.order(), q.order());
    let n = p.num_contexts();
    let nw = 1 << (target + 1);
    let pi = forward(p);

    let mut value = 0.0;
    let mut d_p = vec![0.0; p.probs().len()];
    let mut d_q = vec![0.0; q.probs().len()];
    let mut d_pi = vec![0.0; m * n];
    let mut factors = Vec::with_capacity(target + 2);

    for i in 0..m {
        for w in 0..nw {
            let Some(cell) = window_cell(i, w, o, target) else {
                continue;
            };
            let lead_mass = match cell.lead {
                Some(lead) => pi.get(cell.start, lead),
                None => 1.0,
            };
            factors.clear();
            factors.extend((cell.start..=i).map(|j| cell_factor(p, i, w, j)));
            let prod: f64 = factors.iter().product();
            let mass = lead_mass * prod;

            let (qctx, bit) = (w >> 1, w & 1);
            let log_q = q.log_factor(i, qctx, bit);
            value -= mass * log_q;

            // d value / d q(i, qctx)
            let qk = (i << target) + qctx;
            let qp = q.probs()[qk];
            d_q[qk] += if bit == 1 { -mass / qp } else { mass / (1.0 - qp) };

            let g_mass = -log_q;
            if let Some(lead) = cell.lead {
                d_pi[(cell.start << o) + lead] += g_mass * prod;
            }
            for (t, j) in (cell.start..=i).enumerate() {
                let others: f64 = factors
                    .iter()
                    .enumerate()
                    .filter(|&(u, _)| u != t)
                    .map(|(_, f)| f)
                    .product();
                let k = i - j;
                let pctx = (w >> (k + 1)) & (n - 1);
                let sign = if (w >> k) & 1 == 1 { 1.0 } else { -1.0 };
                d_p[(j << o) + pctx] += sign * g_mass * lead_mass * others;
            }
        }
    }

    // Back through pi[i+1][c'] = sum_{c,b} pi[i][c] * factor(i, c, b).
    for i in (0..m.saturating_sub(1)).rev() {
        for c in 0..n {
            let p1 = p.prob(i, c);
            let g0 = d_pi[((i + 1) << o) + ((c << 1) & (n - 1))];
            let g1 = d_pi[((i + 1) << o) + (((c << 1) | 1) & (n - 1))];
            d_pi[(i << o) + c] += g0 * (1.0 - p1) + g1 * p1;
            d_p[(i << o) + c] += pi.get(i, c) * (g1 - g0);
        }
    }

    Ok(CrossEntropyGrad { value, d_p, d_q })
}

/// Most probable code and its log-probability, in `O(m 2^o)`.
///
/// Ties prefer the smaller context integer, both for the final context and
/// for each predecessor during backtracking; with `o = 0` this prefers bit 0.
pub fn viterbi(p: &MarkovParams) -> (BitVector, f64) {
    let m = p.m();
    let n = p.num_contexts();
    let mask = n - 1;
    let mut score = vec![f64::NEG_INFINITY; n];
    score[0] = 0.0;
    // back[i][c'] = (previous context, emitted bit)
    let mut back = vec![(0usize, 0u8); m * n];
    let mut next = vec![f64::NEG_INFINITY; n];

    for i in 0..m {
        next.fill(f64::NEG_INFINITY);
        for c in 0..n {
            if score[c] == f64::NEG_INFINITY {
                continue;
            }
            for bit in 0..2usize {
                let c2 = ((c << 1) | bit) & mask;
                let s = score[c] + p.log_factor(i, c, bit);
                // Strict comparison keeps the first (smallest) candidate on ties.
                if s > next[c2] {
                    next[c2] = s;
                    back[i * n + c2] = (c, bit as u8);
                }
            }
        }
        std::mem::swap(&mut score, &mut next);
    }

    let mut best = 0;
    for c in 1..n {
        if score[c] > score[best] {
            best = c;
        }
    }
    let log_prob = score[best];
    let mut bits = vec![0u8; m];
    let mut c = best;
    for i in (0..m).rev() {
        let (prev, bit) = back[i * n + c];
        bits[i] = bit;
        c = prev;
    }
    (BitVector::from_bits(&bits), log_prob)
}

/// Draws a code left to right from the conditional factors.
pub fn sample<R: Rng + ?Sized>(p: &MarkovParams, rng: &mut R) -> BitVector {
    let mut bits = vec![0u8; p.m()];
    for i in 0..p.m() {
        let ctx = super::context_of(&bits, i, p.order());
        bits[i] = (rng.gen::<f64>() < p.prob(i, ctx)) as u8;
    }
    BitVector::from_bits(&bits)
}

pub fn sample_seeded(p: &MarkovParams, seed: u64) -> BitVector {
    sample(p, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::{brute, params::PROB_FLOOR};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300) || (a - b).abs() < 1e-15
    }

    #[test]
    fn forward_fair_coin_chain() {
        let p = MarkovParams::uniform(4, 1);
        let f = forward(&p);
        assert_eq!(f.row(0), &[1.0, 0.0]);
        for i in 1..4 {
            assert_eq!(f.row(i), &[0.5, 0.5]);
        }
    }

    #[test]
    fn forward_base_case_forces_leading_zeros() {
        let p = MarkovParams::random(2, 2, &mut rng(3));
        let f = forward(&p);
        assert_eq!(f.row(0), &[1.0, 0.0, 0.0, 0.0]);
        // Context before position 1 is (z_0, z_{-1}); z_{-1} = 0 is bit 1.
        assert_eq!(f.get(1, 0b10), 0.0);
        assert_eq!(f.get(1, 0b11), 0.0);
        assert!((f.get(1, 0) + f.get(1, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn forward_matches_enumeration() {
        let p = MarkovParams::random(8, 2, &mut rng(11));
        let f = forward(&p);
        let oracle = brute::context_marginals(&p).unwrap();
        for i in 0..8 {
            for c in 0..4 {
                assert!((f.get(i, c) - oracle[i][c]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn marginals_of_independent_bits() {
        let p = MarkovParams::new(3, 0, vec![0.9, 0.2, 0.7]).unwrap();
        let mu = marginals(&p, 0).unwrap();
        assert!((mu.get(0, 1) - 0.9).abs() < 1e-15);
        assert!((mu.get(0, 0) - 0.1).abs() < 1e-15);
        assert!((mu.get(1, 1) - 0.2).abs() < 1e-15);
        assert!((mu.get(2, 1) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn marginals_of_fair_bits_are_uniform_over_feasible_windows() {
        let p = MarkovParams::uniform(5, 0);
        let mu = marginals(&p, 2).unwrap();
        for i in 2..5 {
            for w in 0..8 {
                assert!((mu.get(i, w) - 0.125).abs() < 1e-15);
            }
        }
        // Position 0: only windows whose older bits are zero.
        assert_eq!(mu.get(0, 0b010), 0.0);
        assert!((mu.get(0, 0b001) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn marginals_match_enumeration() {
        let p = MarkovParams::random(6, 1, &mut rng(5));
        let mu = marginals(&p, 3).unwrap();
        let oracle = brute::window_marginals(&p, 3).unwrap();
        for i in 0..6 {
            for w in 0..16 {
                assert!((mu.get(i, w) - oracle[i][w]).abs() <= 1e-10, "i={i} w={w}");
            }
        }
        assert!(marginals(&p, 0).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let u = MarkovParams::uniform(3, 0);
        assert!((cross_entropy(&u, &u).unwrap() - 3.0 * 2f64.ln()).abs() < 1e-12);

        let det = MarkovParams::constant(16, 0, 1.0).unwrap();
        let bound = 16.0 * (1.0 - PROB_FLOOR).ln().abs() + 16.0 * PROB_FLOOR * PROB_FLOOR.ln().abs();
        assert!(cross_entropy(&det, &det).unwrap() <= bound);

        let p = MarkovParams::random(8, 1, &mut rng(1));
        let q = MarkovParams::random(8, 2, &mut rng(2));
        let dp = cross_entropy(&p, &q).unwrap();
        let bf = brute::cross_entropy(&p, &q).unwrap();
        assert!(close(dp, bf, 1e-8), "{dp} vs {bf}");
    }

    #[test]
    fn cross_entropy_rejects_bad_pairs() {
        let p = MarkovParams::uniform(4, 2);
        assert!(cross_entropy(&p, &MarkovParams::uniform(4, 1)).is_err());
        assert!(cross_entropy(&p, &MarkovParams::uniform(5, 2)).is_err());
    }

    #[test]
    fn entropy_examples() {
        let u = MarkovParams::uniform(16, 0);
        assert!((entropy(&u) - 16.0 * 2f64.ln()).abs() < 1e-10);
        assert!(entropy(&MarkovParams::constant(16, 0, 1.0).unwrap()) < 1e-4);
        let p = MarkovParams::random(10, 2, &mut rng(9));
        assert!(close(entropy(&p), brute::entropy(&p).unwrap(), 1e-8));
    }

    #[test]
    fn viterbi_examples() {
        let p = MarkovParams::new(3, 0, vec![0.9, 0.2, 0.7]).unwrap();
        let (z, lp) = viterbi(&p);
        assert_eq!(z.to_bits(), vec![1, 0, 1]);
        assert!((lp - (0.9f64 * 0.8 * 0.7).ln()).abs() < 1e-12);

        let (z, _) = viterbi(&MarkovParams::uniform(7, 0));
        assert_eq!(z.to_bits(), vec![0; 7]);
        let (z, _) = viterbi(&MarkovParams::uniform(7, 2));
        assert_eq!(z.to_bits(), vec![0; 7]);

        let p = MarkovParams::random(6, 1, &mut rng(4));
        let (z, lp) = viterbi(&p);
        let (bz, blp) = brute::argmax(&p).unwrap();
        assert_eq!(z, bz);
        assert_eq!(lp, blp);
    }

    #[test]
    fn sampling_deterministic_tables_gives_ones() {
        let p = MarkovParams::constant(12, 1, 1.0).unwrap();
        assert_eq!(sample_seeded(&p, 7), BitVector::ones(12));
        assert_eq!(sample_seeded(&p, 7), sample_seeded(&p, 7));
    }

    #[test]
    fn sampling_fair_bits_has_half_mean() {
        let p = MarkovParams::uniform(4, 0);
        let mut r = rng(17);
        let mut ones = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            let z = sample(&p, &mut r);
            for (i, o) in ones.iter_mut().enumerate() {
                *o += z.get(i) as usize;
            }
        }
        for o in ones {
            assert!((o as f64 / n as f64 - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn sampling_matches_enumerated_distribution() {
        let p = MarkovParams::random(6, 1, &mut rng(23));
        let probs = brute::code_probabilities(&p).unwrap();
        let mut counts = vec![0usize; 64];
        let mut r = rng(29);
        let n = 100_000;
        for _ in 0..n {
            let z = sample(&p, &mut r);
            let idx = (0..6).fold(0usize, |acc, i| acc | ((z.get(i) as usize) << i));
            counts[idx] += 1;
        }
        let tv: f64 = probs
            .iter()
            .zip(&counts)
            .map(|(p, &c)| (p - c as f64 / n as f64).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv <= 0.02, "total variation {tv}");
    }

    fn finite_diff_check(p: &MarkovParams, q: &MarkovParams) {
        let g = cross_entropy_grad(p, q).unwrap();
        assert!(close(g.value, cross_entropy(p, q).unwrap(), 1e-12));
        let h = 1e-6;
        for k in 0..p.probs().len() {
            let mut plus = p.probs().to_vec();
            let mut minus = p.probs().to_vec();
            plus[k] += h;
            minus[k] -= h;
            let fp = cross_entropy(&MarkovParams::new(p.m(), p.order(), plus).unwrap(), q).unwrap();
            let fm = cross_entropy(&MarkovParams::new(p.m(), p.order(), minus).unwrap(), q).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - g.d_p[k]).abs() <= 1e-5 * (1.0 + fd.abs()), "d_p[{k}]: {fd} vs {}", g.d_p[k]);
        }
        for k in 0..q.probs().len() {
            let mut plus = q.probs().to_vec();
            let mut minus = q.probs().to_vec();
            plus[k] += h;
            minus[k] -= h;
            let fp = cross_entropy(p, &MarkovParams::new(q.m(), q.order(), plus).unwrap()).unwrap();
            let fm = cross_entropy(p, &MarkovParams::new(q.m(), q.order(), minus).unwrap()).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - g.d_q[k]).abs() <= 1e-5 * (1.0 + fd.abs()), "d_q[{k}]: {fd} vs {}", g.d_q[k]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = rng(31);
        for (o, target, m) in [(0, 0, 4), (0, 2, 5), (1, 1, 5), (1, 3, 6), (2, 3, 5), (2, 2, 1), (1, 3, 2)] {
            let mut p = MarkovParams::random(m, o, &mut r);
            // Keep entries away from the clamp so differences stay smooth.
            p = MarkovParams::new(m, o, p.probs().iter().map(|x| 0.05 + 0.9 * x).collect()).unwrap();
            let q = MarkovParams::random(m, target, &mut r);
            let q = MarkovParams::new(m, target, q.probs().iter().map(|x| 0.05 + 0.9 * x).collect()).unwrap();
            finite_diff_check(&p, &q);
        }
    }
}
