use std::io::{self, Write};

use rand::Rng;

use crate::error::{Error, Result};

/// Probabilities are kept in `[PROB_FLOOR, 1 - PROB_FLOOR]` so every log is finite.
pub const PROB_FLOOR: f64 = 1e-7;

/// Orders above this would need tables with more than a million contexts.
pub const MAX_ORDER: usize = 20;

/// The logit at which a sigmoid output reaches `1 - PROB_FLOOR`.
pub fn logit_bound() -> f64 {
    ((1.0 - PROB_FLOOR) / PROB_FLOOR).ln()
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Integer code of the `order` bits preceding position `i` in `bits`.
///
/// The most recent bit `z_{i-1}` is the lowest-order bit; positions before
/// the start of the code read as zero.
pub fn context_of(bits: &[u8], i: usize, order: usize) -> usize {
    let mut ctx = 0usize;
    for j in 1..=order {
        if j <= i && bits[i - j] != 0 {
            ctx |= 1 << (j - 1);
        }
    }
    ctx
}

/// Conditional probability tables of an order-`o` Markov distribution over
/// `{0,1}^m`.
///
/// Entry `(i, c)` is the probability that bit `i` is one given that the `o`
/// preceding bits encode to context `c` (see [`context_of`]). Positions are
/// zero-based.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovParams {
    m: usize,
    order: usize,
    probs: Vec<f64>,
    log_one: Vec<f64>,
    log_zero: Vec<f64>,
}

impl MarkovParams {
    /// Builds tables from probabilities of a one bit, clamping each entry.
    pub fn new(m: usize, order: usize, probs: Vec<f64>) -> Result<Self> {
        check_shape(m, order, probs.len())?;
        if let Some(bad) = probs.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidParams(format!("non-finite table entry {bad}")));
        }
        let probs: Vec<f64> = probs.into_iter().map(clamp_prob).collect();
        let log_one = probs.iter().map(|p| p.ln()).collect();
        let log_zero = probs.iter().map(|p| (-p).ln_1p()).collect();
        Ok(Self {
            m,
            order,
            probs,
            log_one,
            log_zero,
        })
    }

    /// Builds tables from logits; logs come from the log-sigmoid form.
    pub fn from_logits(m: usize, order: usize, logits: &[f64]) -> Result<Self> {
        check_shape(m, order, logits.len())?;
        if let Some(bad) = logits.iter().find(|a| !a.is_finite()) {
            return Err(Error::InvalidParams(format!("non-finite logit {bad}")));
        }
        let bound = logit_bound();
        let clamped: Vec<f64> = logits.iter().map(|a| a.clamp(-bound, bound)).collect();
        Ok(Self {
            m,
            order,
            probs: clamped.iter().map(|&a| clamp_prob(sigmoid(a))).collect(),
            log_one: clamped.iter().map(|&a| -softplus(-a)).collect(),
            log_zero: clamped.iter().map(|&a| -softplus(a)).collect(),
        })
    }

    pub fn constant(m: usize, order: usize, p: f64) -> Result<Self> {
        Self::new(m, order, vec![p; m << order])
    }

    pub fn uniform(m: usize, order: usize) -> Self {
        Self::constant(m, order, 0.5).expect("uniform tables are valid")
    }

    /// Every entry drawn uniformly from `(0, 1)`.
    pub fn random<R: Rng + ?Sized>(m: usize, order: usize, rng: &mut R) -> Self {
        let probs = (0..m << order).map(|_| rng.gen::<f64>()).collect();
        Self::new(m, order, probs).expect("random tables are valid")
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn num_contexts(&self) -> usize {
        1 << self.order
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn prob(&self, i: usize, ctx: usize) -> f64 {
        self.probs[(i << self.order) + ctx]
    }

    /// Probability of `bit` at position `i` under context `ctx`.
    #[inline]
    pub fn factor(&self, i: usize, ctx: usize, bit: usize) -> f64 {
        let p = self.prob(i, ctx);
        if bit == 1 {
            p
        } else {
            1.0 - p
        }
    }

    #[inline]
    pub fn log_factor(&self, i: usize, ctx: usize, bit: usize) -> f64 {
        let k = (i << self.order) + ctx;
        if bit == 1 {
            self.log_one[k]
        } else {
            self.log_zero[k]
        }
    }

    /// The same distribution expressed with a larger context window; the
    /// extra (older) context bits are ignored.
    pub fn lift(&self, order: usize) -> Result<Self> {
        if order < self.order {
            return Err(Error::Order {
                what: "lift",
                required: order,
                actual: self.order,
            });
        }
        check_shape(self.m, order, self.m << order)?;
        let mask = self.num_contexts() - 1;
        let pick = |v: &[f64]| -> Vec<f64> {
            (0..self.m << order)
                .map(|k| {
                    let (i, c) = (k >> order, k & ((1 << order) - 1));
                    v[(i << self.order) + (c & mask)]
                })
                .collect()
        };
        Ok(Self {
            m: self.m,
            order,
            probs: pick(&self.probs),
            log_one: pick(&self.log_one),
            log_zero: pick(&self.log_zero),
        })
    }

    /// Log-probability of a full code, accumulated left to right.
    pub fn log_prob(&self, bits: &[u8]) -> f64 {
        debug_assert_eq!(bits.len(), self.m);
        let mut acc = 0.0;
        for i in 0..self.m {
            acc += self.log_factor(i, context_of(bits, i, self.order), bits[i] as usize);
        }
        acc
    }

    /// Writes one `position<TAB>context<TAB>p_one` line per table entry,
    /// positions zero-based, after a `#` header line.
    pub fn dump<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# m={} order={} position\tcontext\tp_one", self.m, self.order)?;
        for i in 0..self.m {
            for c in 0..self.num_contexts() {
                writeln!(out, "{i}\t{c}\t{}", self.prob(i, c))?;
            }
        }
        Ok(())
    }
}

fn check_shape(m: usize, order: usize, len: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidParams("code length must be positive".into()));
    }
    if order > MAX_ORDER {
        return Err(Error::InvalidParams(format!(
            "order {order} exceeds the maximum {MAX_ORDER}"
        )));
    }
    if len != m << order {
        return Err(Error::Shape(format!(
            "table for m={m}, order={order} needs {} entries, got {len}",
            m << order
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_are_clamped() {
        let p = MarkovParams::new(2, 0, vec![0.0, 1.0]).unwrap();
        assert_eq!(p.prob(0, 0), PROB_FLOOR);
        assert_eq!(p.prob(1, 0), 1.0 - PROB_FLOOR);
        assert!(p.log_factor(0, 0, 1).is_finite());
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(MarkovParams::new(3, 1, vec![0.5; 5]).is_err());
        assert!(MarkovParams::new(0, 0, vec![]).is_err());
        assert!(MarkovParams::new(1, 0, vec![f64::NAN]).is_err());
        assert!(MarkovParams::from_logits(1, 0, &[f64::INFINITY]).is_err());
    }

    #[test]
    fn logits_agree_with_probabilities() {
        let logits = [-3.0, 0.0, 2.5, 40.0, -40.0];
        let a = MarkovParams::from_logits(5, 0, &logits).unwrap();
        let b = MarkovParams::new(5, 0, logits.iter().map(|&x| sigmoid(x)).collect()).unwrap();
        for i in 0..5 {
            assert!((a.prob(i, 0) - b.prob(i, 0)).abs() < 1e-15);
            for bit in 0..2 {
                assert!((a.log_factor(i, 0, bit) - b.log_factor(i, 0, bit)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn context_encoding_puts_most_recent_bit_lowest() {
        let bits = [1, 0, 1, 1];
        assert_eq!(context_of(&bits, 0, 2), 0);
        assert_eq!(context_of(&bits, 1, 2), 0b01);
        assert_eq!(context_of(&bits, 3, 3), 0b101);
        assert_eq!(context_of(&bits, 4, 2), 0b11);
    }

    #[test]
    fn lift_ignores_older_bits() {
        let p = MarkovParams::new(2, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let l = p.lift(2).unwrap();
        assert_eq!(l.prob(1, 0b01), 0.4);
        assert_eq!(l.prob(1, 0b11), 0.4);
        assert_eq!(l.prob(1, 0b10), 0.3);
        assert!(p.lift(0).is_err());
    }

    #[test]
    fn dump_has_one_line_per_entry() {
        let p = MarkovParams::uniform(3, 1);
        let mut buf = Vec::new();
        p.dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 6);
        assert!(text.lines().nth(1).unwrap().starts_with("0\t0\t0.5"));
    }
}
