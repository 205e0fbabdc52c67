//! Self-checks against exhaustive enumeration and finite differences.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::markov::{self, brute, MarkovParams};
use crate::nn::{FeedForward, Graph, Input, NodeId, ParamStore, PriorNet, Tensor};

/// Largest code length the enumeration checks accept.
pub const ORACLE_LIMIT: usize = 20;

/// A deliberate defect for exercising the failure path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Fault {
    /// Scales the dynamic-programming cross entropy by `1 + 1e-6`.
    CrossEntropy,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DpOptions {
    pub max_m: usize,
    pub max_order: usize,
    pub trials: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub fault: Option<Fault>,
}

impl Default for DpOptions {
    fn default() -> Self {
        Self {
            max_m: 12,
            max_order: 3,
            trials: 50,
            seed: 0,
            tolerance: 1e-8,
            fault: None,
        }
    }
}

/// One comparison outside tolerance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Failure {
    pub check: String,
    pub case: String,
    pub error: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct OracleReport {
    pub cases: usize,
    /// Largest error per check.
    pub max_error: BTreeMap<String, f64>,
    pub failures: Vec<Failure>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn record(&mut self, check: &str, case: impl FnOnce() -> String, error: f64, tolerance: f64) {
        let worst = self.max_error.entry(check.to_string()).or_insert(0.0);
        // NaN must register as a failure, so compare negated.
        if !(error <= *worst) {
            *worst = error;
        }
        if !(error <= tolerance) {
            self.failures.push(Failure {
                check: check.to_string(),
                case: case(),
                error,
            });
        }
    }

    fn merge(&mut self, other: OracleReport) {
        self.cases += other.cases;
        for (k, v) in other.max_error {
            let worst = self.max_error.entry(k).or_insert(0.0);
            if !(v <= *worst) {
                *worst = v;
            }
        }
        self.failures.extend(other.failures);
    }
}

fn relative(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Dynamic programs against enumeration: cross entropy and entropy by
/// relative error, context and window marginals by absolute error, Viterbi
/// exactly (its code must attain the enumerated maximum).
pub fn dp_suite(opts: &DpOptions) -> Result<OracleReport> {
    if opts.max_m > ORACLE_LIMIT {
        return Err(Error::EnumerationLimit {
            m: opts.max_m,
            limit: ORACLE_LIMIT,
        });
    }
    if opts.max_order > markov::MAX_ORDER {
        return Err(Error::Order {
            what: "oracle",
            required: markov::MAX_ORDER,
            actual: opts.max_order,
        });
    }
    let tol = opts.tolerance;
    let mut report = OracleReport::default();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for m in 1..=opts.max_m {
        for o in 0..=opts.max_order {
            for o2 in o..=opts.max_order {
                for trial in 0..opts.trials {
                    let case = || format!("m={m} o={o} o'={o2} trial={trial}");
                    let p = MarkovParams::random(m, o, &mut rng);
                    let q = MarkovParams::random(m, o2, &mut rng);
                    report.cases += 1;

                    let mut ce = markov::cross_entropy(&p, &q)?;
                    if opts.fault == Some(Fault::CrossEntropy) {
                        ce *= 1.0 + 1e-6;
                    }
                    report.record("cross_entropy", case, relative(ce, brute::cross_entropy(&p, &q)?), tol);
                    let h = relative(markov::entropy(&p), brute::entropy(&p)?);
                    report.record("entropy", case, h, tol);

                    let fwd = markov::forward(&p);
                    let mut err = 0.0f64;
                    for (i, row) in brute::context_marginals(&p)?.iter().enumerate() {
                        for (c, v) in row.iter().enumerate() {
                            err = err.max((fwd.get(i, c) - v).abs());
                        }
                    }
                    let mu = markov::marginals(&p, o2)?;
                    for (i, row) in brute::window_marginals(&p, o2)?.iter().enumerate() {
                        for (w, v) in row.iter().enumerate() {
                            err = err.max((mu.get(i, w) - v).abs());
                        }
                    }
                    report.record("marginals", case, err, tol);

                    let (code, _) = markov::viterbi(&p);
                    let (_, best) = brute::argmax(&p)?;
                    let found = p.log_prob(&code.to_bits());
                    report.record("viterbi", case, if found == best { 0.0 } else { 1.0 }, 0.0);
                }
            }
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradientOptions {
    pub m: usize,
    /// Encoder, posterior and prior orders.
    pub o: usize,
    pub h: usize,
    pub r: usize,
    pub batch: usize,
    pub trials: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradientOptions {
    fn default() -> Self {
        Self {
            m: 8,
            o: 1,
            h: 2,
            r: 2,
            batch: 4,
            trials: 3,
            seed: 0,
            step: 1e-4,
            tolerance: 1e-4,
        }
    }
}

/// Small networks standing in for encoder, posterior and prior.
struct Nets {
    encoder: FeedForward,
    posterior: FeedForward,
    prior: PriorNet,
    y: Tensor,
    x: Tensor,
}

impl Nets {
    fn new(opts: &GradientOptions, rng: &mut ChaCha8Rng) -> Result<(Self, ParamStore)> {
        let (input, hidden) = (5, 4);
        let nets = Self {
            encoder: FeedForward::new("psi", &[input, hidden, opts.m << opts.o], true)?,
            posterior: FeedForward::new("phi", &[input, hidden, opts.m << opts.h], true)?,
            prior: PriorNet::new("theta", opts.m, opts.r, 3, &[hidden])?,
            y: random_tensor(opts.batch, input, rng),
            x: random_tensor(opts.batch, input, rng),
        };
        let mut store = ParamStore::new();
        nets.encoder.init(&mut store, 1.0, rng);
        nets.posterior.init(&mut store, 1.0, rng);
        nets.prior.init(&mut store, 1.0, rng);
        Ok((nets, store))
    }

    fn loss(&self, kind: &str, g: &mut Graph, store: &ParamStore, m: usize) -> Result<NodeId> {
        let y = g.constant(self.y.clone());
        let e = self.encoder.logits(g, store, Input::Dense(y))?;
        let per_row = match kind {
            "conditional_cross_entropy" => {
                let x = g.constant(self.x.clone());
                let q = self.posterior.logits(g, store, Input::Dense(x))?;
                g.markov_cross_entropy(e, q, m)?
            }
            "prior_cross_entropy" => {
                let t = self.prior.logits(g, store)?;
                g.markov_cross_entropy(e, t, m)?
            }
            "conditional_entropy" => g.markov_entropy(e, m)?,
            "mixture_entropy" => return g.mixture_entropy(e, m),
            other => return Err(Error::InvalidParams(format!("unknown loss `{other}`"))),
        };
        Ok(g.mean(per_row))
    }

    fn value(&self, kind: &str, store: &ParamStore, m: usize) -> Result<f64> {
        let mut g = Graph::new();
        let l = self.loss(kind, &mut g, store, m)?;
        Ok(g.value(l).item())
    }
}

fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(rows, cols, data).expect("sizes match")
}

/// The losses whose gradients [`gradient_suite`] checks.
pub const GRADIENT_LOSSES: [&str; 4] = [
    "conditional_cross_entropy",
    "prior_cross_entropy",
    "conditional_entropy",
    "mixture_entropy",
];

/// Backpropagated gradients against central differences for every
/// parameter of small random networks. The error of one entry is
/// `|a - b| / max(|a|, |b|, 1e-3)`: relative for gradients of ordinary
/// size, absolute near zero where a relative measure only sees the
/// truncation error of the difference quotient.
pub fn gradient_suite(opts: &GradientOptions) -> Result<OracleReport> {
    if opts.m > markov::MIXTURE_LIMIT {
        return Err(Error::EnumerationLimit {
            m: opts.m,
            limit: markov::MIXTURE_LIMIT,
        });
    }
    let mut report = OracleReport::default();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for trial in 0..opts.trials {
        let (nets, store) = Nets::new(opts, &mut rng)?;
        for kind in GRADIENT_LOSSES {
            let mut g = Graph::new();
            let loss = nets.loss(kind, &mut g, &store, opts.m)?;
            let grads = g.backward(loss)?;
            let mut part = OracleReport::default();
            for (name, t) in store.iter() {
                let analytic = grads.get(name);
                for idx in 0..t.len() {
                    let mut plus = store.clone();
                    plus.get_mut(name)?.data_mut()[idx] += opts.step;
                    let mut minus = store.clone();
                    minus.get_mut(name)?.data_mut()[idx] -= opts.step;
                    let fd = (nets.value(kind, &plus, opts.m)? - nets.value(kind, &minus, opts.m)?) / (2.0 * opts.step);
                    let a = analytic.map_or(0.0, |g| g.data()[idx]);
                    let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
                    part.cases += 1;
                    part.record(
                        kind,
                        || format!("trial={trial} {name}[{idx}] analytic={a:e} numeric={fd:e}"),
                        err,
                        opts.tolerance,
                    );
                }
            }
            report.merge(part);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_dp_suite_passes_and_the_fault_is_caught() {
        let opts = DpOptions {
            max_m: 5,
            max_order: 2,
            trials: 3,
            ..Default::default()
        };
        let r = dp_suite(&opts).unwrap();
        assert!(r.passed(), "{:?}", r.failures.first());
        assert_eq!(r.cases, 5 * 6 * 3);
        let bad = dp_suite(&DpOptions {
            fault: Some(Fault::CrossEntropy),
            ..opts
        })
        .unwrap();
        assert!(!bad.passed());
        assert!(bad.failures.iter().all(|f| f.check == "cross_entropy"));
    }

    #[test]
    fn zero_trials_is_vacuous() {
        let r = dp_suite(&DpOptions { trials: 0, ..Default::default() }).unwrap();
        assert_eq!(r.cases, 0);
        assert!(r.passed());
    }

    #[test]
    fn limits_are_enforced() {
        assert!(dp_suite(&DpOptions { max_m: 21, ..Default::default() }).is_err());
    }

    #[test]
    fn gradient_suite_passes() {
        let r = gradient_suite(&GradientOptions {
            m: 4,
            trials: 1,
            ..Default::default()
        })
        .unwrap();
        assert!(r.passed(), "{:?}", r.failures.first());
        assert_eq!(r.max_error.len(), 4);
    }
}
