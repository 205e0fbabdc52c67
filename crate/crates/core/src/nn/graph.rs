//! Tape-style reverse-mode differentiation over dense matrices.
//!
//! Nodes are appended in evaluation order, so the tape order is already a
//! topological order; [`Graph::backward`] walks it once in reverse. Besides
//! the usual dense operations the tape has three fused operations over
//! Markov code distributions whose backward passes run the adjoint of the
//! corresponding dynamic program.

use std::rc::Rc;

use rayon::prelude::*;

use super::params::{Gradients, ParamStore};
use super::tensor::{SparseRows, Tensor};
use crate::error::{Error, Result};
use crate::markov::{self, MarkovParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(String),
    SparseMatMul(Rc<SparseRows>, NodeId),
    MatMul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Sigmoid(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    MeanRows(NodeId),
    /// Per-row `H(p_l, q_l)` from logits; cached logit gradients of `p`, `q`.
    CrossEntropy {
        p: NodeId,
        q: NodeId,
        cache: Option<(Tensor, Tensor)>,
    },
    /// Per-row `H(p_l)` from logits.
    Entropy { p: NodeId, cache: Option<Tensor> },
    /// Entropy of the average of the row distributions.
    MixtureEntropy { p: NodeId, cache: Option<Tensor> },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// A single-use computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Derivative of a probability with respect to its logit, taken from the
/// clamped probability. Multiplied into `d/dp log p = 1/p` this gives the
/// log-sigmoid derivative `1 - p`, which stays nonzero past the clamp so a
/// saturated unit that is confidently wrong still receives a gradient.
#[inline]
fn logit_chain(prob: f64) -> f64 {
    prob * (1.0 - prob)
}

fn tables(logits: &Tensor, m: usize, order: usize) -> Result<Vec<MarkovParams>> {
    (0..logits.rows())
        .map(|r| MarkovParams::from_logits(m, order, logits.row(r)))
        .collect()
}

fn to_logit_grad(logits: &Tensor, tables: &[MarkovParams], d_prob: &[Vec<f64>]) -> Tensor {
    let mut out = Tensor::zeros(logits.rows(), logits.cols());
    for (r, (t, d)) in tables.iter().zip(d_prob).enumerate() {
        let row = out.row_mut(r);
        for (k, dst) in row.iter_mut().enumerate() {
            *dst = d[k] * logit_chain(t.probs()[k]);
        }
    }
    out
}

fn order_of(cols: usize, m: usize) -> Result<usize> {
    if m == 0 || cols % m != 0 || !(cols / m).is_power_of_two() {
        return Err(Error::Shape(format!(
            "{cols} logits do not form m={m} Markov tables"
        )));
    }
    Ok((cols / m).trailing_zeros() as usize)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes
            .get(id.0)
            .ok_or_else(|| Error::Graph(format!("node {} is not on this tape", id.0)))
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value, false)
    }

    /// Leaf holding the current value of a named parameter.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId> {
        let value = store.get(name)?.clone();
        Ok(self.push(Op::Param(name.to_string()), value, true))
    }

    /// A constant copy of `x`: gradients stop here.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).clone();
        self.constant(value)
    }

    pub fn sparse_matmul(&mut self, x: Rc<SparseRows>, w: NodeId) -> Result<NodeId> {
        let value = x.matmul(self.value(w))?;
        let needs = self.needs(&[w]);
        Ok(self.push(Op::SparseMatMul(x, w), value, needs))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), value, needs))
    }

    /// `x + b` with the `1 × n` row `b` added to every row of `x`.
    pub fn add_row(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::Shape(format!(
                "row broadcast of {}x{} onto {}x{}",
                bv.rows(),
                bv.cols(),
                xv.rows(),
                xv.cols()
            )));
        }
        let mut value = xv.clone();
        for r in 0..value.rows() {
            for (d, &v) in value.row_mut(r).iter_mut().zip(bv.data()) {
                *d += v;
            }
        }
        let needs = self.needs(&[x, b]);
        Ok(self.push(Op::AddRow(x, b), value, needs))
    }

    fn zip_with(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Shape(format!(
                "elementwise {:?} with {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.rows(), av.cols(), data)
    }

    fn map(&self, x: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| f(v)).collect();
        Tensor::new(xv.rows(), xv.cols(), data).expect("same shape")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.zip_with(a, b, |x, y| x + y)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(Op::Add(a, b), value, needs))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.zip_with(a, b, |x, y| x - y)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(Op::Sub(a, b), value, needs))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.zip_with(a, b, |x, y| x * y)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(Op::Mul(a, b), value, needs))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = self.map(x, |v| c * v);
        let needs = self.needs(&[x]);
        self.push(Op::Scale(x, c), value, needs)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.map(x, |v| v.max(0.0));
        let needs = self.needs(&[x]);
        self.push(Op::Relu(x), value, needs)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = self.map(x, markov::sigmoid);
        let needs = self.needs(&[x]);
        self.push(Op::Sigmoid(x), value, needs)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        let needs = self.needs(&[x]);
        self.push(Op::Sum(x), value, needs)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let value = Tensor::scalar(xv.data().iter().sum::<f64>() / xv.len() as f64);
        let needs = self.needs(&[x]);
        self.push(Op::Mean(x), value, needs)
    }

    /// Column means: `r × c` to `1 × c`.
    pub fn mean_rows(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let mut value = Tensor::zeros(1, xv.cols());
        for r in 0..xv.rows() {
            for (d, &v) in value.data_mut().iter_mut().zip(xv.row(r)) {
                *d += v;
            }
        }
        let n = xv.rows() as f64;
        value.data_mut().iter_mut().for_each(|v| *v /= n);
        let needs = self.needs(&[x]);
        self.push(Op::MeanRows(x), value, needs)
    }

    /// Per-row cross entropy `H(p_l, q_l)` in nats, `N × 1`.
    ///
    /// `p` holds `N` rows of order-`o` logits over `m` positions; `q` holds
    /// either `N` rows or a single shared row of higher-or-equal order.
    pub fn markov_cross_entropy(&mut self, p: NodeId, q: NodeId, m: usize) -> Result<NodeId> {
        let (pv, qv) = (&self.node(p)?.value, &self.node(q)?.value);
        let (po, qo) = (order_of(pv.cols(), m)?, order_of(qv.cols(), m)?);
        if qo < po {
            return Err(Error::Order {
                what: "cross entropy",
                required: qo,
                actual: po,
            });
        }
        if qv.rows() != 1 && qv.rows() != pv.rows() {
            return Err(Error::Shape(format!(
                "{} q rows for {} p rows",
                qv.rows(),
                pv.rows()
            )));
        }
        let ptabs = tables(pv, m, po)?;
        let qtabs = tables(qv, m, qo)?;
        let qrow = |l: usize| if qtabs.len() == 1 { 0 } else { l };
        let needs = self.needs(&[p, q]);

        let (value, cache) = if needs {
            let grads: Vec<markov::CrossEntropyGrad> = ptabs
                .par_iter()
                .enumerate()
                .map(|(l, pt)| markov::cross_entropy_grad(pt, &qtabs[qrow(l)]))
                .collect::<Result<_>>()?;
            let value = Tensor::new(grads.len(), 1, grads.iter().map(|g| g.value).collect())?;
            let dp: Vec<Vec<f64>> = grads.iter().map(|g| g.d_p.clone()).collect();
            let gp = to_logit_grad(pv, &ptabs, &dp);
            // One row of q-logit gradients per sample, even when q is shared,
            // so backward can weight each sample by its upstream gradient.
            let mut gq = Tensor::zeros(grads.len(), qv.cols());
            for (l, g) in grads.iter().enumerate() {
                let qt = &qtabs[qrow(l)];
                for (k, d) in gq.row_mut(l).iter_mut().enumerate() {
                    *d = g.d_q[k] * logit_chain(qt.probs()[k]);
                }
            }
            (value, Some((gp, gq)))
        } else {
            let vals: Vec<f64> = ptabs
                .par_iter()
                .enumerate()
                .map(|(l, pt)| markov::cross_entropy(pt, &qtabs[qrow(l)]))
                .collect::<Result<_>>()?;
            (Tensor::new(vals.len(), 1, vals)?, None)
        };
        Ok(self.push(Op::CrossEntropy { p, q, cache }, value, needs))
    }

    /// Per-row entropy `H(p_l)` in nats, `N × 1`; gradients flow through both
    /// arguments of the underlying `H(p, p)`.
    pub fn markov_entropy(&mut self, p: NodeId, m: usize) -> Result<NodeId> {
        let pv = &self.node(p)?.value;
        let po = order_of(pv.cols(), m)?;
        let ptabs = tables(pv, m, po)?;
        let needs = self.needs(&[p]);
        let (value, cache) = if needs {
            let grads: Vec<markov::CrossEntropyGrad> = ptabs
                .par_iter()
                .map(|t| markov::cross_entropy_grad(t, t))
                .collect::<Result<_>>()?;
            let value = Tensor::new(grads.len(), 1, grads.iter().map(|g| g.value).collect())?;
            let d: Vec<Vec<f64>> = grads
                .iter()
                .map(|g| g.d_p.iter().zip(&g.d_q).map(|(a, b)| a + b).collect())
                .collect();
            (value, Some(to_logit_grad(pv, &ptabs, &d)))
        } else {
            let vals: Vec<f64> = ptabs.par_iter().map(markov::entropy).collect();
            (Tensor::new(vals.len(), 1, vals)?, None)
        };
        Ok(self.push(Op::Entropy { p, cache }, value, needs))
    }

    /// Entropy of the equal-weight mixture of the row distributions, `1 × 1`.
    pub fn mixture_entropy(&mut self, p: NodeId, m: usize) -> Result<NodeId> {
        let pv = &self.node(p)?.value;
        let po = order_of(pv.cols(), m)?;
        let ptabs = tables(pv, m, po)?;
        let needs = self.needs(&[p]);
        let (value, cache) = if needs {
            let g = markov::mixture_entropy_grad(&ptabs)?;
            (Tensor::scalar(g.value), Some(to_logit_grad(pv, &ptabs, &g.grads)))
        } else {
            (Tensor::scalar(markov::mixture_entropy(&ptabs)?), None)
        };
        Ok(self.push(Op::MixtureEntropy { p, cache }, value, needs))
    }

    /// Gradients of the scalar `loss` with respect to every parameter leaf
    /// that feeds it.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let shape = self.node(loss)?.value.shape();
        if shape != (1, 1) {
            return Err(Error::Graph(format!("backward from a {shape:?} tensor")));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let mut send = |id: NodeId, t: Tensor| {
                if self.nodes[id.0].needs_grad {
                    match &mut grads[id.0] {
                        Some(acc) => acc.add_assign(&t),
                        slot => *slot = Some(t),
                    }
                }
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(name) => out.accumulate(name, g),
                Op::SparseMatMul(x, w) => send(*w, x.t_matmul(&g)),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    send(*a, g.matmul_t(bv)?);
                    send(*b, av.t_matmul(&g)?);
                }
                Op::AddRow(x, b) => {
                    let mut gb = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        gb.add_assign(&Tensor::row_vector(g.row(r).to_vec()));
                    }
                    send(*b, gb);
                    send(*x, g);
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    let neg = elementwise(&g, |v| -v);
                    send(*a, g);
                    send(*b, neg);
                }
                Op::Mul(a, b) => {
                    let ga = product(&g, self.value(*b));
                    let gb = product(&g, self.value(*a));
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::Scale(x, c) => send(*x, elementwise(&g, |v| c * v)),
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let data = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(&d, &v)| if v > 0.0 { d } else { 0.0 })
                        .collect();
                    send(*x, Tensor::new(g.rows(), g.cols(), data)?);
                }
                Op::Sigmoid(x) => {
                    let data = g
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .map(|(&d, &s)| d * s * (1.0 - s))
                        .collect();
                    send(*x, Tensor::new(g.rows(), g.cols(), data)?);
                }
                Op::Sum(x) => {
                    let (r, c) = self.value(*x).shape();
                    send(*x, Tensor::full(r, c, g.item()));
                }
                Op::Mean(x) => {
                    let (r, c) = self.value(*x).shape();
                    send(*x, Tensor::full(r, c, g.item() / (r * c) as f64));
                }
                Op::MeanRows(x) => {
                    let (r, c) = self.value(*x).shape();
                    let mut t = Tensor::zeros(r, c);
                    for row in 0..r {
                        for (d, &v) in t.row_mut(row).iter_mut().zip(g.data()) {
                            *d = v / r as f64;
                        }
                    }
                    send(*x, t);
                }
                Op::CrossEntropy { p, q, cache } => {
                    let (gp, gq) = cache.as_ref().expect("cached when gradients are needed");
                    send(*p, scale_rows(gp, &g));
                    let weighted = scale_rows(gq, &g);
                    if self.value(*q).rows() == 1 {
                        let mut total = Tensor::zeros(1, weighted.cols());
                        for r in 0..weighted.rows() {
                            for (d, &v) in total.data_mut().iter_mut().zip(weighted.row(r)) {
                                *d += v;
                            }
                        }
                        send(*q, total);
                    } else {
                        send(*q, weighted);
                    }
                }
                Op::Entropy { p, cache } => {
                    let gp = cache.as_ref().expect("cached when gradients are needed");
                    send(*p, scale_rows(gp, &g));
                }
                Op::MixtureEntropy { p, cache } => {
                    let gp = cache.as_ref().expect("cached when gradients are needed");
                    send(*p, elementwise(gp, |v| v * g.item()));
                }
            }
        }
        Ok(out)
    }
}

fn elementwise(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.rows(), t.cols(), t.data().iter().map(|&v| f(v)).collect()).expect("same shape")
}

fn product(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor::new(
        a.rows(),
        a.cols(),
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect(),
    )
    .expect("same shape")
}

/// Row `l` of `t` times the upstream scalar `g[l]`.
fn scale_rows(t: &Tensor, g: &Tensor) -> Tensor {
    let mut out = t.clone();
    for r in 0..out.rows() {
        let s = g.get(r, 0);
        out.row_mut(r).iter_mut().for_each(|v| *v *= s);
    }
    out
}
