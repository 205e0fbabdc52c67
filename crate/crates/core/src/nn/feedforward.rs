use std::rc::Rc;

use rand::Rng;

use super::graph::{Graph, NodeId};
use super::params::ParamStore;
use super::tensor::{init_uniform, SparseRows, Tensor};
use crate::error::{Error, Result};
use crate::markov::sigmoid;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: String,
    pub bias: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

/// Input to the first affine layer.
#[derive(Clone, Debug)]
pub enum Input {
    Dense(NodeId),
    Sparse(Rc<SparseRows>),
}

/// A chain of affine layers. Hidden layers use ReLU, the last is linear; the
/// optional sigmoid is applied by [`FeedForward::forward`] and
/// [`FeedForward::evaluate`] but not by [`FeedForward::logits`], which is what
/// the Markov operations consume.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    collection: String,
    layers: Vec<Layer>,
    sigmoid: bool,
}

impl FeedForward {
    /// `dims = [input, hidden.., output]`.
    pub fn new(collection: &str, dims: &[usize], sigmoid: bool) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Shape(format!("bad layer sizes {dims:?}")));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer {
                weight: format!("{collection}.{i}.weight"),
                bias: format!("{collection}.{i}.bias"),
                in_dim: w[0],
                out_dim: w[1],
                activation: if i == last {
                    Activation::Identity
                } else {
                    Activation::Relu
                },
            })
            .collect();
        Ok(Self {
            collection: collection.to_string(),
            layers,
            sigmoid,
        })
    }

    pub fn collection(&self) -> &str {
        &self.collection
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn sigmoid(&self) -> bool {
        self.sigmoid
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, alpha: f64, rng: &mut R) {
        for l in &self.layers {
            store.insert(&l.weight, init_uniform(l.in_dim, l.out_dim, alpha, rng));
            store.insert(&l.bias, init_uniform(1, l.out_dim, alpha, rng));
        }
    }

    /// Records the network up to (not including) the final sigmoid.
    pub fn logits(&self, g: &mut Graph, store: &ParamStore, input: Input) -> Result<NodeId> {
        let mut x = None;
        for (i, l) in self.layers.iter().enumerate() {
            let w = g.param(store, &l.weight)?;
            let b = g.param(store, &l.bias)?;
            check_dims(store.get(&l.weight)?, l)?;
            let h = match (i, &input, x) {
                (0, Input::Dense(id), _) => {
                    let cols = g.value(*id).cols();
                    if cols != l.in_dim {
                        return Err(dim_error(cols, l.in_dim));
                    }
                    g.matmul(*id, w)?
                }
                (0, Input::Sparse(rows), _) => {
                    if rows.cols() != l.in_dim {
                        return Err(dim_error(rows.cols(), l.in_dim));
                    }
                    g.sparse_matmul(rows.clone(), w)?
                }
                (_, _, Some(prev)) => g.matmul(prev, w)?,
                _ => unreachable!("later layers always have an input"),
            };
            let h = g.add_row(h, b)?;
            x = Some(match l.activation {
                Activation::Relu => g.relu(h),
                Activation::Identity => h,
            });
        }
        Ok(x.expect("at least one layer"))
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, input: Input) -> Result<NodeId> {
        let out = self.logits(g, store, input)?;
        Ok(if self.sigmoid { g.sigmoid(out) } else { out })
    }

    /// Plain evaluation of the logits on dense input rows, no tape.
    pub fn evaluate_logits(&self, store: &ParamStore, input: &Tensor) -> Result<Tensor> {
        let mut x = input.clone();
        if x.cols() != self.in_dim() {
            return Err(dim_error(x.cols(), self.in_dim()));
        }
        for l in &self.layers {
            x = affine(&x, store, l)?;
        }
        Ok(x)
    }

    /// Plain evaluation of the logits on sparse input rows, no tape.
    pub fn evaluate_logits_sparse(&self, store: &ParamStore, input: &SparseRows) -> Result<Tensor> {
        if input.cols() != self.in_dim() {
            return Err(dim_error(input.cols(), self.in_dim()));
        }
        let first = &self.layers[0];
        let w = store.get(&first.weight)?;
        check_dims(w, first)?;
        let mut x = input.matmul(w)?;
        finish_layer(&mut x, store.get(&first.bias)?, first.activation);
        for l in &self.layers[1..] {
            x = affine(&x, store, l)?;
        }
        Ok(x)
    }

    pub fn evaluate(&self, store: &ParamStore, input: &Tensor) -> Result<Tensor> {
        let mut out = self.evaluate_logits(store, input)?;
        if self.sigmoid {
            out.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
        }
        Ok(out)
    }
}

fn dim_error(got: usize, want: usize) -> Error {
    Error::Shape(format!("network input has {got} features, expected {want}"))
}

fn check_dims(w: &Tensor, l: &Layer) -> Result<()> {
    if w.shape() != (l.in_dim, l.out_dim) {
        return Err(Error::Shape(format!(
            "{} is {:?}, layer expects {:?}",
            l.weight,
            w.shape(),
            (l.in_dim, l.out_dim)
        )));
    }
    Ok(())
}

fn affine(x: &Tensor, store: &ParamStore, l: &Layer) -> Result<Tensor> {
    let w = store.get(&l.weight)?;
    check_dims(w, l)?;
    let mut out = x.matmul(w)?;
    finish_layer(&mut out, store.get(&l.bias)?, l.activation);
    Ok(out)
}

fn finish_layer(x: &mut Tensor, bias: &Tensor, act: Activation) {
    for r in 0..x.rows() {
        for (v, &b) in x.row_mut(r).iter_mut().zip(bias.data()) {
            *v += b;
            if act == Activation::Relu && *v < 0.0 {
                *v = 0.0;
            }
        }
    }
}

/// A learnable `m × H` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingDictionary {
    pub name: String,
    pub m: usize,
    pub dim: usize,
}

impl EmbeddingDictionary {
    pub fn new(collection: &str, m: usize, dim: usize) -> Self {
        Self {
            name: format!("{collection}.embed"),
            m,
            dim,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, alpha: f64, rng: &mut R) {
        store.insert(&self.name, init_uniform(self.m, self.dim, alpha, rng));
    }
}

/// The unconditional prior: the mean of the embedding rows fed through a
/// feedforward network that emits `m·2^r` logits.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorNet {
    pub embed: EmbeddingDictionary,
    pub net: FeedForward,
}

impl PriorNet {
    pub fn new(collection: &str, m: usize, order: usize, dim: usize, hidden: &[usize]) -> Result<Self> {
        let mut dims = vec![dim];
        dims.extend_from_slice(hidden);
        dims.push(m << order);
        Ok(Self {
            embed: EmbeddingDictionary::new(collection, m, dim),
            net: FeedForward::new(collection, &dims, true)?,
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, alpha: f64, rng: &mut R) {
        self.embed.init(store, alpha, rng);
        self.net.init(store, alpha, rng);
    }

    /// `1 × m·2^r` logits on the tape.
    pub fn logits(&self, g: &mut Graph, store: &ParamStore) -> Result<NodeId> {
        let theta = g.param(store, &self.embed.name)?;
        let pooled = g.mean_rows(theta);
        self.net.logits(g, store, Input::Dense(pooled))
    }

    pub fn evaluate_logits(&self, store: &ParamStore) -> Result<Tensor> {
        let theta = store.get(&self.embed.name)?;
        let mut pooled = Tensor::zeros(1, theta.cols());
        for r in 0..theta.rows() {
            for (d, &v) in pooled.data_mut().iter_mut().zip(theta.row(r)) {
                *d += v;
            }
        }
        let n = theta.rows() as f64;
        pooled.data_mut().iter_mut().for_each(|v| *v /= n);
        self.net.evaluate_logits(store, &pooled)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_with_sigmoid_gives_half() {
        let net = FeedForward::new("psi", &[5, 7, 3], true).unwrap();
        let mut store = ParamStore::new();
        net.init(&mut store, 0.0, &mut ChaCha8Rng::seed_from_u64(0));
        let out = net.evaluate(&store, &Tensor::full(2, 5, 1.3)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = FeedForward::new("phi", &[3, 3], false).unwrap();
        let mut store = ParamStore::new();
        let mut eye = Tensor::zeros(3, 3);
        for i in 0..3 {
            eye.row_mut(i)[i] = 1.0;
        }
        store.insert("phi.0.weight", eye);
        store.insert("phi.0.bias", Tensor::zeros(1, 3));
        let x = Tensor::row_vector(vec![0.5, -2.0, 3.0]);
        assert_eq!(net.evaluate(&store, &x).unwrap(), x);
    }

    #[test]
    fn two_layer_net_matches_straight_line_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = FeedForward::new("psi", &[6, 4, 3], true).unwrap();
        let mut store = ParamStore::new();
        net.init(&mut store, 0.7, &mut rng);
        let x = init_uniform(1, 6, 1.0, &mut rng);

        let w0 = store.get("psi.0.weight").unwrap();
        let b0 = store.get("psi.0.bias").unwrap();
        let w1 = store.get("psi.1.weight").unwrap();
        let b1 = store.get("psi.1.bias").unwrap();
        let mut h = [0.0; 4];
        for (j, hj) in h.iter_mut().enumerate() {
            let mut s = b0.get(0, j);
            for i in 0..6 {
                s += x.get(0, i) * w0.get(i, j);
            }
            *hj = if s > 0.0 { s } else { 0.0 };
        }
        let out = net.evaluate(&store, &x).unwrap();
        for k in 0..3 {
            let mut s = b1.get(0, k);
            for (j, hj) in h.iter().enumerate() {
                s += hj * w1.get(j, k);
            }
            let want = 1.0 / (1.0 + (-s).exp());
            assert!((out.get(0, k) - want).abs() < 1e-12);
        }

        let mut g = Graph::new();
        let xin = g.constant(x.clone());
        let y = net.forward(&mut g, &store, Input::Dense(xin)).unwrap();
        assert_eq!(g.value(y), &out);
    }

    #[test]
    fn sparse_and_dense_inputs_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = FeedForward::new("psi", &[5, 4, 2], false).unwrap();
        let mut store = ParamStore::new();
        net.init(&mut store, 0.5, &mut rng);
        let rows: Vec<Vec<(u32, f64)>> = vec![vec![(1, 0.6), (4, 0.8)], vec![(0, 1.0)]];
        let s = SparseRows::from_rows(5, rows.iter().map(|r| r.as_slice())).unwrap();
        let dense = net.evaluate(&store, &s.to_dense()).unwrap();
        let sparse = net.evaluate_logits_sparse(&store, &s).unwrap();
        for (a, b) in dense.data().iter().zip(sparse.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let net = FeedForward::new("psi", &[5, 2], false).unwrap();
        let mut store = ParamStore::new();
        net.init(&mut store, 0.1, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(net.evaluate(&store, &Tensor::zeros(1, 4)).is_err());
        assert!(FeedForward::new("psi", &[5], false).is_err());
    }
}
