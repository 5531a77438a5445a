use super::{Graph, Matrix, NnError, NodeId, ParamId, ParamStore};
use crate::rng::SplitMix64;

/// Fully connected layer; weight `out×in`, bias `out`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearLayer {
    /// Registers `<name>.weight` and `<name>.bias` in the store.
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &SplitMix64) -> Result<Self, NnError> {
        let weight = store.add_weight(&format!("{name}.weight"), out_dim, in_dim, rng)?;
        let bias = store.add_bias(&format!("{name}.bias"), out_dim)?;
        Ok(Self { weight, bias, in_dim, out_dim })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId, NnError> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, Some(b))
    }

    /// Sets the weight to the identity (square layers only) and the bias to zero.
    pub fn set_identity(&self, store: &mut ParamStore) -> Result<(), NnError> {
        if self.in_dim != self.out_dim {
            return Err(NnError::Shape(format!("identity on {}→{}", self.in_dim, self.out_dim)));
        }
        let w = store.get_mut(self.weight);
        for (i, v) in w.values.iter_mut().enumerate() {
            *v = if i / self.in_dim == i % self.in_dim { 1.0 } else { 0.0 };
        }
        store.get_mut(self.bias).values.iter_mut().for_each(|v| *v = 0.0);
        Ok(())
    }

    pub fn zero(&self, store: &mut ParamStore) {
        store.get_mut(self.weight).values.iter_mut().for_each(|v| *v = 0.0);
        store.get_mut(self.bias).values.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// `weight·x + bias` outside the tape.
pub fn linear_forward(layer: &LinearLayer, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>, NnError> {
    if x.len() != layer.in_dim {
        return Err(NnError::Shape(format!("linear input of length {} for in-dim {}", x.len(), layer.in_dim)));
    }
    let mut g = Graph::new();
    let xin = g.input(Matrix::row_vector(x));
    let y = layer.forward(&mut g, store, xin)?;
    Ok(g.value(y).data().to_vec())
}

/// Two linear layers with a ReLU between them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp2 {
    pub first: LinearLayer,
    pub second: LinearLayer,
}

impl Mlp2 {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &SplitMix64,
    ) -> Result<Self, NnError> {
        Ok(Self {
            first: LinearLayer::new(store, &format!("{name}.0"), in_dim, hidden, rng)?,
            second: LinearLayer::new(store, &format!("{name}.1"), hidden, out_dim, rng)?,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.first.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.second.out_dim
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId, NnError> {
        let h = self.first.forward(g, store, x)?;
        let h = g.relu(h)?;
        self.second.forward(g, store, h)
    }
}

/// Numerically stable softmax (max subtracted before exponentiating).
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mx = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
