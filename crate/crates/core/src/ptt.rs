//! Point-track transformer block.
//!
//! For a seed set `{(c_i, f_i)}` with `f_i ∈ R^D`:
//!
//! ```text
//! g_i    = embed(f_i)                                   R^D → R^M
//! p_ij   = η(c_i − c_n(i,j))                            j over the K nearest seeds
//! q_i    = α(g_i),  k_ij = β(g_n(i,j)),  v_ij = γ(g_n(i,j))
//! w_ij   = softmax_j( mlp(q_i − k_ij + p_ij) )          per channel
//! a_i    = Σ_j w_ij ⊙ (v_ij + p_ij)
//! f*_i   = f_i + out(a_i)                               R^M → R^D
//! ```
//!
//! Only coordinate differences enter, so the block is translation invariant
//! in its features; with index-ordered tie-breaking in the neighbour search it
//! is also permutation equivariant.

use std::io::Write;

use thiserror::Error;

use crate::geom::Point3;
use crate::rng::SplitMix64;
use crate::sampling::{knn, IndexSet, SamplingError};
use crate::tensornn::{Graph, LinearLayer, Matrix, Mlp2, NnError, NodeId, ParamStore};

#[derive(Debug, Error)]
pub enum PttError {
    #[error("feature width {got} does not match configured D = {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("{n} seeds cannot supply {k} neighbours each")]
    TooFewSeeds { n: usize, k: usize },
    #[error("neighbourhood size must be at least 1")]
    ZeroNeighbors,
    #[error("seed set is empty")]
    Empty,
    #[error("non-finite seed data")]
    NonFinite,
    #[error("neighbour index {index} out of range for {n} seeds")]
    NeighborOutOfRange { index: usize, n: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Seed {
    pub coord: Point3,
    pub feat: Vec<f64>,
}

/// Non-empty set of seeds sharing one feature width.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSet {
    seeds: Vec<Seed>,
}

impl SeedSet {
    pub fn new(seeds: Vec<Seed>) -> Result<Self, PttError> {
        let d = seeds.first().ok_or(PttError::Empty)?.feat.len();
        for s in &seeds {
            if s.feat.len() != d {
                return Err(PttError::DimMismatch { expected: d, got: s.feat.len() });
            }
            if !s.coord.is_finite() || s.feat.iter().any(|v| !v.is_finite()) {
                return Err(PttError::NonFinite);
            }
        }
        Ok(Self { seeds })
    }

    pub fn from_parts(coords: &[Point3], feats: &Matrix) -> Result<Self, PttError> {
        if coords.len() != feats.rows() {
            return Err(PttError::Nn(NnError::Shape(format!("{} coords vs {} feature rows", coords.len(), feats.rows()))));
        }
        Self::new(coords.iter().enumerate().map(|(i, &c)| Seed { coord: c, feat: feats.row(i).to_vec() }).collect())
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.seeds[0].feat.len()
    }

    pub fn seeds(&self) -> &[Seed] {
        &self.seeds
    }

    pub fn coords(&self) -> Vec<Point3> {
        self.seeds.iter().map(|s| s.coord).collect()
    }

    pub fn features(&self) -> Matrix {
        let d = self.dim();
        let data = self.seeds.iter().flat_map(|s| s.feat.iter().copied()).collect();
        Matrix::from_vec(self.len(), d, data).expect("uniform width")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PttConfig {
    /// Input/output feature width.
    pub d: usize,
    /// Embedding width.
    pub m: usize,
    /// Neighbours per seed.
    pub k: usize,
}

impl Default for PttConfig {
    fn default() -> Self {
        Self { d: 32, m: 64, k: 8 }
    }
}

impl PttConfig {
    pub fn validate(&self) -> Result<(), PttError> {
        if self.k == 0 {
            return Err(PttError::ZeroNeighbors);
        }
        if self.d == 0 || self.m == 0 {
            return Err(PttError::DimMismatch { expected: 1, got: 0 });
        }
        Ok(())
    }
}

/// `N×M` embedded features.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedFeatures(pub Matrix);

/// `(N·K)×M` relative-position encodings, neighbour-major within each seed.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionEncoding(pub Matrix);

/// Query rows and neighbour-gathered key/value rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensors {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PttParams {
    pub config: PttConfig,
    pub embed: LinearLayer,
    pub eta: Mlp2,
    pub alpha: LinearLayer,
    pub beta: LinearLayer,
    pub gamma_proj: LinearLayer,
    pub attn_mlp: Mlp2,
    pub out: LinearLayer,
}

impl PttParams {
    pub fn new(store: &mut ParamStore, name: &str, config: PttConfig, rng: &SplitMix64) -> Result<Self, PttError> {
        config.validate()?;
        let PttConfig { d, m, .. } = config;
        Ok(Self {
            config,
            embed: LinearLayer::new(store, &format!("{name}.embed"), d, m, rng)?,
            eta: Mlp2::new(store, &format!("{name}.eta"), 3, m, m, rng)?,
            alpha: LinearLayer::new(store, &format!("{name}.alpha"), m, m, rng)?,
            beta: LinearLayer::new(store, &format!("{name}.beta"), m, m, rng)?,
            gamma_proj: LinearLayer::new(store, &format!("{name}.gamma"), m, m, rng)?,
            attn_mlp: Mlp2::new(store, &format!("{name}.attn"), m, m, m, rng)?,
            out: LinearLayer::new(store, &format!("{name}.out"), m, d, rng)?,
        })
    }
}

/// Tape nodes of one block application.
#[derive(Debug, Clone)]
pub struct PttTrace {
    pub neighbors: Vec<IndexSet>,
    pub embedded: NodeId,
    pub position: NodeId,
    pub q: NodeId,
    pub k: NodeId,
    pub v: NodeId,
    /// `(N·K)×M` channel-wise attention weights.
    pub weights: NodeId,
    /// `N×D` attention features after the closing projection.
    pub residual: NodeId,
    /// `N×D` refined features.
    pub output: NodeId,
}

/// KNN over the seed coordinates themselves (each seed is its own first neighbour).
pub fn seed_neighbors(coords: &[Point3], k: usize) -> Result<Vec<IndexSet>, PttError> {
    if k == 0 {
        return Err(PttError::ZeroNeighbors);
    }
    if coords.len() < k {
        return Err(PttError::TooFewSeeds { n: coords.len(), k });
    }
    Ok(knn(coords, coords, k)?)
}

fn flat_neighbors(neighbors: &[IndexSet], n: usize, k: usize) -> Result<Vec<usize>, PttError> {
    if neighbors.len() != n {
        return Err(PttError::Nn(NnError::Shape(format!("{} neighbour lists for {n} seeds", neighbors.len()))));
    }
    let mut flat = Vec::with_capacity(n * k);
    for nb in neighbors {
        if nb.len() != k {
            return Err(PttError::Nn(NnError::Shape(format!("neighbour list of {} for K = {k}", nb.len()))));
        }
        for &j in nb.iter() {
            if j >= n {
                return Err(PttError::NeighborOutOfRange { index: j, n });
            }
            flat.push(j);
        }
    }
    Ok(flat)
}

fn relative_coords(coords: &[Point3], flat: &[usize], k: usize) -> Matrix {
    let mut rel = Matrix::zeros(flat.len(), 3);
    for (r, &j) in flat.iter().enumerate() {
        let d = coords[r / k] - coords[j];
        rel.row_mut(r).copy_from_slice(&d.to_array());
    }
    rel
}

impl PttParams {
    fn check_feats(&self, g: &Graph, feats: NodeId, n: usize) -> Result<(), PttError> {
        let (rows, cols) = g.value(feats).shape();
        if cols != self.config.d {
            return Err(PttError::DimMismatch { expected: self.config.d, got: cols });
        }
        if rows != n {
            return Err(PttError::Nn(NnError::Shape(format!("{rows} feature rows for {n} coords"))));
        }
        Ok(())
    }

    pub fn embed_graph(&self, g: &mut Graph, store: &ParamStore, feats: NodeId) -> Result<NodeId, PttError> {
        Ok(self.embed.forward(g, store, feats)?)
    }

    pub fn position_graph(&self, g: &mut Graph, store: &ParamStore, coords: &[Point3], flat: &[usize]) -> Result<NodeId, PttError> {
        let rel = g.input(relative_coords(coords, flat, self.config.k));
        Ok(self.eta.forward(g, store, rel)?)
    }

    /// Returns `(q, k, v, weights, residual)` nodes.
    pub fn attention_graph(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        embedded: NodeId,
        position: NodeId,
        flat: &[usize],
    ) -> Result<(NodeId, NodeId, NodeId, NodeId, NodeId), PttError> {
        let k = self.config.k;
        if k == 0 {
            return Err(PttError::ZeroNeighbors);
        }
        let n = g.value(embedded).rows();
        let q = self.alpha.forward(g, store, embedded)?;
        // projections are point-wise, so project once and gather neighbour rows
        let kp = self.beta.forward(g, store, embedded)?;
        let vp = self.gamma_proj.forward(g, store, embedded)?;
        let q_rep = g.gather(q, (0..n * k).map(|r| r / k).collect())?;
        let k_nb = g.gather(kp, flat.to_vec())?;
        let v_nb = g.gather(vp, flat.to_vec())?;
        let rel = g.sub(q_rep, k_nb)?;
        let rel = g.add(rel, position)?;
        let logits = self.attn_mlp.forward(g, store, rel)?;
        let weights = g.group_softmax(logits, k)?;
        let vals = g.add(v_nb, position)?;
        let weighted = g.mul(weights, vals)?;
        let agg = g.group_sum(weighted, k)?;
        let residual = self.out.forward(g, store, agg)?;
        Ok((q, k_nb, v_nb, weights, residual))
    }

    /// Position encodings from an `N×3` coordinate node, so gradients reach
    /// the coordinates when they are themselves network outputs.
    pub fn position_graph_at(&self, g: &mut Graph, store: &ParamStore, coords: NodeId, flat: &[usize]) -> Result<NodeId, PttError> {
        let k = self.config.k;
        let own = g.gather(coords, (0..flat.len()).map(|r| r / k).collect())?;
        let other = g.gather(coords, flat.to_vec())?;
        let rel = g.sub(own, other)?;
        Ok(self.eta.forward(g, store, rel)?)
    }

    /// Records the whole block on the tape. `feats` must be `N×D`.
    pub fn forward_graph(&self, g: &mut Graph, store: &ParamStore, coords: &[Point3], feats: NodeId) -> Result<PttTrace, PttError> {
        self.forward_graph_inner(g, store, coords, None, feats)
    }

    /// Like [`PttParams::forward_graph`], with `coord_node` (`N×3`, holding
    /// `coords`) differentiated through the position encoding.
    pub fn forward_graph_at(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        coords: &[Point3],
        coord_node: NodeId,
        feats: NodeId,
    ) -> Result<PttTrace, PttError> {
        if g.value(coord_node).shape() != (coords.len(), 3) {
            return Err(PttError::Nn(NnError::Shape(format!("coordinate node for {} seeds", coords.len()))));
        }
        self.forward_graph_inner(g, store, coords, Some(coord_node), feats)
    }

    fn forward_graph_inner(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        coords: &[Point3],
        coord_node: Option<NodeId>,
        feats: NodeId,
    ) -> Result<PttTrace, PttError> {
        let n = coords.len();
        if n == 0 {
            return Err(PttError::Empty);
        }
        self.check_feats(g, feats, n)?;
        let neighbors = seed_neighbors(coords, self.config.k)?;
        let flat = flat_neighbors(&neighbors, n, self.config.k)?;
        let embedded = self.embed_graph(g, store, feats)?;
        let position = match coord_node {
            Some(c) => self.position_graph_at(g, store, c, &flat)?,
            None => self.position_graph(g, store, coords, &flat)?,
        };
        let (q, k, v, weights, residual) = self.attention_graph(g, store, embedded, position, &flat)?;
        let output = g.add(feats, residual)?;
        Ok(PttTrace { neighbors, embedded, position, q, k, v, weights, residual, output })
    }
}

pub fn feature_embed(params: &PttParams, store: &ParamStore, seeds: &SeedSet) -> Result<EmbeddedFeatures, PttError> {
    if seeds.dim() != params.config.d {
        return Err(PttError::DimMismatch { expected: params.config.d, got: seeds.dim() });
    }
    let mut g = Graph::new();
    let f = g.input(seeds.features());
    let e = params.embed_graph(&mut g, store, f)?;
    Ok(EmbeddedFeatures(g.value(e).clone()))
}

pub fn position_encode(
    params: &PttParams,
    store: &ParamStore,
    seeds: &SeedSet,
    neighbors: &[IndexSet],
) -> Result<PositionEncoding, PttError> {
    let flat = flat_neighbors(neighbors, seeds.len(), params.config.k)?;
    let mut g = Graph::new();
    let p = params.position_graph(&mut g, store, &seeds.coords(), &flat)?;
    Ok(PositionEncoding(g.value(p).clone()))
}

/// Q and neighbour-gathered K/V for inspection.
pub fn attention_tensors(
    params: &PttParams,
    store: &ParamStore,
    embedded: &EmbeddedFeatures,
    neighbors: &[IndexSet],
) -> Result<AttentionTensors, PttError> {
    let n = embedded.0.rows();
    let flat = flat_neighbors(neighbors, n, params.config.k)?;
    let mut g = Graph::new();
    let e = g.input(embedded.0.clone());
    let q = params.alpha.forward(&mut g, store, e)?;
    let kp = params.beta.forward(&mut g, store, e)?;
    let vp = params.gamma_proj.forward(&mut g, store, e)?;
    let k = g.gather(kp, flat.clone())?;
    let v = g.gather(vp, flat)?;
    Ok(AttentionTensors { q: g.value(q).clone(), k: g.value(k).clone(), v: g.value(v).clone() })
}

/// Attention features after the closing projection (`N×D`) and the channel-wise weights.
pub fn self_attention(
    params: &PttParams,
    store: &ParamStore,
    embedded: &EmbeddedFeatures,
    position: &PositionEncoding,
    neighbors: &[IndexSet],
) -> Result<(Matrix, Matrix), PttError> {
    let n = embedded.0.rows();
    let flat = flat_neighbors(neighbors, n, params.config.k)?;
    if position.0.rows() != flat.len() {
        return Err(PttError::Nn(NnError::Shape(format!("{} position rows for {} pairs", position.0.rows(), flat.len()))));
    }
    let mut g = Graph::new();
    let e = g.input(embedded.0.clone());
    let p = g.input(position.0.clone());
    let (_, _, _, w, a) = params.attention_graph(&mut g, store, e, p, &flat)?;
    Ok((g.value(a).clone(), g.value(w).clone()))
}

/// Refines seed features; coordinates pass through.
pub fn ptt_forward(params: &PttParams, store: &ParamStore, seeds: &SeedSet) -> Result<SeedSet, PttError> {
    if seeds.len() < params.config.k {
        return Err(PttError::TooFewSeeds { n: seeds.len(), k: params.config.k });
    }
    let mut g = Graph::new();
    let f = g.input(seeds.features());
    let coords = seeds.coords();
    let trace = params.forward_graph(&mut g, store, &coords, f)?;
    SeedSet::from_parts(&coords, g.value(trace.output))
}

/// Writes one `seed neighbour weight` line per pair, the weight averaged over channels.
pub fn write_attention_dump<W: Write>(mut w: W, neighbors: &[IndexSet], weights: &Matrix) -> std::io::Result<()> {
    let mut r = 0;
    for (i, nb) in neighbors.iter().enumerate() {
        for &j in nb.iter() {
            let row = weights.row(r);
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            writeln!(w, "{i} {j} {mean:.6}")?;
            r += 1;
        }
    }
    Ok(())
}
