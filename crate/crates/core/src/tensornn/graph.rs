//! Reverse-mode tape. Every op evaluates eagerly when recorded and keeps what
//! its backward rule needs. Nodes are appended in topological order, so the
//! backward sweep is a single reverse pass over the node list.

use std::collections::HashMap;

use super::{Matrix, NnError, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param,
    Linear { x: NodeId, w: NodeId, b: Option<NodeId> },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Gather { x: NodeId, idx: Vec<usize> },
    GroupSoftmax { x: NodeId, group: usize },
    GroupSum { x: NodeId, group: usize },
    GroupMax { x: NodeId, argmax: Vec<usize> },
    ConcatCols(NodeId, NodeId),
    SliceCols { x: NodeId, start: usize },
    Sum(NodeId),
    BceWithLogits { x: NodeId, targets: Vec<f64> },
    SmoothL1 { x: NodeId, diff: Matrix, mask: Vec<bool>, count: usize },
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// One recorded forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, NodeId>,
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> NnError {
    NnError::Shape(format!("{op}: {}×{} vs {}×{}", a.0, a.1, b.0, b.1))
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

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn check(&self, id: NodeId) -> Result<(), NnError> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(NnError::UnknownNode)
        }
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Input, false)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&n) = self.params.get(&id) {
            return n;
        }
        let n = self.push(store.get(id).as_matrix(), Op::Param, true);
        self.params.insert(id, n);
        n
    }

    /// `x·Wᵀ + b` with `W` of shape `out×in` and `b` of shape `1×out`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId, NnError> {
        self.check(x)?;
        self.check(w)?;
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        if xv.cols() != wv.cols() {
            return Err(shape_err("linear", xv.shape(), wv.shape()));
        }
        let (rows, inn, out) = (xv.rows(), xv.cols(), wv.rows());
        let mut y = Matrix::zeros(rows, out);
        if let Some(b) = b {
            self.check(b)?;
            let bv = &self.nodes[b.0].value;
            if bv.shape() != (1, out) {
                return Err(shape_err("linear bias", bv.shape(), (1, out)));
            }
            for r in 0..rows {
                y.row_mut(r).copy_from_slice(bv.row(0));
            }
        }
        let wd = wv.data();
        for r in 0..rows {
            let xr = xv.row(r);
            let yr = y.row_mut(r);
            for (o, yo) in yr.iter_mut().enumerate() {
                let wr = &wd[o * inn..(o + 1) * inn];
                let mut acc = 0.0;
                for i in 0..inn {
                    acc += wr[i] * xr[i];
                }
                *yo += acc;
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(y, Op::Linear { x, w, b }, rg))
    }

    fn binary(&mut self, a: NodeId, b: NodeId, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix, NnError> {
        self.check(a)?;
        self.check(b)?;
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        if av.shape() != bv.shape() {
            return Err(shape_err(name, av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        Matrix::from_vec(av.rows(), av.cols(), data)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> Result<NodeId, NnError> {
        self.check(x)?;
        let xv = &self.nodes[x.0].value;
        let data = xv.data().iter().map(|v| v * s).collect();
        let v = Matrix::from_vec(xv.rows(), xv.cols(), data)?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::Scale(x, s), rg))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, NnError> {
        self.check(x)?;
        let xv = &self.nodes[x.0].value;
        let data = xv.data().iter().map(|v| v.max(0.0)).collect();
        let v = Matrix::from_vec(xv.rows(), xv.cols(), data)?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::Relu(x), rg))
    }

    /// Row gather: output row `r` is input row `idx[r]`. Backward scatters-adds.
    pub fn gather(&mut self, x: NodeId, idx: Vec<usize>) -> Result<NodeId, NnError> {
        self.check(x)?;
        let xv = &self.nodes[x.0].value;
        if let Some(&bad) = idx.iter().find(|&&i| i >= xv.rows()) {
            return Err(NnError::Shape(format!("gather index {bad} out of {} rows", xv.rows())));
        }
        let cols = xv.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in &idx {
            data.extend_from_slice(xv.row(i));
        }
        let v = Matrix::from_vec(idx.len(), cols, data)?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::Gather { x, idx }, rg))
    }

    fn check_group(&self, x: NodeId, group: usize, name: &str) -> Result<(), NnError> {
        self.check(x)?;
        let rows = self.nodes[x.0].value.rows();
        if group == 0 || !rows.is_multiple_of(group) {
            return Err(NnError::Shape(format!("{name}: {rows} rows not divisible into groups of {group}")));
        }
        Ok(())
    }

    /// Softmax down each column within consecutive blocks of `group` rows
    /// (channel-wise normalisation across a neighbourhood).
    pub fn group_softmax(&mut self, x: NodeId, group: usize) -> Result<NodeId, NnError> {
        self.check_group(x, group, "group_softmax")?;
        let xv = &self.nodes[x.0].value;
        let (rows, cols) = xv.shape();
        let mut y = Matrix::zeros(rows, cols);
        let mut mx = vec![0.0; cols];
        let mut sum = vec![0.0; cols];
        for g in 0..rows / group {
            let base = g * group;
            mx.copy_from_slice(xv.row(base));
            for r in base + 1..base + group {
                for (m, v) in mx.iter_mut().zip(xv.row(r)) {
                    *m = m.max(*v);
                }
            }
            sum.iter_mut().for_each(|s| *s = 0.0);
            for r in base..base + group {
                let yr = y.row_mut(r);
                for c in 0..cols {
                    let e = (xv.get(r, c) - mx[c]).exp();
                    yr[c] = e;
                    sum[c] += e;
                }
            }
            for r in base..base + group {
                for (v, s) in y.row_mut(r).iter_mut().zip(&sum) {
                    *v /= s;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(y, Op::GroupSoftmax { x, group }, rg))
    }

    /// Sums each block of `group` rows into one row.
    pub fn group_sum(&mut self, x: NodeId, group: usize) -> Result<NodeId, NnError> {
        self.check_group(x, group, "group_sum")?;
        let xv = &self.nodes[x.0].value;
        let (rows, cols) = xv.shape();
        let mut y = Matrix::zeros(rows / group, cols);
        for r in 0..rows {
            let g = r / group;
            for (a, v) in y.row_mut(g).iter_mut().zip(xv.row(r)) {
                *a += v;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(y, Op::GroupSum { x, group }, rg))
    }

    /// Channel max over each block of `group` rows; ties route the gradient to the first row.
    pub fn group_max(&mut self, x: NodeId, group: usize) -> Result<NodeId, NnError> {
        self.check_group(x, group, "group_max")?;
        let xv = &self.nodes[x.0].value;
        let (rows, cols) = xv.shape();
        let groups = rows / group;
        let mut y = Matrix::zeros(groups, cols);
        let mut argmax = vec![0usize; groups * cols];
        for g in 0..groups {
            let base = g * group;
            y.row_mut(g).copy_from_slice(xv.row(base));
            argmax[g * cols..(g + 1) * cols].iter_mut().for_each(|a| *a = base);
            for r in base + 1..base + group {
                for c in 0..cols {
                    let v = xv.get(r, c);
                    if v > y.get(g, c) {
                        y.set(g, c, v);
                        argmax[g * cols + c] = r;
                    }
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(y, Op::GroupMax { x, argmax }, rg))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        self.check(a)?;
        self.check(b)?;
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        if av.rows() != bv.rows() {
            return Err(shape_err("concat_cols", av.shape(), bv.shape()));
        }
        let cols = av.cols() + bv.cols();
        let mut data = Vec::with_capacity(av.rows() * cols);
        for r in 0..av.rows() {
            data.extend_from_slice(av.row(r));
            data.extend_from_slice(bv.row(r));
        }
        let v = Matrix::from_vec(av.rows(), cols, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::ConcatCols(a, b), rg))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId, NnError> {
        self.check(x)?;
        let xv = &self.nodes[x.0].value;
        if start + len > xv.cols() {
            return Err(NnError::Shape(format!("slice {start}..{} of {} columns", start + len, xv.cols())));
        }
        let mut data = Vec::with_capacity(xv.rows() * len);
        for r in 0..xv.rows() {
            data.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let v = Matrix::from_vec(xv.rows(), len, data)?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::SliceCols { x, start }, rg))
    }

    /// Sum of all entries, as a `1×1`.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, NnError> {
        self.check(x)?;
        let s = self.nodes[x.0].value.data().iter().sum();
        let rg = self.rg(x);
        Ok(self.push(Matrix::scalar(s), Op::Sum(x), rg))
    }

    /// Mean binary cross-entropy of an `R×1` logit column against 0/1 targets.
    /// An empty column gives 0.
    pub fn bce_with_logits(&mut self, x: NodeId, targets: Vec<f64>) -> Result<NodeId, NnError> {
        self.check(x)?;
        let xv = &self.nodes[x.0].value;
        if xv.cols() != 1 || xv.rows() != targets.len() {
            return Err(shape_err("bce", xv.shape(), (targets.len(), 1)));
        }
        let n = targets.len();
        let total: f64 = xv
            .data()
            .iter()
            .zip(&targets)
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum();
        let v = if n == 0 { 0.0 } else { total / n as f64 };
        let rg = self.rg(x);
        Ok(self.push(Matrix::scalar(v), Op::BceWithLogits { x, targets }, rg))
    }

    /// Smooth-L1 (transition at 1) of `x − target`, summed over columns and
    /// averaged over the rows where `mask` is set. No selected rows gives 0.
    pub fn smooth_l1(&mut self, x: NodeId, target: &Matrix, mask: Vec<bool>) -> Result<NodeId, NnError> {
        self.check(x)?;
        let xv = &self.nodes[x.0].value;
        if xv.shape() != target.shape() || mask.len() != xv.rows() {
            return Err(shape_err("smooth_l1", xv.shape(), target.shape()));
        }
        let data = xv.data().iter().zip(target.data()).map(|(a, b)| a - b).collect();
        let diff = Matrix::from_vec(xv.rows(), xv.cols(), data)?;
        let count = mask.iter().filter(|m| **m).count();
        let mut total = 0.0;
        for r in (0..diff.rows()).filter(|&r| mask[r]) {
            for &d in diff.row(r) {
                total += if d.abs() < 1.0 { 0.5 * d * d } else { d.abs() - 0.5 };
            }
        }
        let v = if count == 0 { 0.0 } else { total / count as f64 };
        let rg = self.rg(x);
        Ok(self.push(Matrix::scalar(v), Op::SmoothL1 { x, diff, mask, count }, rg))
    }

    /// Backpropagates from a `1×1` root. Accumulation into parameters is done
    /// separately through [`Gradients::accumulate_into`].
    pub fn backward(&self, root: NodeId) -> Result<Gradients, NnError> {
        self.check(root)?;
        let rv = &self.nodes[root.0].value;
        if rv.shape() != (1, 1) {
            return Err(NnError::NonScalarRoot(rv.rows(), rv.cols()));
        }
        if !rv.item().is_finite() {
            return Err(NnError::NonFiniteLoss(rv.item()));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Matrix::scalar(1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut params: Vec<(ParamId, Matrix)> = self
            .params
            .iter()
            .filter_map(|(&pid, &nid)| grads.get(nid.0).and_then(Clone::clone).map(|g| (pid, g)))
            .collect();
        params.sort_by_key(|(p, _)| *p);
        Ok(Gradients { nodes: grads, params })
    }

    fn backprop_node(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |id: NodeId| &self.nodes[id.0].value;
        let mut acc = |id: NodeId, delta: Matrix| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Input | Op::Param => {}
            Op::Linear { x, w, b } => {
                let xv = val(*x);
                let wv = val(*w);
                let (rows, inn, out) = (xv.rows(), xv.cols(), wv.rows());
                if self.nodes[x.0].requires_grad {
                    let mut dx = Matrix::zeros(rows, inn);
                    for r in 0..rows {
                        let gr = g.row(r);
                        let dxr = dx.row_mut(r);
                        for (o, &go) in gr.iter().enumerate() {
                            if go == 0.0 {
                                continue;
                            }
                            for (d, wv) in dxr.iter_mut().zip(wv.row(o)) {
                                *d += go * wv;
                            }
                        }
                    }
                    acc(*x, dx);
                }
                if self.nodes[w.0].requires_grad {
                    let mut dw = Matrix::zeros(out, inn);
                    for r in 0..rows {
                        let xr = xv.row(r);
                        for (o, &go) in g.row(r).iter().enumerate() {
                            if go == 0.0 {
                                continue;
                            }
                            for (d, xv) in dw.row_mut(o).iter_mut().zip(xr) {
                                *d += go * xv;
                            }
                        }
                    }
                    acc(*w, dw);
                }
                if let Some(b) = b {
                    let mut db = Matrix::zeros(1, out);
                    for r in 0..rows {
                        for (d, v) in db.row_mut(0).iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    acc(*b, db);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                let neg = g.data().iter().map(|v| -v).collect();
                acc(*b, Matrix::from_vec(g.rows(), g.cols(), neg).expect("shape"));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let da = g.data().iter().zip(bv.data()).map(|(g, b)| g * b).collect();
                let db = g.data().iter().zip(av.data()).map(|(g, a)| g * a).collect();
                acc(*a, Matrix::from_vec(g.rows(), g.cols(), da).expect("shape"));
                acc(*b, Matrix::from_vec(g.rows(), g.cols(), db).expect("shape"));
            }
            Op::Scale(x, s) => {
                let d = g.data().iter().map(|v| v * s).collect();
                acc(*x, Matrix::from_vec(g.rows(), g.cols(), d).expect("shape"));
            }
            Op::Relu(x) => {
                let xv = val(*x);
                let d = g.data().iter().zip(xv.data()).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect();
                acc(*x, Matrix::from_vec(g.rows(), g.cols(), d).expect("shape"));
            }
            Op::Gather { x, idx } => {
                let xv = val(*x);
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for (r, &i) in idx.iter().enumerate() {
                    for (d, v) in dx.row_mut(i).iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                acc(*x, dx);
            }
            Op::GroupSoftmax { x, group } => {
                let y = &node.value;
                let (rows, cols) = y.shape();
                let mut dx = Matrix::zeros(rows, cols);
                let mut dot = vec![0.0; cols];
                for base in (0..rows).step_by(*group) {
                    dot.iter_mut().for_each(|d| *d = 0.0);
                    for r in base..base + group {
                        for c in 0..cols {
                            dot[c] += y.get(r, c) * g.get(r, c);
                        }
                    }
                    for r in base..base + group {
                        for c in 0..cols {
                            dx.set(r, c, y.get(r, c) * (g.get(r, c) - dot[c]));
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::GroupSum { x, group } => {
                let xv = val(*x);
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    dx.row_mut(r).copy_from_slice(g.row(r / group));
                }
                acc(*x, dx);
            }
            Op::GroupMax { x, argmax, .. } => {
                let xv = val(*x);
                let cols = xv.cols();
                let mut dx = Matrix::zeros(xv.rows(), cols);
                for (k, &r) in argmax.iter().enumerate() {
                    let (gi, c) = (k / cols, k % cols);
                    let cur = dx.get(r, c);
                    dx.set(r, c, cur + g.get(gi, c));
                }
                acc(*x, dx);
            }
            Op::ConcatCols(a, b) => {
                let ac = val(*a).cols();
                let bc = val(*b).cols();
                let mut da = Matrix::zeros(g.rows(), ac);
                let mut db = Matrix::zeros(g.rows(), bc);
                for r in 0..g.rows() {
                    da.row_mut(r).copy_from_slice(&g.row(r)[..ac]);
                    db.row_mut(r).copy_from_slice(&g.row(r)[ac..]);
                }
                acc(*a, da);
                acc(*b, db);
            }
            Op::SliceCols { x, start } => {
                let xv = val(*x);
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    dx.row_mut(r)[*start..start + g.cols()].copy_from_slice(g.row(r));
                }
                acc(*x, dx);
            }
            Op::Sum(x) => {
                let xv = val(*x);
                acc(*x, Matrix::filled(xv.rows(), xv.cols(), g.item()));
            }
            Op::BceWithLogits { x, targets } => {
                let xv = val(*x);
                let n = targets.len().max(1) as f64;
                let gi = g.item();
                let d = xv
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&z, &t)| gi * (sigmoid(z) - t) / n)
                    .collect();
                acc(*x, Matrix::from_vec(xv.rows(), 1, d).expect("shape"));
            }
            Op::SmoothL1 { x, diff, mask, count } => {
                let mut dx = Matrix::zeros(diff.rows(), diff.cols());
                if *count > 0 {
                    let s = g.item() / *count as f64;
                    for r in (0..diff.rows()).filter(|&r| mask[r]) {
                        for (d, &v) in dx.row_mut(r).iter_mut().zip(diff.row(r)) {
                            *d = s * if v.abs() < 1.0 { v } else { v.signum() };
                        }
                    }
                }
                acc(*x, dx);
            }
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Gradients from one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    nodes: Vec<Option<Matrix>>,
    params: Vec<(ParamId, Matrix)>,
}

impl Gradients {
    /// Gradient with respect to a node, if it was reached.
    pub fn node(&self, id: NodeId) -> Option<&Matrix> {
        self.nodes.get(id.0).and_then(Option::as_ref)
    }

    /// Per-parameter gradients sorted by id.
    pub fn params(&self) -> &[(ParamId, Matrix)] {
        &self.params
    }

    pub fn into_params(self) -> Vec<(ParamId, Matrix)> {
        self.params
    }

    /// Adds into the store's grad buffers; repeated calls accumulate.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        accumulate_param_grads(&self.params, store);
    }
}

pub fn accumulate_param_grads(grads: &[(ParamId, Matrix)], store: &mut ParamStore) {
    for (id, g) in grads {
        let p = store.get_mut(*id);
        for (a, b) in p.grad.iter_mut().zip(g.data()) {
            *a += b;
        }
    }
}
