//! Minimal reverse-mode automatic differentiation over `f64` matrices.
//!
//! A [`Tape`] records a DAG of matrix operations as they are evaluated;
//! [`Tape::backward`] walks the records in reverse and accumulates gradients,
//! routing leaf gradients into a [`ParamStore`]. Everything is eager and
//! double-precision, which keeps finite-difference gradient checks tight.

mod ops;
mod store;

pub use store::{Adam, ParamId, ParamStore};

use ndarray::Array2;

pub type NodeId = usize;

const GELU_COEF: f64 = 0.044715;

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(ParamId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// (m x n) + (1 x n), broadcast over rows.
    AddRow(NodeId, NodeId),
    /// (m x n) * (1 x n), broadcast over rows.
    MulRow(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Exp(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    Gelu(NodeId),
    Tanh(NodeId),
    Clamp(NodeId, f64, f64),
    RowSoftmax(NodeId),
    RowLogSoftmax(NodeId),
    /// Per-row (x - mean) / sqrt(var + eps); the layer-norm core.
    RowNormalize(NodeId, f64),
    /// Select rows of the parent by index (embedding lookup).
    Gather(NodeId, Vec<usize>),
    ConcatRows(NodeId, NodeId),
    ConcatCols(NodeId, NodeId),
    SliceRows(NodeId, usize, usize),
    /// (m x n) -> (m x 1), picking column `idx[i]` in row i.
    SelectPerRow(NodeId, Vec<usize>),
    /// Reduce to 1x1.
    SumAll(NodeId),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Records operations for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value of a node.
    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = &self.nodes[id].value;
        assert_eq!(v.dim(), (1, 1), "scalar() on a non-1x1 node");
        v[(0, 0)]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    /// Leaf holding a constant; receives a gradient but does not propagate it.
    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Const)
    }

    /// Leaf bound to a stored parameter; backward accumulates into the store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    /// Back-propagate from a 1x1 `root` node, accumulating parameter
    /// gradients into `store` and returning per-node gradients.
    pub fn backward(&self, root: NodeId, store: &mut ParamStore) -> Gradients {
        let seed = Array2::from_elem((1, 1), 1.0);
        self.backward_seeded(root, seed, store)
    }

    fn backward_seeded(&self, root: NodeId, seed: Array2<f64>, store: &mut ParamStore) -> Gradients {
        assert_eq!(
            self.nodes[root].value.dim(),
            (1, 1),
            "backward root must be 1x1"
        );
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(seed);

        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads, store);
            grads[id] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(
        &self,
        id: NodeId,
        g: &Array2<f64>,
        grads: &mut [Option<Array2<f64>>],
        store: &mut ParamStore,
    ) {
        let acc = |grads: &mut [Option<Array2<f64>>], target: NodeId, delta: Array2<f64>| {
            match &mut grads[target] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            }
        };

        match &self.nodes[id].op {
            Op::Const => {}
            Op::Param(pid) => store.accumulate_grad(*pid, g),
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, -g.clone());
            }
            Op::Mul(a, b) => {
                acc(grads, *a, g * &self.nodes[*b].value);
                acc(grads, *b, g * &self.nodes[*a].value);
            }
            Op::AddRow(a, b) => {
                acc(grads, *a, g.clone());
                let row_sum = g.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0));
                acc(grads, *b, row_sum);
            }
            Op::MulRow(a, b) => {
                let bv = &self.nodes[*b].value;
                let av = &self.nodes[*a].value;
                acc(grads, *a, g * bv);
                let gb = (g * av)
                    .sum_axis(ndarray::Axis(0))
                    .insert_axis(ndarray::Axis(0));
                acc(grads, *b, gb);
            }
            Op::Scale(a, c) => acc(grads, *a, g * *c),
            Op::AddScalar(a) => acc(grads, *a, g.clone()),
            Op::MatMul(a, b) => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                acc(grads, *a, g.dot(&bv.t()));
                acc(grads, *b, av.t().dot(g));
            }
            Op::Transpose(a) => acc(grads, *a, g.t().to_owned()),
            Op::Exp(a) => acc(grads, *a, g * &self.nodes[id].value),
            Op::Sigmoid(a) => {
                let y = &self.nodes[id].value;
                acc(grads, *a, g * y * (1.0 - y));
            }
            Op::Softplus(a) => {
                let x = &self.nodes[*a].value;
                acc(grads, *a, g * &x.mapv(sigmoid));
            }
            Op::Gelu(a) => {
                let x = &self.nodes[*a].value;
                acc(grads, *a, g * &x.mapv(gelu_derivative));
            }
            Op::Tanh(a) => {
                let y = &self.nodes[id].value;
                acc(grads, *a, g * &y.mapv(|t| 1.0 - t * t));
            }
            Op::Clamp(a, lo, hi) => {
                let x = &self.nodes[*a].value;
                let mut out = g.clone();
                ndarray::Zip::from(&mut out).and(x).for_each(|go, &xv| {
                    if xv < *lo || xv > *hi {
                        *go = 0.0;
                    }
                });
                acc(grads, *a, out);
            }
            Op::RowSoftmax(a) => {
                let y = &self.nodes[id].value;
                let mut out = g * y;
                for (mut row, yrow) in out.rows_mut().into_iter().zip(y.rows()) {
                    let s: f64 = row.sum();
                    ndarray::Zip::from(&mut row).and(&yrow).for_each(|r, &yv| {
                        *r -= s * yv;
                    });
                }
                acc(grads, *a, out);
            }
            Op::RowLogSoftmax(a) => {
                let y = &self.nodes[id].value;
                let mut out = g.clone();
                for (mut grow, yrow) in out.rows_mut().into_iter().zip(y.rows()) {
                    let s: f64 = grow.sum();
                    ndarray::Zip::from(&mut grow).and(&yrow).for_each(|r, &yv| {
                        *r -= s * yv.exp();
                    });
                }
                acc(grads, *a, out);
            }
            Op::RowNormalize(a, eps) => {
                let x = &self.nodes[*a].value;
                let y = &self.nodes[id].value;
                let n = x.ncols() as f64;
                let mut out = Array2::zeros(x.raw_dim());
                for i in 0..x.nrows() {
                    let xrow = x.row(i);
                    let yrow = y.row(i);
                    let grow = g.row(i);
                    let mean = xrow.mean().unwrap();
                    let var = xrow.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
                    let sigma = (var + eps).sqrt();
                    let g_mean: f64 = grow.sum() / n;
                    let gy_mean: f64 = grow
                        .iter()
                        .zip(yrow.iter())
                        .map(|(&gv, &yv)| gv * yv)
                        .sum::<f64>()
                        / n;
                    for j in 0..x.ncols() {
                        out[(i, j)] = (grow[j] - g_mean - yrow[j] * gy_mean) / sigma;
                    }
                }
                acc(grads, *a, out);
            }
            Op::Gather(a, ids) => {
                let src = &self.nodes[*a].value;
                let mut out = Array2::zeros(src.raw_dim());
                for (i, &row_id) in ids.iter().enumerate() {
                    let mut dst = out.row_mut(row_id);
                    dst += &g.row(i);
                }
                acc(grads, *a, out);
            }
            Op::ConcatRows(a, b) => {
                let ra = self.nodes[*a].value.nrows();
                acc(grads, *a, g.slice(ndarray::s![..ra, ..]).to_owned());
                acc(grads, *b, g.slice(ndarray::s![ra.., ..]).to_owned());
            }
            Op::ConcatCols(a, b) => {
                let ca = self.nodes[*a].value.ncols();
                acc(grads, *a, g.slice(ndarray::s![.., ..ca]).to_owned());
                acc(grads, *b, g.slice(ndarray::s![.., ca..]).to_owned());
            }
            Op::SliceRows(a, start, len) => {
                let src = &self.nodes[*a].value;
                let mut out = Array2::zeros(src.raw_dim());
                let mut dst = out.slice_mut(ndarray::s![*start..*start + *len, ..]);
                dst += g;
                acc(grads, *a, out);
            }
            Op::SelectPerRow(a, idx) => {
                let src = &self.nodes[*a].value;
                let mut out = Array2::zeros(src.raw_dim());
                for (i, &j) in idx.iter().enumerate() {
                    out[(i, j)] += g[(i, 0)];
                }
                acc(grads, *a, out);
            }
            Op::SumAll(a) => {
                let src = &self.nodes[*a].value;
                acc(grads, *a, Array2::from_elem(src.raw_dim(), g[(0, 0)]));
            }
        }
    }
}

/// Per-node gradients from a backward pass.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of the root with respect to node `id` (None if unreachable).
    pub fn get(&self, id: NodeId) -> Option<&Array2<f64>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }
}

/// Central finite-difference gradient of `f` with respect to one parameter.
///
/// `f` must be a deterministic function of the store's current values
/// (fix any sampling noise before calling).
pub fn numeric_grad<F>(store: &mut ParamStore, id: ParamId, step: f64, mut f: F) -> Array2<f64>
where
    F: FnMut(&ParamStore) -> f64,
{
    let dim = store.value(id).raw_dim();
    let mut out = Array2::zeros(dim.clone());
    let indices: Vec<(usize, usize)> = (0..dim[0])
        .flat_map(|i| (0..dim[1]).map(move |j| (i, j)))
        .collect();
    for (i, j) in indices {
        let orig = store.value(id)[(i, j)];
        store.value_mut(id)[(i, j)] = orig + step;
        let plus = f(store);
        store.value_mut(id)[(i, j)] = orig - step;
        let minus = f(store);
        store.value_mut(id)[(i, j)] = orig;
        out[(i, j)] = (plus - minus) / (2.0 * step);
    }
    out
}

/// Worst relative disagreement between the analytic gradients currently in
/// `store` and central finite differences of `f`, across every entry of
/// every parameter. Accumulate analytic gradients before calling.
pub fn max_grad_disagreement<F>(store: &mut ParamStore, step: f64, mut f: F) -> f64
where
    F: FnMut(&ParamStore) -> f64,
{
    let analytic: Vec<Array2<f64>> = store.ids().map(|id| store.grad(id).clone()).collect();
    let mut worst = 0.0f64;
    for (k, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
        let numeric = numeric_grad(store, id, step, &mut f);
        for (a, n) in analytic[k].iter().zip(numeric.iter()) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1.0);
            worst = worst.max(rel);
        }
    }
    worst
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn gelu(x: f64) -> f64 {
    let u = (2.0 / std::f64::consts::PI).sqrt() * (x + GELU_COEF * x.powi(3));
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let u = c * (x + GELU_COEF * x.powi(3));
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * c * (1.0 + 3.0 * GELU_COEF * x * x)
}

#[cfg(test)]
mod tests;
