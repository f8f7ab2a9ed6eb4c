//! Forward constructors: each method evaluates eagerly and records the op.

use super::{gelu, sigmoid, softplus, NodeId, Op, Tape};
use ndarray::{s, Array2, Axis};

impl Tape {
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.nodes[a].value + &self.nodes[b].value;
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.nodes[a].value - &self.nodes[b].value;
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.nodes[a].value * &self.nodes[b].value;
        self.push(v, Op::Mul(a, b))
    }

    /// Broadcast-add a 1xN row to every row of an MxN matrix.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let rv = &self.nodes[row].value;
        assert_eq!(rv.nrows(), 1, "add_row rhs must be 1xN");
        let v = &self.nodes[a].value + rv;
        self.push(v, Op::AddRow(a, row))
    }

    /// Broadcast-multiply every row of an MxN matrix by a 1xN row.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let rv = &self.nodes[row].value;
        assert_eq!(rv.nrows(), 1, "mul_row rhs must be 1xN");
        let v = &self.nodes[a].value * rv;
        self.push(v, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = &self.nodes[a].value * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = &self.nodes[a].value + c;
        self.push(v, Op::AddScalar(a))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a].value.dot(&self.nodes[b].value);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    /// Numerically stable log(1 + exp(x)).
    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(softplus);
        self.push(v, Op::Softplus(a))
    }

    /// Tanh-approximation GELU (smooth, so finite differences agree).
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    /// Clamp to [lo, hi]; gradient is zero outside the interval.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    /// Softmax over each row, with max subtraction for stability.
    pub fn row_softmax(&mut self, a: NodeId) -> NodeId {
        let x = &self.nodes[a].value;
        let mut v = x.clone();
        for mut row in v.rows_mut() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|e| (e - m).exp());
            let s: f64 = row.sum();
            row.mapv_inplace(|e| e / s);
        }
        self.push(v, Op::RowSoftmax(a))
    }

    /// Log-softmax over each row, with max subtraction for stability.
    pub fn row_log_softmax(&mut self, a: NodeId) -> NodeId {
        let x = &self.nodes[a].value;
        let mut v = x.clone();
        for mut row in v.rows_mut() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&e| (e - m).exp()).sum::<f64>().ln();
            row.mapv_inplace(|e| e - lse);
        }
        self.push(v, Op::RowLogSoftmax(a))
    }

    /// Per-row (x - mean) / sqrt(var + eps), population variance.
    pub fn row_normalize(&mut self, a: NodeId, eps: f64) -> NodeId {
        let x = &self.nodes[a].value;
        let mut v = x.clone();
        for mut row in v.rows_mut() {
            let mean = row.mean().unwrap();
            let var = row.mapv(|e| (e - mean) * (e - mean)).mean().unwrap();
            let sigma = (var + eps).sqrt();
            row.mapv_inplace(|e| (e - mean) / sigma);
        }
        self.push(v, Op::RowNormalize(a, eps))
    }

    /// Rows of `a` selected by index; duplicates allowed (embedding lookup).
    pub fn gather(&mut self, a: NodeId, ids: &[usize]) -> NodeId {
        let src = &self.nodes[a].value;
        let mut v = Array2::zeros((ids.len(), src.ncols()));
        for (i, &row_id) in ids.iter().enumerate() {
            v.row_mut(i).assign(&src.row(row_id));
        }
        self.push(v, Op::Gather(a, ids.to_vec()))
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = &self.nodes[a].value;
        let bv = &self.nodes[b].value;
        let v = ndarray::concatenate(Axis(0), &[av.view(), bv.view()]).unwrap();
        self.push(v, Op::ConcatRows(a, b))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = &self.nodes[a].value;
        let bv = &self.nodes[b].value;
        let v = ndarray::concatenate(Axis(1), &[av.view(), bv.view()]).unwrap();
        self.push(v, Op::ConcatCols(a, b))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.nodes[a].value.slice(s![start..start + len, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start, len))
    }

    /// Column `idx[i]` of row i, as an Mx1 matrix.
    pub fn select_per_row(&mut self, a: NodeId, idx: &[usize]) -> NodeId {
        let src = &self.nodes[a].value;
        assert_eq!(src.nrows(), idx.len(), "select_per_row index length");
        let mut v = Array2::zeros((idx.len(), 1));
        for (i, &j) in idx.iter().enumerate() {
            v[(i, 0)] = src[(i, j)];
        }
        self.push(v, Op::SelectPerRow(a, idx.to_vec()))
    }

    /// Sum of all entries, as a 1x1 matrix.
    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s = self.nodes[a].value.sum();
        self.push(Array2::from_elem((1, 1), s), Op::SumAll(a))
    }

    /// Mean of all entries, as a 1x1 matrix.
    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a].value.len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }
}
