//! Compressed sparse row matrices with fixed structure.
//!
//! These act as constant linear operators (graph Laplacians, cell-to-region
//! selection maps); they are never differentiated through on the operator
//! side, only on the dense signal side.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from (row, col, value) triplets. Duplicates are summed.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_rows];
        for &(r, c, v) in triplets {
            if r >= n_rows || c >= n_cols {
                return Err(Error::InvalidArgument(format!(
                    "triplet ({r}, {c}) outside {n_rows}x{n_cols}"
                )));
            }
            per_row[r].push((c, v));
        }
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in &mut per_row {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for &(c, v) in row.iter() {
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(CsrMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Convert a dense rank-2 tensor, keeping entries with |v| > 0.
    pub fn from_dense(t: &Tensor) -> Result<Self> {
        if t.rank() != 2 {
            return Err(Error::InvalidArgument(format!(
                "from_dense expects rank-2, got {:?}",
                t.shape()
            )));
        }
        let (m, n) = (t.shape()[0], t.shape()[1]);
        let mut triplets = Vec::new();
        for i in 0..m {
            for j in 0..n {
                let v = t.at(i, j);
                if v != 0.0 {
                    triplets.push((i, j, v));
                }
            }
        }
        Self::from_triplets(m, n, &triplets)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi]
            .iter()
            .zip(&self.values[lo..hi])
            .map(|(&c, &v)| (c, v))
    }

    /// `self (m,p) * x (p,n) -> (m,n)` for dense `x`.
    pub fn matmul_dense(&self, x: &Tensor) -> Result<Tensor> {
        self.matmul_dense_counted(x, &mut 0)
    }

    /// Same as [`matmul_dense`](Self::matmul_dense) but adds the number of
    /// scalar multiplications performed to `mul_count`. The count is the
    /// structural cost probe: it scales with nnz, not with the dense size.
    pub fn matmul_dense_counted(&self, x: &Tensor, mul_count: &mut u64) -> Result<Tensor> {
        if x.rank() != 2 || x.shape()[0] != self.n_cols {
            return Err(Error::ShapeMismatch {
                prim: "sparse-matmul",
                detail: format!(
                    "operator is {}x{}, signal has shape {:?}",
                    self.n_rows,
                    self.n_cols,
                    x.shape()
                ),
            });
        }
        let n = x.shape()[1];
        let xd = x.data();
        let mut out = vec![0.0; self.n_rows * n];
        for i in 0..self.n_rows {
            let orow = &mut out[i * n..(i + 1) * n];
            for (j, w) in self.row(i) {
                let xrow = &xd[j * n..(j + 1) * n];
                for (o, &xv) in orow.iter_mut().zip(xrow) {
                    *o += w * xv;
                }
            }
        }
        *mul_count += (self.nnz() as u64) * (n as u64);
        Tensor::new(vec![self.n_rows, n], out)
    }

    /// `self^T (p,m) * y (m,n) -> (p,n)` for dense `y`.
    pub fn transpose_matmul_dense(&self, y: &Tensor) -> Result<Tensor> {
        if y.rank() != 2 || y.shape()[0] != self.n_rows {
            return Err(Error::ShapeMismatch {
                prim: "sparse-matmul",
                detail: format!(
                    "transposed operator is {}x{}, signal has shape {:?}",
                    self.n_cols,
                    self.n_rows,
                    y.shape()
                ),
            });
        }
        let n = y.shape()[1];
        let yd = y.data();
        let mut out = vec![0.0; self.n_cols * n];
        for i in 0..self.n_rows {
            let yrow = &yd[i * n..(i + 1) * n];
            for (j, w) in self.row(i) {
                let orow = &mut out[j * n..(j + 1) * n];
                for (o, &yv) in orow.iter_mut().zip(yrow) {
                    *o += w * yv;
                }
            }
        }
        Tensor::new(vec![self.n_cols, n], out)
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.n_rows, self.n_cols]);
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                t.set(i, j, v);
            }
        }
        t
    }
}
