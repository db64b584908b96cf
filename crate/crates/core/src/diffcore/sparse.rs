use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Constant sparse matrix in compressed-row form.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets. Positions must be unique.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        for &(r, c, _) in &entries {
            if r >= n_rows || c >= n_cols {
                return Err(Error::InvalidArgument(format!(
                    "entry ({r},{c}) outside {n_rows}x{n_cols}"
                )));
            }
        }
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        if let Some(w) = entries.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::InvalidArgument(format!("duplicate entry ({},{})", w[0].0, w[0].1)));
        }
        let mut row_ptr = vec![0usize; n_rows + 1];
        for &(r, _, _) in &entries {
            row_ptr[r + 1] += 1;
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col_idx = entries.iter().map(|e| e.1).collect();
        let values = entries.iter().map(|e| e.2).collect();
        Ok(SparseMatrix { n_rows, n_cols, row_ptr, col_idx, values })
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
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

    /// Iterates `(col, value)` pairs of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(j, _)| j == c).map_or(0.0, |(_, v)| v)
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn is_symmetric(&self) -> bool {
        self.n_rows == self.n_cols && self.triplets().all(|(r, c, v)| self.get(c, r) == v)
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.n_rows, self.n_cols);
        for (r, c, v) in self.triplets() {
            t.set(r, c, v);
        }
        t
    }

    /// `self · dense`
    pub fn matmul(&self, dense: &Tensor) -> Result<Tensor> {
        if dense.rows() != self.n_cols {
            return Err(Error::shape(
                "spmm",
                format!("{}x{} times {:?}", self.n_rows, self.n_cols, dense.shape()),
            ));
        }
        let k = dense.cols();
        let mut out = Tensor::zeros(self.n_rows, k);
        let od = out.data_mut();
        for r in 0..self.n_rows {
            let dst = &mut od[r * k..(r + 1) * k];
            for (c, v) in self.row(r) {
                for (o, &x) in dst.iter_mut().zip(dense.row_slice(c)) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · dense`
    pub fn matmul_transposed(&self, dense: &Tensor) -> Result<Tensor> {
        if dense.rows() != self.n_rows {
            return Err(Error::shape(
                "spmm_t",
                format!("({}x{})^T times {:?}", self.n_rows, self.n_cols, dense.shape()),
            ));
        }
        let k = dense.cols();
        let mut out = Tensor::zeros(self.n_cols, k);
        let od = out.data_mut();
        for r in 0..self.n_rows {
            let src = dense.row_slice(r);
            for (c, v) in self.row(r) {
                for (o, &x) in od[c * k..(c + 1) * k].iter_mut().zip(src) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }
}
