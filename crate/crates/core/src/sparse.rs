//! Constant sparse row operators.
//!
//! Graph propagation, pooling and view-to-base scatter are all linear maps
//! `out = S * x` with a fixed sparse `S`. They are stored once in CSR form
//! and applied on the tape with gradient `S^T * g`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct RowOperator {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl RowOperator {
    /// Builds from per-row `(column, weight)` lists. Duplicate columns in a
    /// row are summed.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut entries in rows.iter().cloned() {
            entries.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, w) in entries {
                if c >= cols {
                    return Err(Error::shape(format!("column {c} out of range {cols}")));
                }
                if last == Some(c) {
                    *values.last_mut().expect("previous entry") += w;
                } else {
                    col_idx.push(c);
                    values.push(w);
                    last = Some(c);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Row-selection operator: `out[i] = x[index[i]]`.
    pub fn gather(index: &[usize], cols: usize) -> Result<Self> {
        Self::from_rows(cols, index.iter().map(|&i| vec![(i, 1.0)]).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (xr, d) = x.dims();
        if xr != self.cols {
            return Err(Error::shape(format!(
                "row operator {}x{} applied to {xr}x{d}",
                self.rows, self.cols
            )));
        }
        let xs = x.data();
        let mut out = vec![0.0; self.rows * d];
        for r in 0..self.rows {
            let dst = &mut out[r * d..(r + 1) * d];
            for (c, w) in self.row_entries(r) {
                let src = &xs[c * d..(c + 1) * d];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        Ok(Tensor::matrix(self.rows, d, out))
    }

    /// `acc += S^T * g` where `g` is `rows x d` and `acc` is `cols x d`.
    pub(crate) fn apply_transpose_into(&self, g: &[f64], d: usize, acc: &mut [f64]) {
        for r in 0..self.rows {
            let src = &g[r * d..(r + 1) * d];
            for (c, w) in self.row_entries(r) {
                let dst = &mut acc[c * d..(c + 1) * d];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.rows.max(1), self.cols.max(1));
        for r in 0..self.rows {
            for (c, w) in self.row_entries(r) {
                t.set(r, c, t.get(r, c) + w);
            }
        }
        t
    }
}
