use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rows per rayon task in `spmv`; small matrices stay on one thread.
const SPMV_CHUNK: usize = 4096;

/// Compressed sparse row matrix with `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    symmetric: bool,
}

impl CsrMatrix {
    /// Validates raw CSR arrays. Column indices must be strictly increasing per row.
    pub fn from_raw(
        n_rows: usize,
        n_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != n_rows + 1 || row_ptr[0] != 0 {
            return Err(Error::Shape(format!(
                "row_ptr must have {} entries starting at 0",
                n_rows + 1
            )));
        }
        let nnz = row_ptr[n_rows];
        if col_idx.len() != nnz || values.len() != nnz {
            return Err(Error::Shape(format!(
                "row_ptr says nnz = {nnz}, got {} columns and {} values",
                col_idx.len(),
                values.len()
            )));
        }
        for i in 0..n_rows {
            if row_ptr[i] > row_ptr[i + 1] {
                return Err(Error::Shape(format!("row_ptr decreases at row {i}")));
            }
            let cols = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Shape(format!(
                    "columns of row {i} not strictly increasing"
                )));
            }
            if cols.last().is_some_and(|&c| c >= n_cols) {
                return Err(Error::Shape(format!("column index out of bounds in row {i}")));
            }
        }
        let mut m = Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
            symmetric: false,
        };
        m.symmetric = m.check_symmetric();
        Ok(m)
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed in input order.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|t| t.0 >= n_rows || t.1 >= n_cols) {
            return Err(Error::Shape(format!(
                "triplet ({r}, {c}) outside {n_rows}x{n_cols}"
            )));
        }
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&t| (triplets[t].0, triplets[t].1));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for t in order {
            let (r, c, v) = triplets[t];
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_ptr[r + 1] += 1;
                col_idx.push(c);
                values.push(v);
                last = Some((r, c));
            }
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self::from_raw(n_rows, n_cols, row_ptr, col_idx, values)
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut t = Vec::new();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n_cols {
                return Err(Error::Shape("ragged dense matrix".into()));
            }
            t.extend(
                r.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(j, &v)| (i, j, v)),
            );
        }
        Self::from_triplets(rows.len(), n_cols, &t)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_raw(n, n, (0..=n).collect(), (0..n).collect(), vec![1.0; n])
            .expect("identity is valid CSR")
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

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// True when the matrix is square and `A[i][j]` and `A[j][i]` are bitwise equal.
    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |p| vals[p])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols))
            .map(|i| self.get(i, i))
            .collect()
    }

    fn check_symmetric(&self) -> bool {
        if self.n_rows != self.n_cols {
            return false;
        }
        (0..self.n_rows).all(|i| {
            let (cols, vals) = self.row(i);
            cols.iter()
                .zip(vals)
                .all(|(&j, &v)| self.get(j, i).to_bits() == v.to_bits())
        })
    }

    /// `y = A x`, each row accumulated in column order.
    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_cols {
            return Err(Error::DimensionMismatch {
                expected: self.n_cols,
                got: x.len(),
            });
        }
        let mut y = vec![0.0; self.n_rows];
        self.spmv_into(x, &mut y);
        Ok(y)
    }

    /// Unchecked variant of [`spmv`](Self::spmv) writing into `y`.
    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        let row_dot = |i: usize| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum::<f64>()
        };
        if self.n_rows <= SPMV_CHUNK {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = row_dot(i);
            }
        } else {
            y.par_chunks_mut(SPMV_CHUNK)
                .enumerate()
                .for_each(|(c, chunk)| {
                    for (o, yi) in chunk.iter_mut().enumerate() {
                        *yi = row_dot(c * SPMV_CHUNK + o);
                    }
                });
        }
    }

    /// Principal submatrix on `keep` (sorted, unique), re-indexed to `0..keep.len()`.
    pub fn principal_submatrix(&self, keep: &[usize]) -> CsrMatrix {
        let mut map = vec![usize::MAX; self.n_cols];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut row_ptr = Vec::with_capacity(keep.len() + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for &i in keep {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if map[j] != usize::MAX {
                    col_idx.push(map[j]);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        let symmetric = self.symmetric;
        CsrMatrix {
            n_rows: keep.len(),
            n_cols: keep.len(),
            row_ptr,
            col_idx,
            values,
            symmetric,
        }
    }

    /// Dense copy; intended for tests and tiny matrices.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (i, row) in d.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                row[j] = v;
            }
        }
        d
    }
}
