//! Compressed sparse column storage.

/// Column-compressed matrix. Row indices are strictly increasing within each
/// column and explicit zeros are dropped by [`SparseMatrix::from_triplets`].
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            col_ptr: vec![0; ncols + 1],
            row_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds a canonical matrix: duplicates summed, zeros dropped, rows sorted.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut t: Vec<(usize, usize, f64)> = triplets.to_vec();
        t.sort_unstable_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
        let mut col_ptr = vec![0usize; ncols + 1];
        let mut row_idx = Vec::with_capacity(t.len());
        let mut values: Vec<f64> = Vec::with_capacity(t.len());
        let mut cols = Vec::with_capacity(t.len());
        for (r, c, v) in t {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if let (Some(&lr), Some(&lc)) = (row_idx.last(), cols.last()) {
                if lr == r && lc == c {
                    *values.last_mut().unwrap() += v;
                    continue;
                }
            }
            row_idx.push(r);
            cols.push(c);
            values.push(v);
        }
        let mut keep_rows = Vec::with_capacity(row_idx.len());
        let mut keep_vals = Vec::with_capacity(values.len());
        for ((r, c), v) in row_idx.into_iter().zip(cols).zip(values) {
            if v != 0.0 {
                keep_rows.push(r);
                keep_vals.push(v);
                col_ptr[c + 1] += 1;
            }
        }
        for c in 0..ncols {
            col_ptr[c + 1] += col_ptr[c];
        }
        Self {
            nrows,
            ncols,
            col_ptr,
            row_idx: keep_rows,
            values: keep_vals,
        }
    }

    /// Builds from per-column `(row, value)` lists that are already sorted.
    pub fn from_columns(nrows: usize, columns: Vec<Vec<(usize, f64)>>) -> Self {
        let ncols = columns.len();
        let mut col_ptr = Vec::with_capacity(ncols + 1);
        col_ptr.push(0);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for col in columns {
            for (r, v) in col {
                debug_assert!(r < nrows);
                debug_assert!(row_idx.len() == *col_ptr.last().unwrap() || *row_idx.last().unwrap() < r);
                row_idx.push(r);
                values.push(v);
            }
            col_ptr.push(row_idx.len());
        }
        Self {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut t = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                t.push((i, j, v));
            }
        }
        Self::from_triplets(nrows, ncols, &t)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(row, value)` pairs of column `j`.
    pub fn col(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        self.row_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn col_nnz(&self, j: usize) -> usize {
        self.col_ptr[j + 1] - self.col_ptr[j]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        match self.row_idx[r.clone()].binary_search(&i) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Vec::with_capacity(self.nnz());
        for j in 0..self.ncols {
            for (i, v) in self.col(j) {
                t.push((j, i, v));
            }
        }
        Self::from_triplets(self.ncols, self.nrows, &t)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for j in 0..self.ncols {
            for (i, v) in self.col(j) {
                d[i][j] = v;
            }
        }
        d
    }

    /// `y = A·x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            for (i, v) in self.col(j) {
                y[i] += v * xj;
            }
        }
        y
    }

    /// Symmetric permutation `P A Pᵀ` where `pos[v]` is the new index of `v`.
    pub fn permute_symmetric(&self, pos: &[usize]) -> Self {
        let mut t = Vec::with_capacity(self.nnz());
        for j in 0..self.ncols {
            for (i, v) in self.col(j) {
                t.push((pos[i], pos[j], v));
            }
        }
        Self::from_triplets(self.nrows, self.ncols, &t)
    }

    pub fn is_structurally_symmetric(&self) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        (0..self.ncols).all(|j| self.col(j).all(|(i, _)| self.get(j, i) != 0.0 || i == j))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}
