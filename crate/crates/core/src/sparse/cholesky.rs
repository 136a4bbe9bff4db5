//! Sparse Cholesky factor with rank-1 up/downdates.
//!
//! The factor is held as `L = Rᵀ` in ordered (permuted) coordinates, one
//! dynamic column per position with the diagonal stored first. Column `k` of
//! `L` is row `k` of `R`, so `κ_k` is the stored length of column `k`.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{Permutation, SparseMatrix};
use crate::factors::LinearizedFactor;
use crate::Error;

/// Downdate pivots with `ρ² − w² ≤ DOWNDATE_EPS·ρ²` are rejected.
pub const DOWNDATE_EPS: f64 = 1e-12;

static NEXT_REVISION: AtomicU64 = AtomicU64::new(1);

fn next_revision() -> u64 {
    NEXT_REVISION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Column {
    rows: Vec<usize>,
    vals: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    perm: Permutation,
    cols: Vec<Column>,
    revision: u64,
    touched: Vec<usize>,
    work: Vec<f64>,
}

impl Default for CholeskyFactor {
    fn default() -> Self {
        Self::empty()
    }
}

impl CholeskyFactor {
    pub fn empty() -> Self {
        Self {
            perm: Permutation::identity(0),
            cols: Vec::new(),
            revision: next_revision(),
            touched: Vec::new(),
            work: Vec::new(),
        }
    }

    /// Factors `P H Pᵀ` where `H` is given in variable coordinates with both
    /// triangles stored.
    pub fn factorize(h: &SparseMatrix, perm: Permutation) -> Result<Self, Error> {
        let n = h.ncols();
        assert_eq!(h.nrows(), n);
        assert_eq!(perm.len(), n);
        let a = h.permute_symmetric(perm.positions());
        let structure = symbolic_structure(&a);

        // row_cols[i]: columns k < i with L[i, k] != 0, ascending
        let mut row_cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (k, s) in structure.iter().enumerate() {
            for &i in s {
                row_cols[i].push(k);
            }
        }
        let mut cols: Vec<Column> = Vec::with_capacity(n);
        let mut next = vec![1usize; n];
        let mut x = vec![0.0; n];
        for j in 0..n {
            for (i, v) in a.col(j) {
                if i >= j {
                    x[i] = v;
                }
            }
            for &k in &row_cols[j] {
                let col = &cols[k];
                let p = next[k];
                debug_assert_eq!(col.rows[p], j);
                let ljk = col.vals[p];
                for q in p..col.rows.len() {
                    x[col.rows[q]] -= col.vals[q] * ljk;
                }
                next[k] += 1;
            }
            let d = x[j];
            x[j] = 0.0;
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { column: j });
            }
            let ljj = d.sqrt();
            let mut rows = Vec::with_capacity(structure[j].len() + 1);
            let mut vals = Vec::with_capacity(structure[j].len() + 1);
            rows.push(j);
            vals.push(ljj);
            for &i in &structure[j] {
                rows.push(i);
                vals.push(x[i] / ljj);
                x[i] = 0.0;
            }
            cols.push(Column { rows, vals });
        }
        Ok(Self {
            perm,
            cols,
            revision: next_revision(),
            touched: Vec::new(),
            work: vec![0.0; n],
        })
    }

    pub fn dim(&self) -> usize {
        self.cols.len()
    }

    pub fn perm(&self) -> &Permutation {
        &self.perm
    }

    /// Process-wide unique stamp, renewed on every numeric or structural
    /// change.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn nnz(&self) -> usize {
        self.cols.iter().map(|c| c.rows.len()).sum()
    }

    /// `κ_k`: stored entries of column `k` of `L` (row `k` of `R`).
    pub fn col_count(&self, pos: usize) -> usize {
        self.cols[pos].rows.len()
    }

    pub fn col_counts(&self) -> Vec<usize> {
        self.cols.iter().map(|c| c.rows.len()).collect()
    }

    /// `Σ κ_k²`, the full-refactorization cost bound.
    pub fn sum_sq_counts(&self) -> u64 {
        self.cols.iter().map(|c| (c.rows.len() as u64).pow(2)).sum()
    }

    pub fn diag(&self, pos: usize) -> f64 {
        self.cols[pos].vals[0]
    }

    /// Elimination-tree parent: first off-diagonal row of column `pos`.
    pub fn parent(&self, pos: usize) -> Option<usize> {
        self.cols[pos].rows.get(1).copied()
    }

    /// `positions` together with all their elimination-tree ancestors,
    /// ascending.
    pub fn ancestor_closure(&self, positions: &[usize]) -> Vec<usize> {
        let mut mark = vec![false; self.dim()];
        let mut out = Vec::with_capacity(positions.len());
        for &p in positions {
            let mut k = Some(p);
            while let Some(j) = k {
                if mark[j] {
                    break;
                }
                mark[j] = true;
                out.push(j);
                k = self.parent(j);
            }
        }
        out.sort_unstable();
        out
    }

    /// `Σ κ` along the elimination-tree path from each column to its root,
    /// a proxy for the work of a rank-1 update entering at that column.
    pub fn path_counts(&self) -> Vec<u64> {
        let n = self.dim();
        let mut p = vec![0u64; n];
        for k in (0..n).rev() {
            p[k] = self.cols[k].rows.len() as u64 + self.parent(k).map_or(0, |j| p[j]);
        }
        p
    }

    pub fn etree(&self) -> Vec<Option<usize>> {
        (0..self.dim()).map(|k| self.parent(k)).collect()
    }

    /// `(row, value)` entries of column `pos` of `L`, diagonal first.
    pub fn column(&self, pos: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let c = &self.cols[pos];
        c.rows.iter().copied().zip(c.vals.iter().copied())
    }

    /// Positions modified by the last rank update.
    pub fn last_touched(&self) -> &[usize] {
        &self.touched
    }

    /// `η = Σ ln|ρ_k|`.
    pub fn logdet_diag(&self) -> f64 {
        self.cols.iter().map(|c| c.vals[0].abs().ln()).sum()
    }

    /// Appends `count` variables at the end of the ordering with empty columns.
    pub fn extend(&mut self, count: usize) {
        for _ in 0..count {
            let p = self.perm.push_last();
            self.cols.push(Column {
                rows: vec![p],
                vals: vec![0.0],
            });
            self.work.push(0.0);
        }
        self.revision = next_revision();
    }

    /// `R` (upper triangular) in ordered coordinates.
    pub fn to_upper(&self) -> SparseMatrix {
        let mut t = Vec::with_capacity(self.nnz());
        for (k, c) in self.cols.iter().enumerate() {
            for (&i, &v) in c.rows.iter().zip(&c.vals) {
                t.push((k, i, v));
            }
        }
        SparseMatrix::from_triplets(self.dim(), self.dim(), &t)
    }

    /// `L = Rᵀ` in ordered coordinates.
    pub fn to_lower(&self) -> SparseMatrix {
        SparseMatrix::from_columns(
            self.dim(),
            self.cols
                .iter()
                .map(|c| c.rows.iter().copied().zip(c.vals.iter().copied()).collect())
                .collect(),
        )
    }

    /// `RᵀR` mapped back to variable coordinates.
    pub fn reconstruct(&self) -> SparseMatrix {
        let mut t = Vec::new();
        for c in &self.cols {
            for (&i, &vi) in c.rows.iter().zip(&c.vals) {
                for (&j, &vj) in c.rows.iter().zip(&c.vals) {
                    t.push((self.perm.var(i), self.perm.var(j), vi * vj));
                }
            }
        }
        SparseMatrix::from_triplets(self.dim(), self.dim(), &t)
    }

    /// `‖RᵀR − P H Pᵀ‖_F / ‖H‖_F`.
    pub fn reconstruction_error(&self, h: &SparseMatrix) -> f64 {
        let r = self.reconstruct();
        let n = self.dim();
        let mut t: Vec<(usize, usize, f64)> = Vec::with_capacity(r.nnz() + h.nnz());
        for j in 0..n {
            t.extend(r.col(j).map(|(i, v)| (i, j, v)));
            t.extend(h.col(j).map(|(i, v)| (i, j, -v)));
        }
        let diff = SparseMatrix::from_triplets(n, n, &t);
        let norm = h.frobenius_norm();
        if norm == 0.0 {
            diff.frobenius_norm()
        } else {
            diff.frobenius_norm() / norm
        }
    }

    /// `RᵀR ± wwᵀ` with `w` given as `(variable, value)` pairs.
    pub fn rank_update(&mut self, w: &[(usize, f64)], sign: Sign) -> Result<(), Error> {
        self.touched.clear();
        let mut support = BTreeSet::new();
        for &(var, v) in w {
            if v != 0.0 {
                let p = self.perm.pos(var);
                self.work[p] += v;
                support.insert(p);
            }
        }
        self.revision = next_revision();
        let mut backup: Vec<(usize, Column)> = Vec::new();
        while let Some(k) = support.pop_first() {
            let wk = std::mem::take(&mut self.work[k]);
            if wk == 0.0 {
                continue;
            }
            if sign == Sign::Minus {
                backup.push((k, self.cols[k].clone()));
            }
            self.touched.push(k);
            let col = &mut self.cols[k];
            merge_pattern(col, &support);

            let a = col.vals[0];
            match sign {
                Sign::Plus => {
                    let r = a.hypot(wk);
                    let (c, s) = (a / r, wk / r);
                    col.vals[0] = r;
                    for idx in 1..col.rows.len() {
                        let i = col.rows[idx];
                        let (l, wi) = (col.vals[idx], self.work[i]);
                        col.vals[idx] = c * l + s * wi;
                        self.work[i] = c * wi - s * l;
                        support.insert(i);
                    }
                }
                Sign::Minus => {
                    let d = a * a - wk * wk;
                    if !(a > 0.0) || d <= DOWNDATE_EPS * a * a {
                        for i in support {
                            self.work[i] = 0.0;
                        }
                        for (p, c) in backup.into_iter().rev() {
                            self.cols[p] = c;
                        }
                        return Err(Error::DowndateBreaksSPD { column: k });
                    }
                    let r = d.sqrt();
                    let (c, s) = (r / a, wk / a);
                    col.vals[0] = r;
                    for idx in 1..col.rows.len() {
                        let i = col.rows[idx];
                        let (l, wi) = (col.vals[idx], self.work[i]);
                        let nl = (l - s * wi) / c;
                        col.vals[idx] = nl;
                        self.work[i] = c * wi - s * nl;
                        support.insert(i);
                    }
                }
            }
        }
        Ok(())
    }

    /// Appends whitened rows: `RᵀR += AᵀA`, `b += Aᵀr`. `b` is in variable
    /// coordinates.
    pub fn add_rows(&mut self, b: &mut [f64], facs: &[LinearizedFactor]) -> Result<(), Error> {
        let mut touched = Vec::new();
        for f in facs {
            for k in 0..f.dim {
                let w: Vec<(usize, f64)> = f.row_entries(k).collect();
                self.rank_update(&w, Sign::Plus)?;
                touched.extend_from_slice(&self.touched);
                for &(var, v) in &w {
                    b[var] += v * f.resid[k];
                }
            }
        }
        self.touched = touched;
        Ok(())
    }

    /// Removes previously added rows: `RᵀR −= AᵀA`, `b −= Aᵀr`. On failure
    /// the factor and `b` are left as they were.
    pub fn remove_rows(&mut self, b: &mut [f64], facs: &[LinearizedFactor]) -> Result<(), Error> {
        let mut done: Vec<Vec<(usize, f64)>> = Vec::new();
        let mut touched = Vec::new();
        for f in facs {
            for k in 0..f.dim {
                let w: Vec<(usize, f64)> = f.row_entries(k).collect();
                if let Err(e) = self.rank_update(&w, Sign::Minus) {
                    for w in done.iter().rev() {
                        self.rank_update(w, Sign::Plus)?;
                    }
                    self.touched.clear();
                    return Err(e);
                }
                touched.extend_from_slice(&self.touched);
                done.push(w);
            }
        }
        for f in facs {
            for k in 0..f.dim {
                for (var, v) in f.row_entries(k) {
                    b[var] -= v * f.resid[k];
                }
            }
        }
        self.touched = touched;
        Ok(())
    }
}

/// Adds every row of `support` missing from `col` (all rows in `support`
/// are below the diagonal).
fn merge_pattern(col: &mut Column, support: &BTreeSet<usize>) {
    if support.is_empty() {
        return;
    }
    let missing = support.iter().filter(|i| col.rows[1..].binary_search(i).is_err()).count();
    if missing == 0 {
        return;
    }
    let mut rows = Vec::with_capacity(col.rows.len() + missing);
    let mut vals = Vec::with_capacity(col.rows.len() + missing);
    rows.push(col.rows[0]);
    vals.push(col.vals[0]);
    let mut it = support.iter().copied().peekable();
    for idx in 1..col.rows.len() {
        let r = col.rows[idx];
        while let Some(&s) = it.peek() {
            if s < r {
                rows.push(s);
                vals.push(0.0);
                it.next();
            } else {
                if s == r {
                    it.next();
                }
                break;
            }
        }
        rows.push(r);
        vals.push(col.vals[idx]);
    }
    for s in it {
        rows.push(s);
        vals.push(0.0);
    }
    col.rows = rows;
    col.vals = vals;
}

/// Strictly-lower row structure of each column of the Cholesky factor of a
/// symmetric matrix (ordered coordinates).
pub fn symbolic_structure(a: &SparseMatrix) -> Vec<Vec<usize>> {
    let n = a.ncols();
    let mut structure: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut stamp = vec![usize::MAX; n];
    for j in 0..n {
        let mut s = Vec::new();
        stamp[j] = j;
        for (i, _) in a.col(j) {
            if i > j && stamp[i] != j {
                stamp[i] = j;
                s.push(i);
            }
        }
        for &c in &children[j] {
            for &i in &structure[c] {
                if i > j && stamp[i] != j {
                    stamp[i] = j;
                    s.push(i);
                }
            }
        }
        s.sort_unstable();
        if let Some(&p) = s.first() {
            children[p].push(j);
        }
        structure.push(s);
    }
    structure
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_chol(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = a.len();
        let mut l = vec![vec![0.0; n]; n];
        for j in 0..n {
            let mut d = a[j][j];
            for k in 0..j {
                d -= l[j][k] * l[j][k];
            }
            l[j][j] = d.sqrt();
            for i in j + 1..n {
                let mut v = a[i][j];
                for k in 0..j {
                    v -= l[i][k] * l[j][k];
                }
                l[i][j] = v / l[j][j];
            }
        }
        l
    }

    #[test]
    fn identity_factor() {
        let f = CholeskyFactor::factorize(&SparseMatrix::identity(5), Permutation::identity(5)).unwrap();
        assert!(f.col_counts().iter().all(|&k| k == 1));
        assert!((0..5).all(|k| f.diag(k) == 1.0));
        assert_eq!(f.logdet_diag(), 0.0);
    }

    #[test]
    fn two_by_two() {
        let h = SparseMatrix::from_dense(&[vec![4.0, 2.0], vec![2.0, 3.0]]);
        let f = CholeskyFactor::factorize(&h, Permutation::identity(2)).unwrap();
        let r = f.to_upper().to_dense();
        assert_eq!(r[0][0], 2.0);
        assert_eq!(r[0][1], 1.0);
        assert_eq!(r[1][0], 0.0);
        assert!((r[1][1] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(f.parent(0), Some(1));
        assert_eq!(f.parent(1), None);
    }

    #[test]
    fn matches_dense_under_permutation() {
        let d = vec![
            vec![6.0, 1.0, 0.0, 2.0],
            vec![1.0, 5.0, 1.0, 0.0],
            vec![0.0, 1.0, 4.0, 1.0],
            vec![2.0, 0.0, 1.0, 7.0],
        ];
        let h = SparseMatrix::from_dense(&d);
        let perm = Permutation::from_order(vec![2, 0, 3, 1]);
        let f = CholeskyFactor::factorize(&h, perm.clone()).unwrap();
        let pd = h.permute_symmetric(perm.positions()).to_dense();
        let l = dense_chol(&pd);
        let lf = f.to_lower().to_dense();
        for i in 0..4 {
            for j in 0..4 {
                assert!((l[i][j] - lf[i][j]).abs() < 1e-12);
            }
        }
        assert!(f.reconstruction_error(&h) < 1e-14);
    }

    #[test]
    fn indefinite_is_rejected() {
        let h = SparseMatrix::from_dense(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(matches!(
            CholeskyFactor::factorize(&h, Permutation::identity(2)),
            Err(Error::NotPositiveDefinite { column: 1 })
        ));
    }

    #[test]
    fn single_entry_update() {
        let mut f = CholeskyFactor::factorize(&SparseMatrix::identity(3), Permutation::identity(3)).unwrap();
        f.rank_update(&[(0, 1.0)], Sign::Plus).unwrap();
        assert!((f.diag(0) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(f.diag(1), 1.0);
        assert_eq!(f.diag(2), 1.0);
        assert_eq!(f.nnz(), 3);
    }

    #[test]
    fn update_creates_fill_and_downdate_restores() {
        let mut f = CholeskyFactor::factorize(&SparseMatrix::identity(4), Permutation::identity(4)).unwrap();
        let w = [(0, 0.5), (3, -1.5)];
        f.rank_update(&w, Sign::Plus).unwrap();
        assert_eq!(f.parent(0), Some(3));
        assert_eq!(f.last_touched(), &[0, 3]);
        f.rank_update(&w, Sign::Minus).unwrap();
        let l = f.to_lower().to_dense();
        for i in 0..4 {
            for j in 0..4 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((l[i][j] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn failed_downdate_leaves_factor_intact() {
        let mut f = CholeskyFactor::factorize(&SparseMatrix::identity(3), Permutation::identity(3)).unwrap();
        f.rank_update(&[(0, 1.0), (1, 1.0)], Sign::Plus).unwrap();
        let before = f.to_lower();
        let err = f.rank_update(&[(0, 1.0), (1, 2.0)], Sign::Minus).unwrap_err();
        assert!(matches!(err, Error::DowndateBreaksSPD { .. }));
        assert_eq!(f.to_lower(), before);
        f.rank_update(&[(2, 0.5)], Sign::Plus).unwrap();
        assert_eq!(f.last_touched(), &[2]);
    }

    #[test]
    fn extend_then_update_fills_fresh_columns() {
        let mut f = CholeskyFactor::empty();
        f.extend(2);
        f.rank_update(&[(0, 1.0), (1, 2.0)], Sign::Plus).unwrap();
        f.rank_update(&[(1, 3.0)], Sign::Plus).unwrap();
        let h = SparseMatrix::from_dense(&[vec![1.0, 2.0], vec![2.0, 13.0]]);
        assert!(f.reconstruction_error(&h) < 1e-15);
        assert!(f.diag(0) > 0.0 && f.diag(1) > 0.0);
    }
}
