//! Full and partial (static/dynamic block) triangular solves.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::CholeskyFactor;
use crate::pose_graph::{NodeId, POSE_DIM};
use crate::Error;

/// Sorted set of scalar variables, closed under pose blocks.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActiveSet {
    vars: Vec<usize>,
}

impl ActiveSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn all(n_vars: usize) -> Self {
        Self {
            vars: (0..n_vars).collect(),
        }
    }

    pub fn from_nodes<I: IntoIterator<Item = NodeId>>(nodes: I) -> Self {
        let mut vars: Vec<usize> = nodes.into_iter().flat_map(NodeId::vars).collect();
        vars.sort_unstable();
        vars.dedup();
        Self { vars }
    }

    /// Block closure of an arbitrary variable list.
    pub fn closure_of<I: IntoIterator<Item = usize>>(vars: I) -> Self {
        Self::from_nodes(vars.into_iter().map(|v| NodeId(v / POSE_DIM)))
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn vars(&self) -> &[usize] {
        &self.vars
    }

    pub fn contains(&self, var: usize) -> bool {
        self.vars.binary_search(&var).is_ok()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.vars.chunks(POSE_DIM).map(|c| NodeId(c[0] / POSE_DIM))
    }

    pub fn is_block_closed(&self) -> bool {
        self.vars.len() % POSE_DIM == 0
            && self
                .vars
                .chunks(POSE_DIM)
                .all(|c| c[0] % POSE_DIM == 0 && c.iter().enumerate().all(|(k, &v)| v == c[0] + k))
    }

    pub fn union(&self, other: &ActiveSet) -> ActiveSet {
        let mut vars = self.vars.clone();
        vars.extend_from_slice(&other.vars);
        vars.sort_unstable();
        vars.dedup();
        ActiveSet { vars }
    }

    fn membership_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.vars.hash(&mut h);
        h.finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct CacheKey {
    increment: u64,
    u_hash: u64,
    revision: u64,
}

/// Holds the static-block correction `R_USᵀ y_U` (with `R_UUᵀ y_U = b_U`)
/// for reuse while the increment, `U` and the factor are unchanged.
#[derive(Debug, Clone, Default)]
pub struct StaticBlockCache {
    key: Option<CacheKey>,
    correction: Vec<f64>,
    hits: u64,
    misses: u64,
}

impl StaticBlockCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn invalidate(&mut self) {
        self.key = None;
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }
}

/// Solves `RᵀR d = b`. `b` and `d` are in variable coordinates.
pub fn full_solve(f: &CholeskyFactor, b: &[f64]) -> Vec<f64> {
    let s = ActiveSet::all(f.dim());
    block_solve(f, b, &s, None, false).expect("factor diagonal must be positive")
}

/// Factor columns a partial solve over `s` works on: the positions of `s`
/// and their elimination-tree ancestors. No entry of `R` links a row of
/// this set to a column outside it, so it forms the trailing block of a
/// symmetric permutation of `R`.
pub fn solve_columns(f: &CholeskyFactor, s: &ActiveSet) -> Vec<usize> {
    let perm = f.perm();
    let sp: Vec<usize> = s.vars().iter().map(|&v| perm.pos(v)).collect();
    f.ancestor_closure(&sp)
}

/// Block solve with `S` the [`solve_columns`] of `s` and `U` the rest:
/// `R_UUᵀ y_U = b_U`, then `R_SSᵀ R_SS d_S = b_S − R_USᵀ y_U`. Returns the
/// entries for `s.vars()`, which equal those of [`full_solve`].
pub fn partial_solve(
    f: &CholeskyFactor,
    b: &[f64],
    s: &ActiveSet,
    increment: u64,
    cache: &mut StaticBlockCache,
) -> Result<Vec<f64>, Error> {
    block_solve(f, b, s, Some((increment, cache)), false)
}

/// [`partial_solve`] without the static-block correction and without the
/// ancestor closure. Only useful to check that validation catches a broken
/// solver.
#[doc(hidden)]
pub fn partial_solve_uncorrected(f: &CholeskyFactor, b: &[f64], s: &ActiveSet) -> Result<Vec<f64>, Error> {
    block_solve(f, b, s, None, true)
}

fn block_solve(
    f: &CholeskyFactor,
    b: &[f64],
    s: &ActiveSet,
    cache: Option<(u64, &mut StaticBlockCache)>,
    skip_correction: bool,
) -> Result<Vec<f64>, Error> {
    let n = f.dim();
    assert_eq!(b.len(), n, "rhs dimension mismatch");
    let perm = f.perm();
    let mut in_s = vec![false; n];
    let sp = if skip_correction {
        let mut sp: Vec<usize> = s.vars().iter().map(|&v| perm.pos(v)).collect();
        sp.sort_unstable();
        sp
    } else {
        solve_columns(f, s)
    };
    for &p in &sp {
        in_s[p] = true;
    }

    // t starts as b in ordered coordinates
    let mut t = vec![0.0; n];
    for (v, &bv) in b.iter().enumerate() {
        t[perm.pos(v)] = bv;
    }

    if sp.len() < n && !skip_correction {
        let key = CacheKey {
            increment: cache.as_ref().map_or(0, |c| c.0),
            u_hash: s.membership_hash(),
            revision: f.revision(),
        };
        let cached = match cache {
            Some((_, c)) if c.key == Some(key) => {
                c.hits += 1;
                Some(c.correction.clone())
            }
            Some((_, c)) => {
                c.misses += 1;
                let corr = static_correction(f, &t, &in_s, &sp);
                c.key = Some(key);
                c.correction = corr.clone();
                Some(corr)
            }
            None => None,
        };
        let corr = cached.unwrap_or_else(|| static_correction(f, &t, &in_s, &sp));
        for (k, &p) in sp.iter().enumerate() {
            t[p] -= corr[k];
        }
    }

    // R_SSᵀ z = rhs_S
    for &k in &sp {
        let mut col = f.column(k);
        let (_, d) = col.next().unwrap();
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::SBlockNotPositiveDefinite { column: k });
        }
        let z = t[k] / d;
        t[k] = z;
        for (i, v) in col {
            if in_s[i] {
                t[i] -= v * z;
            }
        }
    }
    // R_SS d_S = z
    for &k in sp.iter().rev() {
        let mut col = f.column(k);
        let (_, d) = col.next().unwrap();
        let mut acc = t[k];
        for (i, v) in col {
            if in_s[i] {
                acc -= v * t[i];
            }
        }
        t[k] = acc / d;
    }
    Ok(s.vars().iter().map(|&v| t[perm.pos(v)]).collect())
}

/// `R_USᵀ y_U` aligned with `sp`, where `R_UUᵀ y_U = b_U`.
fn static_correction(f: &CholeskyFactor, b_ordered: &[f64], in_s: &[bool], sp: &[usize]) -> Vec<f64> {
    let n = f.dim();
    let mut t = b_ordered.to_vec();
    let mut corr = vec![0.0; n];
    for k in 0..n {
        if in_s[k] {
            continue;
        }
        let mut col = f.column(k);
        let (_, d) = col.next().unwrap();
        let y = t[k] / d;
        if y == 0.0 {
            continue;
        }
        for (i, v) in col {
            if in_s[i] {
                corr[i] += v * y;
            } else {
                t[i] -= v * y;
            }
        }
    }
    sp.iter().map(|&p| corr[p]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::{Permutation, SparseMatrix};

    #[test]
    fn identity_solve() {
        let f = CholeskyFactor::factorize(&SparseMatrix::identity(4), Permutation::identity(4)).unwrap();
        let b = [1.0, -2.0, 3.0, 0.5];
        assert_eq!(full_solve(&f, &b), b.to_vec());
    }

    #[test]
    fn two_by_two_solve() {
        let h = SparseMatrix::from_dense(&[vec![4.0, 2.0], vec![2.0, 3.0]]);
        let f = CholeskyFactor::factorize(&h, Permutation::identity(2)).unwrap();
        let d = full_solve(&f, &[2.0, 3.0]);
        assert!(d[0].abs() < 1e-15);
        assert!((d[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn active_set_closure() {
        let s = ActiveSet::closure_of([4, 10]);
        assert_eq!(s.vars(), &[3, 4, 5, 9, 10, 11]);
        assert!(s.is_block_closed());
        assert_eq!(s.nodes().collect::<Vec<_>>(), vec![NodeId(1), NodeId(3)]);
        let t = ActiveSet { vars: vec![0, 1] };
        assert!(!t.is_block_closed());
    }

    #[test]
    fn cache_hits_only_for_same_state() {
        let h = SparseMatrix::from_dense(&[
            vec![4.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            vec![1.0, 4.0, 1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 4.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 4.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0, 4.0, 1.0],
            vec![0.0, 0.0, 0.0, 0.0, 1.0, 4.0],
        ]);
        let mut f = CholeskyFactor::factorize(&h, Permutation::identity(6)).unwrap();
        let b = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let s = ActiveSet::all(6);
        let s_half = ActiveSet { vars: vec![3, 4, 5] };
        let mut cache = StaticBlockCache::new();
        let d1 = partial_solve(&f, &b, &s_half, 1, &mut cache).unwrap();
        let d2 = partial_solve(&f, &b, &s_half, 1, &mut cache).unwrap();
        assert_eq!(d1, d2);
        assert_eq!((cache.hits(), cache.misses()), (1, 1));
        f.rank_update(&[(0, 1.0)], crate::sparse::Sign::Plus).unwrap();
        partial_solve(&f, &b, &s_half, 1, &mut cache).unwrap();
        assert_eq!(cache.misses(), 2);
        let full = partial_solve(&f, &b, &s, 1, &mut cache).unwrap();
        assert_eq!(full, full_solve(&f, &b));
    }
}
