//! Fill-reducing orderings.

use std::collections::{BTreeSet, HashMap};

use super::SparseMatrix;

/// Bijection between variables and elimination positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    /// `pos[v]`: position of variable `v`.
    pos: Vec<usize>,
    /// `var[p]`: variable at position `p`.
    var: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self {
            pos: (0..n).collect(),
            var: (0..n).collect(),
        }
    }

    /// Builds from an elimination sequence (`order[p]` = variable at `p`).
    ///
    /// Panics if `order` is not a permutation of `0..order.len()`.
    pub fn from_order(order: Vec<usize>) -> Self {
        let mut pos = vec![usize::MAX; order.len()];
        for (p, &v) in order.iter().enumerate() {
            assert!(pos[v] == usize::MAX, "variable {v} appears twice");
            pos[v] = p;
        }
        Self { pos, var: order }
    }

    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    pub fn pos(&self, var: usize) -> usize {
        self.pos[var]
    }

    pub fn var(&self, pos: usize) -> usize {
        self.var[pos]
    }

    pub fn positions(&self) -> &[usize] {
        &self.pos
    }

    pub fn order(&self) -> &[usize] {
        &self.var
    }

    /// Appends a new variable (index `len()`) at the last position.
    pub fn push_last(&mut self) -> usize {
        let v = self.pos.len();
        self.pos.push(v);
        self.var.push(v);
        v
    }

    pub fn is_bijection(&self) -> bool {
        let n = self.len();
        self.var.len() == n
            && self.pos.iter().all(|&p| p < n)
            && self.var.iter().enumerate().all(|(p, &v)| v < n && self.pos[v] == p)
    }
}

/// Constrained minimum-degree ordering of a structurally symmetric pattern.
///
/// Variables in `constrained_last` are ordered after every other variable.
/// Indistinguishable variables (same closed neighbourhood, same group) are
/// merged into supervariables first, so a pose's three variables stay
/// contiguous; the greedy step then eliminates the supervariable with the
/// smallest weighted external degree, ties broken by lowest index.
pub fn amd_order(pattern: &SparseMatrix, constrained_last: &[usize]) -> Permutation {
    let n = pattern.ncols();
    assert_eq!(pattern.nrows(), n, "pattern must be square");
    if n == 0 {
        return Permutation::identity(0);
    }
    let mut group = vec![0u8; n];
    for &v in constrained_last {
        group[v] = 1;
    }

    // closed neighbourhoods
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for j in 0..n {
        for (i, _) in pattern.col(j) {
            if i != j {
                adj[j].push(i);
                adj[i].push(j);
            }
        }
    }
    for (v, a) in adj.iter_mut().enumerate() {
        a.push(v);
        a.sort_unstable();
        a.dedup();
    }

    // supervariable detection
    let mut super_of = vec![usize::MAX; n];
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut seen: HashMap<(u8, &[usize]), usize> = HashMap::new();
    for v in 0..n {
        let key = (group[v], adj[v].as_slice());
        let s = *seen.entry(key).or_insert_with(|| {
            members.push(Vec::new());
            members.len() - 1
        });
        super_of[v] = s;
        members[s].push(v);
    }
    let ns = members.len();
    let weight: Vec<usize> = members.iter().map(Vec::len).collect();
    let sgroup: Vec<u8> = members.iter().map(|m| group[m[0]]).collect();
    let mut sadj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); ns];
    for v in 0..n {
        let s = super_of[v];
        for &u in &adj[v] {
            let t = super_of[u];
            if t != s {
                sadj[s].insert(t);
            }
        }
    }

    let degree = |s: usize, sadj: &[BTreeSet<usize>]| -> usize { sadj[s].iter().map(|&t| weight[t]).sum() };
    let mut deg: Vec<usize> = (0..ns).map(|s| degree(s, &sadj)).collect();
    let mut queue: BTreeSet<(u8, usize, usize)> = (0..ns).map(|s| (sgroup[s], deg[s], members[s][0])).collect();
    let first_member: Vec<usize> = members.iter().map(|m| m[0]).collect();
    let mut super_by_first: HashMap<usize, usize> = HashMap::with_capacity(ns);
    for (s, &f) in first_member.iter().enumerate() {
        super_by_first.insert(f, s);
    }
    let mut eliminated = vec![false; ns];
    let mut order = Vec::with_capacity(n);

    while let Some((_, _, first)) = queue.pop_first() {
        let s = super_by_first[&first];
        eliminated[s] = true;
        order.extend_from_slice(&members[s]);
        let nbrs: Vec<usize> = std::mem::take(&mut sadj[s]).into_iter().collect();
        for &a in &nbrs {
            sadj[a].remove(&s);
        }
        // clique on the neighbours
        for (k, &a) in nbrs.iter().enumerate() {
            for &b in &nbrs[k + 1..] {
                sadj[a].insert(b);
                sadj[b].insert(a);
            }
        }
        for &a in &nbrs {
            debug_assert!(!eliminated[a]);
            let d = degree(a, &sadj);
            if d != deg[a] {
                queue.remove(&(sgroup[a], deg[a], first_member[a]));
                deg[a] = d;
                queue.insert((sgroup[a], d, first_member[a]));
            }
        }
    }
    Permutation::from_order(order)
}

/// Nonzero count of the Cholesky factor of `P A Pᵀ` (diagonal included),
/// from a symbolic elimination.
pub fn symbolic_factor_nnz(pattern: &SparseMatrix, perm: &Permutation) -> usize {
    super::cholesky::symbolic_structure(&pattern.permute_symmetric(perm.positions()))
        .iter()
        .map(|c| c.len() + 1)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiagonal(n: usize) -> SparseMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        SparseMatrix::from_triplets(n, n, &t)
    }

    #[test]
    fn diagonal_pattern_gives_bijection() {
        let p = amd_order(&SparseMatrix::identity(7), &[]);
        assert!(p.is_bijection());
        assert_eq!(p.len(), 7);
    }

    #[test]
    fn chain_has_no_fill() {
        let n = 12;
        let a = tridiagonal(n);
        let p = amd_order(&a, &[]);
        assert!(p.is_bijection());
        // natural order on a chain is fill-free: nnz(L) = n + (n - 1)
        let natural = symbolic_factor_nnz(&a, &Permutation::identity(n));
        assert_eq!(natural, 2 * n - 1);
        assert_eq!(symbolic_factor_nnz(&a, &p), natural);
    }

    #[test]
    fn constrained_variables_are_last() {
        let n = 15;
        let a = tridiagonal(n);
        let last = [n - 3, n - 2, n - 1];
        let p = amd_order(&a, &last);
        let mut tail: Vec<usize> = p.order()[n - 3..].to_vec();
        tail.sort_unstable();
        assert_eq!(tail, last);
        // constraint in the middle of the chain
        let mid = [6, 7, 8];
        let p = amd_order(&a, &mid);
        let mut tail: Vec<usize> = p.order()[n - 3..].to_vec();
        tail.sort_unstable();
        assert_eq!(tail, mid);
    }

    #[test]
    fn pose_blocks_stay_contiguous() {
        // 4 poses in a cycle, dense 3x3 blocks
        let mut t = Vec::new();
        let pairs = [(0, 1), (1, 2), (2, 3), (3, 0)];
        for p in 0..4 {
            for a in 0..3 {
                for b in 0..3 {
                    t.push((3 * p + a, 3 * p + b, 1.0));
                }
            }
        }
        for (p, q) in pairs {
            for a in 0..3 {
                for b in 0..3 {
                    t.push((3 * p + a, 3 * q + b, 1.0));
                    t.push((3 * q + b, 3 * p + a, 1.0));
                }
            }
        }
        let m = SparseMatrix::from_triplets(12, 12, &t);
        let p = amd_order(&m, &[]);
        for chunk in p.order().chunks(3) {
            assert!(chunk.iter().all(|v| v / 3 == chunk[0] / 3));
        }
    }
}
