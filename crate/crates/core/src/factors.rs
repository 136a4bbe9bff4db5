//! Residuals, Jacobians and whitening for each edge kind.
//!
//! Convention: the residual is `prediction ⊖ measurement` and the Jacobian is
//! `∂r/∂x`, so a Gauss-Newton step `d` solving `JᵀJ d = Jᵀr` is applied as
//! `x ← x − d`. For a relative-pose edge the residual is the tangent vector of
//! `meas⁻¹ ∘ (xᵢ⁻¹ ∘ xⱼ)`: the translation error lives in the measurement
//! frame and the angle error is wrapped into `(-pi, pi]`.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use crate::pose_graph::{normalize_angle, Edge, EdgeKind, NodeId, Pose2, POSE_DIM};
use crate::sparse::SparseMatrix;
use crate::Error;

/// Maximum rows per factor (relative pose and anchor).
pub const MAX_ROWS: usize = 3;
/// Maximum Jacobian columns per factor (two poses).
pub const MAX_COLS: usize = 2 * POSE_DIM;

/// Whitened linearization of one edge: `rows = W·J`, `resid = W·r` with
/// `WᵀW = info`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedFactor {
    pub edge_index: usize,
    /// Endpoint nodes; Jacobian columns `3k..3k+3` belong to `nodes[k]`.
    pub nodes: Vec<NodeId>,
    pub dim: usize,
    pub rows: [[f64; MAX_COLS]; MAX_ROWS],
    pub resid: [f64; MAX_ROWS],
}

impl LinearizedFactor {
    pub fn num_cols(&self) -> usize {
        POSE_DIM * self.nodes.len()
    }

    /// Global scalar variable index of Jacobian column `c`.
    pub fn var_of_col(&self, c: usize) -> usize {
        self.nodes[c / POSE_DIM].first_var() + c % POSE_DIM
    }

    /// `½‖W r‖²`.
    pub fn cost(&self) -> f64 {
        0.5 * self.resid[..self.dim].iter().map(|r| r * r).sum::<f64>()
    }

    /// Row `k` as `(variable, value)` pairs, zeros included.
    pub fn row_entries(&self, k: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.num_cols()).map(move |c| (self.var_of_col(c), self.rows[k][c]))
    }
}

/// Upper-triangular `W` with `WᵀW = info`.
pub fn whitening3(info: &Matrix3<f64>) -> Result<Matrix3<f64>, Error> {
    info.cholesky()
        .map(|c| c.l().transpose())
        .ok_or(Error::InvalidInformation("whitening Cholesky failed"))
}

pub fn whitening2(info: &Matrix2<f64>) -> Result<Matrix2<f64>, Error> {
    info.cholesky()
        .map(|c| c.l().transpose())
        .ok_or(Error::InvalidInformation("whitening Cholesky failed"))
}

/// Raw (unwhitened) relative-pose residual.
pub fn relpose_residual(xi: &Pose2, xj: &Pose2, meas: &Pose2) -> Vector3<f64> {
    let pred = xi.between(xj);
    let (sm, cm) = meas.theta.sin_cos();
    let dx = pred.x - meas.x;
    let dy = pred.y - meas.y;
    Vector3::new(
        cm * dx + sm * dy,
        -sm * dx + cm * dy,
        normalize_angle(pred.theta - meas.theta),
    )
}

/// Raw residual and Jacobians `(∂r/∂xᵢ, ∂r/∂xⱼ)`.
pub fn relpose_jacobians(
    xi: &Pose2,
    xj: &Pose2,
    meas: &Pose2,
) -> (Vector3<f64>, Matrix3<f64>, Matrix3<f64>) {
    let r = relpose_residual(xi, xj, meas);
    let (si, ci) = xi.theta.sin_cos();
    let (sm, cm) = meas.theta.sin_cos();
    let dx = xj.x - xi.x;
    let dy = xj.y - xi.y;
    // Rmᵀ·Riᵀ
    let rmt = Matrix2::new(cm, sm, -sm, cm);
    let rit = Matrix2::new(ci, si, -si, ci);
    let a = rmt * rit;
    // ∂(Riᵀ·Δt)/∂θi
    let dri = Vector2::new(-si * dx + ci * dy, -ci * dx - si * dy);
    let dth = rmt * dri;

    let ji = Matrix3::new(
        -a[(0, 0)], -a[(0, 1)], dth[0],
        -a[(1, 0)], -a[(1, 1)], dth[1],
        0.0, 0.0, -1.0,
    );
    let jj = Matrix3::new(
        a[(0, 0)], a[(0, 1)], 0.0,
        a[(1, 0)], a[(1, 1)], 0.0,
        0.0, 0.0, 1.0,
    );
    (r, ji, jj)
}

fn pose_of<'a>(poses: &'a [Pose2], n: NodeId) -> Result<&'a Pose2, Error> {
    poses.get(n.0).ok_or(Error::UnknownNode(n))
}

/// Linearizes a relative-pose edge at `(xi, xj)`.
pub fn linearize_relpose(
    xi: &Pose2,
    xj: &Pose2,
    edge: &Edge,
    edge_index: usize,
) -> Result<LinearizedFactor, Error> {
    let EdgeKind::RelativePose2 {
        from,
        to,
        meas,
        info,
    } = &edge.kind
    else {
        return Err(Error::WrongEdgeKind("relative pose"));
    };
    let w = whitening3(info)?;
    let (r, ji, jj) = relpose_jacobians(xi, xj, meas);
    let wr = w * r;
    let wji = w * ji;
    let wjj = w * jj;
    let mut rows = [[0.0; MAX_COLS]; MAX_ROWS];
    for (k, row) in rows.iter_mut().enumerate() {
        for c in 0..3 {
            row[c] = wji[(k, c)];
            row[3 + c] = wjj[(k, c)];
        }
    }
    Ok(LinearizedFactor {
        edge_index,
        nodes: vec![*from, *to],
        dim: 3,
        rows,
        resid: [wr[0], wr[1], wr[2]],
    })
}

/// Linearizes a position or anchor prior at `x`.
pub fn linearize_prior(x: &Pose2, edge: &Edge, edge_index: usize) -> Result<LinearizedFactor, Error> {
    let mut rows = [[0.0; MAX_COLS]; MAX_ROWS];
    match &edge.kind {
        EdgeKind::PositionPrior2 { node, meas, info } => {
            let w = whitening2(info)?;
            let r = w * Vector2::new(x.x - meas[0], x.y - meas[1]);
            for k in 0..2 {
                for c in 0..2 {
                    rows[k][c] = w[(k, c)];
                }
            }
            Ok(LinearizedFactor {
                edge_index,
                nodes: vec![*node],
                dim: 2,
                rows,
                resid: [r[0], r[1], 0.0],
            })
        }
        EdgeKind::AnchorPrior2 { node, meas, info } => {
            let w = whitening3(info)?;
            let r = w * anchor_residual(x, meas);
            for k in 0..3 {
                for c in 0..3 {
                    rows[k][c] = w[(k, c)];
                }
            }
            Ok(LinearizedFactor {
                edge_index,
                nodes: vec![*node],
                dim: 3,
                rows,
                resid: [r[0], r[1], r[2]],
            })
        }
        EdgeKind::RelativePose2 { .. } => Err(Error::WrongEdgeKind("prior")),
    }
}

fn anchor_residual(x: &Pose2, meas: &Pose2) -> Vector3<f64> {
    Vector3::new(x.x - meas.x, x.y - meas.y, normalize_angle(x.theta - meas.theta))
}

/// Linearizes any edge against the full pose vector.
pub fn linearize(edge: &Edge, edge_index: usize, poses: &[Pose2]) -> Result<LinearizedFactor, Error> {
    match &edge.kind {
        EdgeKind::RelativePose2 { from, to, .. } => {
            linearize_relpose(pose_of(poses, *from)?, pose_of(poses, *to)?, edge, edge_index)
        }
        EdgeKind::PositionPrior2 { node, .. } | EdgeKind::AnchorPrior2 { node, .. } => {
            linearize_prior(pose_of(poses, *node)?, edge, edge_index)
        }
    }
}

/// Mahalanobis cost `½ rᵀ·info·r` of one edge.
pub fn edge_cost(edge: &Edge, poses: &[Pose2]) -> f64 {
    match &edge.kind {
        EdgeKind::RelativePose2 {
            from,
            to,
            meas,
            info,
        } => {
            let r = relpose_residual(&poses[from.0], &poses[to.0], meas);
            0.5 * r.dot(&(info * r))
        }
        EdgeKind::PositionPrior2 { node, meas, info } => {
            let x = &poses[node.0];
            let r = Vector2::new(x.x - meas[0], x.y - meas[1]);
            0.5 * r.dot(&(info * r))
        }
        EdgeKind::AnchorPrior2 { node, meas, info } => {
            let r = anchor_residual(&poses[node.0], meas);
            0.5 * r.dot(&(info * r))
        }
    }
}

/// `c(x) = ½ Σ ‖rⱼ‖²_Σⱼ` over all edges.
pub fn total_cost(edges: &[Edge], poses: &[Pose2]) -> f64 {
    edges.iter().map(|e| edge_cost(e, poses)).sum()
}

/// Cost of the subset of edges listed in `edge_indices`.
pub fn partial_cost(edges: &[Edge], edge_indices: &[usize], poses: &[Pose2]) -> f64 {
    edge_indices.iter().map(|&e| edge_cost(&edges[e], poses)).sum()
}

/// `Jᵀr` accumulated from linearized factors into a dense vector of length
/// `n_vars`.
pub fn gradient(factors: &[LinearizedFactor], n_vars: usize) -> Vec<f64> {
    let mut g = vec![0.0; n_vars];
    for f in factors {
        for k in 0..f.dim {
            for (v, a) in f.row_entries(k) {
                g[v] += a * f.resid[k];
            }
        }
    }
    g
}

/// Normal equations `H = Σ AᵀA` (both triangles) and `b = Σ Aᵀr`.
pub fn assemble_normal_equations<'a, I>(factors: I, n_vars: usize) -> (SparseMatrix, Vec<f64>)
where
    I: IntoIterator<Item = &'a LinearizedFactor>,
{
    let mut t = Vec::new();
    let mut b = vec![0.0; n_vars];
    for f in factors {
        let nc = f.num_cols();
        for k in 0..f.dim {
            let row = &f.rows[k];
            for c in 0..nc {
                let vc = f.var_of_col(c);
                b[vc] += row[c] * f.resid[k];
                if row[c] == 0.0 {
                    continue;
                }
                for c2 in 0..nc {
                    if row[c2] != 0.0 {
                        t.push((f.var_of_col(c2), vc, row[c2] * row[c]));
                    }
                }
            }
        }
    }
    (SparseMatrix::from_triplets(n_vars, n_vars, &t), b)
}
