//! SE(2) pose algebra and the factor-graph data model.
//!
//! Every pose occupies three consecutive scalar variables `(x, y, theta)`, so
//! node `n` owns variables `3n..3n+3` and a graph with `P` poses has `N = 3P`
//! variables.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix3};
use serde::{Deserialize, Serialize};

use crate::Error;

/// Number of scalar variables per pose.
pub const POSE_DIM: usize = 3;

/// Wraps an angle into the half-open interval `(-pi, pi]`.
///
/// Non-finite input is returned unchanged; use [`try_normalize_angle`] when
/// the caller needs the rejection.
pub fn normalize_angle(t: f64) -> f64 {
    if !t.is_finite() {
        return t;
    }
    let mut a = t % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Checked variant of [`normalize_angle`].
pub fn try_normalize_angle(t: f64) -> Result<f64, Error> {
    if t.is_finite() {
        Ok(normalize_angle(t))
    } else {
        Err(Error::NonFinite(t))
    }
}

/// A 2D rigid transform, `theta` always in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Default for Pose2 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub const fn identity() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.theta]
    }

    pub fn rotation(&self) -> Matrix2<f64> {
        let (s, c) = self.theta.sin_cos();
        Matrix2::new(c, -s, s, c)
    }

    /// `self ∘ other`: `other`'s translation is rotated into `self`'s frame.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            -(c * self.x + s * self.y),
            s * self.x - c * self.y,
            -self.theta,
        )
    }

    /// `self⁻¹ ∘ other`, the pose of `other` expressed in `self`'s frame.
    pub fn between(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        let dx = other.x - self.x;
        let dy = other.y - self.y;
        Pose2::new(c * dx + s * dy, -s * dx + c * dy, other.theta - self.theta)
    }

    /// Applies the rigid transform to a point.
    pub fn transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [
            self.x + c * p[0] - s * p[1],
            self.y + s * p[0] + c * p[1],
        ]
    }
}

/// Dense node index, assigned in first-appearance order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    /// First scalar variable owned by this node.
    pub fn first_var(self) -> usize {
        POSE_DIM * self.0
    }

    pub fn vars(self) -> std::ops::Range<usize> {
        self.first_var()..self.first_var() + POSE_DIM
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The measurement carried by an [`Edge`].
#[derive(Debug, Clone, PartialEq)]
pub enum EdgeKind {
    /// Relative pose of `to` as seen from `from`.
    RelativePose2 {
        from: NodeId,
        to: NodeId,
        meas: Pose2,
        info: Matrix3<f64>,
    },
    /// Absolute position prior on a single pose.
    PositionPrior2 {
        node: NodeId,
        meas: [f64; 2],
        info: Matrix2<f64>,
    },
    /// Full pose prior, used for gauge fixing.
    AnchorPrior2 {
        node: NodeId,
        meas: Pose2,
        info: Matrix3<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub kind: EdgeKind,
}

const SYMMETRY_TOL: f64 = 1e-12;

fn check_spd3(info: &Matrix3<f64>) -> Result<(), Error> {
    let scale = info.amax().max(1.0);
    if (info - info.transpose()).amax() > SYMMETRY_TOL * scale {
        return Err(Error::InvalidInformation("not symmetric"));
    }
    if info.cholesky().is_none() {
        return Err(Error::InvalidInformation("not positive-definite"));
    }
    Ok(())
}

fn check_spd2(info: &Matrix2<f64>) -> Result<(), Error> {
    let scale = info.amax().max(1.0);
    if (info - info.transpose()).amax() > SYMMETRY_TOL * scale {
        return Err(Error::InvalidInformation("not symmetric"));
    }
    if info.cholesky().is_none() {
        return Err(Error::InvalidInformation("not positive-definite"));
    }
    Ok(())
}

impl Edge {
    pub fn relative(from: NodeId, to: NodeId, meas: Pose2, info: Matrix3<f64>) -> Result<Self, Error> {
        if from == to {
            return Err(Error::SelfLoop(from));
        }
        check_spd3(&info)?;
        Ok(Self {
            kind: EdgeKind::RelativePose2 { from, to, meas, info },
        })
    }

    pub fn position_prior(node: NodeId, meas: [f64; 2], info: Matrix2<f64>) -> Result<Self, Error> {
        check_spd2(&info)?;
        Ok(Self {
            kind: EdgeKind::PositionPrior2 { node, meas, info },
        })
    }

    pub fn anchor(node: NodeId, meas: Pose2, info: Matrix3<f64>) -> Result<Self, Error> {
        check_spd3(&info)?;
        Ok(Self {
            kind: EdgeKind::AnchorPrior2 { node, meas, info },
        })
    }

    /// Re-checks the invariants of an edge built outside the constructors
    /// (e.g. deserialized).
    pub fn validate(&self) -> Result<(), Error> {
        match &self.kind {
            EdgeKind::RelativePose2 { from, to, info, .. } => {
                if from == to {
                    return Err(Error::SelfLoop(*from));
                }
                check_spd3(info)
            }
            EdgeKind::PositionPrior2 { info, .. } => check_spd2(info),
            EdgeKind::AnchorPrior2 { info, .. } => check_spd3(info),
        }
    }

    /// Endpoint nodes; priors have one.
    pub fn nodes(&self) -> Vec<NodeId> {
        match &self.kind {
            EdgeKind::RelativePose2 { from, to, .. } => vec![*from, *to],
            EdgeKind::PositionPrior2 { node, .. } | EdgeKind::AnchorPrior2 { node, .. } => vec![*node],
        }
    }

    /// Number of scalar residual rows.
    pub fn dim(&self) -> usize {
        match self.kind {
            EdgeKind::PositionPrior2 { .. } => 2,
            _ => 3,
        }
    }

    pub fn is_relative(&self) -> bool {
        matches!(self.kind, EdgeKind::RelativePose2 { .. })
    }

    pub fn is_anchor(&self) -> bool {
        matches!(self.kind, EdgeKind::AnchorPrior2 { .. })
    }

    /// Relative-pose edge between non-consecutive node ids.
    pub fn is_loop_closure(&self) -> bool {
        match self.kind {
            EdgeKind::RelativePose2 { from, to, .. } => from.0.abs_diff(to.0) != 1,
            _ => false,
        }
    }
}

/// Pose graph: nodes with initial estimates, edges and node → edge adjacency.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Pose2>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a node and returns its id.
    pub fn add_node(&mut self, initial: Pose2) -> NodeId {
        self.nodes.push(initial);
        self.adjacency.push(Vec::new());
        NodeId(self.nodes.len() - 1)
    }

    /// Adds an edge whose endpoints must already exist; returns its index.
    pub fn add_edge(&mut self, edge: Edge) -> Result<usize, Error> {
        let nodes = edge.nodes();
        if let Some(missing) = nodes.iter().find(|n| n.0 >= self.nodes.len()) {
            return Err(Error::UnknownNode(*missing));
        }
        let idx = self.edges.len();
        for n in nodes {
            self.adjacency[n.0].push(idx);
        }
        self.edges.push(edge);
        Ok(idx)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_vars(&self) -> usize {
        POSE_DIM * self.nodes.len()
    }

    pub fn nodes(&self) -> &[Pose2] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, idx: usize) -> &Edge {
        &self.edges[idx]
    }

    /// Indices of the edges incident to `node`.
    pub fn incident(&self, node: NodeId) -> &[usize] {
        &self.adjacency[node.0]
    }

    /// Scalar measurement rows, excluding anchor priors.
    pub fn measurement_rows(&self) -> usize {
        self.edges
            .iter()
            .filter(|e| !e.is_anchor())
            .map(Edge::dim)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_pose_eq(a: Pose2, b: Pose2, tol: f64) {
        assert!((a.x - b.x).abs() <= tol, "{a:?} vs {b:?}");
        assert!((a.y - b.y).abs() <= tol, "{a:?} vs {b:?}");
        assert!(normalize_angle(a.theta - b.theta).abs() <= tol, "{a:?} vs {b:?}");
    }

    #[test]
    fn normalize_angle_cases() {
        assert_eq!(normalize_angle(0.0), 0.0);
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert_eq!(normalize_angle(-PI), PI);
        assert_eq!(normalize_angle(PI), PI);
        assert!(try_normalize_angle(f64::NAN).is_err());
        assert!(try_normalize_angle(f64::INFINITY).is_err());
    }

    #[test]
    fn compose_examples() {
        let p = Pose2::identity().compose(&Pose2::new(3.0, -2.0, 0.5));
        assert_pose_eq(p, Pose2::new(3.0, -2.0, 0.5), 1e-15);
        let q = Pose2::new(1.0, 0.0, PI / 2.0).compose(&Pose2::new(1.0, 0.0, 0.0));
        assert_pose_eq(q, Pose2::new(1.0, 1.0, PI / 2.0), 1e-15);
    }

    #[test]
    fn between_examples() {
        let p = Pose2::new(0.3, -1.2, 2.0);
        assert_pose_eq(p.between(&p), Pose2::identity(), 1e-15);
        let b = Pose2::identity().between(&Pose2::new(2.0, 1.0, 0.3));
        assert_pose_eq(b, Pose2::new(2.0, 1.0, 0.3), 1e-15);
    }

    #[test]
    fn edge_invariants() {
        let info = Matrix3::identity();
        assert!(Edge::relative(NodeId(1), NodeId(1), Pose2::identity(), info).is_err());
        let mut bad = info;
        bad[(0, 1)] = 0.5;
        assert!(Edge::relative(NodeId(0), NodeId(1), Pose2::identity(), bad).is_err());
        assert!(Edge::anchor(NodeId(0), Pose2::identity(), -info).is_err());
        assert!(Edge::position_prior(NodeId(0), [0.0, 0.0], Matrix2::identity()).is_ok());
    }

    #[test]
    fn adjacency_is_consistent() {
        let mut g = Graph::new();
        for _ in 0..4 {
            g.add_node(Pose2::identity());
        }
        let info = Matrix3::identity();
        let pairs = [(0, 1), (1, 2), (2, 3), (3, 0)];
        for (a, b) in pairs {
            g.add_edge(Edge::relative(NodeId(a), NodeId(b), Pose2::identity(), info).unwrap())
                .unwrap();
        }
        g.add_edge(Edge::anchor(NodeId(0), Pose2::identity(), info).unwrap())
            .unwrap();
        assert!(g
            .add_edge(Edge::anchor(NodeId(9), Pose2::identity(), info).unwrap())
            .is_err());
        for (ei, e) in g.edges().iter().enumerate() {
            for n in 0..g.num_nodes() {
                let listed = g.incident(NodeId(n)).contains(&ei);
                assert_eq!(listed, e.nodes().contains(&NodeId(n)));
            }
        }
        assert_eq!(g.num_vars(), 12);
        assert_eq!(g.measurement_rows(), 12);
    }

    fn pose() -> impl Strategy<Value = Pose2> {
        (-50.0..50.0f64, -50.0..50.0f64, -10.0..10.0f64).prop_map(|(x, y, t)| Pose2::new(x, y, t))
    }

    proptest! {
        #[test]
        fn group_axioms(a in pose(), b in pose(), c in pose()) {
            assert_pose_eq(a.compose(&b).compose(&b.inverse()), a, 1e-12);
            assert_pose_eq(a.compose(&a.between(&b)), b, 1e-12);
            assert_pose_eq(a.compose(&b).compose(&c), a.compose(&b.compose(&c)), 1e-12);
            assert_pose_eq(a.compose(&Pose2::identity()), a, 1e-12);
            prop_assert!(a.theta > -PI && a.theta <= PI);
        }

        #[test]
        fn normalize_stays_in_interval(t in -1e3..1e3f64) {
            let n = normalize_angle(t);
            prop_assert!(n > -PI && n <= PI);
            let k = (t - n) / (2.0 * PI);
            prop_assert!((k - k.round()).abs() < 1e-9);
        }
    }
}
