use crate::factors::{assemble_normal_equations, linearize, LinearizedFactor};
use crate::pose_graph::{normalize_angle, Graph, Pose2, POSE_DIM};
use crate::sparse::{amd_order, full_solve, CholeskyFactor, Permutation};
use crate::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    pub poses: Vec<Pose2>,
    pub iterations: usize,
    pub converged: bool,
    /// `max |d|` of the last step.
    pub last_step_max: f64,
}

/// Plain Gauss-Newton over the whole graph, starting from `x0`. Stops when
/// `max |d| ≤ tol` or after `max_iters` steps. The graph must hold a prior
/// that fixes the gauge.
pub fn batch_solve(graph: &Graph, x0: &[Pose2], max_iters: usize, tol: f64) -> Result<BatchResult, Error> {
    assert_eq!(x0.len(), graph.num_nodes(), "initial estimate size mismatch");
    let n = graph.num_vars();
    let mut x = x0.to_vec();
    let mut perm: Option<Permutation> = None;
    let mut out = BatchResult {
        poses: Vec::new(),
        iterations: 0,
        converged: false,
        last_step_max: f64::INFINITY,
    };
    for it in 1..=max_iters {
        let facs: Vec<LinearizedFactor> = graph
            .edges()
            .iter()
            .enumerate()
            .map(|(i, e)| linearize(e, i, &x))
            .collect::<Result<_, _>>()?;
        let (h, b) = assemble_normal_equations(&facs, n);
        let p = perm.get_or_insert_with(|| amd_order(&h, &[])).clone();
        let f = CholeskyFactor::factorize(&h, p)?;
        let d = full_solve(&f, &b);
        for (k, p) in x.iter_mut().enumerate() {
            let o = POSE_DIM * k;
            *p = Pose2 {
                x: p.x - d[o],
                y: p.y - d[o + 1],
                theta: normalize_angle(p.theta - d[o + 2]),
            };
        }
        out.iterations = it;
        out.last_step_max = d.iter().fold(0.0, |m, v| f64::max(m, v.abs()));
        log::debug!("batch iteration {it}: max|d| = {:.3e}", out.last_step_max);
        if out.last_step_max <= tol {
            out.converged = true;
            break;
        }
    }
    out.poses = x;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose_graph::{Edge, NodeId};
    use nalgebra::Matrix3;

    #[test]
    fn consistent_graph_is_fixed_point() {
        let mut g = Graph::new();
        let poses = [Pose2::identity(), Pose2::new(1.0, 0.0, 0.5), Pose2::new(1.5, 1.0, 1.2)];
        for p in poses {
            g.add_node(p);
        }
        g.add_edge(Edge::anchor(NodeId(0), poses[0], Matrix3::from_diagonal_element(1e6)).unwrap())
            .unwrap();
        for (i, j) in [(0, 1), (1, 2), (0, 2)] {
            g.add_edge(Edge::relative(NodeId(i), NodeId(j), poses[i].between(&poses[j]), Matrix3::identity()).unwrap())
                .unwrap();
        }
        let r = batch_solve(&g, &poses, 10, 1e-9).unwrap();
        assert_eq!(r.iterations, 1);
        assert!(r.converged);
        for (a, b) in r.poses.iter().zip(&poses) {
            assert!((a.x - b.x).abs() < 1e-12 && (a.y - b.y).abs() < 1e-12 && (a.theta - b.theta).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_anchor_is_reported() {
        let mut g = Graph::new();
        g.add_node(Pose2::identity());
        g.add_node(Pose2::new(1.0, 0.0, 0.0));
        g.add_edge(Edge::relative(NodeId(0), NodeId(1), Pose2::new(1.0, 0.0, 0.0), Matrix3::identity()).unwrap())
            .unwrap();
        let x0 = g.nodes().to_vec();
        assert!(matches!(batch_solve(&g, &x0, 5, 1e-9), Err(Error::NotPositiveDefinite { .. })));
    }
}
