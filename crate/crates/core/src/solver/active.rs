use crate::pose_graph::{Graph, NodeId, POSE_DIM};
use crate::sparse::ActiveSet;

/// Keeps the blocks of `s` with some `|dᵢ| > tau_d`; `d` is aligned with
/// `s.vars()`.
pub fn prune_active_set(d: &[f64], s: &ActiveSet, tau_d: f64) -> ActiveSet {
    assert_eq!(d.len(), s.len());
    ActiveSet::closure_of(s.vars().iter().zip(d).filter(|(_, di)| di.abs() > tau_d).map(|(&v, _)| v))
}

/// Adds every node sharing an edge with a node of `s`.
pub fn expand_active_set(s: &ActiveSet, graph: &Graph) -> ActiveSet {
    let mut nodes: Vec<NodeId> = Vec::with_capacity(s.len() / POSE_DIM * 3);
    for n in s.nodes() {
        nodes.push(n);
        for &e in graph.incident(n) {
            nodes.extend(graph.edge(e).nodes());
        }
    }
    ActiveSet::from_nodes(nodes)
}

/// Indices of edges with at least one endpoint in `s`, ascending.
pub fn edges_touching(s: &ActiveSet, graph: &Graph) -> Vec<usize> {
    let mut e: Vec<usize> = s.nodes().flat_map(|n| graph.incident(n).iter().copied()).collect();
    e.sort_unstable();
    e.dedup();
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose_graph::{Edge, Pose2};
    use nalgebra::{Matrix2, Matrix3};

    fn chain(n: usize) -> Graph {
        let mut g = Graph::new();
        for _ in 0..n {
            g.add_node(Pose2::identity());
        }
        for i in 0..n - 1 {
            g.add_edge(Edge::relative(NodeId(i), NodeId(i + 1), Pose2::new(1.0, 0.0, 0.0), Matrix3::identity()).unwrap())
                .unwrap();
        }
        g
    }

    #[test]
    fn prune_examples() {
        let s = ActiveSet::from_nodes([NodeId(0), NodeId(1)]);
        let tau = 1e-3;
        assert!(prune_active_set(&[0.0, 1e-3, -1e-3, 0.0, 0.0, 0.0], &s, tau).is_empty());
        let p = prune_active_set(&[2e-3, 0.0, 0.0, 0.0, 0.0, 0.0], &s, tau);
        assert_eq!(p.vars(), &[0, 1, 2]);
        let p = prune_active_set(&[0.0, 0.0, 0.0, 0.0, 0.0, -5e-3], &s, tau);
        assert_eq!(p, ActiveSet::from_nodes([NodeId(1)]));
    }

    #[test]
    fn expand_examples() {
        let mut g = chain(3);
        assert!(expand_active_set(&ActiveSet::empty(), &g).is_empty());
        let s = expand_active_set(&ActiveSet::from_nodes([NodeId(1)]), &g);
        assert_eq!(s, ActiveSet::all(9));
        let n = g.add_node(Pose2::identity());
        g.add_edge(Edge::position_prior(n, [0.0, 0.0], Matrix2::identity()).unwrap()).unwrap();
        let s = ActiveSet::from_nodes([n]);
        assert_eq!(expand_active_set(&s, &g), s);
    }

    #[test]
    fn touching_edges() {
        let g = chain(5);
        let s = ActiveSet::from_nodes([NodeId(2)]);
        assert_eq!(edges_touching(&s, &g), vec![1, 2]);
    }
}
