use super::Detrend;
use crate::pose_graph::{Edge, EdgeKind};

/// Detrended log-determinant gain.
pub fn delta_eta(eta_t: f64, eta_prev: f64, n_t: usize, n_prev: usize, detrend: Detrend) -> f64 {
    assert!(n_t >= n_prev && n_prev >= 1, "variable counts must be non-decreasing and positive");
    let ratio = match detrend {
        Detrend::PerVariable => n_t as f64 / n_prev as f64,
        Detrend::Shrink => n_prev as f64 / n_t as f64,
    };
    eta_t - ratio * eta_prev
}

/// Returns `(trigger, Δη)`. A zero threshold always triggers.
pub fn gate_igg(
    eta_t: f64,
    eta_prev: f64,
    n_t: usize,
    n_prev: usize,
    tau_eta: f64,
    detrend: Detrend,
) -> (bool, f64) {
    let d = delta_eta(eta_t, eta_prev, n_t, n_prev, detrend);
    (tau_eta <= 0.0 || d >= tau_eta, d)
}

/// True iff some new edge is a relative-pose edge between non-consecutive
/// pose ids.
pub fn gate_lcg(new_edges: &[Edge]) -> bool {
    new_edges
        .iter()
        .any(|e| matches!(e.kind, EdgeKind::RelativePose2 { .. }) && e.is_loop_closure())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose_graph::{NodeId, Pose2};
    use nalgebra::{Matrix2, Matrix3};

    #[test]
    fn igg_examples() {
        assert!(!gate_igg(3.0, 3.0, 30, 30, 1.0, Detrend::Shrink).0);
        assert!(!gate_igg(3.0, 3.0, 30, 30, 1.0, Detrend::PerVariable).0);
        let (trig, d) = gate_igg(5.0, 4.0, 303, 300, 1.0, Detrend::Shrink);
        assert!(trig);
        assert!((d - (5.0 - 300.0 / 303.0 * 4.0)).abs() < 1e-15);
        assert!((d - 1.0396).abs() < 1e-4);
        let (trig, d) = gate_igg(5.0, 4.0, 303, 300, 1.0, Detrend::PerVariable);
        assert!(!trig);
        assert!((d - (5.0 - 303.0 / 300.0 * 4.0)).abs() < 1e-15);
        assert!(gate_igg(-10.0, 4.0, 303, 300, 0.0, Detrend::PerVariable).0);
        assert!(!gate_igg(1e300, 0.0, 3, 3, f64::INFINITY, Detrend::PerVariable).0);
    }

    #[test]
    fn lcg_examples() {
        let e = |a, b| Edge::relative(NodeId(a), NodeId(b), Pose2::identity(), Matrix3::identity()).unwrap();
        assert!(!gate_lcg(&[e(7, 8)]));
        assert!(gate_lcg(&[e(2, 7)]));
        assert!(gate_lcg(&[e(7, 8), e(8, 2)]));
        let p = Edge::position_prior(NodeId(5), [0.0, 0.0], Matrix2::identity()).unwrap();
        assert!(!gate_lcg(&[p]));
    }
}
