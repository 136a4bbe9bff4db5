use nalgebra::Matrix3;
use serde::Serialize;

use super::batch::{batch_solve, BatchResult};
use super::state::{IncrementRecord, SolverState};
use super::{PoseInit, SolverConfig, Variant};
use crate::io::DatasetStream;
use crate::metrics::ate;
use crate::pose_graph::{Edge, EdgeKind, Graph, NodeId, Pose2};
use crate::Error;

/// Table 2 style row for one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunSummary {
    pub dataset: String,
    pub variant: String,
    pub increments: usize,
    pub final_nchi2: f64,
    pub mean_nchi2: f64,
    pub final_ate: Option<f64>,
    pub mean_ate: Option<f64>,
    /// Means over all increments.
    pub mean_flops_update: f64,
    pub mean_flops_solve: f64,
    pub mean_flops_solve_full: f64,
    /// Means over increments that did any work of that kind.
    pub mean_flops_update_nonzero: f64,
    pub mean_flops_solve_nonzero: f64,
    pub global_triggers: usize,
    pub steps: usize,
    pub cost_increases: usize,
    pub max_cost_increase: f64,
    pub escalations: usize,
    pub reorders: usize,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub records: Vec<IncrementRecord>,
    pub estimate: Vec<Pose2>,
    pub summary: RunSummary,
}

fn mean<I: Iterator<Item = f64>>(it: I) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn positions(p: &[Pose2]) -> Vec<[f64; 2]> {
    p.iter().map(|p| [p.x, p.y]).collect()
}

impl RunSummary {
    pub fn from_records(dataset: &str, variant: &str, records: &[IncrementRecord]) -> Self {
        let nonzero = |f: fn(&IncrementRecord) -> u64| mean(records.iter().map(f).filter(|&v| v > 0).map(|v| v as f64));
        let has_ate = records.iter().all(|r| r.ate.is_some()) && !records.is_empty();
        RunSummary {
            dataset: dataset.to_string(),
            variant: variant.to_string(),
            increments: records.len(),
            final_nchi2: records.last().map_or(0.0, |r| r.nchi2),
            mean_nchi2: mean(records.iter().map(|r| r.nchi2)),
            final_ate: records.last().and_then(|r| r.ate),
            mean_ate: has_ate.then(|| mean(records.iter().filter_map(|r| r.ate))),
            mean_flops_update: mean(records.iter().map(|r| r.flops_update as f64)),
            mean_flops_solve: mean(records.iter().map(|r| r.flops_solve as f64)),
            mean_flops_solve_full: mean(records.iter().map(|r| r.flops_solve_full as f64)),
            mean_flops_update_nonzero: nonzero(|r| r.flops_update),
            mean_flops_solve_nonzero: nonzero(|r| r.flops_solve),
            global_triggers: records.iter().filter(|r| r.gated_global).count(),
            steps: records.iter().map(|r| r.steps).sum(),
            cost_increases: records.iter().map(|r| r.cost_increases).sum(),
            max_cost_increase: records.iter().fold(0.0, |m, r| m.max(r.max_cost_increase)),
            escalations: records.iter().map(|r| r.escalations).sum(),
            reorders: records.iter().map(|r| r.reorders).sum(),
        }
    }
}

/// Streams `stream` one edge per increment through `variant`. With a
/// reference trajectory, each record carries the ATE over the poses present
/// at that increment.
pub fn run_variant(
    variant: Variant,
    stream: &DatasetStream,
    base: &SolverConfig,
    reference: Option<&[Pose2]>,
) -> Result<RunResult, Error> {
    let config = variant.configure(base);
    let mut state = SolverState::init(stream.first_pose(), config)?;
    let ref_xy = reference.map(positions);
    let mut records = Vec::with_capacity(stream.edges.len());
    for e in &stream.edges {
        let mut rec = state.increment(std::slice::from_ref(e))?;
        if let Some(r) = &ref_xy {
            let est = positions(state.estimate());
            rec.ate = Some(ate(&est, &r[..est.len()]));
        }
        records.push(rec);
    }
    let summary = RunSummary::from_records(&stream.name, variant.name(), &records);
    Ok(RunResult {
        records,
        estimate: state.estimate().to_vec(),
        summary,
    })
}

/// Initial estimate obtained by composing each edge that reaches a new pose.
pub fn composed_initial(stream: &DatasetStream) -> Vec<Pose2> {
    let mut x = vec![stream.first_pose()];
    for e in &stream.edges {
        if let EdgeKind::RelativePose2 { from, to, meas, .. } = &e.kind {
            if to.0 == x.len() {
                x.push(x[from.0].compose(meas));
            } else if from.0 == x.len() {
                x.push(x[to.0].compose(&meas.inverse()));
            }
        }
    }
    x
}

/// All stream edges behind an anchor prior on pose 0.
pub fn stream_graph(stream: &DatasetStream, anchor_info: Matrix3<f64>, initial: &[Pose2]) -> Result<Graph, Error> {
    let mut g = Graph::new();
    for p in initial {
        g.add_node(*p);
    }
    g.add_edge(Edge::anchor(NodeId(0), stream.first_pose(), anchor_info)?)?;
    for e in &stream.edges {
        g.add_edge(e.clone())?;
    }
    Ok(g)
}

/// Batch Gauss-Newton over the whole stream, from `warm` if given and from
/// odometry composition otherwise.
pub fn reference_solution(
    stream: &DatasetStream,
    anchor_info: Matrix3<f64>,
    warm: Option<&[Pose2]>,
    max_iters: usize,
    tol: f64,
) -> Result<BatchResult, Error> {
    let x0 = warm.map_or_else(|| composed_initial(stream), <[Pose2]>::to_vec);
    let g = stream_graph(stream, anchor_info, &x0)?;
    batch_solve(&g, &x0, max_iters, tol)
}

/// Accuracy reference for a stream: GNi from odometry composition, then
/// batch Gauss-Newton to convergence from its final estimate. Batch runs
/// started from composition alone can stall in a poor basin on long
/// trajectories.
pub fn warm_reference(stream: &DatasetStream, base: &SolverConfig) -> Result<BatchResult, Error> {
    let cfg = SolverConfig {
        init: PoseInit::Compose,
        ..base.clone()
    };
    let gni = run_variant(Variant::Gni, stream, &cfg, None)?;
    reference_solution(stream, base.anchor_info, Some(&gni.estimate), 100, 1e-10)
}

/// `Nχ²` of `poses` against every stream edge.
pub fn stream_nchi2(stream: &DatasetStream, poses: &[Pose2]) -> f64 {
    let cost: f64 = stream.edges.iter().map(|e| crate::factors::edge_cost(e, poses)).sum();
    let rows: usize = stream.edges.iter().map(Edge::dim).sum();
    crate::metrics::normalized_chi2(cost, rows.max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{playback_order, RawGraph};

    fn square_stream() -> DatasetStream {
        let info = Matrix3::from_diagonal(&nalgebra::Vector3::new(10.0, 10.0, 100.0));
        let step = Pose2::new(1.0, 0.0, std::f64::consts::FRAC_PI_2);
        let noisy = Pose2::new(1.05, -0.02, std::f64::consts::FRAC_PI_2 + 0.03);
        let mut edges: Vec<Edge> = (0..4)
            .map(|i| Edge::relative(NodeId(i), NodeId(i + 1), if i % 2 == 0 { noisy } else { step }, info).unwrap())
            .collect();
        edges.push(Edge::relative(NodeId(4), NodeId(0), Pose2::identity(), info).unwrap());
        playback_order(&RawGraph { vertices: vec![], edges }, "square").unwrap()
    }

    #[test]
    fn summary_means_match_records() {
        let s = square_stream();
        let r = run_variant(Variant::GniSpoIgg, &s, &SolverConfig::default(), None).unwrap();
        assert_eq!(r.records.len(), s.edges.len());
        let m = r.records.iter().map(|r| r.flops_update as f64).sum::<f64>() / r.records.len() as f64;
        assert!((r.summary.mean_flops_update - m).abs() <= 1e-12 * m.max(1.0));
        assert_eq!(r.summary.final_ate, None);
    }

    #[test]
    fn gni_matches_batch_on_small_loop() {
        let s = square_stream();
        let cfg = SolverConfig {
            tau_d: 1e-10,
            tau_gn: 50,
            ..SolverConfig::default()
        };
        let batch = reference_solution(&s, cfg.anchor_info, None, 50, 1e-12).unwrap();
        assert!(batch.converged);
        let r = run_variant(Variant::Gni, &s, &cfg, Some(&batch.poses)).unwrap();
        for (a, b) in r.estimate.iter().zip(&batch.poses) {
            assert!((a.x - b.x).abs() < 1e-8 && (a.y - b.y).abs() < 1e-8 && (a.theta - b.theta).abs() < 1e-8);
        }
        assert!(r.summary.final_ate.unwrap() < 1e-8);
    }

    #[test]
    fn composed_initial_follows_odometry() {
        let s = square_stream();
        let x = composed_initial(&s);
        assert_eq!(x.len(), 5);
        assert!((x[1].x - 1.05).abs() < 1e-15);
    }
}
