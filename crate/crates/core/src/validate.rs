//! Randomized checks of the sparse kernels and the solver against dense
//! oracles.
//!
//! [`run_suite`] draws random pose graphs, linearizes them at a perturbed
//! point and compares every sparse result with a dense `nalgebra`
//! computation. The partial solve is checked along two independent routes:
//! the dense solution `H⁻¹b` restricted to `S`, and an explicit block
//! elimination on the dense factor (forward solve over the static block,
//! correction, then the active block's own normal equations). On a failure
//! the stream is truncated to the shortest prefix that still fails and
//! dumped as JSON lines.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::factors::{assemble_normal_equations, linearize, LinearizedFactor};
use crate::io::{write_jsonl, DatasetStream};
use crate::pose_graph::{Edge, Graph, NodeId, Pose2, POSE_DIM};
use crate::solver::{batch_solve, composed_initial, stream_graph, PoseInit, SolverConfig, SolverState, Variant};
use crate::sparse::{
    amd_order, full_solve, partial_solve, partial_solve_uncorrected, solve_columns, ActiveSet, CholeskyFactor,
    SparseMatrix, StaticBlockCache,
};
use crate::Error;

/// Relative tolerance of the linear-algebra checks.
pub const TOL: f64 = 1e-9;
/// Pose tolerance of the incremental-versus-batch check.
pub const BATCH_TOL: f64 = 1e-6;

/// Deliberate defects used to confirm that the suite catches a broken build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Partial solve over the raw active set without the static-block term.
    SkipCorrection,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckStats {
    pub name: &'static str,
    pub runs: usize,
    pub max_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub check: &'static str,
    pub graph: usize,
    pub graph_seed: u64,
    pub detail: String,
    /// Shortest failing stream prefix in JSON-lines form.
    pub reproducer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub max_poses: usize,
    pub graphs: usize,
    pub checks: Vec<CheckStats>,
    pub failures: Vec<Failure>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn stats(&self, name: &str) -> Option<&CheckStats> {
        self.checks.iter().find(|c| c.name == name)
    }
}

const CHECKS: [&str; 8] = [
    "factorize",
    "logdet",
    "full_solve",
    "partial_solve_dense",
    "partial_solve_blocks",
    "relinearize",
    "incremental_factor",
    "batch",
];

fn random_info(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let s = [rng.random_range(0.05..0.3), rng.random_range(0.05..0.3), rng.random_range(0.01..0.1)];
    let mut a = Matrix3::from_fn(|_, _| rng.random_range(-0.2..0.2));
    for k in 0..3 {
        a[(k, k)] = 1.0 / s[k];
    }
    a.transpose() * a
}

fn noisy(rng: &mut ChaCha8Rng, p: Pose2, scale: f64) -> Pose2 {
    Pose2::new(
        p.x + scale * rng.random_range(-0.05..0.05),
        p.y + scale * rng.random_range(-0.05..0.05),
        p.theta + scale * rng.random_range(-0.02..0.02),
    )
}

/// Random playback stream over at most `max_poses` poses: an odometry chain
/// (some edges stored backwards), loop closures and position priors. A
/// single-pose stream carries one position prior.
pub fn random_stream(rng: &mut ChaCha8Rng, max_poses: usize) -> DatasetStream {
    let n = rng.random_range(1..=max_poses.max(1));
    let mut truth = vec![Pose2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-3.0..3.0))];
    let mut edges = Vec::new();
    let prior = |rng: &mut ChaCha8Rng, p: &Pose2, node: usize| {
        let s = rng.random_range(0.1..1.0);
        Edge::position_prior(
            NodeId(node),
            [p.x + s * rng.random_range(-0.1..0.1), p.y + s * rng.random_range(-0.1..0.1)],
            Matrix2::from_diagonal_element(1.0 / (s * s)),
        )
        .expect("valid prior")
    };
    if n == 1 {
        edges.push(prior(rng, &truth[0], 0));
    }
    for j in 1..n {
        let step = Pose2::new(rng.random_range(0.3..1.5), rng.random_range(-0.3..0.3), rng.random_range(-0.6..0.6));
        truth.push(truth[j - 1].compose(&step));
        let meas = noisy(rng, step, 1.0);
        let e = if rng.random_bool(0.2) {
            Edge::relative(NodeId(j), NodeId(j - 1), meas.inverse(), random_info(rng))
        } else {
            Edge::relative(NodeId(j - 1), NodeId(j), meas, random_info(rng))
        };
        edges.push(e.expect("valid odometry"));
        if j >= 2 && rng.random_bool(0.3) {
            let i = rng.random_range(0..j - 1);
            let meas = noisy(rng, truth[j].between(&truth[i]), 1.0);
            edges.push(Edge::relative(NodeId(j), NodeId(i), meas, random_info(rng)).expect("valid closure"));
        }
        if rng.random_bool(0.1) {
            edges.push(prior(rng, &truth[j], j));
        }
    }
    let mut s = DatasetStream {
        name: "random".into(),
        edges,
        num_poses: n,
        initial: vec![truth[0]],
        original_ids: (0..n).collect(),
    };
    s.initial = composed_initial(&s);
    s
}

/// The first `k` edges of `stream` and the poses they reach.
fn truncate(stream: &DatasetStream, k: usize) -> DatasetStream {
    let edges: Vec<Edge> = stream.edges[..k].to_vec();
    let n = edges
        .iter()
        .flat_map(Edge::nodes)
        .map(|v| v.0 + 1)
        .max()
        .unwrap_or(1);
    DatasetStream {
        name: stream.name.clone(),
        edges,
        num_poses: n,
        initial: stream.initial[..n].to_vec(),
        original_ids: stream.original_ids[..n].to_vec(),
    }
}

struct Violation {
    check: &'static str,
    error: f64,
    detail: String,
}

#[derive(Default)]
struct Outcome {
    errors: Vec<(&'static str, f64)>,
    violations: Vec<Violation>,
}

impl Outcome {
    fn record(&mut self, check: &'static str, error: f64, tol: f64, what: impl FnOnce() -> String) {
        self.errors.push((check, error));
        if !(error <= tol) {
            self.violations.push(Violation {
                check,
                error,
                detail: format!("{}: error {error:.3e} > {tol:.0e}", what()),
            });
        }
    }

    fn error(&mut self, check: &'static str, e: Error) {
        self.errors.push((check, f64::INFINITY));
        self.violations.push(Violation {
            check,
            error: f64::INFINITY,
            detail: e.to_string(),
        });
    }
}

fn to_dense(m: &SparseMatrix) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(m.nrows(), m.ncols());
    for j in 0..m.ncols() {
        for (i, v) in m.col(j) {
            d[(i, j)] += v;
        }
    }
    d
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// Forward substitution with the transpose of upper-triangular `r`.
fn solve_upper_transpose(r: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    r.transpose()
        .solve_lower_triangular(b)
        .expect("nonzero diagonal")
}

/// Block elimination on the dense factor: with `c` the trailing positions,
/// `R_UUᵀ y_U = b_U`, then `R_CCᵀ R_CC d_C = b_C − R_UCᵀ y_U`. Returns `d_C`
/// indexed by position, or the size of the entry linking `C` rows to `U`
/// columns if `c` is not trailing.
fn dense_block_solve(r: &DMatrix<f64>, b_ordered: &DVector<f64>, c: &[usize]) -> Result<Vec<(usize, f64)>, f64> {
    let n = r.nrows();
    let mut in_c = vec![false; n];
    for &p in c {
        in_c[p] = true;
    }
    let u: Vec<usize> = (0..n).filter(|&p| !in_c[p]).collect();
    let leak = c
        .iter()
        .flat_map(|&i| u.iter().map(move |&j| (i, j)))
        .fold(0.0f64, |m, (i, j)| m.max(r[(i, j)].abs()));
    if leak != 0.0 {
        return Err(leak);
    }
    let r_uu = r.select_rows(&u).select_columns(&u);
    let r_uc = r.select_rows(&u).select_columns(c);
    let r_cc = r.select_rows(c).select_columns(c);
    let b_u = b_ordered.select_rows(&u);
    let b_c = b_ordered.select_rows(c);
    let y_u = if u.is_empty() { DVector::zeros(0) } else { solve_upper_transpose(&r_uu, &b_u) };
    let rhs = b_c - r_uc.transpose() * y_u;
    let m = r_cc.transpose() * &r_cc;
    let d = m.cholesky().expect("active block is SPD").solve(&rhs);
    Ok(c.iter().copied().zip(d.iter().copied()).collect())
}

fn random_active_set(rng: &mut ChaCha8Rng, n_nodes: usize) -> ActiveSet {
    let k = rng.random_range(1..=n_nodes);
    let mut nodes: Vec<usize> = (0..n_nodes).collect();
    for i in 0..k {
        let j = rng.random_range(i..n_nodes);
        nodes.swap(i, j);
    }
    ActiveSet::from_nodes(nodes[..k].iter().map(|&i| NodeId(i)))
}

/// The nodes whose variables occupy the last `k` node slots of the ordering.
fn trailing_active_set(f: &CholeskyFactor, k: usize) -> ActiveSet {
    let n = f.dim();
    let perm = f.perm();
    let nodes: Vec<NodeId> = (n - POSE_DIM * k..n).map(|p| NodeId(perm.var(p) / POSE_DIM)).collect();
    ActiveSet::from_nodes(nodes)
}

fn linearize_all(graph: &Graph, x: &[Pose2]) -> Result<Vec<LinearizedFactor>, Error> {
    graph.edges().iter().enumerate().map(|(i, e)| linearize(e, i, x)).collect()
}

fn check_linear_algebra(stream: &DatasetStream, rng: &mut ChaCha8Rng, fault: Fault, out: &mut Outcome) -> Result<(), Error> {
    let x: Vec<Pose2> = stream.initial.iter().map(|p| noisy(rng, *p, 2.0)).collect();
    let anchor = Matrix3::from_diagonal(&nalgebra::Vector3::new(
        rng.random_range(10.0..1e4),
        rng.random_range(10.0..1e4),
        rng.random_range(10.0..1e4),
    ));
    let graph = stream_graph(stream, anchor, &x)?;
    let lin = linearize_all(&graph, &x)?;
    let n = graph.num_vars();
    let (h, b) = assemble_normal_equations(&lin, n);
    let last: Vec<usize> = NodeId(graph.num_nodes() - 1).vars().collect();
    let f = CholeskyFactor::factorize(&h, amd_order(&h, &last))?;
    let perm = f.perm().clone();

    let hd = to_dense(&h);
    let order = perm.order();
    let hp = hd.select_rows(order).select_columns(order);
    let chol = hp.clone().cholesky().ok_or(Error::NotPositiveDefinite { column: 0 })?;
    let r_dense = chol.l().transpose();
    let r = to_dense(&f.to_upper());
    let scale = r_dense.amax().max(1.0);
    let err = (&r - &r_dense).amax() / scale;
    let recon = f.reconstruction_error(&h);
    out.record("factorize", err.max(recon), TOL, || "sparse R versus dense Cholesky".into());

    let eta_dense: f64 = r_dense.diagonal().iter().map(|v| v.ln()).sum();
    out.record("logdet", (f.logdet_diag() - eta_dense).abs() / eta_dense.abs().max(1.0), TOL, || {
        "log-determinant".into()
    });

    let bv = DVector::from_column_slice(&b);
    let d_dense = hd.clone().lu().solve(&bv).ok_or(Error::NotPositiveDefinite { column: 0 })?;
    let d = full_solve(&f, &b);
    out.record("full_solve", rel_diff(&d, d_dense.as_slice()), TOL, || "full solve".into());

    let b_ordered = DVector::from_iterator(n, order.iter().map(|&v| b[v]));
    let n_nodes = graph.num_nodes();
    let mut sets: Vec<ActiveSet> = (0..4).map(|_| random_active_set(rng, n_nodes)).collect();
    sets.push(trailing_active_set(&f, rng.random_range(1..=n_nodes)));
    let mut cache = StaticBlockCache::new();
    for s in &sets {
        let ds = match fault {
            Fault::None => partial_solve(&f, &b, s, 1, &mut cache)?,
            Fault::SkipCorrection => partial_solve_uncorrected(&f, &b, s)?,
        };
        let nodes = || format!("partial solve over nodes {:?}", s.nodes().map(|v| v.0).collect::<Vec<_>>());
        let want: Vec<f64> = s.vars().iter().map(|&v| d_dense[v]).collect();
        out.record("partial_solve_dense", rel_diff(&ds, &want), TOL, nodes);

        let c = solve_columns(&f, s);
        match dense_block_solve(&r_dense, &b_ordered, &c) {
            Ok(dc) => {
                let by_pos: std::collections::HashMap<usize, f64> = dc.into_iter().collect();
                let want: Vec<f64> = s.vars().iter().map(|&v| by_pos[&perm.pos(v)]).collect();
                out.record("partial_solve_blocks", rel_diff(&ds, &want), TOL, nodes);
            }
            Err(leak) => out.record("partial_solve_blocks", f64::INFINITY, TOL, || {
                format!("{}: solve columns are not trailing, R entry {leak:.3e} couples them to the rest", nodes())
            }),
        }
    }

    // Relinearize a random subset: add the fresh rows, then remove the stale.
    let mut f = f;
    let mut b = b;
    let mut x2 = x.clone();
    for p in x2.iter_mut() {
        if rng.random_bool(0.5) {
            *p = noisy(rng, *p, 1.0);
        }
    }
    let chosen: Vec<usize> = (0..lin.len()).filter(|_| rng.random_bool(0.4)).collect();
    let fresh: Vec<LinearizedFactor> = chosen
        .iter()
        .map(|&i| linearize(graph.edge(i), i, &x2))
        .collect::<Result<_, _>>()?;
    let stale: Vec<LinearizedFactor> = chosen.iter().map(|&i| lin[i].clone()).collect();
    f.add_rows(&mut b, &fresh)?;
    f.remove_rows(&mut b, &stale)?;
    let mut mixed = lin.clone();
    for (k, &i) in chosen.iter().enumerate() {
        mixed[i] = fresh[k].clone();
    }
    let (h2, b2) = assemble_normal_equations(&mixed, n);
    let err = f.reconstruction_error(&h2).max(rel_diff(&b, &b2));
    out.record("relinearize", err, TOL, || format!("relinearized {} edges", chosen.len()));
    Ok(())
}

fn check_solver(stream: &DatasetStream, out: &mut Outcome) -> Result<(), Error> {
    let mut state = SolverState::init(stream.first_pose(), Variant::GniSpoIgg.configure(&SolverConfig::default()))?;
    for e in &stream.edges {
        state.increment(std::slice::from_ref(e))?;
    }
    let (h, b) = state.assemble_system();
    let err = state.factor().reconstruction_error(&h).max(rel_diff(state.rhs(), &b));
    out.record("incremental_factor", err, TOL, || "streamed factor versus assembled system".into());

    let cfg = SolverConfig {
        tau_d: 1e-10,
        tau_eta: 0.0,
        tau_gn: 50,
        init: PoseInit::Compose,
        ..SolverConfig::default()
    };
    let mut state = SolverState::init(stream.first_pose(), Variant::Gni.configure(&cfg))?;
    for e in &stream.edges {
        state.increment(std::slice::from_ref(e))?;
    }
    let x0 = composed_initial(stream);
    let graph = stream_graph(stream, cfg.anchor_info, &x0)?;
    let batch = batch_solve(&graph, &x0, 100, 1e-12)?;
    let err = state
        .estimate()
        .iter()
        .zip(&batch.poses)
        .fold(0.0f64, |m, (a, b)| {
            m.max((a.x - b.x).abs())
                .max((a.y - b.y).abs())
                .max(crate::pose_graph::normalize_angle(a.theta - b.theta).abs())
        });
    out.record("batch", err, BATCH_TOL, || "incremental GN versus batch optimum".into());
    Ok(())
}

fn check_stream(stream: &DatasetStream, graph_seed: u64, fault: Fault) -> Outcome {
    let mut out = Outcome::default();
    let mut rng = ChaCha8Rng::seed_from_u64(graph_seed ^ 0x5eed);
    if let Err(e) = check_linear_algebra(stream, &mut rng, fault, &mut out) {
        out.error("factorize", e);
    }
    if let Err(e) = check_solver(stream, &mut out) {
        out.error("incremental_factor", e);
    }
    out
}

/// Shortest prefix of `stream` on which `check` still fails.
fn shrink(stream: &DatasetStream, graph_seed: u64, fault: Fault, check: &str) -> DatasetStream {
    (0..=stream.edges.len())
        .map(|k| truncate(stream, k))
        .find(|s| check_stream(s, graph_seed, fault).violations.iter().any(|v| v.check == check))
        .unwrap_or_else(|| stream.clone())
}

fn graph_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index as u64)
}

/// Runs every check on `n_graphs` random graphs of at most `max_poses`
/// poses. The first violation of each check is shrunk and reported.
pub fn run_suite(max_poses: usize, seed: u64, n_graphs: usize, fault: Fault) -> SuiteReport {
    let mut checks: Vec<CheckStats> = CHECKS
        .iter()
        .map(|&name| CheckStats {
            name,
            runs: 0,
            max_error: 0.0,
        })
        .collect();
    let mut failures: Vec<Failure> = Vec::new();
    for g in 0..n_graphs {
        let gs = graph_seed(seed, g);
        let mut rng = ChaCha8Rng::seed_from_u64(gs);
        let stream = random_stream(&mut rng, max_poses);
        let out = check_stream(&stream, gs, fault);
        for (name, e) in out.errors {
            let c = checks.iter_mut().find(|c| c.name == name).expect("known check");
            c.runs += 1;
            c.max_error = c.max_error.max(e);
        }
        for v in out.violations {
            if failures.iter().any(|f| f.check == v.check) {
                continue;
            }
            log::warn!("graph {g}: {} failed: {}", v.check, v.detail);
            let small = shrink(&stream, gs, fault, v.check);
            failures.push(Failure {
                check: v.check,
                graph: g,
                graph_seed: gs,
                detail: format!("{} (error {:.3e})", v.detail, v.error),
                reproducer: write_jsonl(&small),
            });
        }
    }
    SuiteReport {
        seed,
        max_poses,
        graphs: n_graphs,
        checks,
        failures,
    }
}
