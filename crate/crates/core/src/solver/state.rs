use std::collections::HashSet;

use serde::Serialize;

use super::active::{edges_touching, expand_active_set, prune_active_set};
use super::gating::{gate_igg, gate_lcg};
use super::{GateFallback, Gating, PoseInit, SolverConfig};
use crate::factors::{assemble_normal_equations, linearize, partial_cost, LinearizedFactor};
use crate::metrics::{normalized_chi2, solve_flops, update_flops, FlopTally};
use crate::pose_graph::{normalize_angle, Edge, EdgeKind, Graph, NodeId, Pose2, POSE_DIM};
use crate::sparse::{amd_order, full_solve, partial_solve, solve_columns, ActiveSet, CholeskyFactor, SparseMatrix, StaticBlockCache};
use crate::Error;

/// Cost increases above this are counted as non-descent steps.
pub const DESCENT_SLACK: f64 = 1e-9;

/// Per-increment metrics.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IncrementRecord {
    pub t: usize,
    pub n_new_edges: usize,
    pub eta: f64,
    pub delta_eta: f64,
    pub gated_global: bool,
    pub gn_iters: usize,
    /// `|S|` at each solve.
    pub active_sizes: Vec<usize>,
    pub nchi2: f64,
    pub ate: Option<f64>,
    pub flops_update: u64,
    pub flops_solve: u64,
    /// Solve FLOPs had every solve been a full substitution.
    pub flops_solve_full: u64,
    pub cum_flops_update: u64,
    pub cum_flops_solve: u64,
    pub cum_flops_solve_full: u64,
    /// State updates applied.
    pub steps: usize,
    /// State updates that raised the cost by more than [`DESCENT_SLACK`].
    pub cost_increases: usize,
    pub max_cost_increase: f64,
    /// `max |d|` of the last solve.
    pub last_step_max: f64,
    pub escalations: usize,
    pub reorders: usize,
}

impl IncrementRecord {
    pub fn active_max(&self) -> usize {
        self.active_sizes.iter().copied().max().unwrap_or(0)
    }
}

/// Incremental solver state (Algorithm 1 and its baselines).
#[derive(Debug, Clone)]
pub struct SolverState {
    config: SolverConfig,
    graph: Graph,
    x: Vec<Pose2>,
    lin: Vec<LinearizedFactor>,
    factor: CholeskyFactor,
    b: Vec<f64>,
    eta_prev: f64,
    n_prev: usize,
    flops: FlopTally,
    t: usize,
    nnz_at_reorder: usize,
    node_pairs: HashSet<(usize, usize)>,
    cache: StaticBlockCache,
}

/// Initial value for a pose first reached by `edge`, composed from its
/// initialized endpoint.
pub fn initialize_pose(poses: &[Pose2], edge: &Edge) -> Result<Pose2, Error> {
    let EdgeKind::RelativePose2 { from, to, meas, .. } = &edge.kind else {
        return Err(Error::WrongEdgeKind("relative pose"));
    };
    let n = poses.len();
    match (from.0 < n, to.0 < n) {
        (true, false) => Ok(poses[from.0].compose(meas)),
        (false, true) => Ok(poses[to.0].compose(&meas.inverse())),
        (true, true) => Err(Error::WrongEdgeKind("both endpoints already initialized")),
        (false, false) => Err(Error::UnanchoredEdge { from: *from, to: *to }),
    }
}

fn apply_step(p: &Pose2, d: [f64; 3]) -> Pose2 {
    Pose2 {
        x: p.x - d[0],
        y: p.y - d[1],
        theta: normalize_angle(p.theta - d[2]),
    }
}

impl SolverState {
    /// Creates the state with pose 0 at `first_pose`, held by an anchor prior.
    pub fn init(first_pose: Pose2, config: SolverConfig) -> Result<Self, Error> {
        config.validate().map_err(Error::InvalidConfig)?;
        let mut graph = Graph::new();
        let n0 = graph.add_node(first_pose);
        let anchor = Edge::anchor(n0, first_pose, config.anchor_info)?;
        graph.add_edge(anchor)?;
        let x = vec![first_pose];
        let lin = vec![linearize(graph.edge(0), 0, &x)?];
        let mut factor = CholeskyFactor::empty();
        factor.extend(POSE_DIM);
        let mut b = vec![0.0; POSE_DIM];
        factor.add_rows(&mut b, &lin)?;
        let eta_prev = factor.logdet_diag();
        let nnz = factor.nnz();
        Ok(Self {
            config,
            graph,
            x,
            lin,
            factor,
            b,
            eta_prev,
            n_prev: POSE_DIM,
            flops: FlopTally::default(),
            t: 0,
            nnz_at_reorder: nnz,
            node_pairs: HashSet::new(),
            cache: StaticBlockCache::new(),
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn estimate(&self) -> &[Pose2] {
        &self.x
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    pub fn rhs(&self) -> &[f64] {
        &self.b
    }

    pub fn eta_prev(&self) -> f64 {
        self.eta_prev
    }

    pub fn n_prev(&self) -> usize {
        self.n_prev
    }

    pub fn flops(&self) -> &FlopTally {
        &self.flops
    }

    pub fn increment_index(&self) -> usize {
        self.t
    }

    pub fn linearizations(&self) -> &[LinearizedFactor] {
        &self.lin
    }

    /// Cost over measurement edges (the gauge anchor excluded).
    pub fn cost(&self) -> f64 {
        self.graph
            .edges()
            .iter()
            .filter(|e| !e.is_anchor())
            .map(|e| crate::factors::edge_cost(e, &self.x))
            .sum()
    }

    pub fn nchi2(&self) -> f64 {
        normalized_chi2(self.cost(), self.graph.measurement_rows().max(1))
    }

    /// `H` and `b` assembled from the stored linearizations.
    pub fn assemble_system(&self) -> (SparseMatrix, Vec<f64>) {
        assemble_normal_equations(&self.lin, self.graph.num_vars())
    }

    /// Positions (factor columns) of the variables in `s`.
    fn columns(&self, s: &ActiveSet) -> Vec<usize> {
        let perm = self.factor.perm();
        s.vars().iter().map(|&v| perm.pos(v)).collect()
    }

    fn add_pose(&mut self, p: Pose2) -> NodeId {
        let id = self.graph.add_node(p);
        self.x.push(p);
        self.factor.extend(POSE_DIM);
        self.b.extend_from_slice(&[0.0; POSE_DIM]);
        id
    }

    /// Adds `edge`, initializing a new endpoint by composition if needed.
    fn insert_edge(&mut self, edge: &Edge) -> Result<usize, Error> {
        edge.validate()?;
        let n = self.graph.num_nodes();
        match &edge.kind {
            EdgeKind::RelativePose2 { from, to, .. } => {
                let (f, t) = (from.0, to.0);
                if f >= n || t >= n {
                    if f >= n && t >= n {
                        return Err(Error::UnanchoredEdge { from: *from, to: *to });
                    }
                    let new = if f >= n { *from } else { *to };
                    if new.0 != n {
                        return Err(Error::UnknownNode(new));
                    }
                    let p = match self.config.init {
                        PoseInit::Compose => initialize_pose(&self.x, edge)?,
                        PoseInit::Origin => Pose2::identity(),
                    };
                    self.add_pose(p);
                }
                self.node_pairs.insert((f.min(t), f.max(t)));
            }
            EdgeKind::PositionPrior2 { node, .. } | EdgeKind::AnchorPrior2 { node, .. } => {
                if node.0 >= n {
                    return Err(Error::UnknownNode(*node));
                }
            }
        }
        self.graph.add_edge(edge.clone())
    }

    /// Full factorization from the stored linearizations, optionally with a
    /// fresh ordering that keeps the newest pose last.
    fn refactorize(&mut self, reorder: bool) -> Result<(), Error> {
        let n = self.graph.num_vars();
        let (h, b) = assemble_normal_equations(&self.lin, n);
        let perm = if reorder {
            let last = NodeId(self.graph.num_nodes() - 1);
            amd_order(&h, &last.vars().collect::<Vec<_>>())
        } else {
            self.factor.perm().clone()
        };
        self.factor = CholeskyFactor::factorize(&h, perm)?;
        self.b = b;
        if reorder {
            self.nnz_at_reorder = self.factor.nnz();
        }
        Ok(())
    }

    fn full_reorder(&mut self, rec: &mut IncrementRecord) -> Result<(), Error> {
        self.refactorize(true)?;
        rec.reorders += 1;
        self.flops.add_update(self.factor.sum_sq_counts());
        Ok(())
    }

    fn maybe_reorder(&mut self, rec: &mut IncrementRecord) -> Result<(), Error> {
        let nnz = self.factor.nnz() as f64;
        let triu_h = (6 * self.graph.num_nodes() + 9 * self.node_pairs.len()) as f64;
        let p = self.config.reorder;
        if nnz > p.growth * self.nnz_at_reorder as f64 && nnz > p.min_fill_ratio * triu_h {
            log::debug!("t={}: reordering at nnz {}", self.t, nnz);
            self.full_reorder(rec)?;
        }
        Ok(())
    }

    /// Solves over `s`, falling back to a reorder and full solve if the
    /// active block is rejected. Result aligned with `s.vars()`.
    fn solve(&mut self, s: &ActiveSet, rec: &mut IncrementRecord) -> Result<Vec<f64>, Error> {
        let full_cost = 2 * self.factor.nnz() as u64;
        let n = self.graph.num_vars();
        if s.len() == n || !self.config.partial_solve {
            self.flops.add_solve(full_cost, full_cost);
        } else {
            let cols = solve_columns(&self.factor, s);
            self.flops.add_solve(solve_flops(&cols, &self.factor.col_counts()), full_cost);
        }
        if s.len() == n {
            return Ok(full_solve(&self.factor, &self.b));
        }
        if !self.config.partial_solve {
            let d = full_solve(&self.factor, &self.b);
            return Ok(s.vars().iter().map(|&v| d[v]).collect());
        }
        match partial_solve(&self.factor, &self.b, s, self.t as u64, &mut self.cache) {
            Ok(d) => Ok(d),
            Err(Error::SBlockNotPositiveDefinite { column }) => {
                log::warn!("t={}: active block rejected at column {column}; refactorizing", self.t);
                rec.escalations += 1;
                self.full_reorder(rec)?;
                let d = full_solve(&self.factor, &self.b);
                Ok(s.vars().iter().map(|&v| d[v]).collect())
            }
            Err(e) => Err(e),
        }
    }

    /// Refreshes the rows of `edges` (all edges touching `s`) at the current
    /// estimate.
    fn relinearize(&mut self, s: &ActiveSet, edges: &[usize], rec: &mut IncrementRecord) -> Result<(), Error> {
        let fresh: Vec<LinearizedFactor> = edges
            .iter()
            .map(|&e| linearize(self.graph.edge(e), e, &self.x))
            .collect::<Result<_, _>>()?;
        let kappa = self.factor.col_counts();
        let cols = self.columns(s);
        self.flops.add_update(update_flops(&cols, &kappa, false));

        // rank updates walk the etree from each row's first column
        let path = self.factor.path_counts();
        let perm = self.factor.perm();
        let rank_work: u64 = edges
            .iter()
            .map(|&e| {
                let f = &self.lin[e];
                let first = (0..f.num_cols()).map(|c| perm.pos(f.var_of_col(c))).min().unwrap_or(0);
                2 * f.dim as u64 * path[first]
            })
            .sum();
        if rank_work >= self.factor.sum_sq_counts() {
            for f in fresh {
                let e = f.edge_index;
                self.lin[e] = f;
            }
            return self.refactorize(false);
        }
        let stale: Vec<LinearizedFactor> = edges.iter().map(|&e| self.lin[e].clone()).collect();
        // adding first keeps the intermediate system positive definite
        self.factor.add_rows(&mut self.b, &fresh)?;
        let removed = self.factor.remove_rows(&mut self.b, &stale);
        for f in fresh {
            let e = f.edge_index;
            self.lin[e] = f;
        }
        match removed {
            Ok(()) => Ok(()),
            Err(Error::DowndateBreaksSPD { column }) => {
                log::warn!("t={}: downdate failed at column {column}; refactorizing", self.t);
                rec.escalations += 1;
                self.full_reorder(rec)
            }
            Err(e) => Err(e),
        }
    }

    /// Processes one increment of new measurements.
    pub fn increment(&mut self, new_edges: &[Edge]) -> Result<IncrementRecord, Error> {
        assert!(!new_edges.is_empty(), "an increment needs at least one edge");
        self.t += 1;
        self.flops.begin_increment();
        let mut rec = IncrementRecord {
            t: self.t,
            n_new_edges: new_edges.len(),
            ..IncrementRecord::default()
        };

        // graph update and initial linearization
        let first = self.graph.edges().len();
        let mut seed_nodes = Vec::new();
        for e in new_edges {
            self.insert_edge(e)?;
            seed_nodes.extend(e.nodes());
        }
        let fresh: Vec<LinearizedFactor> = (first..self.graph.edges().len())
            .map(|i| linearize(self.graph.edge(i), i, &self.x))
            .collect::<Result<_, _>>()?;
        self.factor.add_rows(&mut self.b, &fresh)?;
        self.lin.extend(fresh);
        let seed = ActiveSet::from_nodes(seed_nodes);
        let kappa = self.factor.col_counts();
        self.flops.add_update(update_flops(&self.columns(&seed), &kappa, true));
        self.maybe_reorder(&mut rec)?;

        // gating
        let n_t = self.graph.num_vars();
        let eta_t = self.factor.logdet_diag();
        let (igg, d_eta) = gate_igg(eta_t, self.eta_prev, n_t, self.n_prev, self.config.tau_eta, self.config.detrend);
        rec.eta = eta_t;
        rec.delta_eta = d_eta;
        let global = match self.config.gating {
            Gating::None => true,
            Gating::Lcg => gate_lcg(new_edges),
            Gating::Igg => igg,
        };
        rec.gated_global = global;
        let mut s = if global {
            ActiveSet::all(n_t)
        } else if self.config.selective || self.config.fallback == GateFallback::Local {
            seed
        } else {
            ActiveSet::empty()
        };

        // Gauss-Newton iterations
        for it in 1..=self.config.tau_gn {
            if s.is_empty() {
                break;
            }
            let d = self.solve(&s, &mut rec)?;
            rec.gn_iters = it;
            rec.active_sizes.push(s.len());
            rec.last_step_max = d.iter().fold(0.0, |m, v| f64::max(m, v.abs()));

            let next = if self.config.selective {
                let pruned = prune_active_set(&d, &s, self.config.tau_d);
                if pruned.is_empty() {
                    break;
                }
                expand_active_set(&pruned, &self.graph)
            } else {
                if rec.last_step_max <= self.config.tau_d {
                    break;
                }
                s.clone()
            };

            let edges = if next.len() == n_t {
                (0..self.graph.edges().len()).collect()
            } else {
                edges_touching(&next, &self.graph)
            };
            let before = partial_cost(self.graph.edges(), &edges, &self.x);
            for (k, chunk) in s.vars().chunks(POSE_DIM).enumerate() {
                let node = chunk[0] / POSE_DIM;
                if next.contains(chunk[0]) {
                    let dk = &d[POSE_DIM * k..POSE_DIM * (k + 1)];
                    self.x[node] = apply_step(&self.x[node], [dk[0], dk[1], dk[2]]);
                }
            }
            let after = partial_cost(self.graph.edges(), &edges, &self.x);
            rec.steps += 1;
            if after > before + DESCENT_SLACK {
                rec.cost_increases += 1;
                rec.max_cost_increase = rec.max_cost_increase.max(after - before);
                log::debug!("t={} it={it}: cost rose by {:.3e}", self.t, after - before);
            }
            self.relinearize(&next, &edges, &mut rec)?;
            s = next;
        }

        self.eta_prev = self.factor.logdet_diag();
        self.n_prev = n_t;
        rec.flops_update = self.flops.update;
        rec.flops_solve = self.flops.solve;
        rec.flops_solve_full = self.flops.solve_full;
        rec.cum_flops_update = self.flops.cum_update;
        rec.cum_flops_solve = self.flops.cum_solve;
        rec.cum_flops_solve_full = self.flops.cum_solve_full;
        rec.nchi2 = self.nchi2();
        Ok(rec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::Variant;
    use nalgebra::Matrix3;

    fn odo(i: usize, j: usize, m: Pose2) -> Edge {
        Edge::relative(NodeId(i), NodeId(j), m, Matrix3::identity()).unwrap()
    }

    fn compose_init() -> SolverConfig {
        SolverConfig {
            init: PoseInit::Compose,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn init_examples() {
        let cfg = SolverConfig {
            anchor_info: Matrix3::identity(),
            ..SolverConfig::default()
        };
        let s = SolverState::init(Pose2::identity(), cfg).unwrap();
        assert_eq!(s.factor().to_upper().to_dense(), vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        assert_eq!(s.eta_prev(), 0.0);
        assert_eq!(s.n_prev(), 3);
        assert_eq!(s.cost(), 0.0);

        let cfg = SolverConfig {
            anchor_info: Matrix3::from_diagonal_element(100.0),
            ..SolverConfig::default()
        };
        let s = SolverState::init(Pose2::new(1.0, 2.0, 0.3), cfg).unwrap();
        assert!((s.eta_prev() - 3.0 * 10f64.ln()).abs() < 1e-12);

        let bad = SolverConfig {
            anchor_info: -Matrix3::identity(),
            ..SolverConfig::default()
        };
        assert!(SolverState::init(Pose2::identity(), bad).is_err());
    }

    #[test]
    fn pose_initialization() {
        let poses = [Pose2::identity()];
        assert_eq!(initialize_pose(&poses, &odo(0, 1, Pose2::new(1.0, 0.0, 0.0))).unwrap(), Pose2::new(1.0, 0.0, 0.0));
        let back = initialize_pose(&poses, &odo(1, 0, Pose2::new(1.0, 0.0, 0.0))).unwrap();
        assert!((back.x + 1.0).abs() < 1e-15);
        assert!(matches!(
            initialize_pose(&poses, &odo(1, 2, Pose2::identity())),
            Err(Error::UnanchoredEdge { .. })
        ));

        let mut s = SolverState::init(Pose2::identity(), compose_init()).unwrap();
        for k in 0..5 {
            s.increment(&[odo(k, k + 1, Pose2::new(1.0, 0.0, 0.0))]).unwrap();
        }
        assert_eq!(s.estimate()[5], Pose2::new(5.0, 0.0, 0.0));
    }

    #[test]
    fn zero_residual_increment_leaves_state() {
        let mut s = SolverState::init(Pose2::identity(), compose_init()).unwrap();
        let rec = s.increment(&[odo(0, 1, Pose2::new(1.0, 0.5, 0.2))]).unwrap();
        assert_eq!(rec.steps, 0);
        assert!(rec.gn_iters <= 1);
        assert!(rec.last_step_max <= 1e-3);
        assert_eq!(s.estimate()[1], Pose2::new(1.0, 0.5, 0.2));
    }

    #[test]
    fn origin_init_converges_to_odometry() {
        let cfg = Variant::Gni.configure(&SolverConfig {
            tau_d: 1e-12,
            tau_gn: 50,
            ..SolverConfig::default()
        });
        let mut s = SolverState::init(Pose2::identity(), cfg).unwrap();
        let m = Pose2::new(1.0, 0.5, 0.2);
        let rec = s.increment(&[odo(0, 1, m)]).unwrap();
        assert!(rec.steps >= 1);
        let p = s.estimate()[1];
        assert!((p.x - m.x).abs() < 1e-9 && (p.y - m.y).abs() < 1e-9 && (p.theta - m.theta).abs() < 1e-9);
    }

    #[test]
    fn rejects_gaps_and_orphans() {
        let mut s = SolverState::init(Pose2::identity(), SolverConfig::default()).unwrap();
        assert!(matches!(s.increment(&[odo(0, 2, Pose2::identity())]), Err(Error::UnknownNode(NodeId(2)))));
        let mut s = SolverState::init(Pose2::identity(), SolverConfig::default()).unwrap();
        assert!(matches!(s.increment(&[odo(1, 2, Pose2::identity())]), Err(Error::UnanchoredEdge { .. })));
    }
}
