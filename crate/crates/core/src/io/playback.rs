use std::collections::HashMap;

use nalgebra::Matrix2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::text::RawGraph;
use crate::pose_graph::{Edge, EdgeKind, NodeId, Pose2};
use crate::Error;

/// Smallest standard deviation used when building prior information.
pub const MIN_PRIOR_SIGMA: f64 = 1e-6;

/// Edges in playback order with poses relabelled `0, 1, 2, …` in the order
/// they are first reached.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStream {
    pub name: String,
    pub edges: Vec<Edge>,
    pub num_poses: usize,
    /// File vertex values (composed from odometry where a vertex is missing).
    pub initial: Vec<Pose2>,
    /// File id of each relabelled pose.
    pub original_ids: Vec<usize>,
}

impl DatasetStream {
    pub fn first_pose(&self) -> Pose2 {
        self.initial.first().copied().unwrap_or_default()
    }

    pub fn num_loop_closures(&self) -> usize {
        self.edges.iter().filter(|e| e.is_loop_closure()).count()
    }

    pub fn num_priors(&self) -> usize {
        self.edges.iter().filter(|e| !e.is_relative()).count()
    }

    /// Checks that every edge reaches at most one new pose, numbered next.
    pub fn validate(&self) -> Result<(), Error> {
        let mut n = 1;
        for (i, e) in self.edges.iter().enumerate() {
            e.validate()?;
            match &e.kind {
                EdgeKind::RelativePose2 { from, to, .. } => {
                    let (lo, hi) = (from.0.min(to.0), from.0.max(to.0));
                    if lo >= n {
                        return Err(Error::UnanchoredGraph { edge: i });
                    }
                    if hi == n {
                        n += 1;
                    } else if hi > n {
                        return Err(Error::UnknownNode(NodeId(hi)));
                    }
                }
                EdgeKind::PositionPrior2 { node, .. } | EdgeKind::AnchorPrior2 { node, .. } => {
                    if node.0 >= n {
                        return Err(Error::UnknownNode(*node));
                    }
                }
            }
        }
        if n != self.num_poses {
            return Err(Error::UnknownNode(NodeId(self.num_poses.min(n))));
        }
        Ok(())
    }

    /// The stream as a graph file (relative edges only).
    pub fn to_raw(&self) -> RawGraph {
        RawGraph {
            vertices: self.initial.iter().enumerate().map(|(i, p)| (NodeId(i), *p)).collect(),
            edges: self.edges.iter().filter(|e| e.is_relative()).cloned().collect(),
        }
    }
}

fn relative_ends(e: &Edge) -> (usize, usize) {
    match &e.kind {
        EdgeKind::RelativePose2 { from, to, .. } => (from.0, to.0),
        _ => unreachable!("file graphs hold relative edges only"),
    }
}

struct Playback<'a> {
    raw: &'a RawGraph,
    vertex: HashMap<usize, Pose2>,
    label: HashMap<usize, usize>,
    stream: DatasetStream,
}

impl Playback<'_> {
    fn known(&self, id: usize) -> bool {
        self.label.contains_key(&id)
    }

    fn initialized(&self, i: usize) -> (bool, bool) {
        let (a, b) = relative_ends(&self.raw.edges[i]);
        (self.known(a), self.known(b))
    }

    fn emit(&mut self, i: usize) {
        let EdgeKind::RelativePose2 { from, to, meas, info } = &self.raw.edges[i].kind else {
            unreachable!()
        };
        for (id, other, m) in [(to.0, from.0, *meas), (from.0, to.0, meas.inverse())] {
            if !self.known(id) {
                let base = self.stream.initial[self.label[&other]];
                let p = self.vertex.get(&id).copied().unwrap_or_else(|| base.compose(&m));
                self.label.insert(id, self.stream.initial.len());
                self.stream.initial.push(p);
                self.stream.original_ids.push(id);
            }
        }
        let e = Edge {
            kind: EdgeKind::RelativePose2 {
                from: NodeId(self.label[&from.0]),
                to: NodeId(self.label[&to.0]),
                meas: *meas,
                info: *info,
            },
        };
        self.stream.edges.push(e);
    }

    /// Emits every waiting loop closure whose endpoints are both known,
    /// in file order.
    fn flush_closures(&mut self, waiting: &mut Vec<usize>) {
        let mut k = 0;
        while k < waiting.len() {
            if self.initialized(waiting[k]) == (true, true) {
                let i = waiting.remove(k);
                self.emit(i);
            } else {
                k += 1;
            }
        }
    }
}

/// Orders file edges for incremental playback. Odometry (consecutive ids)
/// keeps file order, deferred only while neither endpoint is known; each
/// loop closure follows the edge that initializes its later endpoint.
/// Playback starts from the smallest node id. A loop closure that is the
/// only link to part of the graph is used to initialize it.
pub fn playback_order(raw: &RawGraph, name: &str) -> Result<DatasetStream, Error> {
    let start = raw
        .vertices
        .iter()
        .map(|(id, _)| id.0)
        .chain(raw.edges.iter().flat_map(|e| e.nodes().into_iter().map(|n| n.0)))
        .min();
    let mut pb = Playback {
        raw,
        vertex: raw.vertices.iter().map(|(id, p)| (id.0, *p)).collect(),
        label: HashMap::new(),
        stream: DatasetStream {
            name: name.to_string(),
            edges: Vec::with_capacity(raw.edges.len()),
            num_poses: 0,
            initial: Vec::new(),
            original_ids: Vec::new(),
        },
    };
    if let Some(s) = start {
        pb.label.insert(s, 0);
        pb.stream.initial.push(pb.vertex.get(&s).copied().unwrap_or_default());
        pb.stream.original_ids.push(s);
    }
    let (mut odometry, mut closures): (Vec<usize>, Vec<usize>) = (0..raw.edges.len()).partition(|&i| {
        let (a, b) = relative_ends(&raw.edges[i]);
        a.abs_diff(b) == 1
    });
    loop {
        let next = match odometry.iter().position(|&i| pb.initialized(i) != (false, false)) {
            Some(k) => odometry.remove(k),
            None => match closures.iter().position(|&i| pb.initialized(i) != (false, false)) {
                Some(k) => closures.remove(k),
                None => break,
            },
        };
        pb.emit(next);
        pb.flush_closures(&mut closures);
    }
    if let Some(&i) = odometry.iter().chain(&closures).min() {
        return Err(Error::UnanchoredGraph { edge: i });
    }
    pb.stream.num_poses = pb.stream.initial.len();
    Ok(pb.stream)
}

/// Adds a position prior on every `every`-th pose (0 included), centred on
/// the reference position plus Gaussian noise of `sigma` per axis. Each prior
/// follows the edge that initializes its pose.
pub fn inject_priors(stream: &DatasetStream, reference: &[Pose2], every: usize, sigma: f64, seed: u64) -> DatasetStream {
    assert!(every > 0, "prior spacing must be positive");
    assert!(reference.len() >= stream.num_poses, "reference must cover every pose");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).expect("sigma must be finite and non-negative");
    let s = sigma.max(MIN_PRIOR_SIGMA);
    let info = Matrix2::from_diagonal_element(1.0 / (s * s));
    let mut prior = |node: usize| {
        let p = reference[node];
        let meas = [p.x + noise.sample(&mut rng), p.y + noise.sample(&mut rng)];
        Edge::position_prior(NodeId(node), meas, info).expect("diagonal positive information")
    };

    let mut out = stream.clone();
    out.edges = Vec::with_capacity(stream.edges.len() + stream.num_poses / every + 1);
    out.edges.push(prior(0));
    let mut n = 1;
    for e in &stream.edges {
        out.edges.push(e.clone());
        if let EdgeKind::RelativePose2 { from, to, .. } = &e.kind {
            if from.0.max(to.0) == n {
                if n % every == 0 {
                    out.edges.push(prior(n));
                }
                n += 1;
            }
        }
    }
    out
}
