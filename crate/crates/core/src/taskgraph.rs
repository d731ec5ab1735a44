//! Task graphs: tasks with cycle demands, communication-weighted precedence
//! edges, generators for random layered DAGs and the LU / Gauss-Jordan
//! wavefront shapes, and JSON persistence.
//!
//! Graph file layout:
//!
//! ```json
//! {
//!   "label": "gauss_jordan(levels=2,comm=10,cycles=7.5)",
//!   "tasks": [{"id": 0, "cycles": 7.5}, {"id": 1, "cycles": 7.5}, {"id": 2, "cycles": 7.5}],
//!   "edges": [{"src": 0, "dst": 2, "comm": 10.0}, {"src": 1, "dst": 2, "comm": 10.0}]
//! }
//! ```
//!
//! Field order does not matter; unknown fields are rejected.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TaskId = u32;

/// Mean of the 5-10 megacycle range used for generated tasks.
pub const DEFAULT_TASK_CYCLES: f64 = 7.5;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("task {0}: cycles must be positive and finite, got {1}")]
    NonPositiveCycles(TaskId, f64),
    #[error("duplicate task id {0}")]
    DuplicateTask(TaskId),
    #[error("edge {src}->{dst} references missing task {missing}")]
    MissingTask {
        src: TaskId,
        dst: TaskId,
        missing: TaskId,
    },
    #[error("self-loop on task {0}")]
    SelfLoop(TaskId),
    #[error("duplicate edge {0}->{1}")]
    DuplicateEdge(TaskId, TaskId),
    #[error("edge {src}->{dst}: communication cost must be non-negative and finite, got {comm}")]
    NegativeComm { src: TaskId, dst: TaskId, comm: f64 },
    #[error("graph contains a cycle through task {0}")]
    Cycle(TaskId),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: malformed graph file: {source}", path.display())]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub id: TaskId,
    /// Megacycles.
    pub cycles: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub src: TaskId,
    pub dst: TaskId,
    /// Seconds; only paid when `src` and `dst` run on different processors.
    pub comm: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    tasks: Vec<Task>,
    edges: Vec<Edge>,
    label: String,
}

/// A validated DAG. Construction through [`TaskGraph::new`] guarantees unique
/// ids, positive cycle counts, referential integrity and acyclicity.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskGraph {
    tasks: Vec<Task>,
    edges: Vec<Edge>,
    label: String,
    index: HashMap<TaskId, usize>,
    preds: Vec<Vec<(usize, f64)>>,
    succs: Vec<Vec<(usize, f64)>>,
    topo: Vec<usize>,
}

impl TaskGraph {
    pub fn new(tasks: Vec<Task>, edges: Vec<Edge>, label: impl Into<String>) -> Result<Self, GraphError> {
        let mut index = HashMap::with_capacity(tasks.len());
        for (i, t) in tasks.iter().enumerate() {
            if !(t.cycles > 0.0 && t.cycles.is_finite()) {
                return Err(GraphError::NonPositiveCycles(t.id, t.cycles));
            }
            if index.insert(t.id, i).is_some() {
                return Err(GraphError::DuplicateTask(t.id));
            }
        }

        let mut preds = vec![Vec::new(); tasks.len()];
        let mut succs = vec![Vec::new(); tasks.len()];
        let mut seen = HashSet::with_capacity(edges.len());
        for e in &edges {
            let lookup = |id: TaskId| {
                index.get(&id).copied().ok_or(GraphError::MissingTask {
                    src: e.src,
                    dst: e.dst,
                    missing: id,
                })
            };
            let s = lookup(e.src)?;
            let d = lookup(e.dst)?;
            if s == d {
                return Err(GraphError::SelfLoop(e.src));
            }
            if !(e.comm >= 0.0 && e.comm.is_finite()) {
                return Err(GraphError::NegativeComm {
                    src: e.src,
                    dst: e.dst,
                    comm: e.comm,
                });
            }
            if !seen.insert((e.src, e.dst)) {
                return Err(GraphError::DuplicateEdge(e.src, e.dst));
            }
            succs[s].push((d, e.comm));
            preds[d].push((s, e.comm));
        }

        let topo = topological_order(&tasks, &preds, &succs)?;
        Ok(Self {
            tasks,
            edges,
            label: label.into(),
            index,
            preds,
            succs,
            topo,
        })
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Dense index of a task id (position in [`TaskGraph::tasks`]).
    pub fn index_of(&self, id: TaskId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    /// `(predecessor index, comm)` pairs of the task at dense index `i`.
    pub fn predecessors(&self, i: usize) -> &[(usize, f64)] {
        &self.preds[i]
    }

    /// `(successor index, comm)` pairs of the task at dense index `i`.
    pub fn successors(&self, i: usize) -> &[(usize, f64)] {
        &self.succs[i]
    }

    /// Dense indices in a topological order (Kahn's algorithm, smallest id first).
    pub fn topological_order(&self) -> &[usize] {
        &self.topo
    }

    pub fn total_cycles(&self) -> f64 {
        self.tasks.iter().map(|t| t.cycles).sum()
    }

    pub fn to_json(&self) -> String {
        let file = GraphFile {
            tasks: self.tasks.clone(),
            edges: self.edges.clone(),
            label: self.label.clone(),
        };
        serde_json::to_string_pretty(&file).expect("graph serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        Self::parse(text, Path::new("<memory>"))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GraphError> {
        let path = path.as_ref();
        fs::write(path, self.to_json() + "\n").map_err(|source| GraphError::Io {
            path: path.to_owned(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GraphError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| GraphError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(&text, path)
    }

    fn parse(text: &str, path: &Path) -> Result<Self, GraphError> {
        let file: GraphFile = serde_json::from_str(text).map_err(|source| GraphError::Parse {
            path: path.to_owned(),
            source,
        })?;
        Self::new(file.tasks, file.edges, file.label)
    }
}

fn topological_order(
    tasks: &[Task],
    preds: &[Vec<(usize, f64)>],
    succs: &[Vec<(usize, f64)>],
) -> Result<Vec<usize>, GraphError> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    let mut indeg: Vec<usize> = preds.iter().map(Vec::len).collect();
    let mut ready: BinaryHeap<Reverse<(TaskId, usize)>> = indeg
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == 0)
        .map(|(i, _)| Reverse((tasks[i].id, i)))
        .collect();
    let mut order = Vec::with_capacity(tasks.len());
    while let Some(Reverse((_, i))) = ready.pop() {
        order.push(i);
        for &(s, _) in &succs[i] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.push(Reverse((tasks[s].id, s)));
            }
        }
    }
    if order.len() != tasks.len() {
        let stuck = indeg
            .iter()
            .enumerate()
            .filter(|(_, &d)| d > 0)
            .map(|(i, _)| tasks[i].id)
            .min()
            .expect("unfinished order implies a blocked task");
        return Err(GraphError::Cycle(stuck));
    }
    Ok(order)
}

/// Per-task cycle demand for the structured (LU / Gauss-Jordan) generators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskCost {
    /// Every task needs the same number of megacycles.
    Uniform { cycles: f64 },
    /// Cycles drawn uniformly from `[lo, hi]` with a seeded generator.
    Random { lo: f64, hi: f64, seed: u64 },
}

impl Default for TaskCost {
    fn default() -> Self {
        TaskCost::Uniform {
            cycles: DEFAULT_TASK_CYCLES,
        }
    }
}

impl TaskCost {
    fn validate(&self) -> Result<(), GraphError> {
        match *self {
            TaskCost::Uniform { cycles } if !(cycles > 0.0 && cycles.is_finite()) => {
                Err(GraphError::Parameter(format!("uniform cycles must be positive, got {cycles}")))
            }
            TaskCost::Random { lo, hi, .. } if !(lo > 0.0 && lo <= hi && hi.is_finite()) => Err(
                GraphError::Parameter(format!("random cycle range must satisfy 0 < lo <= hi, got [{lo}, {hi}]")),
            ),
            _ => Ok(()),
        }
    }

    fn sampler(&self) -> impl FnMut() -> f64 {
        let cost = *self;
        let mut rng = match cost {
            TaskCost::Random { seed, .. } => ChaCha8Rng::seed_from_u64(seed),
            TaskCost::Uniform { .. } => ChaCha8Rng::seed_from_u64(0),
        };
        move || match cost {
            TaskCost::Uniform { cycles } => cycles,
            TaskCost::Random { lo, hi, .. } => uniform(&mut rng, lo, hi),
        }
    }

    fn describe(&self) -> String {
        match self {
            TaskCost::Uniform { cycles } => format!("cycles={cycles}"),
            TaskCost::Random { lo, hi, seed } => format!("cycles=U[{lo},{hi}],seed={seed}"),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Parameters of the layered random DAG generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomGraphParams {
    pub n_tasks: usize,
    /// Megacycles.
    pub cycle_lo: f64,
    pub cycle_hi: f64,
    /// Upper bound on tasks per layer; actual widths are uniform in `1..=layer_width`.
    pub layer_width: usize,
    /// Probability of an edge between any task and any task of a later layer.
    pub edge_prob: f64,
    /// Seconds.
    pub comm_lo: f64,
    pub comm_hi: f64,
}

impl Default for RandomGraphParams {
    fn default() -> Self {
        Self {
            n_tasks: 100,
            cycle_lo: 5.0,
            cycle_hi: 10.0,
            layer_width: 8,
            edge_prob: 0.1,
            comm_lo: 0.001,
            comm_hi: 0.005,
        }
    }
}

impl RandomGraphParams {
    fn validate(&self) -> Result<(), GraphError> {
        let bad = |msg: String| Err(GraphError::Parameter(msg));
        if self.n_tasks == 0 {
            return bad("n_tasks must be at least 1".into());
        }
        if self.layer_width == 0 {
            return bad("layer_width must be at least 1".into());
        }
        if !(self.cycle_lo > 0.0 && self.cycle_lo <= self.cycle_hi && self.cycle_hi.is_finite()) {
            return bad(format!(
                "cycle range must satisfy 0 < lo <= hi, got [{}, {}]",
                self.cycle_lo, self.cycle_hi
            ));
        }
        if !(0.0..=1.0).contains(&self.edge_prob) {
            return bad(format!("edge_prob must lie in [0, 1], got {}", self.edge_prob));
        }
        if !(self.comm_lo >= 0.0 && self.comm_lo <= self.comm_hi && self.comm_hi.is_finite()) {
            return bad(format!(
                "comm range must satisfy 0 <= lo <= hi, got [{}, {}]",
                self.comm_lo, self.comm_hi
            ));
        }
        Ok(())
    }
}

/// Layered random DAG. Ids are `0..n_tasks` in layer order; edges only go
/// from an earlier layer to a later one.
pub fn gen_random(params: &RandomGraphParams, seed: u64) -> Result<TaskGraph, GraphError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.n_tasks;

    let mut layer_of = Vec::with_capacity(n);
    let mut layer = 0usize;
    while layer_of.len() < n {
        let width = rng.gen_range(1..=params.layer_width).min(n - layer_of.len());
        layer_of.extend(std::iter::repeat_n(layer, width));
        layer += 1;
    }

    let tasks: Vec<Task> = (0..n)
        .map(|i| Task {
            id: i as TaskId,
            cycles: uniform(&mut rng, params.cycle_lo, params.cycle_hi),
        })
        .collect();

    let mut edges = Vec::new();
    for dst in 0..n {
        for src in 0..dst {
            if layer_of[src] < layer_of[dst] && rng.gen_bool(params.edge_prob) {
                edges.push(Edge {
                    src: src as TaskId,
                    dst: dst as TaskId,
                    comm: uniform(&mut rng, params.comm_lo, params.comm_hi),
                });
            }
        }
    }

    let label = format!(
        "random(n={},cycles=[{},{}],width={},p={},comm=[{},{}],seed={})",
        n,
        params.cycle_lo,
        params.cycle_hi,
        params.layer_width,
        params.edge_prob,
        params.comm_lo,
        params.comm_hi,
        seed
    );
    TaskGraph::new(tasks, edges, label)
}

fn check_levels(levels: usize, comm: f64) -> Result<(), GraphError> {
    if levels == 0 {
        return Err(GraphError::Parameter("levels must be at least 1".into()));
    }
    if !(comm >= 0.0 && comm.is_finite()) {
        return Err(GraphError::Parameter(format!("comm must be non-negative, got {comm}")));
    }
    Ok(())
}

/// Gauss-Jordan wavefront with uniform default task cost.
pub fn gen_gauss_jordan(levels: usize, comm: f64) -> Result<TaskGraph, GraphError> {
    gen_gauss_jordan_with(levels, comm, TaskCost::default())
}

/// Gauss-Jordan wavefront: level `l` (1-based) holds the tasks for columns
/// `l..=L`, so it has `L - l + 1` tasks. Task `(l, c)` feeds every task
/// `(l + 1, c')` with `c' >= c`. Ids run level by level, columns ascending.
pub fn gen_gauss_jordan_with(levels: usize, comm: f64, cost: TaskCost) -> Result<TaskGraph, GraphError> {
    check_levels(levels, comm)?;
    cost.validate()?;
    let mut draw = cost.sampler();

    // ids[l][c - l] for 1-based level l and column c
    let mut ids: Vec<Vec<TaskId>> = Vec::with_capacity(levels);
    let mut tasks = Vec::with_capacity(levels * (levels + 1) / 2);
    for l in 1..=levels {
        let row = (l..=levels)
            .map(|_| {
                let id = tasks.len() as TaskId;
                tasks.push(Task { id, cycles: draw() });
                id
            })
            .collect();
        ids.push(row);
    }

    let mut edges = Vec::new();
    for l in 1..levels {
        for c in l..=levels {
            for c2 in c.max(l + 1)..=levels {
                edges.push(Edge {
                    src: ids[l - 1][c - l],
                    dst: ids[l][c2 - l - 1],
                    comm,
                });
            }
        }
    }

    let label = format!("gauss_jordan(levels={levels},comm={comm},{})", cost.describe());
    TaskGraph::new(tasks, edges, label)
}

/// LU wavefront with uniform default task cost.
pub fn gen_lu(levels: usize, comm: f64) -> Result<TaskGraph, GraphError> {
    gen_lu_with(levels, comm, TaskCost::default())
}

/// Column LU factorization DAG. Level `l` (1-based) has a pivot task for
/// column `l` and update tasks for columns `l+1..=L`. The pivot feeds every
/// update of its level; update `(l, j)` feeds the next pivot when `j = l + 1`
/// and the same-column update `(l + 1, j)` otherwise. Ids run level by
/// level: pivot first, then updates by column.
pub fn gen_lu_with(levels: usize, comm: f64, cost: TaskCost) -> Result<TaskGraph, GraphError> {
    check_levels(levels, comm)?;
    cost.validate()?;
    let mut draw = cost.sampler();

    let mut tasks = Vec::with_capacity(levels + levels * (levels - 1) / 2);
    let mut next_task = || {
        let id = tasks.len() as TaskId;
        tasks.push(Task { id, cycles: draw() });
        id
    };
    // pivots[l - 1], updates[l - 1][j - l - 1]
    let mut pivots = Vec::with_capacity(levels);
    let mut updates: Vec<Vec<TaskId>> = Vec::with_capacity(levels);
    for l in 1..=levels {
        pivots.push(next_task());
        updates.push((l + 1..=levels).map(|_| next_task()).collect());
    }

    let mut edges = Vec::new();
    for l in 1..=levels {
        let row = &updates[l - 1];
        for &u in row {
            edges.push(Edge {
                src: pivots[l - 1],
                dst: u,
                comm,
            });
        }
        if l == levels {
            continue;
        }
        for (k, &u) in row.iter().enumerate() {
            let j = l + 1 + k;
            let dst = if j == l + 1 { pivots[l] } else { updates[l][j - l - 2] };
            edges.push(Edge { src: u, dst, comm });
        }
    }

    let label = format!("lu(levels={levels},comm={comm},{})", cost.describe());
    TaskGraph::new(tasks, edges, label)
}

/// Task count of an `L`-level LU or Gauss-Jordan graph (both are `L(L+1)/2`).
pub fn wavefront_tasks(levels: usize) -> usize {
    levels * (levels + 1) / 2
}

/// Number of levels whose wavefront task count is closest to `size`
/// (ties go to the smaller graph).
pub fn levels_for_size(size: usize) -> usize {
    let mut best = 1;
    for l in 1.. {
        let n = wavefront_tasks(l);
        if n.abs_diff(size) < wavefront_tasks(best).abs_diff(size) {
            best = l;
        }
        if n >= size {
            break;
        }
    }
    best
}
