//! Batch sweeps over graph families, processor counts, list schedulers and
//! reclamation algorithms, plus CSV / JSON / text reporting.
//!
//! Every `(graph, processors, scheduler)` cell is scheduled once and then
//! re-timed by each requested algorithm against that same base schedule.
//! Energies are normalized by the cell's all-at-top-frequency baseline.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::powermodel::{ModelError, ProcessorModel};
use crate::reclaim::{self, Algorithm};
use crate::scheduler::{self, Priority};
use crate::taskgraph::{self, GraphError, RandomGraphParams, TaskCost, TaskGraph};
use crate::util::derive_seed;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("config: {0}")]
    Model(#[from] ModelError),
    #[error("config: {0}")]
    Graph(#[from] GraphError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl ExperimentError {
    /// Config problems are detected before any work starts.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            ExperimentError::Config(_) | ExperimentError::Model(_) | ExperimentError::Graph(_)
        ) || matches!(self, ExperimentError::Json { .. })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Cycle demand of structured-graph tasks in a config file:
/// `{"uniform": 7.5}` or `{"random": [5.0, 10.0]}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleSpec {
    Uniform(f64),
    Random(f64, f64),
}

impl CycleSpec {
    fn to_cost(self, seed: u64) -> TaskCost {
        match self {
            CycleSpec::Uniform(cycles) => TaskCost::Uniform { cycles },
            CycleSpec::Random(lo, hi) => TaskCost::Random { lo, hi, seed },
        }
    }

    fn is_random(self) -> bool {
        matches!(self, CycleSpec::Random(..))
    }
}

fn default_random_params() -> RandomGraphParams {
    RandomGraphParams::default()
}

/// Where the graphs of one family come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSource {
    /// Layered random DAGs; `n_tasks` is taken from the config's sizes.
    Random {
        #[serde(default = "default_random_params")]
        params: RandomGraphParams,
        /// Graphs per size; defaults to the config's `repetitions`.
        #[serde(default)]
        graphs: Option<usize>,
    },
    /// LU wavefronts with the level count closest to each size.
    Lu {
        comm: f64,
        cycles: CycleSpec,
        #[serde(default)]
        graphs: Option<usize>,
    },
    /// Gauss-Jordan wavefronts with the level count closest to each size.
    GaussJordan {
        comm: f64,
        cycles: CycleSpec,
        #[serde(default)]
        graphs: Option<usize>,
    },
    /// Graph files, each run once regardless of the config's sizes.
    Files { family: String, paths: Vec<PathBuf> },
}

impl GraphSource {
    pub fn family(&self) -> &str {
        match self {
            GraphSource::Random { .. } => "random",
            GraphSource::Lu { .. } => "lu",
            GraphSource::GaussJordan { .. } => "gauss_jordan",
            GraphSource::Files { family, .. } => family,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub json: Option<PathBuf>,
    #[serde(default)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub families: Vec<GraphSource>,
    pub sizes: Vec<usize>,
    pub processors: Vec<usize>,
    pub repetitions: usize,
    pub seed: u64,
    pub cpu: String,
    pub schedulers: Vec<Priority>,
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub output: OutputPaths,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Desk-scale sweep: 30 graphs per size, sizes 100 and 200, up to 16 processors.
    Quick,
    /// The full sweep: sizes 100-500, 2-32 processors, 300 random graphs per size.
    Full,
}

impl std::str::FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "quick" => Ok(Profile::Quick),
            "full" => Ok(Profile::Full),
            other => Err(format!("unknown profile {other:?} (expected quick or full)")),
        }
    }
}

/// Communication delay on LU / Gauss-Jordan edges. Zero: dependent wavefront
/// tasks run back to back, so only the graph shape creates slack.
pub const WAVEFRONT_COMM: f64 = 0.0;

impl Profile {
    pub fn config(self) -> ExperimentConfig {
        let (sizes, processors, random_graphs) = match self {
            Profile::Quick => (vec![100, 200], vec![2, 4, 8, 16], 30),
            Profile::Full => (vec![100, 200, 300, 400, 500], vec![2, 4, 8, 16, 32], 300),
        };
        ExperimentConfig {
            families: vec![
                GraphSource::Random {
                    params: RandomGraphParams::default(),
                    graphs: Some(random_graphs),
                },
                GraphSource::Lu {
                    comm: WAVEFRONT_COMM,
                    cycles: CycleSpec::Uniform(taskgraph::DEFAULT_TASK_CYCLES),
                    graphs: None,
                },
                GraphSource::GaussJordan {
                    comm: WAVEFRONT_COMM,
                    cycles: CycleSpec::Uniform(taskgraph::DEFAULT_TASK_CYCLES),
                    graphs: None,
                },
            ],
            sizes,
            processors,
            repetitions: 1,
            seed: 2012,
            cpu: "transmeta_crusoe".into(),
            schedulers: Priority::ALL.to_vec(),
            algorithms: Algorithm::ALL.to_vec(),
            output: OutputPaths::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| ExperimentError::Json {
            path: path.to_owned(),
            source,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn validate(&self) -> Result<ProcessorModel, ExperimentError> {
        let bad = |msg: &str| Err(ExperimentError::Config(msg.to_owned()));
        if self.families.is_empty() {
            return bad("families must not be empty");
        }
        let needs_sizes = self.families.iter().any(|f| !matches!(f, GraphSource::Files { .. }));
        if needs_sizes && (self.sizes.is_empty() || self.sizes.contains(&0)) {
            return bad("sizes must be non-empty and positive");
        }
        if self.processors.is_empty() || self.processors.contains(&0) {
            return bad("processors must be non-empty and positive");
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        if self.schedulers.is_empty() {
            return bad("schedulers must not be empty");
        }
        if self.algorithms.is_empty() {
            return bad("algorithms must not be empty");
        }
        for f in &self.families {
            match f {
                GraphSource::Random { graphs, .. } | GraphSource::Lu { graphs, .. } | GraphSource::GaussJordan { graphs, .. }
                    if *graphs == Some(0) =>
                {
                    return bad("graphs per size must be at least 1");
                }
                GraphSource::Files { paths, .. } if paths.is_empty() => {
                    return bad("file family needs at least one path");
                }
                _ => {}
            }
        }
        Ok(ProcessorModel::from_preset_or_file(&self.cpu)?)
    }
}

/// One algorithm's outcome in one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub family: String,
    pub graph: String,
    pub size: usize,
    pub processors: usize,
    pub scheduler: Priority,
    pub algorithm: Algorithm,
    /// Seconds.
    pub makespan: f64,
    /// mJ.
    pub total_energy: f64,
    pub normalized_energy: f64,
    pub savings_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub family: String,
    pub graph: String,
    pub processors: usize,
    pub scheduler: Option<Priority>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub records: Vec<Record>,
    pub failures: Vec<CellFailure>,
    /// Conservation or feasibility problems found while auditing every
    /// reclaimed schedule; empty on a healthy run.
    pub violations: Vec<String>,
    /// Number of reclaimed schedules audited.
    pub audited: usize,
}

struct GraphJob {
    family: String,
    build: Box<dyn Fn() -> Result<TaskGraph, GraphError> + Send + Sync>,
}

fn plan(config: &ExperimentConfig) -> Result<Vec<Vec<GraphJob>>, ExperimentError> {
    let mut groups = Vec::new();
    for (fi, source) in config.families.iter().enumerate() {
        let family = source.family().to_owned();
        match source {
            GraphSource::Files { paths, .. } => {
                // fail fast on unreadable files
                for p in paths {
                    TaskGraph::load(p)?;
                }
                let jobs = paths
                    .iter()
                    .map(|p| {
                        let p = p.clone();
                        GraphJob {
                            family: family.clone(),
                            build: Box::new(move || TaskGraph::load(&p)),
                        }
                    })
                    .collect();
                groups.push(jobs);
            }
            _ => {
                for &size in &config.sizes {
                    let mut jobs = Vec::new();
                    let count = match source {
                        GraphSource::Random { graphs, .. } => graphs.unwrap_or(config.repetitions),
                        GraphSource::Lu { graphs, cycles, .. } | GraphSource::GaussJordan { graphs, cycles, .. } => {
                            // uniform costs give identical graphs, so one is enough by default
                            graphs.unwrap_or(if cycles.is_random() { config.repetitions } else { 1 })
                        }
                        GraphSource::Files { .. } => unreachable!(),
                    };
                    for rep in 0..count {
                        let seed = derive_seed(config.seed, &[fi as u64, size as u64, rep as u64]);
                        let build: Box<dyn Fn() -> Result<TaskGraph, GraphError> + Send + Sync> = match source {
                            GraphSource::Random { params, .. } => {
                                let params = RandomGraphParams {
                                    n_tasks: size,
                                    ..*params
                                };
                                Box::new(move || taskgraph::gen_random(&params, seed))
                            }
                            GraphSource::Lu { comm, cycles, .. } => {
                                let (comm, cost) = (*comm, cycles.to_cost(seed));
                                let levels = taskgraph::levels_for_size(size);
                                Box::new(move || taskgraph::gen_lu_with(levels, comm, cost))
                            }
                            GraphSource::GaussJordan { comm, cycles, .. } => {
                                let (comm, cost) = (*comm, cycles.to_cost(seed));
                                let levels = taskgraph::levels_for_size(size);
                                Box::new(move || taskgraph::gen_gauss_jordan_with(levels, comm, cost))
                            }
                            GraphSource::Files { .. } => unreachable!(),
                        };
                        // surface parameter errors as config errors up front
                        if rep == 0 {
                            build()?;
                        }
                        jobs.push(GraphJob {
                            family: family.clone(),
                            build,
                        });
                    }
                    groups.push(jobs);
                }
            }
        }
    }
    Ok(groups)
}

#[derive(Default)]
struct GraphOutcome {
    records: Vec<Record>,
    failures: Vec<CellFailure>,
    violations: Vec<String>,
    audited: usize,
}

fn evaluate_graph(job: &GraphJob, config: &ExperimentConfig, model: &ProcessorModel) -> GraphOutcome {
    let mut out = GraphOutcome::default();
    let graph = match (job.build)() {
        Ok(g) => g,
        Err(e) => {
            out.failures.push(CellFailure {
                family: job.family.clone(),
                graph: String::new(),
                processors: 0,
                scheduler: None,
                message: e.to_string(),
            });
            return out;
        }
    };
    let mut processors = config.processors.clone();
    processors.sort_unstable();
    processors.dedup();

    for &p in &processors {
        for &sched in &config.schedulers {
            let fail = |message: String| CellFailure {
                family: job.family.clone(),
                graph: graph.label().to_owned(),
                processors: p,
                scheduler: Some(sched),
                message,
            };
            let base = match scheduler::list_schedule(&graph, p, model, sched) {
                Ok(s) => s,
                Err(e) => {
                    out.failures.push(fail(e.to_string()));
                    continue;
                }
            };
            for v in base.violations(&graph, Some(model)) {
                out.violations.push(format!("{} p={p} {sched}: base schedule: {v}", graph.label()));
            }

            let mut baseline = None;
            let mut cell = Vec::with_capacity(config.algorithms.len());
            let mut algs = vec![Algorithm::None];
            algs.extend(config.algorithms.iter().copied().filter(|&a| a != Algorithm::None));
            for alg in algs {
                match reclaim::reclaim_schedule(&base, &graph, model, alg) {
                    Ok(r) => {
                        out.audited += 1;
                        for v in r.violations(&graph, model) {
                            out.violations.push(format!("{} p={p} {sched} {alg}: {v}", graph.label()));
                        }
                        let base_energy = *baseline.get_or_insert(r.total_energy);
                        if alg != Algorithm::None || config.algorithms.contains(&Algorithm::None) {
                            let normalized = r.total_energy / base_energy;
                            cell.push(Record {
                                family: job.family.clone(),
                                graph: graph.label().to_owned(),
                                size: graph.len(),
                                processors: p,
                                scheduler: sched,
                                algorithm: alg,
                                makespan: base.makespan,
                                total_energy: r.total_energy,
                                normalized_energy: normalized,
                                savings_pct: 100.0 * (1.0 - normalized),
                            });
                        }
                    }
                    Err(e) => out.failures.push(fail(format!("{alg}: {e}"))),
                }
            }
            cell.sort_by_key(|r| r.algorithm);
            out.records.extend(cell);
        }
    }
    out
}

/// Runs the sweep. When `config.output.csv` is set, records are appended to
/// it group by group (family, then size) in canonical order as they finish.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentResult, ExperimentError> {
    let model = config.validate()?;
    let groups = plan(config)?;

    let mut sink = match &config.output.csv {
        Some(path) => {
            let file = File::create(path).map_err(io_err(path))?;
            Some(csv::Writer::from_writer(BufWriter::new(file)))
        }
        None => None,
    };

    let mut result = ExperimentResult::default();
    for group in &groups {
        let outcomes: Vec<GraphOutcome> = group.par_iter().map(|job| evaluate_graph(job, config, &model)).collect();
        for o in outcomes {
            if let Some(w) = sink.as_mut() {
                for r in &o.records {
                    w.serialize(r)?;
                }
            }
            result.records.extend(o.records);
            result.failures.extend(o.failures);
            result.violations.extend(o.violations);
            result.audited += o.audited;
        }
        if let Some(w) = sink.as_mut() {
            w.flush().map_err(csv::Error::from)?;
        }
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Summary,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "summary" => Ok(ReportFormat::Summary),
            other => Err(format!("unknown report format {other:?} (expected csv, json or summary)")),
        }
    }
}

impl ExperimentResult {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ExperimentError> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Records only; failures and audit results are not part of the CSV.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, ExperimentError> {
        let records = csv::Reader::from_reader(input)
            .deserialize()
            .collect::<Result<Vec<Record>, _>>()?;
        Ok(Self {
            records,
            ..Default::default()
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serialization cannot fail")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e == "csv") {
            let file = File::open(path).map_err(io_err(path))?;
            return Self::read_csv(file);
        }
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| ExperimentError::Json {
            path: path.to_owned(),
            source,
        })
    }

    pub fn report(&self, format: ReportFormat, path: impl AsRef<Path>) -> Result<(), ExperimentError> {
        let path = path.as_ref();
        let text = match format {
            ReportFormat::Csv => {
                let mut buf = Vec::new();
                self.write_csv(&mut buf)?;
                buf
            }
            ReportFormat::Json => (self.to_json() + "\n").into_bytes(),
            ReportFormat::Summary => Summary::new(self).render().into_bytes(),
        };
        fs::write(path, text).map_err(io_err(path))
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Aggregates over the records of a result.
#[derive(Debug, Clone)]
pub struct Summary {
    pub families: Vec<String>,
    pub algorithms: Vec<Algorithm>,
    /// (family, algorithm) -> mean savings %.
    pub by_family: BTreeMap<(String, Algorithm), f64>,
    /// (family, algorithm, processors) -> mean savings %.
    pub by_processors: BTreeMap<(String, Algorithm, usize), f64>,
    /// (family, scheduler, algorithm, size) -> mean normalized energy.
    pub by_size: BTreeMap<(String, Priority, Algorithm, usize), f64>,
}

impl Summary {
    pub fn new(result: &ExperimentResult) -> Self {
        let mut families: Vec<String> = Vec::new();
        let mut algorithms: Vec<Algorithm> = Vec::new();
        let mut fam: BTreeMap<(String, Algorithm), Vec<f64>> = BTreeMap::new();
        let mut procs: BTreeMap<(String, Algorithm, usize), Vec<f64>> = BTreeMap::new();
        let mut size: BTreeMap<(String, Priority, Algorithm, usize), Vec<f64>> = BTreeMap::new();
        for r in &result.records {
            if !families.contains(&r.family) {
                families.push(r.family.clone());
            }
            if !algorithms.contains(&r.algorithm) {
                algorithms.push(r.algorithm);
            }
            fam.entry((r.family.clone(), r.algorithm)).or_default().push(r.savings_pct);
            procs
                .entry((r.family.clone(), r.algorithm, r.processors))
                .or_default()
                .push(r.savings_pct);
            size.entry((r.family.clone(), r.scheduler, r.algorithm, r.size))
                .or_default()
                .push(r.normalized_energy);
        }
        algorithms.sort();
        fn collapse<K: Ord>(m: BTreeMap<K, Vec<f64>>) -> BTreeMap<K, f64> {
            m.into_iter().map(|(k, v)| (k, mean(&v))).collect()
        }
        Self {
            families,
            algorithms,
            by_family: collapse(fam),
            by_processors: collapse(procs),
            by_size: collapse(size),
        }
    }

    pub fn mean_savings(&self, family: &str, alg: Algorithm) -> Option<f64> {
        self.by_family.get(&(family.to_owned(), alg)).copied()
    }

    pub fn mean_savings_at(&self, family: &str, alg: Algorithm, processors: usize) -> Option<f64> {
        self.by_processors.get(&(family.to_owned(), alg, processors)).copied()
    }

    /// Algorithm rows of the savings table (the baseline is omitted).
    pub fn table_rows(&self) -> Vec<Algorithm> {
        self.algorithms.iter().copied().filter(|&a| a != Algorithm::None).collect()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let rows = if self.table_rows().is_empty() {
            self.algorithms.clone()
        } else {
            self.table_rows()
        };

        writeln!(s, "Mean energy savings (%) by graph family").unwrap();
        write!(s, "{:<12}", "algorithm").unwrap();
        for f in &self.families {
            write!(s, " {f:>14}").unwrap();
        }
        writeln!(s).unwrap();
        for &a in &rows {
            write!(s, "{:<12}", a.display_name()).unwrap();
            for f in &self.families {
                write!(s, " {:>14.3}", self.mean_savings(f, a).unwrap_or(f64::NAN)).unwrap();
            }
            writeln!(s).unwrap();
        }

        for f in &self.families {
            let mut ps: Vec<usize> = self
                .by_processors
                .keys()
                .filter(|k| &k.0 == f)
                .map(|k| k.2)
                .collect();
            ps.sort_unstable();
            ps.dedup();
            writeln!(s, "\nMean energy savings (%) vs processors: {f}").unwrap();
            write!(s, "{:<12}", "algorithm").unwrap();
            for p in &ps {
                write!(s, " {:>9}", format!("P={p}")).unwrap();
            }
            writeln!(s).unwrap();
            for &a in &rows {
                write!(s, "{:<12}", a.display_name()).unwrap();
                for &p in &ps {
                    write!(s, " {:>9.3}", self.mean_savings_at(f, a, p).unwrap_or(f64::NAN)).unwrap();
                }
                writeln!(s).unwrap();
            }
        }

        for f in &self.families {
            let mut sizes: Vec<usize> = self.by_size.keys().filter(|k| &k.0 == f).map(|k| k.3).collect();
            sizes.sort_unstable();
            sizes.dedup();
            let mut scheds: Vec<Priority> = self.by_size.keys().filter(|k| &k.0 == f).map(|k| k.1).collect();
            scheds.sort();
            scheds.dedup();
            for sched in scheds {
                writeln!(s, "\nMean normalized energy vs tasks: {f}, {sched}").unwrap();
                write!(s, "{:<12}", "algorithm").unwrap();
                for n in &sizes {
                    write!(s, " {:>9}", format!("n={n}")).unwrap();
                }
                writeln!(s).unwrap();
                for &a in &self.algorithms {
                    write!(s, "{:<12}", a.display_name()).unwrap();
                    for &n in &sizes {
                        let v = self.by_size.get(&(f.clone(), sched, a, n)).copied().unwrap_or(f64::NAN);
                        write!(s, " {v:>9.4}").unwrap();
                    }
                    writeln!(s).unwrap();
                }
            }
        }
        s
    }
}
