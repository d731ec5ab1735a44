use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use slack_dvfs::experiment::{self, ReportFormat};
use slack_dvfs::{reclaim, scheduler, taskgraph};
use slack_dvfs::{Algorithm, ExperimentConfig, Priority, ProcessorModel, Profile, Schedule, TaskGraph};

/// Slack reclamation on multiprocessor DAG schedules with discrete DVFS levels.
#[derive(Parser)]
#[command(name = "slack-dvfs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Random,
    Lu,
    GaussJordan,
}

#[derive(Subcommand)]
enum Command {
    /// Write a task graph as JSON.
    Generate {
        #[arg(long, value_enum, default_value = "random")]
        kind: Kind,
        /// Task count; wavefront graphs use the closest level count.
        #[arg(long, default_value_t = 100)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Communication delay (s): per edge for wavefront graphs, upper bound for random graphs.
        #[arg(long)]
        comm: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List-schedule a graph and write the schedule CSV.
    Schedule {
        graph: PathBuf,
        #[arg(long, default_value = "transmeta_crusoe")]
        cpu: String,
        #[arg(long, default_value_t = 4)]
        procs: usize,
        #[arg(long, default_value = "fifo")]
        sched: Priority,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-time a schedule with a reclamation algorithm and write per-segment assignments.
    Reclaim {
        graph: PathBuf,
        schedule: PathBuf,
        #[arg(long, default_value = "transmeta_crusoe")]
        cpu: String,
        #[arg(long, default_value = "mfs")]
        alg: Algorithm,
        /// Processor count; inferred from the schedule when omitted.
        #[arg(long)]
        procs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a sweep from a profile or config file.
    Experiment {
        #[arg(long, default_value = "quick", conflicts_with = "config")]
        profile: Profile,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        cpu: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated processor counts.
        #[arg(long, value_delimiter = ',')]
        procs: Option<Vec<usize>>,
        /// Comma-separated schedulers.
        #[arg(long, value_delimiter = ',')]
        sched: Option<Vec<Priority>>,
        /// Comma-separated algorithms.
        #[arg(long, value_delimiter = ',')]
        alg: Option<Vec<Algorithm>>,
        /// Output directory for results.csv, results.json and summary.txt.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the effective config and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Render a result file (JSON or CSV) as a summary, CSV or JSON.
    Report {
        input: PathBuf,
        #[arg(long, default_value = "summary")]
        format: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure classes mapped to exit codes.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

trait Classify<T> {
    fn config(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }
    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display())).runtime()?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_graph(path: &Path) -> Result<TaskGraph, Failure> {
    TaskGraph::load(path).config()
}

fn cmd_generate(kind: Kind, size: usize, seed: u64, comm: Option<f64>, out: Option<&Path>) -> Result<(), Failure> {
    let graph = match kind {
        Kind::Random => {
            let mut params = taskgraph::RandomGraphParams {
                n_tasks: size,
                ..Default::default()
            };
            if let Some(c) = comm {
                params.comm_hi = c;
                params.comm_lo = params.comm_lo.min(c);
            }
            taskgraph::gen_random(&params, seed)
        }
        Kind::Lu => taskgraph::gen_lu(
            taskgraph::levels_for_size(size),
            comm.unwrap_or(experiment::WAVEFRONT_COMM),
        ),
        Kind::GaussJordan => taskgraph::gen_gauss_jordan(
            taskgraph::levels_for_size(size),
            comm.unwrap_or(experiment::WAVEFRONT_COMM),
        ),
    }
    .config()?;
    let mut w = output(out)?;
    writeln!(w, "{}", graph.to_json()).runtime()?;
    w.flush().runtime()
}

fn cmd_schedule(
    graph: &Path,
    cpu: &str,
    procs: usize,
    sched: Priority,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let graph = load_graph(graph)?;
    let model = ProcessorModel::from_preset_or_file(cpu).config()?;
    let schedule = scheduler::list_schedule(&graph, procs, &model, sched).config()?;
    let windows = scheduler::slack_windows(&schedule, &graph).runtime()?;
    let mut w = output(out)?;
    schedule.write_csv(&windows, &mut w).runtime()?;
    w.flush().runtime()?;
    eprintln!("makespan {:.6} s on {procs} processors", schedule.makespan);
    Ok(())
}

fn cmd_reclaim(
    graph: &Path,
    schedule: &Path,
    cpu: &str,
    alg: Algorithm,
    procs: Option<usize>,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let graph = load_graph(graph)?;
    let model = ProcessorModel::from_preset_or_file(cpu).config()?;
    let file = File::open(schedule)
        .with_context(|| format!("opening {}", schedule.display()))
        .config()?;
    let base = Schedule::read_csv(file, &graph, procs)
        .with_context(|| format!("reading {}", schedule.display()))
        .config()?;
    let none = reclaim::reclaim_schedule(&base, &graph, &model, Algorithm::None).runtime()?;
    let result = reclaim::reclaim_schedule(&base, &graph, &model, alg).runtime()?;
    let problems = result.violations(&graph, &model);
    let mut w = output(out)?;
    result.write_csv(&model, &mut w).runtime()?;
    w.flush().runtime()?;
    let normalized = result.total_energy / none.total_energy;
    eprintln!(
        "{}: energy {:.3} mJ, normalized {:.6}, savings {:.3}%",
        alg.display_name(),
        result.total_energy,
        normalized,
        100.0 * (1.0 - normalized)
    );
    if !problems.is_empty() {
        for p in &problems {
            eprintln!("violation: {p}");
        }
        return Err(Failure::Runtime(anyhow::anyhow!("{} violations", problems.len())));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_experiment(
    profile: Profile,
    config: Option<&Path>,
    cpu: Option<String>,
    seed: Option<u64>,
    procs: Option<Vec<usize>>,
    sched: Option<Vec<Priority>>,
    alg: Option<Vec<Algorithm>>,
    out: Option<&Path>,
    print_config: bool,
) -> Result<(), Failure> {
    let mut cfg = match config {
        Some(p) => ExperimentConfig::load(p).config()?,
        None => profile.config(),
    };
    if let Some(c) = cpu {
        cfg.cpu = c;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(p) = procs {
        cfg.processors = p;
    }
    if let Some(s) = sched {
        cfg.schedulers = s;
    }
    if let Some(a) = alg {
        cfg.algorithms = a;
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .runtime()?;
        cfg.output.csv = Some(dir.join("results.csv"));
        cfg.output.json = Some(dir.join("results.json"));
        cfg.output.summary = Some(dir.join("summary.txt"));
    }
    if print_config {
        println!("{}", cfg.to_json());
        return Ok(());
    }
    cfg.validate().config()?;

    let result = experiment::run(&cfg).map_err(|e| {
        if e.is_config() {
            Failure::Config(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    })?;
    if let Some(p) = &cfg.output.json {
        result.report(ReportFormat::Json, p).runtime()?;
    }
    let summary = experiment::Summary::new(&result).render();
    if let Some(p) = &cfg.output.summary {
        fs::write(p, &summary)
            .with_context(|| format!("writing {}", p.display()))
            .runtime()?;
    }
    print!("{summary}");
    for f in &result.failures {
        eprintln!(
            "failed cell {} {} p={} {:?}: {}",
            f.family, f.graph, f.processors, f.scheduler, f.message
        );
    }
    for v in &result.violations {
        eprintln!("violation: {v}");
    }
    eprintln!(
        "{} records, {} schedules audited, {} failures, {} violations",
        result.records.len(),
        result.audited,
        result.failures.len(),
        result.violations.len()
    );
    if !result.failures.is_empty() || !result.violations.is_empty() {
        return Err(Failure::Runtime(anyhow::anyhow!("experiment finished with errors")));
    }
    Ok(())
}

fn cmd_report(input: &Path, format: ReportFormat, out: Option<&Path>) -> Result<(), Failure> {
    let result = experiment::ExperimentResult::load(input).config()?;
    match out {
        Some(p) => result.report(format, p).runtime(),
        None => {
            let mut w = output(None)?;
            match format {
                ReportFormat::Csv => result.write_csv(&mut w).runtime()?,
                ReportFormat::Json => writeln!(w, "{}", result.to_json()).runtime()?,
                ReportFormat::Summary => write!(w, "{}", experiment::Summary::new(&result).render()).runtime()?,
            }
            w.flush().runtime()
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Generate {
            kind,
            size,
            seed,
            comm,
            out,
        } => cmd_generate(kind, size, seed, comm, out.as_deref()),
        Command::Schedule {
            graph,
            cpu,
            procs,
            sched,
            out,
        } => cmd_schedule(&graph, &cpu, procs, sched, out.as_deref()),
        Command::Reclaim {
            graph,
            schedule,
            cpu,
            alg,
            procs,
            out,
        } => cmd_reclaim(&graph, &schedule, &cpu, alg, procs, out.as_deref()),
        Command::Experiment {
            profile,
            config,
            cpu,
            seed,
            procs,
            sched,
            alg,
            out,
            print_config,
        } => cmd_experiment(
            profile,
            config.as_deref(),
            cpu,
            seed,
            procs,
            sched,
            alg,
            out.as_deref(),
            print_config,
        ),
        Command::Report { input, format, out } => cmd_report(&input, format, out.as_deref()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
