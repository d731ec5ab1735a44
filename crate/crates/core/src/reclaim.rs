//! Slack reclamation: re-timing each task of a fixed schedule so it fills
//! (part of) its slack window at lower frequencies.
//!
//! Per-task energy follows `E = sum_i P(f_i) t_i + P_idle * idle_tail` with
//! `P(f) = alpha f^3 + gamma`. Every strategy executes exactly the task's
//! cycles and never runs past the window.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lpsolve::{self, LpError, TaskLp};
use crate::powermodel::ProcessorModel;
use crate::scheduler::{self, Schedule, ScheduleError, SlackWindow, Violation};
use crate::taskgraph::{TaskGraph, TaskId};
use crate::util::{approx_eq, approx_le, REL_TOL};

/// Only windows at least this many transition times long are re-timed.
pub const ELIGIBILITY_FACTOR: f64 = 20.0;

#[derive(Debug, Error)]
pub enum ReclaimError {
    #[error("task {task_id}: window {window} s is shorter than its {t_os} s execution at the top frequency")]
    InfeasibleWindow { task_id: TaskId, window: f64, t_os: f64 },
    #[error("task {task_id}: {source}")]
    Lp { task_id: TaskId, source: LpError },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Everything at the top frequency (baseline).
    None,
    Rdvfs,
    Mmf,
    Mfs,
    OptCont,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::None,
        Algorithm::Rdvfs,
        Algorithm::Mmf,
        Algorithm::Mfs,
        Algorithm::OptCont,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::None => "none",
            Algorithm::Rdvfs => "rdvfs",
            Algorithm::Mmf => "mmf",
            Algorithm::Mfs => "mfs",
            Algorithm::OptCont => "opt_cont",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Algorithm::None => "NONE",
            Algorithm::Rdvfs => "RDVFS",
            Algorithm::Mmf => "MMF-DVFS",
            Algorithm::Mfs => "MFS-DVFS",
            Algorithm::OptCont => "OPT_CONT",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "none" => Ok(Algorithm::None),
            "rdvfs" => Ok(Algorithm::Rdvfs),
            "mmf" | "mmf_dvfs" => Ok(Algorithm::Mmf),
            "mfs" | "mfs_dvfs" => Ok(Algorithm::Mfs),
            "opt" | "opt_cont" => Ok(Algorithm::OptCont),
            other => Err(format!("unknown algorithm {other:?} (expected none, rdvfs, mmf, mfs or opt)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// MHz.
    pub freq: f64,
    /// Seconds.
    pub duration: f64,
}

/// How one task spends its window: execution segments in descending
/// frequency order, then idle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyAssignment {
    pub task_id: TaskId,
    pub segments: Vec<Segment>,
    pub idle_tail: f64,
    /// mJ.
    pub energy: f64,
}

impl FrequencyAssignment {
    fn build(task_id: TaskId, mut segments: Vec<Segment>, idle_tail: f64, model: &ProcessorModel) -> Self {
        segments.sort_by(|a, b| b.freq.total_cmp(&a.freq));
        let energy = segments.iter().map(|s| model.power_at(s.freq) * s.duration).sum::<f64>()
            + model.p_idle * idle_tail;
        Self {
            task_id,
            segments,
            idle_tail,
            energy,
        }
    }

    pub fn busy_time(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn executed_cycles(&self) -> f64 {
        self.segments.iter().map(|s| s.freq * s.duration).sum()
    }
}

fn check_window(w: &SlackWindow, cycles: f64, model: &ProcessorModel) -> Result<(), ReclaimError> {
    let t_os = cycles / model.f_max();
    if w.window > 0.0 && w.window >= t_os * (1.0 - REL_TOL) {
        Ok(())
    } else {
        Err(ReclaimError::InfeasibleWindow {
            task_id: w.task_id,
            window: w.window,
            t_os,
        })
    }
}

/// Continuous frequency that exactly fills the window, and its energy.
pub fn opt_continuous(w: &SlackWindow, cycles: f64, model: &ProcessorModel) -> Result<(f64, f64), ReclaimError> {
    check_window(w, cycles, model)?;
    let f_opt = (cycles / w.window).min(model.f_max());
    Ok((f_opt, model.power_at(f_opt) * w.window))
}

/// The bound as an assignment: one continuous-frequency segment spanning the window.
pub fn opt_continuous_assignment(
    w: &SlackWindow,
    cycles: f64,
    model: &ProcessorModel,
) -> Result<FrequencyAssignment, ReclaimError> {
    let (f_opt, energy) = opt_continuous(w, cycles, model)?;
    Ok(FrequencyAssignment {
        task_id: w.task_id,
        segments: vec![Segment {
            freq: f_opt,
            duration: cycles / f_opt,
        }],
        idle_tail: (w.window - cycles / f_opt).max(0.0),
        energy,
    })
}

/// Run at the top frequency and idle for the rest of the window.
pub fn original(w: &SlackWindow, cycles: f64, model: &ProcessorModel) -> Result<FrequencyAssignment, ReclaimError> {
    check_window(w, cycles, model)?;
    let f = model.f_max();
    single_level(w, cycles, f, model)
}

fn single_level(
    w: &SlackWindow,
    cycles: f64,
    freq: f64,
    model: &ProcessorModel,
) -> Result<FrequencyAssignment, ReclaimError> {
    let run = cycles / freq;
    let segs = vec![Segment { freq, duration: run }];
    Ok(FrequencyAssignment::build(w.task_id, segs, (w.window - run).max(0.0), model))
}

/// Smallest discrete level at least as fast as the continuous optimum.
pub fn rdvfs_frequency(w: &SlackWindow, cycles: f64, model: &ProcessorModel) -> Result<f64, ReclaimError> {
    let (f_opt, _) = opt_continuous(w, cycles, model)?;
    // a level within rounding of f_opt still fits
    let f = model
        .freqs()
        .find(|&f| f >= f_opt * (1.0 - 1e-12))
        .unwrap_or_else(|| model.f_max());
    Ok(f)
}

/// One frequency: the smallest level that finishes in time.
pub fn rdvfs(w: &SlackWindow, cycles: f64, model: &ProcessorModel) -> Result<FrequencyAssignment, ReclaimError> {
    let f = rdvfs_frequency(w, cycles, model)?;
    single_level(w, cycles, f, model)
}

/// Underflow: even the lowest level leaves the window partly idle.
fn lowest_level(w: &SlackWindow, cycles: f64, model: &ProcessorModel) -> Option<FrequencyAssignment> {
    let f1 = model.f_min();
    (cycles < f1 * w.window * (1.0 - 1e-12)).then(|| {
        let run = cycles / f1;
        let segs = vec![Segment { freq: f1, duration: run }];
        FrequencyAssignment::build(w.task_id, segs, w.window - run, model)
    })
}

/// Top and bottom levels timed to fill the window exactly. Clamps to the
/// bottom level plus idle when the task is too short to fill it.
pub fn mmf_split(w: &SlackWindow, cycles: f64, model: &ProcessorModel) -> Result<FrequencyAssignment, ReclaimError> {
    check_window(w, cycles, model)?;
    if let Some(a) = lowest_level(w, cycles, model) {
        return Ok(a);
    }
    let (f1, fn_) = (model.f_min(), model.f_max());
    let t_high = ((cycles - w.window * f1) / (fn_ - f1)).max(0.0);
    let t_low = ((w.window * fn_ - cycles) / (fn_ - f1)).max(0.0);
    let segs = vec![
        Segment { freq: fn_, duration: t_high },
        Segment { freq: f1, duration: t_low },
    ];
    Ok(FrequencyAssignment::build(w.task_id, segs, 0.0, model))
}

/// Max/min-frequency mix, falling back to the RDVFS assignment whenever the
/// mix costs more. The mix alone can lose to a single level close above the
/// optimum (e.g. Transmeta with `K / T` = 530 MHz: 3808 mW vs 2928 mW).
pub fn mmf_dvfs(w: &SlackWindow, cycles: f64, model: &ProcessorModel) -> Result<FrequencyAssignment, ReclaimError> {
    let split = mmf_split(w, cycles, model)?;
    let single = rdvfs(w, cycles, model)?;
    Ok(if single.energy < split.energy { single } else { split })
}

/// Cheapest mix over all discrete levels that fills the window (the LP).
pub fn mfs_dvfs(w: &SlackWindow, cycles: f64, model: &ProcessorModel) -> Result<FrequencyAssignment, ReclaimError> {
    check_window(w, cycles, model)?;
    if let Some(a) = lowest_level(w, cycles, model) {
        return Ok(a);
    }
    let lp = TaskLp::from_model(model, cycles, w.window).map_err(|source| ReclaimError::Lp {
        task_id: w.task_id,
        source,
    })?;
    let sol = lpsolve::solve(&lp);
    let segs = lp
        .freqs()
        .iter()
        .zip(&sol.times)
        .filter(|(_, &t)| t > 0.0)
        .map(|(&freq, &duration)| Segment { freq, duration })
        .collect();
    Ok(FrequencyAssignment::build(w.task_id, segs, 0.0, model))
}

/// Applies `algorithm` to a single window, with no eligibility gate.
pub fn reclaim_task(
    w: &SlackWindow,
    cycles: f64,
    model: &ProcessorModel,
    algorithm: Algorithm,
) -> Result<FrequencyAssignment, ReclaimError> {
    match algorithm {
        Algorithm::None => original(w, cycles, model),
        Algorithm::Rdvfs => rdvfs(w, cycles, model),
        Algorithm::Mmf => mmf_dvfs(w, cycles, model),
        Algorithm::Mfs => mfs_dvfs(w, cycles, model),
        Algorithm::OptCont => opt_continuous_assignment(w, cycles, model),
    }
}

/// Whether a window is long enough for frequency switching to pay off.
pub fn is_eligible(w: &SlackWindow, model: &ProcessorModel) -> bool {
    w.window >= ELIGIBILITY_FACTOR * model.transition_time
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReclaimedSchedule {
    pub algorithm: Algorithm,
    pub base: Schedule,
    pub windows: Vec<SlackWindow>,
    /// Dense task order, one per task.
    pub assignments: Vec<FrequencyAssignment>,
    /// mJ, including idle time outside every window.
    pub total_energy: f64,
}

/// Problems found by [`ReclaimedSchedule::violations`].
#[derive(Debug, Clone, PartialEq)]
pub enum ReclaimViolation {
    Cycles { task_id: TaskId, expected: f64, actual: f64 },
    Window { task_id: TaskId, expected: f64, actual: f64 },
    NegativeTime { task_id: TaskId },
    Energy { task_id: TaskId, expected: f64, actual: f64 },
    Overrun { task_id: TaskId },
    Schedule(Violation),
    Makespan { base: f64, reclaimed: f64 },
}

impl fmt::Display for ReclaimViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReclaimViolation::Cycles { task_id, expected, actual } => {
                write!(f, "task {task_id} executes {actual} Mc, needs {expected} Mc")
            }
            ReclaimViolation::Window { task_id, expected, actual } => {
                write!(f, "task {task_id} accounts {actual} s of a {expected} s window")
            }
            ReclaimViolation::NegativeTime { task_id } => write!(f, "task {task_id} has a negative duration"),
            ReclaimViolation::Energy { task_id, expected, actual } => {
                write!(f, "task {task_id} reports {actual} mJ, segments sum to {expected} mJ")
            }
            ReclaimViolation::Overrun { task_id } => write!(f, "task {task_id} runs past its window"),
            ReclaimViolation::Schedule(v) => write!(f, "stretched schedule: {v}"),
            ReclaimViolation::Makespan { base, reclaimed } => {
                write!(f, "makespan grew from {base} to {reclaimed}")
            }
        }
    }
}

/// Re-times every task of `schedule`. Windows shorter than
/// [`ELIGIBILITY_FACTOR`] transition times keep the top-frequency execution.
pub fn reclaim_schedule(
    schedule: &Schedule,
    graph: &TaskGraph,
    model: &ProcessorModel,
    algorithm: Algorithm,
) -> Result<ReclaimedSchedule, ReclaimError> {
    let windows = scheduler::slack_windows(schedule, graph)?;
    let assignments = windows
        .iter()
        .zip(graph.tasks())
        .map(|(w, t)| {
            let alg = if is_eligible(w, model) { algorithm } else { Algorithm::None };
            reclaim_task(w, t.cycles, model, alg)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let in_windows: f64 = windows.iter().map(|w| w.window).sum();
    let outside = (schedule.n_processors as f64 * schedule.makespan - in_windows).max(0.0);
    let total_energy = assignments.iter().map(|a| a.energy).sum::<f64>() + model.p_idle * outside;
    Ok(ReclaimedSchedule {
        algorithm,
        base: schedule.clone(),
        windows,
        assignments,
        total_energy,
    })
}

impl ReclaimedSchedule {
    /// The base schedule with each task's finish moved to the end of its
    /// last execution segment.
    pub fn stretched(&self) -> Schedule {
        let mut out = self.base.clone();
        for (e, a) in out.entries.iter_mut().zip(&self.assignments) {
            e.finish = e.start + a.busy_time();
        }
        out.makespan = out.entries.iter().map(|e| e.finish).fold(0.0, f64::max);
        out
    }

    /// Cycle and window conservation, energy bookkeeping, and feasibility of
    /// the stretched schedule against the original makespan.
    pub fn violations(&self, graph: &TaskGraph, model: &ProcessorModel) -> Vec<ReclaimViolation> {
        let mut out = Vec::new();
        for ((a, w), t) in self.assignments.iter().zip(&self.windows).zip(graph.tasks()) {
            let task_id = a.task_id;
            if a.segments.iter().any(|s| s.duration < 0.0) || a.idle_tail < 0.0 {
                out.push(ReclaimViolation::NegativeTime { task_id });
            }
            let executed = a.executed_cycles();
            if !approx_eq(executed, t.cycles, REL_TOL) {
                out.push(ReclaimViolation::Cycles {
                    task_id,
                    expected: t.cycles,
                    actual: executed,
                });
            }
            let accounted = a.busy_time() + a.idle_tail;
            if !approx_eq(accounted, w.window, REL_TOL) {
                out.push(ReclaimViolation::Window {
                    task_id,
                    expected: w.window,
                    actual: accounted,
                });
            }
            let expected = a.segments.iter().map(|s| model.power_at(s.freq) * s.duration).sum::<f64>()
                + model.p_idle * a.idle_tail;
            if !approx_eq(expected, a.energy, REL_TOL) {
                out.push(ReclaimViolation::Energy {
                    task_id,
                    expected,
                    actual: a.energy,
                });
            }
            if !approx_le(a.busy_time(), w.window, REL_TOL) {
                out.push(ReclaimViolation::Overrun { task_id });
            }
        }
        let stretched = self.stretched();
        out.extend(stretched.violations(graph, None).into_iter().map(ReclaimViolation::Schedule));
        if !approx_le(stretched.makespan, self.base.makespan, REL_TOL) {
            out.push(ReclaimViolation::Makespan {
                base: self.base.makespan,
                reclaimed: stretched.makespan,
            });
        }
        out
    }

    /// Writes `task_id,freq,duration,idle_tail,energy`, one row per segment.
    /// `energy` is the segment's execution energy; the task's idle energy is
    /// `p_idle * idle_tail`.
    pub fn write_csv<W: Write>(&self, model: &ProcessorModel, out: W) -> Result<(), ReclaimError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["task_id", "freq", "duration", "idle_tail", "energy"])?;
        for a in &self.assignments {
            for s in &a.segments {
                w.serialize((a.task_id, s.freq, s.duration, a.idle_tail, model.power_at(s.freq) * s.duration))?;
            }
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}
