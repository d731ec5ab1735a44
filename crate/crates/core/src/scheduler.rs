//! Insertion-free list scheduling on identical processors and slack-window
//! extraction.
//!
//! Every task runs at the top frequency in the base schedule. A successor on
//! a different processor may start only `comm` seconds after its predecessor
//! finishes; on the same processor communication is free.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::powermodel::ProcessorModel;
use crate::taskgraph::{TaskGraph, TaskId};
use crate::util::{approx_le, REL_TOL};

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("schedule does not match graph: {0}")]
    Mismatch(String),
    #[error("schedule csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Priority {
    /// Earliest readiness first.
    Fifo,
    /// Longest processing time first.
    Lpt,
    /// Shortest processing time first.
    Spt,
}

impl Priority {
    pub const ALL: [Priority; 3] = [Priority::Fifo, Priority::Lpt, Priority::Spt];

    pub fn as_str(self) -> &'static str {
        match self {
            Priority::Fifo => "fifo",
            Priority::Lpt => "lpt",
            Priority::Spt => "spt",
        }
    }
}

impl fmt::Display for Priority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Priority {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fifo" | "list" => Ok(Priority::Fifo),
            "lpt" => Ok(Priority::Lpt),
            "spt" => Ok(Priority::Spt),
            other => Err(format!("unknown scheduler {other:?} (expected fifo, lpt or spt)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub task_id: TaskId,
    pub processor: usize,
    pub start: f64,
    pub finish: f64,
}

/// Entries are stored in dense task order (same order as `graph.tasks()`).
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub entries: Vec<ScheduleEntry>,
    pub n_processors: usize,
    pub makespan: f64,
}

/// Time the processor can devote to a task without delaying anything else.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlackWindow {
    pub task_id: TaskId,
    /// Execution time at the top frequency.
    pub t_os: f64,
    /// Allotted time, `t_os` plus slack.
    pub window: f64,
    pub start: f64,
}

impl SlackWindow {
    pub fn slack(&self) -> f64 {
        self.window - self.t_os
    }
}

/// One precedence or overlap problem found by [`Schedule::violations`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Precedence { src: TaskId, dst: TaskId, ready: f64, start: f64 },
    Overlap { processor: usize, first: TaskId, second: TaskId },
    Duration { task_id: TaskId, expected: f64, actual: f64 },
    Makespan { expected: f64, actual: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Precedence { src, dst, ready, start } => {
                write!(f, "task {dst} starts at {start} before data from {src} arrives at {ready}")
            }
            Violation::Overlap { processor, first, second } => {
                write!(f, "tasks {first} and {second} overlap on processor {processor}")
            }
            Violation::Duration { task_id, expected, actual } => {
                write!(f, "task {task_id} runs {actual} s, expected {expected} s")
            }
            Violation::Makespan { expected, actual } => write!(f, "makespan {actual}, expected {expected}"),
        }
    }
}

pub fn list_schedule(
    graph: &TaskGraph,
    n_processors: usize,
    model: &ProcessorModel,
    priority: Priority,
) -> Result<Schedule, ScheduleError> {
    if n_processors == 0 {
        return Err(ScheduleError::Parameter("need at least one processor".into()));
    }
    let n = graph.len();
    let f_max = model.f_max();
    let tasks = graph.tasks();
    let t_os: Vec<f64> = tasks.iter().map(|t| t.cycles / f_max).collect();

    let mut unscheduled_preds: Vec<usize> = (0..n).map(|i| graph.predecessors(i).len()).collect();
    // (dense index, readiness time) of tasks whose predecessors are all placed
    let mut ready: Vec<(usize, f64)> = (0..n).filter(|&i| unscheduled_preds[i] == 0).map(|i| (i, 0.0)).collect();
    let mut placed: Vec<Option<(usize, f64, f64)>> = vec![None; n];
    let mut available = vec![0.0f64; n_processors];

    let better = |a: &(usize, f64), b: &(usize, f64)| -> bool {
        let key = match priority {
            Priority::Fifo => a.1.total_cmp(&b.1),
            Priority::Lpt => t_os[b.0].total_cmp(&t_os[a.0]),
            Priority::Spt => t_os[a.0].total_cmp(&t_os[b.0]),
        };
        key.then(tasks[a.0].id.cmp(&tasks[b.0].id)).is_lt()
    };

    while !ready.is_empty() {
        let mut pick = 0;
        for k in 1..ready.len() {
            if better(&ready[k], &ready[pick]) {
                pick = k;
            }
        }
        let (i, _) = ready.swap_remove(pick);

        let mut best: Option<(usize, f64)> = None;
        for (q, &avail) in available.iter().enumerate() {
            let data_ready = graph
                .predecessors(i)
                .iter()
                .map(|&(p, comm)| {
                    let (pq, _, pf) = placed[p].expect("predecessor placed before successor");
                    if pq == q {
                        pf
                    } else {
                        pf + comm
                    }
                })
                .fold(0.0, f64::max);
            let est = avail.max(data_ready);
            if best.is_none_or(|(_, b)| est < b) {
                best = Some((q, est));
            }
        }
        let (q, start) = best.expect("at least one processor");
        let finish = start + t_os[i];
        placed[i] = Some((q, start, finish));
        available[q] = finish;

        for &(s, _) in graph.successors(i) {
            unscheduled_preds[s] -= 1;
            if unscheduled_preds[s] == 0 {
                let readiness = graph
                    .predecessors(s)
                    .iter()
                    .map(|&(p, _)| placed[p].expect("all predecessors placed").2)
                    .fold(0.0, f64::max);
                ready.push((s, readiness));
            }
        }
    }

    let entries: Vec<ScheduleEntry> = placed
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            // TaskGraph guarantees acyclicity, so every task gets placed.
            let (processor, start, finish) = p.expect("acyclic graph schedules every task");
            ScheduleEntry {
                task_id: tasks[i].id,
                processor,
                start,
                finish,
            }
        })
        .collect();
    let makespan = entries.iter().map(|e| e.finish).fold(0.0, f64::max);
    Ok(Schedule {
        entries,
        n_processors,
        makespan,
    })
}

impl Schedule {
    /// Checks that the schedule covers exactly the graph's tasks in dense order.
    pub fn check_matches(&self, graph: &TaskGraph) -> Result<(), ScheduleError> {
        if self.entries.len() != graph.len() {
            return Err(ScheduleError::Mismatch(format!(
                "{} entries for {} tasks",
                self.entries.len(),
                graph.len()
            )));
        }
        for (e, t) in self.entries.iter().zip(graph.tasks()) {
            if e.task_id != t.id {
                return Err(ScheduleError::Mismatch(format!(
                    "entry for task {} where task {} was expected",
                    e.task_id, t.id
                )));
            }
            if e.processor >= self.n_processors {
                return Err(ScheduleError::Mismatch(format!(
                    "task {} on processor {} of {}",
                    e.task_id, e.processor, self.n_processors
                )));
            }
        }
        Ok(())
    }

    /// Entry indices per processor, ordered by start time.
    pub fn by_processor(&self) -> Vec<Vec<usize>> {
        let mut lanes = vec![Vec::new(); self.n_processors];
        for (i, e) in self.entries.iter().enumerate() {
            lanes[e.processor].push(i);
        }
        for lane in &mut lanes {
            lane.sort_by(|&a, &b| {
                let (ea, eb) = (&self.entries[a], &self.entries[b]);
                ea.start.total_cmp(&eb.start).then(ea.task_id.cmp(&eb.task_id))
            });
        }
        lanes
    }

    /// Precedence (with communication delay), per-processor overlap and
    /// makespan checks. Durations are checked against `cycles / f_max` when a
    /// model is given (base schedules only; reclaimed schedules stretch tasks).
    pub fn violations(&self, graph: &TaskGraph, model: Option<&ProcessorModel>) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.check_matches(graph).is_err() {
            return out;
        }
        let scale = self.makespan.abs().max(1.0);
        let tol = REL_TOL * scale;

        for (i, e) in self.entries.iter().enumerate() {
            for &(p, comm) in graph.predecessors(i) {
                let pe = &self.entries[p];
                let ready = if pe.processor == e.processor { pe.finish } else { pe.finish + comm };
                if e.start + tol < ready {
                    out.push(Violation::Precedence {
                        src: pe.task_id,
                        dst: e.task_id,
                        ready,
                        start: e.start,
                    });
                }
            }
            if let Some(m) = model {
                let expected = graph.tasks()[i].cycles / m.f_max();
                let actual = e.finish - e.start;
                if (actual - expected).abs() > tol {
                    out.push(Violation::Duration {
                        task_id: e.task_id,
                        expected,
                        actual,
                    });
                }
            }
        }
        for (q, lane) in self.by_processor().iter().enumerate() {
            for w in lane.windows(2) {
                let (a, b) = (&self.entries[w[0]], &self.entries[w[1]]);
                if b.start + tol < a.finish {
                    out.push(Violation::Overlap {
                        processor: q,
                        first: a.task_id,
                        second: b.task_id,
                    });
                }
            }
        }
        let actual = self.entries.iter().map(|e| e.finish).fold(0.0, f64::max);
        if !approx_le(actual, self.makespan, REL_TOL) || !approx_le(self.makespan, actual, REL_TOL) {
            out.push(Violation::Makespan {
                expected: self.makespan,
                actual,
            });
        }
        out
    }

    /// Writes `task_id,processor,start,finish,T`.
    pub fn write_csv<W: Write>(&self, windows: &[SlackWindow], out: W) -> Result<(), ScheduleError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["task_id", "processor", "start", "finish", "T"])?;
        for (e, win) in self.entries.iter().zip(windows) {
            w.serialize((e.task_id, e.processor, e.start, e.finish, win.window))?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Reads a schedule CSV back, reordering rows to the graph's dense order.
    /// `n_processors` defaults to one more than the largest processor index.
    pub fn read_csv<R: Read>(input: R, graph: &TaskGraph, n_processors: Option<usize>) -> Result<Self, ScheduleError> {
        #[derive(Deserialize)]
        struct Row {
            task_id: TaskId,
            processor: usize,
            start: f64,
            finish: f64,
            #[serde(rename = "T")]
            _window: f64,
        }
        let mut slots: Vec<Option<ScheduleEntry>> = vec![None; graph.len()];
        for row in csv::Reader::from_reader(input).deserialize::<Row>() {
            let row = row?;
            let i = graph
                .index_of(row.task_id)
                .ok_or_else(|| ScheduleError::Mismatch(format!("unknown task {}", row.task_id)))?;
            if slots[i].is_some() {
                return Err(ScheduleError::Mismatch(format!("task {} listed twice", row.task_id)));
            }
            slots[i] = Some(ScheduleEntry {
                task_id: row.task_id,
                processor: row.processor,
                start: row.start,
                finish: row.finish,
            });
        }
        let entries = slots
            .into_iter()
            .zip(graph.tasks())
            .map(|(s, t)| s.ok_or_else(|| ScheduleError::Mismatch(format!("task {} missing", t.id))))
            .collect::<Result<Vec<_>, _>>()?;
        let used = entries.iter().map(|e| e.processor + 1).max().unwrap_or(1);
        let n_processors = n_processors.unwrap_or(used);
        if n_processors < used {
            return Err(ScheduleError::Mismatch(format!(
                "processor index {} out of range for {} processors",
                used - 1,
                n_processors
            )));
        }
        let makespan = entries.iter().map(|e| e.finish).fold(0.0, f64::max);
        Ok(Self {
            entries,
            n_processors,
            makespan,
        })
    }
}

/// Slack window of every task, in dense task order.
///
/// A task may stretch until the earliest of: the start of the next task on
/// its processor (the makespan if none), and for every successor `s`, the
/// latest finish that still delivers data on time (`start(s) - comm` across
/// processors, `start(s)` locally). Stretching every task to its window keeps
/// the schedule feasible and the makespan unchanged.
pub fn slack_windows(schedule: &Schedule, graph: &TaskGraph) -> Result<Vec<SlackWindow>, ScheduleError> {
    schedule.check_matches(graph)?;
    let entries = &schedule.entries;
    let mut next_local = vec![schedule.makespan; entries.len()];
    for lane in schedule.by_processor() {
        for w in lane.windows(2) {
            next_local[w[0]] = entries[w[1]].start;
        }
    }
    Ok(entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let deadline = graph
                .successors(i)
                .iter()
                .map(|&(s, comm)| {
                    let se = &entries[s];
                    if se.processor == e.processor {
                        se.start
                    } else {
                        se.start - comm
                    }
                })
                .fold(next_local[i], f64::min);
            let t_os = e.finish - e.start;
            SlackWindow {
                task_id: e.task_id,
                t_os,
                // rounding in (finish + comm) - comm may undercut finish
                window: (deadline - e.start).max(t_os),
                start: e.start,
            }
        })
        .collect())
}
