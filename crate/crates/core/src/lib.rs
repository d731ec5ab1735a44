//! Energy-aware slack reclamation for list-scheduled task graphs.
//!
//! The pipeline is: build or load a [`taskgraph::TaskGraph`], list-schedule it
//! on homogeneous processors running at the top frequency
//! ([`scheduler::list_schedule`]), extract per-task slack windows, then
//! re-time every task with one of the reclamation strategies in [`reclaim`]:
//!
//! * `RDVFS`: one discrete frequency, the smallest one that still fits.
//! * `MMF`: a timed mix of the lowest and highest frequencies.
//! * `MFS`: the cheapest timed mix over all discrete levels, solved as a
//!   small linear program ([`lpsolve`]).
//! * `OPT_CONT`: the continuous-frequency lower bound.
//!
//! [`experiment`] sweeps graph families, processor counts and schedulers and
//! reports energy savings against the all-at-top-frequency baseline.
//!
//! Units are fixed throughout: MHz, megacycles, seconds, mW and mJ, so that
//! `cycles / freq` is seconds and `power * time` is millijoules.

pub mod experiment;
pub mod lpsolve;
pub mod powermodel;
pub mod reclaim;
pub mod scheduler;
pub mod taskgraph;

mod util;

pub use experiment::{ExperimentConfig, ExperimentResult, Profile};
pub use lpsolve::{LpSolution, TaskLp};
pub use powermodel::{FrequencyLevel, ProcessorModel};
pub use reclaim::{Algorithm, FrequencyAssignment, ReclaimedSchedule};
pub use scheduler::{Priority, Schedule, ScheduleEntry, SlackWindow};
pub use taskgraph::{Edge, Task, TaskGraph, TaskId};
