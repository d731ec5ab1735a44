//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slack_dvfs::experiment::{self, Summary};
use slack_dvfs::lpsolve::{self, TaskLp};
use slack_dvfs::powermodel::fit_convex;
use slack_dvfs::reclaim::{self, reclaim_task};
use slack_dvfs::scheduler::{self, Priority};
use slack_dvfs::taskgraph::{self, RandomGraphParams};
use slack_dvfs::{Algorithm, ExperimentResult, ProcessorModel, Profile, SlackWindow, TaskGraph};

const CHAIN_TOL: f64 = 1e-9;
const LP_TOL: f64 = 1e-9;
const EXAMPLE_TOL: f64 = 1e-3;
const FIT_TOL: f64 = 1e-9;
const GJ_SAVINGS_MAX: f64 = 1.0;
const MFS_OPT_GAP_MAX: f64 = 1.5;
const CASES: usize = 10_000;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);
/// Name, levels as (MHz, V, W) from the top, alpha, gamma.
type PresetTable = (&'static str, [(f64, f64, f64); 5], f64, f64);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn presets() -> Vec<ProcessorModel> {
    ["transmeta_crusoe", "intel_xscale"]
        .iter()
        .map(|n| ProcessorModel::preset(n).unwrap())
        .collect()
}

fn window(t_os: f64, window: f64) -> SlackWindow {
    SlackWindow {
        task_id: 0,
        t_os,
        window,
        start: 0.0,
    }
}

fn energy_chain() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut split_breaks = 0;
    let mut worst: f64 = 0.0;
    for model in presets() {
        for _ in 0..CASES / 2 {
            let cycles = rng.gen_range(5.0..10.0) * 10f64.powf(rng.gen_range(-1.0..3.0));
            let t_os = cycles / model.f_max();
            let t = t_os * 10f64.powf(rng.gen_range(0.0..1.5));
            let w = window(t_os, t);
            let e = |alg| reclaim_task(&w, cycles, &model, alg).unwrap().energy;
            let chain = [
                e(Algorithm::OptCont),
                e(Algorithm::Mfs),
                e(Algorithm::Mmf),
                e(Algorithm::Rdvfs),
                e(Algorithm::None),
            ];
            for p in chain.windows(2) {
                worst = worst.max((p[0] - p[1]) / p[1]);
                ensure(p[0] <= p[1] * (1.0 + CHAIN_TOL), || {
                    format!("{} K={cycles} T={t}: {chain:?}", model.name)
                })?;
            }
            if reclaim::mmf_split(&w, cycles, &model).unwrap().energy > chain[3] * (1.0 + CHAIN_TOL) {
                split_breaks += 1;
            }
        }
    }
    Ok(format!(
        "{CASES} windows, worst step {worst:.2e}; max/min split alone would exceed RDVFS in {split_breaks}"
    ))
}

fn lp_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut two = 0;
    for case in 0..CASES {
        let n = rng.gen_range(2..=6);
        let mut freqs: Vec<f64> = (0..n).map(|_| rng.gen_range(50.0..3000.0f64).round()).collect();
        freqs.sort_by(f64::total_cmp);
        freqs.dedup();
        let alpha = rng.gen_range(1e-8..1e-4);
        let gamma = rng.gen_range(0.0..200.0);
        let powers: Vec<f64> = freqs.iter().map(|f| alpha * f.powi(3) + gamma).collect();
        let t = rng.gen_range(0.01..100.0);
        let target = if rng.gen_bool(0.2) {
            freqs[rng.gen_range(0..freqs.len())]
        } else {
            rng.gen_range(freqs[0]..=freqs[freqs.len() - 1])
        };
        let lp = TaskLp::new(freqs.clone(), powers, target * t, t).unwrap();
        let (a, b) = (lpsolve::solve(&lp), lpsolve::pair_enumerate(&lp));
        ensure(rel_close(a.objective, b.objective, LP_TOL), || {
            format!("case {case}: hull {} vs oracle {}", a.objective, b.objective)
        })?;
        let s = a.support();
        ensure(!s.is_empty() && s.len() <= 2, || format!("case {case}: support {s:?}"))?;
        if s.len() == 2 {
            two += 1;
            let f = lp.target_freq();
            ensure(s[1] == s[0] + 1 && freqs[s[0]] < f && f < freqs[s[1]], || {
                format!("case {case}: support {s:?} for f_opt {f} over {freqs:?}")
            })?;
        }
    }
    Ok(format!("{CASES} instances agree, {two} with two-level support"))
}

fn worked_example() -> Outcome {
    let m = ProcessorModel::preset("transmeta_crusoe").unwrap();
    let (k, t) = (4002.0, 10.0);
    let w = window(6.0, t);
    let near = |got: f64, want: f64, what: &str| {
        ensure(rel_close(got, want, EXAMPLE_TOL), || format!("{what}: {got} vs {want}"))
    };
    let seg = |a: &reclaim::FrequencyAssignment, f: f64| {
        a.segments.iter().find(|s| s.freq == f).map_or(0.0, |s| s.duration)
    };

    let (f_opt, e_opt) = reclaim::opt_continuous(&w, k, &m).unwrap();
    near(f_opt, 400.2, "f_opt")?;
    near(e_opt, 12479.0, "OPT_CONT energy")?;

    let rd = reclaim::rdvfs(&w, k, &m).unwrap();
    ensure(rd.segments.len() == 1 && rd.segments[0].freq == 533.0, || format!("RDVFS {:?}", rd.segments))?;
    near(rd.segments[0].duration, 7.5084, "RDVFS time")?;
    near(rd.energy, 23405.0, "RDVFS energy")?;

    let mmf = reclaim::mmf_dvfs(&w, k, &m).unwrap();
    near(seg(&mmf, 667.0), 2.7302, "MMF time at 667")?;
    near(seg(&mmf, 300.0), 7.2698, "MMF time at 300")?;
    near(mmf.energy, 19569.0, "MMF energy")?;

    let mfs = reclaim::mfs_dvfs(&w, k, &m).unwrap();
    ensure(mfs.segments.len() == 2, || format!("MFS {:?}", mfs.segments))?;
    near(seg(&mfs, 533.0), 0.01504, "MFS time at 533")?;
    near(seg(&mfs, 400.0), 9.98496, "MFS time at 400")?;
    near(mfs.energy, 12486.0, "MFS energy")?;
    Ok(format!(
        "f_opt {f_opt:.1}, energies OPT {e_opt:.0} / MFS {:.0} / MMF {:.0} / RDVFS {:.0} mJ",
        mfs.energy, mmf.energy, rd.energy
    ))
}

struct Quick {
    result: ExperimentResult,
    summary: Summary,
}

impl Quick {
    fn family_cells<'a>(&'a self, family: &'a str, alg: Algorithm) -> impl Iterator<Item = &'a experiment::Record> {
        self.result
            .records
            .iter()
            .filter(move |r| r.family == family && r.algorithm == alg)
    }
}

const ORDERED: [Algorithm; 4] = [Algorithm::Rdvfs, Algorithm::Mmf, Algorithm::Mfs, Algorithm::OptCont];

fn gauss_jordan(q: &Quick) -> Outcome {
    let cells: Vec<_> = q.family_cells("gauss_jordan", Algorithm::Mfs).collect();
    ensure(!cells.is_empty(), || "no Gauss-Jordan cells".into())?;
    let worst = cells
        .iter()
        .max_by(|a, b| a.savings_pct.total_cmp(&b.savings_pct))
        .unwrap();
    ensure(worst.savings_pct < GJ_SAVINGS_MAX, || {
        format!(
            "{:.3}% at n={} P={} {}",
            worst.savings_pct, worst.size, worst.processors, worst.scheduler
        )
    })?;
    // informational: the same suite when every edge costs one task duration
    let mut cfg = Profile::Quick.config();
    let model = ProcessorModel::preset(&cfg.cpu).unwrap();
    cfg.families = vec![experiment::GraphSource::GaussJordan {
        comm: taskgraph::DEFAULT_TASK_CYCLES / model.f_max(),
        cycles: experiment::CycleSpec::Uniform(taskgraph::DEFAULT_TASK_CYCLES),
        graphs: None,
    }];
    cfg.algorithms = vec![Algorithm::Mfs];
    let heavy = experiment::run(&cfg)
        .map_err(|e| e.to_string())?
        .records
        .iter()
        .filter(|r| r.algorithm == Algorithm::Mfs)
        .map(|r| r.savings_pct)
        .fold(0.0, f64::max);
    Ok(format!(
        "{} cells, max MFS savings {:.3}% (n={} P={}), mean {:.3}%; with comm = one task time the max would be {heavy:.3}%",
        cells.len(),
        worst.savings_pct,
        worst.size,
        worst.processors,
        q.summary.mean_savings("gauss_jordan", Algorithm::Mfs).unwrap()
    ))
}

fn table_ordering(q: &Quick) -> Outcome {
    let s = &q.summary;
    let m = |f: &str, a| s.mean_savings(f, a).ok_or_else(|| format!("missing {f}/{a}"));
    for a in ORDERED {
        let (gj, rnd, lu) = (m("gauss_jordan", a)?, m("random", a)?, m("lu", a)?);
        ensure(gj < rnd && rnd < lu, || format!("{a}: gj {gj:.3} random {rnd:.3} lu {lu:.3}"))?;
    }
    let mut gaps = Vec::new();
    for f in ["random", "lu", "gauss_jordan"] {
        let v: Vec<f64> = ORDERED.iter().map(|&a| m(f, a)).collect::<Result<_, _>>()?;
        ensure(v.windows(2).all(|p| p[0] <= p[1]), || format!("{f}: {v:?}"))?;
        let gap = v[3] - v[2];
        ensure(gap <= MFS_OPT_GAP_MAX, || format!("{f}: MFS-to-OPT_CONT gap {gap:.3} points"))?;
        gaps.push(format!("{f} {gap:.2}"));
    }
    let mut bad_cells = 0;
    for cell in q.result.records.chunks(Algorithm::ALL.len()) {
        let v: Vec<f64> = cell[1..].iter().map(|r| r.savings_pct).collect();
        if !v.windows(2).all(|p| p[0] <= p[1] + 1e-9) {
            bad_cells += 1;
        }
    }
    ensure(bad_cells == 0, || format!("{bad_cells} cells out of algorithm order"))?;
    Ok(format!(
        "MFS: gj {:.2} < random {:.2} < lu {:.2}; gaps {}",
        m("gauss_jordan", Algorithm::Mfs)?,
        m("random", Algorithm::Mfs)?,
        m("lu", Algorithm::Mfs)?,
        gaps.join(", ")
    ))
}

fn processor_trend(q: &Quick) -> Outcome {
    let at = |p| q.summary.mean_savings_at("random", Algorithm::Mfs, p).ok_or("missing P");
    let (p2, p8) = (at(2)?, at(8)?);
    let graphs: std::collections::BTreeSet<_> = q
        .family_cells("random", Algorithm::Mfs)
        .map(|r| (r.size, r.graph.clone()))
        .collect();
    ensure(graphs.len() >= 30, || format!("only {} random graphs", graphs.len()))?;
    ensure(p8 >= p2, || format!("P=8 {p8:.3}% < P=2 {p2:.3}%"))?;
    Ok(format!("{} graphs: P=2 {p2:.2}% <= P=8 {p8:.2}%", graphs.len()))
}

/// Independent re-check of every assignment on the quick profile's graph population.
fn conservation(q: &Quick) -> Outcome {
    ensure(q.result.failures.is_empty(), || format!("failures: {:?}", q.result.failures))?;
    ensure(q.result.violations.is_empty(), || format!("violations: {:?}", q.result.violations))?;

    let model = ProcessorModel::preset("transmeta_crusoe").unwrap();
    let cfg = Profile::Quick.config();
    let mut graphs: Vec<TaskGraph> = Vec::new();
    for &n in &cfg.sizes {
        for seed in 0..30 {
            let params = RandomGraphParams {
                n_tasks: n,
                ..Default::default()
            };
            graphs.push(taskgraph::gen_random(&params, seed).unwrap());
        }
        let l = taskgraph::levels_for_size(n);
        graphs.push(taskgraph::gen_lu(l, 0.002).unwrap());
        graphs.push(taskgraph::gen_gauss_jordan(l, 0.002).unwrap());
    }

    let mut checked = 0usize;
    for g in &graphs {
        for &p in &cfg.processors {
            for sched in Priority::ALL {
                let base = scheduler::list_schedule(g, p, &model, sched).unwrap();
                for alg in Algorithm::ALL {
                    let r = reclaim::reclaim_schedule(&base, g, &model, alg).unwrap();
                    check_assignments(g, &base, &r).map_err(|e| format!("{} P={p} {sched} {alg}: {e}", g.label()))?;
                    checked += 1;
                }
            }
        }
    }
    Ok(format!(
        "runner audited {} schedules; {checked} re-checked independently, zero violations",
        q.result.audited
    ))
}

fn check_assignments(
    g: &TaskGraph,
    base: &slack_dvfs::Schedule,
    r: &reclaim::ReclaimedSchedule,
) -> Result<(), String> {
    let tol = 1e-9;
    let mut finish = vec![0.0; g.len()];
    let mut busy_until: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for (i, (task, a)) in g.tasks().iter().zip(&r.assignments).enumerate() {
        let e = &base.entries[i];
        ensure(a.task_id == task.id && e.task_id == task.id, || format!("task {} misaligned", task.id))?;
        let cycles: f64 = a.segments.iter().map(|s| s.freq * s.duration).sum();
        ensure((cycles - task.cycles).abs() <= tol * task.cycles, || {
            format!("task {}: {cycles} of {} cycles", task.id, task.cycles)
        })?;
        let busy: f64 = a.segments.iter().map(|s| s.duration).sum();
        let w = &r.windows[i];
        ensure((busy + a.idle_tail - w.window).abs() <= tol * w.window.max(1.0), || {
            format!("task {}: busy {busy} + idle {} != window {}", task.id, a.idle_tail, w.window)
        })?;
        ensure(a.segments.iter().all(|s| s.duration >= 0.0) && a.idle_tail >= 0.0, || {
            format!("task {}: negative time", task.id)
        })?;
        ensure((w.start - e.start).abs() <= tol, || format!("task {} moved", task.id))?;
        finish[i] = e.start + busy;
        busy_until.entry(e.processor).or_default().push((e.start, finish[i]));
    }
    let scale = base.makespan.max(1.0);
    for (i, e) in base.entries.iter().enumerate() {
        for &(p, comm) in g.predecessors(i) {
            let delay = if base.entries[p].processor == e.processor { 0.0 } else { comm };
            ensure(finish[p] + delay <= e.start + tol * scale, || {
                format!("edge {} -> {} violated", g.tasks()[p].id, e.task_id)
            })?;
        }
    }
    for spans in busy_until.values_mut() {
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        ensure(spans.windows(2).all(|s| s[0].1 <= s[1].0 + tol * scale), || "processor overlap".into())?;
    }
    let makespan = finish.iter().copied().fold(0.0, f64::max);
    ensure(makespan <= base.makespan * (1.0 + tol), || {
        format!("makespan {makespan} exceeds {}", base.makespan)
    })?;
    Ok(())
}

fn model_checks() -> Outcome {
    let tables: [PresetTable; 2] = [
        (
            "transmeta_crusoe",
            [(667.0, 1.6, 5.3), (600.0, 1.5, 4.2), (533.0, 1.35, 3.0), (400.0, 1.225, 1.9), (300.0, 1.2, 1.3)],
            1.94e-5,
            4.44,
        ),
        (
            "intel_xscale",
            [(1000.0, 1.8, 1.6), (800.0, 1.6, 0.9), (600.0, 1.3, 0.4), (400.0, 1.0, 0.17), (150.0, 0.75, 0.08)],
            1.55e-6,
            60.0,
        ),
    ];
    for (name, rows, alpha, gamma) in tables {
        let m = ProcessorModel::preset(name).unwrap();
        ensure(m.alpha == alpha && m.gamma == gamma, || format!("{name}: model constants"))?;
        ensure(m.levels.len() == rows.len(), || format!("{name}: level count"))?;
        for (lvl, (f, v, p)) in m.levels.iter().rev().zip(rows) {
            ensure(lvl.freq == f && lvl.voltage == v && lvl.power == p * 1000.0, || {
                format!("{name}: level {lvl:?} vs ({f}, {v}, {p} W)")
            })?;
        }
        let p1 = alpha * m.f_min().powi(3) + gamma;
        ensure(m.p_idle == p1, || format!("{name}: p_idle {} vs {p1}", m.p_idle))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_fit: f64 = 0.0;
    for _ in 0..1000 {
        let alpha = rng.gen_range(1e-7..1e-4);
        let gamma = rng.gen_range(0.0..500.0);
        let n = rng.gen_range(3..10);
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let f = 100.0 + 150.0 * i as f64 + rng.gen_range(0.0..100.0);
                (f, alpha * f.powi(3) + gamma)
            })
            .collect();
        let (a, c) = fit_convex(&pts).map_err(|e| e.to_string())?;
        let err = ((a - alpha) / alpha).abs().max(if gamma > 1.0 { ((c - gamma) / gamma).abs() } else { (c - gamma).abs() });
        worst_fit = worst_fit.max(err);
        ensure(err <= FIT_TOL, || format!("fit ({a}, {c}) vs ({alpha}, {gamma})"))?;
    }

    let mut tested = 0;
    while tested < CASES {
        let mut m = presets().swap_remove(rng.gen_range(0..2));
        m.p_idle = m.gamma + rng.gen_range(0.0..2000.0);
        let freqs: Vec<f64> = m.freqs().collect();
        let (i, j) = (rng.gen_range(0..freqs.len()), rng.gen_range(0..freqs.len()));
        let (lo, hi) = (freqs[i.min(j)], freqs[i.max(j)]);
        let cycles = rng.gen_range(1.0..5000.0);
        let t = cycles / lo * rng.gen_range(1.0..4.0);
        // energy straight from the cubic law
        let e = |f: f64| (m.alpha * f.powi(3) + m.gamma) * cycles / f + m.p_idle * (t - cycles / f);
        ensure(e(lo) <= e(hi) * (1.0 + 1e-12), || format!("{}: f {lo} vs {hi}", m.name))?;
        let lib = |f: f64| {
            let run = m.exec_time(cycles, f).unwrap();
            m.segment_energy(f, run).unwrap() + m.idle_energy(t - run).unwrap()
        };
        ensure(rel_close(lib(lo), e(lo), 1e-12) && lib(lo) <= lib(hi) * (1.0 + 1e-12), || {
            format!("{}: library energies at {lo}/{hi}", m.name)
        })?;
        tested += 1;
    }
    Ok(format!(
        "presets exact, fit worst rel err {worst_fit:.1e}, lower-level property on {tested} cases"
    ))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut bytes = Vec::new();
    for run in 0..2 {
        let mut cfg = Profile::Quick.config();
        let path = dir.path().join(format!("run{run}.csv"));
        cfg.output.csv = Some(path.clone());
        experiment::run(&cfg).map_err(|e| e.to_string())?;
        bytes.push(std::fs::read(&path).map_err(|e| e.to_string())?);
    }
    ensure(!bytes[0].is_empty() && bytes[0] == bytes[1], || "CSV outputs differ".into())?;
    Ok(format!("two quick-profile runs, {} identical bytes", bytes[0].len()))
}

fn main() {
    let quick = {
        let result = experiment::run(&Profile::Quick.config()).expect("quick profile runs");
        let summary = Summary::new(&result);
        Quick { result, summary }
    };

    let criteria: Vec<Criterion> = vec![
        ("per-task energy chain", Box::new(energy_chain)),
        ("LP solver vs pair enumeration", Box::new(lp_oracle)),
        ("worked example", Box::new(worked_example)),
        ("Gauss-Jordan savings below 1%", Box::new(|| gauss_jordan(&quick))),
        ("family and algorithm ordering", Box::new(|| table_ordering(&quick))),
        ("savings grow from P=2 to P=8", Box::new(|| processor_trend(&quick))),
        ("conservation and feasibility", Box::new(|| conservation(&quick))),
        ("processor model checks", Box::new(model_checks)),
        ("byte-identical reruns", Box::new(determinism)),
    ];

    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("\n{}", quick.summary.render().lines().take(6).collect::<Vec<_>>().join("\n"));
    if failed > 0 {
        println!("\n{failed} criteria failed");
        std::process::exit(1);
    }
}
