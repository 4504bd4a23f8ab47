//! Batch orchestration: fan a config out over `(agent, seed)` pairs, then
//! aggregate the runs into summary, curve and phase reports.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::agents::Agent;
use crate::error::{Error, Result};
use crate::funnel_mdp::{FunnelMdp, StateProjection};
use crate::planner::{optimal_conversion_rate, solve_q_star_default};
use crate::rng::Streams;
use crate::simulator::{prefix_curve, windowed_pr, RunResult, ShiftMode, ShiftSchedule, Simulation};

mod config;

pub use config::{
    parse_config, AgentEntry, ExperimentConfig, LoadedMdp, MdpSource, DEFAULT_CHECKPOINTS, PRESETS, SCHEMA_VERSION,
};

/// Share of each phase, counted from its end, used for the late-phase PR.
pub const LATE_FRACTION: f64 = 0.2;

/// Everything a batch needs that does not depend on the seed.
pub struct Prepared {
    pub cfg: ExperimentConfig,
    pub loaded: LoadedMdp,
    pub v_star: f64,
    pub max_steps: usize,
    projections: Vec<Option<StateProjection>>,
}

impl Prepared {
    /// Loads the model and solves it for `v*`. Relative model paths resolve
    /// against `base`.
    pub fn new(cfg: &ExperimentConfig, base: Option<&Path>) -> Result<Self> {
        cfg.validate()?;
        let loaded = cfg.mdp.load(base)?;
        let sol = solve_q_star_default(&loaded.mdp)?;
        let v_star = optimal_conversion_rate(&loaded.mdp, &sol.v);
        if !(v_star > 0.0) {
            return Err(Error::InvalidModel("optimal conversion rate is zero".into()));
        }
        let projections = cfg
            .agents
            .iter()
            .map(|a| match (a.projection, &loaded.funnel) {
                (Some(kind), Some(f)) => Some(f.projection(kind)),
                _ => None,
            })
            .collect();
        let max_steps = cfg.max_steps.unwrap_or_else(|| loaded.default_max_steps());
        Ok(Self { cfg: cfg.clone(), loaded, v_star, max_steps, projections })
    }

    pub fn mdp(&self) -> &FunnelMdp {
        &self.loaded.mdp
    }

    /// The environment of one seed. The shift permutation, when drawn, comes
    /// first off the seed's schedule stream; the returned stream continues
    /// with the per-consumer phase draws.
    pub fn schedule(&self, seed: u64) -> Result<(ShiftSchedule, crate::rng::SimRng)> {
        let mut rng = Streams::new(seed).schedule();
        let mdp = self.loaded.mdp.clone();
        let sched = match (&self.cfg.permutation, self.cfg.schedule) {
            (_, ShiftMode::None) => ShiftSchedule::stationary(mdp),
            (Some(p), mode) => ShiftSchedule::with_permutation(mdp, mode, p.clone())?,
            (None, mode) => ShiftSchedule::random_permutation(mdp, mode, &mut rng)?,
        };
        Ok((sched, rng))
    }

    /// One `(agent, seed)` run, returning the trained agent alongside the
    /// result.
    pub fn run_with_agent(&self, agent_index: usize, seed: u64) -> Result<(RunResult, Box<dyn Agent>)> {
        let entry = &self.cfg.agents[agent_index];
        let annotate = |e: Error| Error::Run { agent: entry.label.clone(), seed, source: Box::new(e) };
        let (sched, phase_rng) = self.schedule(seed).map_err(annotate)?;
        let streams = Streams::new(seed);
        let mut agent = entry
            .algorithm
            .build(&sched.phases(), self.projections[agent_index].as_ref(), streams.agent())
            .map_err(annotate)?;
        let mut sim = Simulation::new(&sched, &streams, phase_rng, self.max_steps, self.v_star);
        sim.advance(agent.as_mut(), self.cfg.consumers);
        let mut result = sim.finish(agent.as_ref());
        result.agent = entry.label.clone();
        Ok((result, agent))
    }

    /// One `(agent, seed)` run. `out`, when given, receives the final belief
    /// table if the config asks for it.
    pub fn run_one(&self, agent_index: usize, seed: u64, out: Option<&Path>) -> Result<RunResult> {
        let (result, agent) = self.run_with_agent(agent_index, seed)?;
        if let (Some(dir), true) = (out, self.cfg.write_beliefs) {
            let write = || -> Result<()> {
                std::fs::create_dir_all(dir)?;
                let label = &self.cfg.agents[agent_index].label;
                let mut f = std::fs::File::create(dir.join(format!("{label}_seed{seed}_beliefs.csv")))?;
                agent.write_belief_csv(&mut f)
            };
            write().map_err(|e| Error::Run { agent: result.agent.clone(), seed, source: Box::new(e) })?;
        }
        Ok(result)
    }
}

/// Runs every `(agent, seed)` pair on up to `parallelism` threads. Results
/// come back agent-major, seed-minor, whatever the thread count.
pub fn run_batch(cfg: &ExperimentConfig, parallelism: usize) -> Result<Vec<RunResult>> {
    let prepared = Prepared::new(cfg, None)?;
    run_prepared(&prepared, parallelism, None)
}

pub fn run_prepared(prepared: &Prepared, parallelism: usize, runs_dir: Option<&Path>) -> Result<Vec<RunResult>> {
    let jobs: Vec<(usize, u64)> = (0..prepared.cfg.agents.len())
        .flat_map(|a| prepared.cfg.seed_list().into_iter().map(move |s| (a, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| jobs.par_iter().map(|&(a, s)| prepared.run_one(a, s, runs_dir)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseReport {
    pub phase: u8,
    /// 1-based consumer window of the phase.
    pub window: (u64, u64),
    pub pr: f64,
    /// PR over the last [`LATE_FRACTION`] of the window.
    pub late_pr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AgentReport {
    pub label: String,
    pub runs: usize,
    pub mean_pr: f64,
    /// Population standard deviation (divides by the number of runs).
    pub std_pr: f64,
    pub mean_learner_seconds: f64,
    pub truncations: u64,
    /// Mean prefix PR at every checkpoint.
    pub curve: Vec<f64>,
    pub phases: Vec<PhaseReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateReport {
    pub consumers: u64,
    pub v_star: f64,
    pub checkpoints: Vec<u64>,
    pub agents: Vec<AgentReport>,
}

/// Phase windows reported for a schedule: the two sides of the switch, or
/// the two halves of the horizon under a gradual shift.
pub fn phase_windows(mode: ShiftMode, n: u64) -> Vec<(u64, u64)> {
    match mode {
        ShiftMode::None => Vec::new(),
        ShiftMode::TwoPhase { switch_at } => vec![(1, switch_at), (switch_at + 1, n)],
        ShiftMode::Gradual { .. } => vec![(1, n / 2), (n / 2 + 1, n)],
    }
    .into_iter()
    .filter(|(lo, hi)| lo <= hi)
    .collect()
}

/// Last `fraction` of the window `(lo, hi)`, at least one consumer.
pub fn late_window((lo, hi): (u64, u64), fraction: f64) -> (u64, u64) {
    let len = hi - lo + 1;
    let late = ((len as f64 * fraction).round() as u64).clamp(1, len);
    (hi - late + 1, hi)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Groups runs by agent label (in order of first appearance) and summarises
/// each group.
pub fn aggregate(results: &[RunResult], v_star: f64, checkpoints: &[u64], mode: ShiftMode) -> Result<AggregateReport> {
    let first = results.first().ok_or_else(|| Error::Metric("no runs to aggregate".into()))?;
    let n = first.num_consumers() as u64;
    if results.iter().any(|r| r.num_consumers() as u64 != n) {
        return Err(Error::Metric("runs have different numbers of consumers".into()));
    }
    let mut labels: Vec<&str> = Vec::new();
    for r in results {
        if !labels.contains(&r.agent.as_str()) {
            labels.push(&r.agent);
        }
    }
    let windows = phase_windows(mode, n);
    let mut agents = Vec::new();
    for label in labels {
        let group: Vec<&RunResult> = results.iter().filter(|r| r.agent == label).collect();
        let prs = group.iter().map(|r| windowed_pr(r, v_star, 1..=n)).collect::<Result<Vec<_>>>()?;
        let (mean_pr, std_pr) = mean_std(&prs);
        let mut curve = vec![0.0; checkpoints.len()];
        for r in &group {
            for (c, v) in curve.iter_mut().zip(prefix_curve(r, v_star, checkpoints)?) {
                *c += v;
            }
        }
        curve.iter_mut().for_each(|c| *c /= group.len() as f64);
        let mut phases = Vec::new();
        for (i, &w) in windows.iter().enumerate() {
            let late = late_window(w, LATE_FRACTION);
            let mut pr = 0.0;
            let mut late_pr = 0.0;
            for r in &group {
                pr += windowed_pr(r, v_star, w.0..=w.1)?;
                late_pr += windowed_pr(r, v_star, late.0..=late.1)?;
            }
            let k = group.len() as f64;
            phases.push(PhaseReport { phase: i as u8 + 1, window: w, pr: pr / k, late_pr: late_pr / k });
        }
        agents.push(AgentReport {
            label: label.to_string(),
            runs: group.len(),
            mean_pr,
            std_pr,
            mean_learner_seconds: group.iter().map(|r| r.learner_seconds).sum::<f64>() / group.len() as f64,
            truncations: group.iter().map(|r| r.truncations).sum(),
            curve,
            phases,
        });
    }
    Ok(AggregateReport { consumers: n, v_star, checkpoints: checkpoints.to_vec(), agents })
}

/// Writes the report files into `dir`:
///
/// * `summary.csv`: agent, mean_pr, std_pr
/// * `timings.csv`: agent, mean_pr, mean_learner_seconds, ratio_to_ts
/// * `curves.csv`: agent, n_checkpoint, pr
/// * `phases.csv`: agent, phase, first, last, pr, late_pr (only with a shift)
/// * `summary.txt`
///
/// Everything except `timings.csv` is a pure function of the config.
pub fn emit_reports(report: &AggregateReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record(["agent", "mean_pr", "std_pr"])?;
    for a in &report.agents {
        w.write_record([a.label.clone(), a.mean_pr.to_string(), a.std_pr.to_string()])?;
    }
    w.flush()?;

    let ts_time = report.agents.iter().find(|a| a.label == "ts").map(|a| a.mean_learner_seconds);
    let mut w = csv::Writer::from_path(dir.join("timings.csv"))?;
    w.write_record(["agent", "mean_pr", "mean_learner_seconds", "ratio_to_ts"])?;
    for a in &report.agents {
        let ratio = match ts_time {
            Some(t) if t > 0.0 => format!("{:.3}", a.mean_learner_seconds / t),
            _ => String::new(),
        };
        w.write_record([a.label.clone(), a.mean_pr.to_string(), a.mean_learner_seconds.to_string(), ratio])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("curves.csv"))?;
    w.write_record(["agent", "n_checkpoint", "pr"])?;
    for a in &report.agents {
        for (n, pr) in report.checkpoints.iter().zip(&a.curve) {
            w.write_record([a.label.clone(), n.to_string(), pr.to_string()])?;
        }
    }
    w.flush()?;

    if report.agents.iter().any(|a| !a.phases.is_empty()) {
        let mut w = csv::Writer::from_path(dir.join("phases.csv"))?;
        w.write_record(["agent", "phase", "first", "last", "pr", "late_pr"])?;
        for a in &report.agents {
            for p in &a.phases {
                w.write_record([
                    a.label.clone(),
                    p.phase.to_string(),
                    p.window.0.to_string(),
                    p.window.1.to_string(),
                    p.pr.to_string(),
                    p.late_pr.to_string(),
                ])?;
            }
        }
        w.flush()?;
    }

    std::fs::write(dir.join("summary.txt"), summary_text(report))?;
    Ok(())
}

fn summary_text(report: &AggregateReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "consumers per run: {}", report.consumers);
    let _ = writeln!(s, "optimal conversion rate v*: {:.6}", report.v_star);
    let _ = writeln!(s, "std is the population standard deviation over seeds\n");
    let _ = writeln!(s, "{:<20} {:>5} {:>9} {:>9}", "agent", "runs", "mean PR", "std PR");
    for a in &report.agents {
        let _ = writeln!(s, "{:<20} {:>5} {:>9.4} {:>9.4}", a.label, a.runs, a.mean_pr, a.std_pr);
    }
    for a in report.agents.iter().filter(|a| !a.phases.is_empty()) {
        let parts: Vec<String> = a
            .phases
            .iter()
            .map(|p| format!("phase {} PR {:.4} (late {:.4})", p.phase, p.pr, p.late_pr))
            .collect();
        let _ = writeln!(s, "{}: {}", a.label, parts.join(", "));
    }
    let truncated: u64 = report.agents.iter().map(|a| a.truncations).sum();
    if truncated > 0 {
        let _ = writeln!(s, "\nwarning: {truncated} episodes hit the step cap");
    }
    s
}

/// Runs a config end to end and writes `config.json`, per-run files under
/// `runs/` and the reports into `out`.
pub fn run_and_report(cfg: &ExperimentConfig, base: Option<&Path>, parallelism: usize, out: &Path) -> Result<AggregateReport> {
    let prepared = Prepared::new(cfg, base)?;
    let runs_dir = out.join("runs");
    let results = run_prepared(&prepared, parallelism, Some(&runs_dir))?;
    std::fs::create_dir_all(&runs_dir)?;
    let mut stored = cfg.clone();
    if let (MdpSource::File(p), Some(b)) = (&cfg.mdp, base) {
        if p.is_relative() {
            stored.mdp = MdpSource::File(b.join(p));
        }
    }
    std::fs::write(out.join("config.json"), stored.to_json()?)?;
    for r in &results {
        r.write_files(&runs_dir, &run_stem(&r.agent, r.seed))?;
    }
    let report = aggregate(&results, prepared.v_star, &cfg.checkpoints(), cfg.schedule)?;
    emit_reports(&report, out)?;
    Ok(report)
}

pub fn run_stem(label: &str, seed: u64) -> String {
    format!("{label}_seed{seed}")
}

/// Rebuilds the reports of a finished `run` directory from its stored runs.
pub fn report_from_dir(out: &Path) -> Result<AggregateReport> {
    let cfg = parse_config(&out.join("config.json"))?;
    let runs_dir = out.join("runs");
    let mut results = Vec::new();
    for a in &cfg.agents {
        for seed in cfg.seed_list() {
            results.push(RunResult::read_files(&runs_dir, &run_stem(&a.label, seed))?);
        }
    }
    let v_star = results[0].v_star;
    let report = aggregate(&results, v_star, &cfg.checkpoints(), cfg.schedule)?;
    emit_reports(&report, out)?;
    Ok(report)
}
