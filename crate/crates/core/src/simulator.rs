//! Sequential consumers through a ground-truth model, with optional concept
//! shift, and the performance-ratio metrics computed from the outcomes.

use std::ops::RangeInclusive;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::Agent;
use crate::error::{Error, Result};
use crate::funnel_mdp::{ActionId, FunnelMdp, StateId};
use crate::rng::{SimRng, Streams};

pub const DEFAULT_MAX_STEPS: usize = 1000;

/// One consumer's journey.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeRecord {
    /// 1-based consumer index.
    pub consumer: u64,
    pub path: Vec<(StateId, ActionId, StateId)>,
    pub converted: bool,
    pub steps: usize,
    /// The step cap was hit before absorption.
    pub truncated: bool,
}

/// Runs one consumer: act, step, observe until absorption or `max_steps`,
/// then `end_episode` once. Truncated episodes count as not converted.
pub fn run_consumer(mdp: &FunnelMdp, agent: &mut dyn Agent, max_steps: usize, rng: &mut SimRng) -> EpisodeRecord {
    let mut rec = EpisodeRecord::default();
    let mut learner = Duration::ZERO;
    run_episode(mdp, agent, max_steps, rng, true, &mut learner, &mut rec);
    rec
}

fn run_episode(
    mdp: &FunnelMdp,
    agent: &mut dyn Agent,
    max_steps: usize,
    rng: &mut SimRng,
    record_path: bool,
    learner: &mut Duration,
    rec: &mut EpisodeRecord,
) {
    let mut s = mdp.initial_from_uniform(rng.random::<f64>());
    let mut steps = 0;
    while !s.is_terminal() && steps < max_steps {
        let t0 = Instant::now();
        let a = agent.act(s);
        let t1 = Instant::now();
        let next = mdp.step_from_uniform(s, a, rng.random::<f64>());
        let t2 = Instant::now();
        agent.observe(s, a, next);
        *learner += (t1 - t0) + t2.elapsed();
        if record_path {
            rec.path.push((s, a, next));
        }
        s = next;
        steps += 1;
    }
    rec.converted = s == StateId::CONVERT;
    rec.truncated = !s.is_terminal();
    rec.steps = steps;
    let t0 = Instant::now();
    agent.end_episode(rec.converted);
    *learner += t0.elapsed();
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ShiftMode {
    None,
    /// Consumers `1..=switch_at` see phase 1, the rest phase 2.
    TwoPhase { switch_at: u64 },
    /// Consumer `n` is in phase 2 with probability `(n - n1)/(n2 - n1)`,
    /// clamped to `[0, 1]`.
    Gradual { n1: u64, n2: u64 },
}

impl Default for ShiftMode {
    fn default() -> Self {
        ShiftMode::None
    }
}

impl ShiftMode {
    pub fn validate(&self, n: u64) -> Result<()> {
        match *self {
            ShiftMode::None => Ok(()),
            ShiftMode::TwoPhase { switch_at } if switch_at >= 1 && switch_at <= n => Ok(()),
            ShiftMode::TwoPhase { switch_at } => {
                Err(Error::param("schedule.switch_at", format!("{switch_at} outside 1..={n}")))
            }
            ShiftMode::Gradual { n1, n2 } if 1 <= n1 && n1 <= n2 && n2 <= n => Ok(()),
            ShiftMode::Gradual { n1, n2 } => {
                Err(Error::param("schedule", format!("need 1 <= n1 <= n2 <= {n}, got n1 = {n1}, n2 = {n2}")))
            }
        }
    }

    /// Probability that 1-based consumer `n` is in phase 2.
    pub fn phase2_probability(&self, n: u64) -> f64 {
        match *self {
            ShiftMode::None => 0.0,
            ShiftMode::TwoPhase { switch_at } => (n > switch_at) as u8 as f64,
            ShiftMode::Gradual { n1, n2 } if n1 == n2 => (n > n1) as u8 as f64,
            ShiftMode::Gradual { n1, n2 } => ((n as f64 - n1 as f64) / (n2 as f64 - n1 as f64)).clamp(0.0, 1.0),
        }
    }

    pub fn is_shifting(&self) -> bool {
        !matches!(self, ShiftMode::None)
    }
}

/// Which model each consumer faces.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftSchedule {
    pub mode: ShiftMode,
    pub phase1: FunnelMdp,
    /// Phase-2 model, an action permutation of phase 1.
    pub phase2: Option<FunnelMdp>,
    /// `phase2.row(s, a) == phase1.row(s, permutation[a])`.
    pub permutation: Option<Vec<usize>>,
}

impl ShiftSchedule {
    pub fn stationary(mdp: FunnelMdp) -> Self {
        Self { mode: ShiftMode::None, phase1: mdp, phase2: None, permutation: None }
    }

    pub fn with_permutation(mdp: FunnelMdp, mode: ShiftMode, permutation: Vec<usize>) -> Result<Self> {
        if !mode.is_shifting() {
            return Ok(Self::stationary(mdp));
        }
        let phase2 = mdp.permute_actions(&permutation)?;
        Ok(Self { mode, phase1: mdp, phase2: Some(phase2), permutation: Some(permutation) })
    }

    /// Phase 2 uses a uniformly drawn non-identity permutation of the actions.
    pub fn random_permutation(mdp: FunnelMdp, mode: ShiftMode, rng: &mut SimRng) -> Result<Self> {
        let k = mdp.num_actions();
        if !mode.is_shifting() || k < 2 {
            return Ok(Self { mode, ..Self::stationary(mdp) });
        }
        let mut perm: Vec<usize> = (0..k).collect();
        loop {
            perm.shuffle(rng);
            if perm.iter().enumerate().any(|(i, &p)| i != p) {
                break;
            }
        }
        Self::with_permutation(mdp, mode, perm)
    }

    /// Models an agent may face, phase 1 first.
    pub fn phases(&self) -> Vec<&FunnelMdp> {
        std::iter::once(&self.phase1).chain(self.phase2.as_ref()).collect()
    }

    fn model(&self, phase: u8) -> &FunnelMdp {
        match (phase, &self.phase2) {
            (2, Some(m)) => m,
            _ => &self.phase1,
        }
    }
}

/// Outcome of one `(agent, seed)` run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub agent: String,
    pub seed: u64,
    pub conversions: Vec<bool>,
    /// Phase (1 or 2) of every consumer.
    pub phases: Vec<u8>,
    /// Time inside `act`, `observe` and `end_episode`.
    pub learner_seconds: f64,
    pub truncations: u64,
    pub v_star: f64,
}

impl RunResult {
    pub fn num_consumers(&self) -> usize {
        self.conversions.len()
    }

    pub fn total_conversions(&self) -> u64 {
        self.conversions.iter().filter(|&&z| z).count() as u64
    }

    /// Consumers as `(consumer, converted, phase)` CSV.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["consumer", "converted", "phase"])?;
        for (i, (&z, &p)) in self.conversions.iter().zip(&self.phases).enumerate() {
            w.write_record([(i + 1).to_string(), (z as u8).to_string(), p.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn metadata_json(&self) -> serde_json::Value {
        serde_json::json!({
            "seed": self.seed,
            "agent": self.agent,
            "consumers": self.num_consumers(),
            "timings": { "learner_seconds": self.learner_seconds },
            "truncations": self.truncations,
            "v_star": self.v_star,
        })
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write_files(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join(format!("{stem}.csv")))?)?;
        std::fs::write(
            dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&self.metadata_json())? + "\n",
        )?;
        Ok(())
    }

    /// Reads back a run written by [`RunResult::write_files`].
    pub fn read_files(dir: &Path, stem: &str) -> Result<Self> {
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        let field = |k: &str| meta.get(k).ok_or_else(|| Error::Malformed(format!("{stem}.json lacks `{k}`")));
        let mut r = csv::Reader::from_path(dir.join(format!("{stem}.csv")))?;
        let (mut conversions, mut phases) = (Vec::new(), Vec::new());
        for row in r.deserialize::<(u64, u8, u8)>() {
            let (_, z, p) = row?;
            conversions.push(z == 1);
            phases.push(p);
        }
        Ok(Self {
            agent: field("agent")?.as_str().unwrap_or_default().to_string(),
            seed: field("seed")?.as_u64().unwrap_or_default(),
            conversions,
            phases,
            learner_seconds: field("timings")?["learner_seconds"].as_f64().unwrap_or_default(),
            truncations: field("truncations")?.as_u64().unwrap_or_default(),
            v_star: field("v_star")?.as_f64().unwrap_or_default(),
        })
    }
}

/// Runs `n` consumers in sequence. Consumer `i` (0-based) draws its
/// environment randomness from its own substream of `seed`, so swapping the
/// agent never changes the draw used at a given `(consumer, step)`.
pub fn run_agent(
    schedule: &ShiftSchedule,
    agent: &mut dyn Agent,
    n: u64,
    seed: u64,
    max_steps: usize,
    v_star: f64,
) -> RunResult {
    let streams = Streams::new(seed);
    let mut sim = Simulation::new(schedule, &streams, streams.schedule(), max_steps, v_star);
    sim.advance(agent, n);
    sim.finish(agent)
}

/// A run that can be advanced in blocks of consumers, e.g. to inspect the
/// agent between checkpoints.
pub struct Simulation<'a> {
    schedule: &'a ShiftSchedule,
    streams: Streams,
    phase_rng: SimRng,
    max_steps: usize,
    learner: Duration,
    result: RunResult,
}

impl<'a> Simulation<'a> {
    /// Phase draws come from `phase_rng`, normally the seed's schedule
    /// stream (possibly already used to draw the shift permutation).
    pub fn new(schedule: &'a ShiftSchedule, streams: &Streams, phase_rng: SimRng, max_steps: usize, v_star: f64) -> Self {
        Self {
            schedule,
            streams: *streams,
            phase_rng,
            max_steps,
            learner: Duration::ZERO,
            result: RunResult {
                agent: String::new(),
                seed: streams.seed(),
                conversions: Vec::new(),
                phases: Vec::new(),
                learner_seconds: 0.0,
                truncations: 0,
                v_star,
            },
        }
    }

    pub fn consumers_done(&self) -> u64 {
        self.result.conversions.len() as u64
    }

    pub fn advance(&mut self, agent: &mut dyn Agent, count: u64) {
        let mut rec = EpisodeRecord::default();
        let start = self.consumers_done();
        for i in start..start + count {
            let p2 = self.schedule.mode.phase2_probability(i + 1);
            let phase = match self.schedule.mode {
                ShiftMode::Gradual { .. } => 1 + (self.phase_rng.random::<f64>() < p2) as u8,
                _ => 1 + (p2 >= 1.0) as u8,
            };
            let mut env = self.streams.environment(i);
            rec.consumer = i + 1;
            run_episode(self.schedule.model(phase), agent, self.max_steps, &mut env, false, &mut self.learner, &mut rec);
            self.result.conversions.push(rec.converted);
            self.result.phases.push(phase);
            self.result.truncations += rec.truncated as u64;
        }
    }

    pub fn finish(mut self, agent: &dyn Agent) -> RunResult {
        self.result.agent = agent.name().to_string();
        self.result.learner_seconds = self.learner.as_secs_f64();
        self.result
    }
}

/// `(1/R) Σ_r (Σ_n z_nr) / (N v*)`.
pub fn performance_ratio(results: &[RunResult], v_star: f64) -> Result<f64> {
    if !(v_star > 0.0) {
        return Err(Error::Metric(format!("optimal conversion rate must be positive, got {v_star}")));
    }
    let first = results.first().ok_or_else(|| Error::Metric("no runs".into()))?;
    let n = first.num_consumers();
    if n == 0 || results.iter().any(|r| r.num_consumers() != n) {
        return Err(Error::Metric("runs must share a positive number of consumers".into()));
    }
    let sum: f64 = results.iter().map(|r| r.total_conversions() as f64 / (n as f64 * v_star)).sum();
    Ok(sum / results.len() as f64)
}

/// PR over the 1-based consumers in `window`.
pub fn windowed_pr(result: &RunResult, v_star: f64, window: RangeInclusive<u64>) -> Result<f64> {
    if !(v_star > 0.0) {
        return Err(Error::Metric(format!("optimal conversion rate must be positive, got {v_star}")));
    }
    let (lo, hi) = (*window.start(), *window.end());
    if lo < 1 || hi < lo || hi as usize > result.num_consumers() {
        return Err(Error::Metric(format!("window {lo}..={hi} is empty or outside 1..={}", result.num_consumers())));
    }
    let z = result.conversions[lo as usize - 1..hi as usize].iter().filter(|&&z| z).count();
    Ok(z as f64 / ((hi - lo + 1) as f64 * v_star))
}

/// PR of the prefix `1..=n` at every checkpoint `n`.
pub fn prefix_curve(result: &RunResult, v_star: f64, checkpoints: &[u64]) -> Result<Vec<f64>> {
    checkpoints.iter().map(|&n| windowed_pr(result, v_star, 1..=n)).collect()
}

/// About `points` log-spaced checkpoints in `1..=n`, deduplicated, always
/// ending at `n`.
pub fn log_checkpoints(n: u64, points: usize) -> Vec<u64> {
    if n == 0 || points == 0 {
        return Vec::new();
    }
    let mut out: Vec<u64> = (0..points)
        .map(|i| {
            let f = if points == 1 { 1.0 } else { i as f64 / (points - 1) as f64 };
            ((n as f64).powf(f).round() as u64).clamp(1, n)
        })
        .collect();
    out.push(n);
    out.sort_unstable();
    out.dedup();
    out
}
