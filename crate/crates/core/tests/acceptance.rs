//! Acceptance criteria, run in order, one PASS/FAIL line each. Criteria that
//! compare timings run sequentially on purpose.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;

use funnel_core::agents::{Agent, BetaLearner, BetaTable, MfablConfig, UpdateRule};
use funnel_core::experiments::{parse_config, run_and_report, AggregateReport, ExperimentConfig, Prepared};
use funnel_core::funnel_mdp::{ActionId, FunnelMdp, StateId};
use funnel_core::planner::{brute_force_q_star, solve_q_star};
use funnel_core::rng::{rng_from_seed, Streams};
use funnel_core::simulator::{ShiftMode, ShiftSchedule, Simulation};
use funnel_core::verification::{check_variance_bound, expected_update_sweep};

type Check = Result<(bool, String), Box<dyn std::error::Error>>;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> ExperimentConfig {
    parse_config(&configs().join(name)).expect("criterion config parses")
}

fn agent_report<'a>(r: &'a AggregateReport, label: &str) -> &'a funnel_core::experiments::AgentReport {
    r.agents.iter().find(|a| a.label == label).expect("agent in report")
}

struct Shared {
    scratch: tempfile::TempDir,
    tables: Vec<BetaTable>,
}

impl Shared {
    fn dir(&self, name: &str) -> PathBuf {
        self.scratch.path().join(name)
    }
}

fn c1_expected_update(_: &mut Shared) -> Check {
    let residual = expected_update_sweep(10_000, 2024);
    Ok((residual < 1e-12, format!("max residual {residual:.2e} over 10^4 cases (< 1e-12)")))
}

/// Random absorbing model with at most 5 states and 2 actions: every row
/// keeps at least 10% of its mass on the absorbing states.
fn random_model(rng: &mut impl Rng) -> FunnelMdp {
    let n = rng.random_range(1..=5usize);
    let mut rows = Vec::new();
    for _ in 0..n * 2 {
        let mut w: Vec<f64> = (0..n + 2).map(|_| rng.random::<f64>()).collect();
        let active: f64 = w[..n].iter().sum();
        let terminal: f64 = w[n..].iter().sum::<f64>().max(1e-3);
        let scale_active = 0.9 * rng.random::<f64>() / active.max(1e-12);
        let remaining = 1.0 - scale_active * active;
        w[..n].iter_mut().for_each(|x| *x *= scale_active);
        w[n..].iter_mut().for_each(|x| *x = (*x).max(1e-3) * remaining / terminal);
        let mut row: Vec<(StateId, f64)> = (0..n).map(|i| (StateId::new(i), w[i])).collect();
        row.push((StateId::CONVERT, w[n]));
        row.push((StateId::QUIT, w[n + 1]));
        let total: f64 = row.iter().map(|e| e.1).sum();
        row.iter_mut().for_each(|e| e.1 /= total);
        rows.push(row);
    }
    let mut init = vec![0.0; n];
    init[rng.random_range(0..n)] = 1.0;
    FunnelMdp::from_rows(n, 2, rows, init).expect("well-formed model")
}

fn c2_planner_oracle(_: &mut Shared) -> Check {
    let mut rng = rng_from_seed(77);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let m = random_model(&mut rng);
        let vi = solve_q_star(&m, 1e-13, 1_000_000)?.q;
        let bf = brute_force_q_star(&m)?;
        worst = worst.max(vi.sup_distance(&bf));
    }
    Ok((worst <= 1e-8, format!("max L-inf gap {worst:.2e} over 50 random models (<= 1e-8)")))
}

/// Remembers the first action of every consumer.
struct Recorder {
    inner: Box<dyn Agent>,
    first: Vec<ActionId>,
    fresh: bool,
}

impl Agent for Recorder {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn act(&mut self, s: StateId) -> ActionId {
        let a = self.inner.act(s);
        if self.fresh {
            self.first.push(a);
            self.fresh = false;
        }
        a
    }
    fn observe(&mut self, s: StateId, a: ActionId, next: StateId) {
        self.inner.observe(s, a, next)
    }
    fn end_episode(&mut self, converted: bool) {
        self.inner.end_episode(converted);
        self.fresh = true;
    }
    fn beta_table(&self) -> Option<&BetaTable> {
        self.inner.beta_table()
    }
}

fn c3_bandit(_: &mut Shared) -> Check {
    let cfg = load("bandit.json");
    let prepared = Prepared::new(&cfg, None)?;
    let sched = ShiftSchedule::stationary(prepared.mdp().clone());
    let mut ok = true;
    let mut parts = Vec::new();
    let mut mfabl_mean = f64::NAN;
    for entry in &cfg.agents {
        let mut hits = 0usize;
        let mut mean_sum = 0.0;
        for seed in cfg.seed_list() {
            let streams = Streams::new(seed);
            let inner = entry.algorithm.build(&[prepared.mdp()], None, streams.agent())?;
            let mut rec = Recorder { inner, first: Vec::new(), fresh: true };
            let mut sim = Simulation::new(&sched, &streams, streams.schedule(), prepared.max_steps, prepared.v_star);
            sim.advance(&mut rec, cfg.consumers);
            hits += rec.first[rec.first.len() - 1000..].iter().filter(|a| **a == ActionId(0)).count();
            mean_sum += rec.beta_table().map_or(f64::NAN, |t| t.entry(StateId::new(0), ActionId(0)).mean());
        }
        let freq = hits as f64 / (1000.0 * cfg.seeds as f64);
        ok &= freq >= 0.9;
        if entry.label == "mfabl" {
            mfabl_mean = mean_sum / cfg.seeds as f64;
        }
        parts.push(format!("{} best-arm share {freq:.3}", entry.label));
    }
    ok &= (mfabl_mean - 0.3).abs() <= 0.05;
    parts.push(format!("MFABL belief mean for the live arm {mfabl_mean:.3} (0.3 +/- 0.05)"));
    Ok((ok, parts.join(", ")))
}

fn c4_reductions(_: &mut Shared) -> Check {
    let cfg = load("funnel_small.json");
    let prepared = Prepared::new(&cfg, None)?;
    let sched = ShiftSchedule::stationary(prepared.mdp().clone());
    let na = prepared.mdp().num_actions();
    let mut identical = true;
    for seed in 0..3u64 {
        let streams = Streams::new(seed);
        let make = |variant| BetaLearner::mfabl(na, &MfablConfig { variant, ..MfablConfig::default() }, streams.agent());
        let mut agents = [
            make(UpdateRule::Linear),
            make(UpdateRule::Polynomial { omega: 1.0 }),
            make(UpdateRule::Discounted { gamma: 1.0 }),
        ];
        let mut sims: Vec<Simulation> = (0..3)
            .map(|_| Simulation::new(&sched, &streams, streams.schedule(), prepared.max_steps, prepared.v_star))
            .collect();
        for _ in 0..10_000 {
            for (sim, agent) in sims.iter_mut().zip(agents.iter_mut()) {
                sim.advance(agent, 1);
            }
            identical &= agents[1].belief() == agents[0].belief() && agents[2].belief() == agents[0].belief();
        }
    }
    Ok((identical, format!("polynomial(1) and discounted(1) tables equal linear after every one of 10^4 consumers, 3 seeds: {identical}")))
}

fn c5_ordering(shared: &mut Shared) -> Check {
    let cfg = load("funnel_small.json");
    let prepared = Prepared::new(&cfg, None)?;
    let mut results = Vec::new();
    for (i, _) in cfg.agents.iter().enumerate() {
        for seed in cfg.seed_list() {
            let (r, agent) = prepared.run_with_agent(i, seed)?;
            if let Some(t) = agent.beta_table() {
                shared.tables.push(t.clone());
            }
            results.push(r);
        }
    }
    let report = funnel_core::experiments::aggregate(&results, prepared.v_star, &cfg.checkpoints(), cfg.schedule)?;
    let pr = |l: &str| agent_report(&report, l).mean_pr;
    let (ts, mfabl, pmfabl, opt) = (pr("ts"), pr("mfabl"), pr("pmfabl"), pr("optimal"));
    let ok = pmfabl >= mfabl && mfabl >= ts + 0.05 && (opt - 1.0).abs() <= 0.02;
    Ok((ok, format!("PR pMFABL {pmfabl:.3} >= MFABL {mfabl:.3} >= TS {ts:.3} + 0.05; optimal replay {opt:.3} (1 +/- 0.02)")))
}

fn c6_variance(shared: &mut Shared) -> Check {
    let slack = shared.tables.iter().map(check_variance_bound).fold(f64::INFINITY, f64::min);
    Ok((
        !shared.tables.is_empty() && slack >= 0.0,
        format!("{} post-run tables, worst slack 1/(a+b+1) - Var = {slack:.3e}", shared.tables.len()),
    ))
}

fn c7_concept_shift(shared: &mut Shared) -> Check {
    let cfg = load("concept_shift.json");
    let report = run_and_report(&cfg, None, 1, &shared.dir("concept_shift"))?;
    let m = agent_report(&report, "mfabl");
    let (late1, late2) = (m.phases[0].late_pr, m.phases[1].late_pr);
    let ratio = late2 / late1;
    let two_phase = ratio >= 0.8;

    let cfg = load("gradual_shift.json");
    run_and_report(&cfg, None, 1, &shared.dir("gradual_shift"))?;
    if !matches!(cfg.schedule, ShiftMode::Gradual { .. }) {
        return Ok((false, "gradual_shift.json does not use a gradual schedule".into()));
    }
    let n = cfg.consumers;
    let mut worst = 0.0f64;
    for d in 0..10u64 {
        let (lo, hi) = (d * n / 10 + 1, (d + 1) * n / 10);
        let expected: f64 = (lo..=hi).map(|k| cfg.schedule.phase2_probability(k)).sum::<f64>() / (hi - lo + 1) as f64;
        let mut in_phase2 = 0u64;
        for seed in cfg.seed_list() {
            let r = funnel_core::simulator::RunResult::read_files(
                &shared.dir("gradual_shift").join("runs"),
                &funnel_core::experiments::run_stem("mfabl", seed),
            )?;
            in_phase2 += r.phases[lo as usize - 1..hi as usize].iter().filter(|&&p| p == 2).count() as u64;
        }
        let observed = in_phase2 as f64 / ((hi - lo + 1) * cfg.seeds) as f64;
        worst = worst.max((observed - expected).abs());
    }
    let gradual = worst <= 0.02;
    Ok((
        two_phase && gradual,
        format!(
            "MFABL late PR phase 1 {late1:.3}, phase 2 {late2:.3}, ratio {ratio:.3} (>= 0.8); \
             gradual phase shares off by at most {worst:.4} per decile (<= 0.02)"
        ),
    ))
}

fn c8_scalability(shared: &mut Shared) -> Check {
    let cfg = load("scalability.json");
    let report = run_and_report(&cfg, None, 1, &shared.dir("scalability"))?;
    let t = |l: &str| agent_report(&report, l).mean_learner_seconds;
    let (ts, mfabl, psrl) = (t("ts"), t("mfabl"), t("psrl"));
    let ok = psrl >= 10.0 * mfabl && mfabl <= 3.0 * ts;
    Ok((
        ok,
        format!(
            "learner seconds TS {ts:.3}, MFABL {mfabl:.3}, PSRL {psrl:.3}; PSRL/MFABL {:.1} (>= 10), MFABL/TS {:.2} (<= 3)",
            psrl / mfabl,
            mfabl / ts
        ),
    ))
}

fn c9_misspecification(shared: &mut Shared) -> Check {
    let cfg = load("misspecification.json");
    let report = run_and_report(&cfg, None, 1, &shared.dir("misspecification"))?;
    let pmfabl = agent_report(&report, "pmfabl").mean_pr;
    let proj = agent_report(&report, "psrl-temporal").mean_pr;
    Ok((pmfabl - proj >= 0.05, format!("pMFABL {pmfabl:.3} vs day-only PSRL {proj:.3}, gap {:.3} (>= 0.05)", pmfabl - proj)))
}

fn result_csvs(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = ["summary.csv", "curves.csv", "phases.csv"]
        .iter()
        .map(|f| dir.join(f))
        .filter(|p| p.exists())
        .collect();
    let mut runs: Vec<PathBuf> = std::fs::read_dir(dir.join("runs"))
        .map(|it| it.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == "csv")).collect())
        .unwrap_or_default();
    runs.sort();
    files.extend(runs);
    files
}

fn c10_determinism(shared: &mut Shared) -> Check {
    let mut compared = 0;
    let mut mismatched = Vec::new();
    for (config, dir) in [("concept_shift.json", "concept_shift"), ("misspecification.json", "misspecification")] {
        let first = shared.dir(dir);
        if !first.exists() {
            return Ok((false, format!("{dir} was not produced by an earlier criterion")));
        }
        let second = shared.dir(&format!("{dir}_again"));
        run_and_report(&load(config), None, 1, &second)?;
        for a in result_csvs(&first) {
            let b = second.join(a.strip_prefix(&first)?);
            compared += 1;
            if std::fs::read(&a)? != std::fs::read(&b)? {
                mismatched.push(a.display().to_string());
            }
        }
    }
    Ok((compared > 0 && mismatched.is_empty(), format!("{compared} result CSVs compared, {} differ", mismatched.len())))
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, u64, fn(&mut Shared) -> Check); 10] = [
        (1, "expected-update identity", 1, c1_expected_update),
        (2, "planner matches brute force", 10, c2_planner_oracle),
        (3, "bandit reproduction", 30, c3_bandit),
        (4, "reduction identities", 5, c4_reductions),
        (5, "ordering on funnel-small", 600, c5_ordering),
        (6, "variance bound", 600, c6_variance),
        (7, "concept shift", 900, c7_concept_shift),
        (8, "scalability directionality", 1800, c8_scalability),
        (9, "misspecification directionality", 900, c9_misspecification),
        (10, "determinism", 1800, c10_determinism),
    ];
    let mut shared = Shared { scratch: tempfile::tempdir().expect("temp dir"), tables: Vec::new() };
    let mut failed = 0;
    for (id, name, budget, check) in criteria {
        let start = Instant::now();
        let outcome = check(&mut shared);
        let took = start.elapsed();
        let in_time = took <= Duration::from_secs(budget);
        let (passed, detail) = match outcome {
            Ok((p, d)) => (p && in_time, d),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += !passed as u32;
        println!(
            "{} criterion {id:>2} {name}: {detail} [{:.1} s of {budget} s]",
            if passed { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
    }
    println!("\n{} of 10 criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
