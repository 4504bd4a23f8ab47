//! Posterior sampling over transition models.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::Agent;
use crate::error::Result;
use crate::funnel_mdp::{ActionId, FunnelMdp, Policy, StateId, TransitionSupport, ABSORPTION_MAX_ITER, ABSORPTION_TOL};
use crate::planner::solve_q_star_default;
use crate::rng::SimRng;

pub const DEFAULT_REOPT_EVERY: u64 = 1000;

/// Sampled models that fail the absorption check are redrawn up to this many
/// times before the previous policy is kept.
const MAX_RESAMPLES: usize = 100;

/// Dirichlet counts on the feasible triples of a [`TransitionSupport`].
#[derive(Clone, Debug, PartialEq)]
pub struct DirichletTable {
    support: TransitionSupport,
    counts: Vec<f64>,
}

impl DirichletTable {
    /// Every feasible triple starts with count 1.
    pub fn new(support: TransitionSupport) -> Self {
        let counts = vec![1.0; support.len()];
        Self { support, counts }
    }

    pub fn support(&self) -> &TransitionSupport {
        &self.support
    }

    /// Count of `(s, a, next)`, `None` outside the support.
    pub fn count(&self, s: StateId, a: ActionId, next: StateId) -> Option<f64> {
        self.support.position(s, a, next).map(|i| self.counts[i])
    }

    /// Adds one observation. Returns false if the triple is outside the
    /// support, in which case nothing changes.
    pub fn observe(&mut self, s: StateId, a: ActionId, next: StateId) -> bool {
        match self.support.position(s, a, next) {
            Some(i) => {
                self.counts[i] += 1.0;
                true
            }
            None => false,
        }
    }

    /// One transition model drawn from the posterior.
    pub fn sample_model<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<FunnelMdp> {
        let (ns, na) = (self.support.num_states(), self.support.num_actions());
        let mut rows = Vec::with_capacity(ns * na);
        for s in 0..ns {
            for a in 0..na {
                let (s, a) = (StateId::new(s), ActionId(a as u32));
                let r = self.support.range(s, a);
                let mut row: Vec<(StateId, f64)> = self.support.successors(s, a)
                    .iter()
                    .zip(&self.counts[r])
                    .map(|(&n, &c)| (n, Gamma::new(c, 1.0).expect("positive count").sample(rng)))
                    .collect();
                let total: f64 = row.iter().map(|e| e.1).sum();
                if total > 0.0 {
                    row.iter_mut().for_each(|e| e.1 /= total);
                } else if let Some(first) = row.first_mut() {
                    // all gammas underflowed; fall back to the first successor
                    first.1 = 1.0;
                }
                rows.push(row);
            }
        }
        FunnelMdp::from_rows(ns, na, rows, self.support.initial().to_vec())
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["state", "action", "next", "count"])?;
        for s in 0..self.support.num_states() {
            for a in 0..self.support.num_actions() {
                let (s, a) = (StateId::new(s), ActionId(a as u32));
                for (n, c) in self.support.successors(s, a).iter().zip(&self.counts[self.support.range(s, a)]) {
                    w.write_record([s.to_string(), a.to_string(), n.to_string(), c.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub struct PsrlAgent {
    table: DirichletTable,
    reopt_every: u64,
    episode: u64,
    stale: bool,
    policy: Option<Policy>,
    reoptimizations: u64,
    rejected_samples: u64,
    rng: SimRng,
}

impl PsrlAgent {
    pub fn new(support: TransitionSupport, reopt_every: u64, rng: SimRng) -> Self {
        Self {
            table: DirichletTable::new(support),
            reopt_every: reopt_every.max(1),
            episode: 0,
            stale: true,
            policy: None,
            reoptimizations: 0,
            rejected_samples: 0,
            rng,
        }
    }

    pub fn table(&self) -> &DirichletTable {
        &self.table
    }

    pub fn reoptimizations(&self) -> u64 {
        self.reoptimizations
    }

    pub fn rejected_samples(&self) -> u64 {
        self.rejected_samples
    }

    fn reoptimize(&mut self) {
        for _ in 0..MAX_RESAMPLES {
            let Ok(model) = self.table.sample_model(&mut self.rng) else { break };
            let absorbing = model
                .check_absorption(ABSORPTION_TOL, ABSORPTION_MAX_ITER)
                .map(|a| a.is_absorbing)
                .unwrap_or(false);
            if !absorbing {
                self.rejected_samples += 1;
                continue;
            }
            if let Ok(sol) = solve_q_star_default(&model) {
                self.policy = Some(sol.policy);
                break;
            }
            self.rejected_samples += 1;
        }
        if self.policy.is_none() {
            self.policy = Some(Policy::uniform(self.table.support.num_states(), self.table.support.num_actions()));
        }
        self.reoptimizations += 1;
        self.stale = false;
    }
}

impl Agent for PsrlAgent {
    fn name(&self) -> &str {
        "psrl"
    }

    fn act(&mut self, s: StateId) -> ActionId {
        // re-solving happens here so that it is charged to the learner
        if self.stale {
            self.reoptimize();
        }
        self.policy.as_ref().expect("policy set by reoptimize").mode(s)
    }

    fn observe(&mut self, s: StateId, a: ActionId, next: StateId) {
        self.table.observe(s, a, next);
    }

    fn end_episode(&mut self, _converted: bool) {
        self.episode += 1;
        if self.episode % self.reopt_every == 0 {
            self.stale = true;
        }
    }

    fn write_belief_csv(&self, out: &mut dyn std::io::Write) -> Result<()> {
        self.table.write_csv(out)
    }
}
