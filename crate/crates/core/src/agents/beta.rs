//! Beta beliefs and the Thompson-style learners built on them: one-step TS,
//! MFABL (feedback attribution) and pMFABL (pathwise attribution).

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::Agent;
use crate::error::{Error, Result};
use crate::funnel_mdp::{ActionId, StateId};
use crate::rng::SimRng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prior {
    pub alpha: f64,
    pub beta: f64,
}

impl Prior {
    pub const fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::param(format!("{field}.alpha"), format!("{} must be positive", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::param(format!("{field}.beta"), format!("{} must be positive", self.beta)));
        }
        Ok(())
    }
}

impl Default for Prior {
    fn default() -> Self {
        Self::new(1.0, 9.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaEntry {
    pub alpha: f64,
    pub beta: f64,
    /// Number of updates applied to this pair.
    pub visits: u64,
}

impl BetaEntry {
    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn variance(&self) -> f64 {
        let n = self.alpha + self.beta;
        self.alpha * self.beta / (n * n * (n + 1.0))
    }
}

/// Per-(state, action) Beta counts. Rows are allocated on first touch, so a
/// learner only stores the states it has actually encountered.
#[derive(Clone, Debug, PartialEq)]
pub struct BetaTable {
    num_actions: usize,
    prior: Prior,
    rows: Vec<Option<Box<[BetaEntry]>>>,
}

impl BetaTable {
    pub fn new(num_actions: usize, prior: Prior) -> Self {
        Self { num_actions, prior, rows: Vec::new() }
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn prior(&self) -> Prior {
        self.prior
    }

    fn fresh_row(&self) -> Box<[BetaEntry]> {
        vec![BetaEntry { alpha: self.prior.alpha, beta: self.prior.beta, visits: 0 }; self.num_actions]
            .into_boxed_slice()
    }

    /// Row for `s`, allocating it at the prior if needed.
    pub fn row_mut(&mut self, s: StateId) -> &mut [BetaEntry] {
        let i = s.index();
        if self.rows.len() <= i {
            self.rows.resize(i + 1, None);
        }
        if self.rows[i].is_none() {
            self.rows[i] = Some(self.fresh_row());
        }
        self.rows[i].as_mut().expect("allocated above")
    }

    pub fn row(&self, s: StateId) -> Option<&[BetaEntry]> {
        self.rows.get(s.index()).and_then(|r| r.as_deref())
    }

    pub fn entry(&self, s: StateId, a: ActionId) -> BetaEntry {
        self.row(s).map(|r| r[a.index()]).unwrap_or(BetaEntry {
            alpha: self.prior.alpha,
            beta: self.prior.beta,
            visits: 0,
        })
    }

    pub fn entry_mut(&mut self, s: StateId, a: ActionId) -> &mut BetaEntry {
        &mut self.row_mut(s)[a.index()]
    }

    /// `max_a α/(α+β)` at an active state (prior mean when unvisited).
    pub fn max_mean(&self, s: StateId) -> f64 {
        match self.row(s) {
            Some(row) => row.iter().map(BetaEntry::mean).fold(f64::NEG_INFINITY, f64::max),
            None => self.prior.alpha / (self.prior.alpha + self.prior.beta),
        }
    }

    pub fn allocated_states(&self) -> usize {
        self.rows.iter().filter(|r| r.is_some()).count()
    }

    pub fn allocated_entries(&self) -> usize {
        self.allocated_states() * self.num_actions
    }

    /// All allocated entries as `(state, action, entry)`.
    pub fn iter(&self) -> impl Iterator<Item = (StateId, ActionId, BetaEntry)> + '_ {
        self.rows.iter().enumerate().filter_map(|(s, r)| r.as_ref().map(|r| (s, r))).flat_map(|(s, r)| {
            r.iter().enumerate().map(move |(a, e)| (StateId::new(s), ActionId(a as u32), *e))
        })
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["state", "action", "alpha", "beta", "n"])?;
        for (s, a, e) in self.iter() {
            w.write_record([s.to_string(), a.to_string(), e.alpha.to_string(), e.beta.to_string(), e.visits.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Samples from `Beta(alpha, beta)`.
#[inline]
pub fn sample_beta<R: Rng + ?Sized>(alpha: f64, beta: f64, rng: &mut R) -> f64 {
    Beta::new(alpha, beta).expect("beta parameters are positive").sample(rng)
}

/// Index of a maximal element, ties broken uniformly at random. Draws from
/// `rng` only when there is a tie.
pub fn argmax_uniform_ties<R: Rng + ?Sized>(values: &[f64], rng: &mut R) -> usize {
    let mut best = 0;
    let mut ties = 1u32;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
            ties = 1;
        } else if v == values[best] {
            ties += 1;
            // reservoir choice among equal maxima
            if rng.random_range(0..ties) == 0 {
                best = i;
            }
        }
    }
    best
}

/// Thompson draw: one Beta sample per action, play the largest.
pub fn ts_act<R: Rng + ?Sized>(belief: &BetaTable, s: StateId, rng: &mut R) -> ActionId {
    let k = belief.num_actions();
    if k == 1 {
        return ActionId(0);
    }
    let mut samples = [0.0f64; 16];
    let mut heap;
    let buf: &mut [f64] = if k <= samples.len() {
        &mut samples[..k]
    } else {
        heap = vec![0.0; k];
        &mut heap
    };
    for (a, slot) in buf.iter_mut().enumerate() {
        let e = belief.entry(s, ActionId(a as u32));
        *slot = sample_beta(e.alpha, e.beta, rng);
    }
    ActionId(argmax_uniform_ties(buf, rng) as u32)
}

/// One-step credit: conversion on this transition counts as a success.
pub fn ts_observe(belief: &mut BetaTable, s: StateId, a: ActionId, next: StateId) {
    let e = belief.entry_mut(s, a);
    if next == StateId::CONVERT {
        e.alpha += 1.0;
    } else {
        e.beta += 1.0;
    }
    e.visits += 1;
}

/// How the belief of the played pair absorbs the feedback `f`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum UpdateRule {
    /// `α += f`, `β += 1 - f`.
    Linear,
    /// Step size `(1/(n+1))^ω` on the mean, `ω ∈ (1/2, 1]`.
    Polynomial { omega: f64 },
    /// Discounted target `γ f`, `γ ∈ [0, 1]`.
    Discounted { gamma: f64 },
}

impl Default for UpdateRule {
    fn default() -> Self {
        UpdateRule::Linear
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MfablConfig {
    pub epsilon: f64,
    pub prior: Prior,
    pub variant: UpdateRule,
}

impl Default for MfablConfig {
    fn default() -> Self {
        Self { epsilon: 0.01, prior: Prior::default(), variant: UpdateRule::Linear }
    }
}

impl MfablConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::param("epsilon", format!("{} outside [0, 1]", self.epsilon)));
        }
        self.prior.validate("prior")?;
        match self.variant {
            UpdateRule::Linear => {}
            UpdateRule::Polynomial { omega } => {
                if !(omega > 0.5 && omega <= 1.0) {
                    return Err(Error::param("variant.omega", format!("{omega} outside (1/2, 1]")));
                }
            }
            UpdateRule::Discounted { gamma } => {
                if !(0.0..=1.0).contains(&gamma) {
                    return Err(Error::param("variant.gamma", format!("{gamma} outside [0, 1]")));
                }
            }
        }
        Ok(())
    }
}

/// Thompson draw with ε-greedy. The ε coin is only tossed when `ε > 0`.
pub fn mfabl_act<R: Rng + ?Sized>(belief: &BetaTable, s: StateId, epsilon: f64, rng: &mut R) -> ActionId {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return ActionId(rng.random_range(0..belief.num_actions() as u32));
    }
    ts_act(belief, s, rng)
}

/// Synthetic feedback from the successor: 1 at convert, 0 at quit, otherwise
/// Bernoulli with the successor's best posterior mean.
pub fn mfabl_feedback<R: Rng + ?Sized>(belief: &BetaTable, next: StateId, rng: &mut R) -> bool {
    match next {
        StateId::CONVERT => true,
        StateId::QUIT => false,
        s => feedback_from_uniform(belief, s, rng.random::<f64>()),
    }
}

/// [`mfabl_feedback`] for an active successor with the uniform draw supplied.
pub fn feedback_from_uniform(belief: &BetaTable, next: StateId, u: f64) -> bool {
    u < belief.max_mean(next)
}

/// Applies feedback `f` to the pair `(s, a)` under `rule`.
///
/// The Polynomial and Discounted rules schedule their step sizes on
/// `n = α₀ + β₀ + visits`, the same count the Linear rule implicitly uses, so
/// that `ω = 1` and `γ = 1` reproduce Linear exactly.
pub fn apply_feedback(belief: &mut BetaTable, s: StateId, a: ActionId, f: bool, rule: UpdateRule) {
    let n0 = belief.prior().alpha + belief.prior().beta;
    let e = belief.entry_mut(s, a);
    let m = e.alpha + e.beta;
    let n = n0 + e.visits as f64;
    match rule {
        UpdateRule::Linear => {
            if f {
                e.alpha += 1.0;
            } else {
                e.beta += 1.0;
            }
        }
        UpdateRule::Polynomial { omega } => {
            let inc = m / ((n + 1.0).powf(omega) - 1.0);
            if f {
                e.alpha += inc;
            } else {
                e.beta += inc;
            }
        }
        UpdateRule::Discounted { gamma } => {
            if f {
                e.alpha += m * (gamma * m - e.alpha) / (n * e.beta + (1.0 - gamma) * m);
            } else {
                e.beta += m / n;
            }
        }
    }
    e.visits += 1;
}

/// Draws the feedback at `next` and applies it to `(s, a)`.
pub fn mfabl_observe<R: Rng + ?Sized>(
    belief: &mut BetaTable,
    s: StateId,
    a: ActionId,
    next: StateId,
    rule: UpdateRule,
    rng: &mut R,
) -> bool {
    let f = mfabl_feedback(belief, next, rng);
    apply_feedback(belief, s, a, f, rule);
    f
}

/// Uniform attribution of the episode outcome to every occurrence on the path.
pub fn pmfabl_end_episode(belief: &mut BetaTable, path: &[(StateId, ActionId)], converted: bool) {
    for &(s, a) in path {
        let e = belief.entry_mut(s, a);
        if converted {
            e.alpha += 1.0;
        } else {
            e.beta += 1.0;
        }
        e.visits += 1;
    }
}

/// Which attribution rule a [`BetaLearner`] applied to an episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Attribution {
    /// One-step conversion credit, no ε.
    OneStep,
    /// Synthetic successor feedback.
    Feedback,
    /// Episode outcome rolled back over the path.
    Pathwise,
}

/// TS, MFABL, pMFABL and the pMFABL-then-MFABL hybrid share this learner; they
/// differ only in the attribution rule applied to each consumer.
pub struct BetaLearner {
    name: String,
    belief: BetaTable,
    epsilon: f64,
    rule: UpdateRule,
    /// Episodes before this index use pathwise attribution.
    pathwise_until: u64,
    one_step: bool,
    episode: u64,
    path: Vec<(StateId, ActionId)>,
    log: Vec<Attribution>,
    keep_log: bool,
    rng: SimRng,
}

impl BetaLearner {
    fn build(name: &str, num_actions: usize, cfg: &MfablConfig, rng: SimRng) -> Self {
        Self {
            name: name.to_string(),
            belief: BetaTable::new(num_actions, cfg.prior),
            epsilon: cfg.epsilon,
            rule: cfg.variant,
            pathwise_until: 0,
            one_step: false,
            episode: 0,
            path: Vec::new(),
            log: Vec::new(),
            keep_log: false,
            rng,
        }
    }

    pub fn thompson(num_actions: usize, prior: Prior, rng: SimRng) -> Self {
        let cfg = MfablConfig { epsilon: 0.0, prior, variant: UpdateRule::Linear };
        let mut l = Self::build("ts", num_actions, &cfg, rng);
        l.one_step = true;
        l
    }

    pub fn mfabl(num_actions: usize, cfg: &MfablConfig, rng: SimRng) -> Self {
        Self::build("mfabl", num_actions, cfg, rng)
    }

    pub fn pmfabl(num_actions: usize, cfg: &MfablConfig, rng: SimRng) -> Self {
        let mut l = Self::build("pmfabl", num_actions, cfg, rng);
        l.pathwise_until = u64::MAX;
        l
    }

    /// pMFABL for consumers `0..switch_at`, MFABL afterwards, on one table.
    pub fn hybrid(num_actions: usize, cfg: &MfablConfig, switch_at: u64, rng: SimRng) -> Self {
        let mut l = Self::build("hybrid", num_actions, cfg, rng);
        l.pathwise_until = switch_at;
        l
    }

    /// Records the attribution rule of every finished episode.
    pub fn with_attribution_log(mut self) -> Self {
        self.keep_log = true;
        self
    }

    pub fn attribution_log(&self) -> &[Attribution] {
        &self.log
    }

    pub fn belief(&self) -> &BetaTable {
        &self.belief
    }

    pub fn current_attribution(&self) -> Attribution {
        if self.one_step {
            Attribution::OneStep
        } else if self.episode < self.pathwise_until {
            Attribution::Pathwise
        } else {
            Attribution::Feedback
        }
    }
}

impl Agent for BetaLearner {
    fn name(&self) -> &str {
        &self.name
    }

    fn act(&mut self, s: StateId) -> ActionId {
        if self.one_step {
            ts_act(&self.belief, s, &mut self.rng)
        } else {
            mfabl_act(&self.belief, s, self.epsilon, &mut self.rng)
        }
    }

    fn observe(&mut self, s: StateId, a: ActionId, next: StateId) {
        match self.current_attribution() {
            Attribution::OneStep => ts_observe(&mut self.belief, s, a, next),
            Attribution::Feedback => {
                mfabl_observe(&mut self.belief, s, a, next, self.rule, &mut self.rng);
            }
            Attribution::Pathwise => self.path.push((s, a)),
        }
    }

    fn end_episode(&mut self, converted: bool) {
        let rule = self.current_attribution();
        if rule == Attribution::Pathwise {
            pmfabl_end_episode(&mut self.belief, &self.path, converted);
        }
        self.path.clear();
        if self.keep_log {
            self.log.push(rule);
        }
        self.episode += 1;
    }

    fn beta_table(&self) -> Option<&BetaTable> {
        Some(&self.belief)
    }
}
