//! The conversion-funnel MDP: a finite set of active states, `A + 1` actions
//! (action 0 is "no intervention" in generated funnels) and two absorbing
//! outcomes, convert and quit. The only reward is 1 on entering convert, so
//! every value in this crate is an eventual conversion probability.
//!
//! Absorbing states are never stored as rows of the transition table; they are
//! represented by the [`StateId::CONVERT`] and [`StateId::QUIT`] sentinels.

mod json;
mod projection;
mod synthetic;

use std::collections::VecDeque;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use projection::{StateProjection, TransitionSupport};
pub use synthetic::{
    synthetic_funnel, FunnelGenParams, FunnelState, OutcomeCoefs, OutcomeLogits, ProjectionKind,
    SyntheticFunnel,
};

/// Row sums and the initial distribution must be within this of 1.
pub const STOCHASTIC_TOL: f64 = 1e-12;
pub const ABSORPTION_TOL: f64 = 1e-9;
pub const ABSORPTION_MAX_ITER: usize = 10_000;

/// Index of an active state, or one of the two absorbing sentinels.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateId(u32);

impl StateId {
    pub const CONVERT: StateId = StateId(u32::MAX);
    pub const QUIT: StateId = StateId(u32::MAX - 1);

    /// Active state with the given index.
    pub fn new(index: usize) -> Self {
        assert!(index < (u32::MAX - 1) as usize, "state index {index} collides with sentinels");
        StateId(index as u32)
    }

    pub fn is_terminal(self) -> bool {
        self == Self::CONVERT || self == Self::QUIT
    }

    /// Index into per-state arrays. Meaningless for terminal sentinels.
    pub fn index(self) -> usize {
        debug_assert!(!self.is_terminal());
        self.0 as usize
    }

    pub fn raw(self) -> u32 {
        self.0
    }
}

impl fmt::Debug for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::CONVERT => write!(f, "c"),
            Self::QUIT => write!(f, "q"),
            StateId(i) => write!(f, "{i}"),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct ActionId(pub u32);

impl ActionId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Sparse transition rows, one per `(state, action)` in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionModel {
    num_states: usize,
    num_actions: usize,
    offsets: Vec<usize>,
    entries: Vec<(StateId, f64)>,
}

impl TransitionModel {
    /// `rows[s * num_actions + a]` is the sparse successor list of `(s, a)`.
    pub fn from_rows(
        num_states: usize,
        num_actions: usize,
        rows: Vec<Vec<(StateId, f64)>>,
    ) -> Result<Self> {
        if num_actions == 0 {
            return Err(Error::Malformed("at least one action is required".into()));
        }
        if rows.len() != num_states * num_actions {
            return Err(Error::Malformed(format!(
                "expected {} rows, got {}",
                num_states * num_actions,
                rows.len()
            )));
        }
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut entries = Vec::with_capacity(rows.iter().map(Vec::len).sum());
        offsets.push(0);
        for (i, row) in rows.into_iter().enumerate() {
            for &(next, p) in &row {
                if !next.is_terminal() && next.index() >= num_states {
                    return Err(Error::Malformed(format!(
                        "row ({}, {}) points at unknown state {next}",
                        i / num_actions,
                        i % num_actions
                    )));
                }
                if !p.is_finite() {
                    return Err(Error::Malformed(format!("non-finite probability {p}")));
                }
            }
            entries.extend(row);
            offsets.push(entries.len());
        }
        Ok(Self { num_states, num_actions, offsets, entries })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn row(&self, s: StateId, a: ActionId) -> &[(StateId, f64)] {
        let i = s.index() * self.num_actions + a.index();
        &self.entries[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn num_entries(&self) -> usize {
        self.entries.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitialDistribution {
    weights: Vec<f64>,
    support: Vec<StateId>,
}

impl InitialDistribution {
    pub fn new(weights: Vec<f64>) -> Self {
        let support = weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(i, _)| StateId::new(i))
            .collect();
        Self { weights, support }
    }

    pub fn point_mass(num_states: usize, state: usize) -> Self {
        let mut w = vec![0.0; num_states];
        w[state] = 1.0;
        Self::new(w)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn support(&self) -> &[StateId] {
        &self.support
    }

    pub fn weight(&self, s: StateId) -> f64 {
        self.weights[s.index()]
    }
}

/// `M = (S, A, P, λ, r)` with `r` fixed to 1 on conversion.
#[derive(Clone, Debug, PartialEq)]
pub struct FunnelMdp {
    transitions: TransitionModel,
    initial: InitialDistribution,
}

/// One entry of a [`ValidationReport`].
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    RowNotStochastic { state: StateId, action: ActionId, sum: f64 },
    ProbabilityOutOfRange { state: StateId, action: ActionId, next: StateId, p: f64 },
    DuplicateSupport { state: StateId, action: ActionId, next: StateId },
    InitialNotNormalized { sum: f64 },
    InitialNegative { state: StateId },
    InitialEmpty,
    Unreachable { state: StateId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RowNotStochastic { state, action, sum } => {
                write!(f, "row ({state}, {action}) sums to {sum}")
            }
            Violation::ProbabilityOutOfRange { state, action, next, p } => {
                write!(f, "p({state}, {action}, {next}) = {p} outside [0, 1]")
            }
            Violation::DuplicateSupport { state, action, next } => {
                write!(f, "row ({state}, {action}) lists {next} twice")
            }
            Violation::InitialNotNormalized { sum } => write!(f, "initial weights sum to {sum}"),
            Violation::InitialNegative { state } => write!(f, "negative initial weight at {state}"),
            Violation::InitialEmpty => write!(f, "initial distribution has empty support"),
            Violation::Unreachable { state } => {
                write!(f, "state {state} unreachable from the initial support")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn summary(&self) -> String {
        self.violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Absorption {
    pub is_absorbing: bool,
    /// Upper bound on the probability of never being absorbed, over all policies.
    pub max_survival_prob: f64,
    pub iterations: usize,
}

impl FunnelMdp {
    /// Builds a model, checking only shape. Use [`FunnelMdp::validate`] for
    /// the semantic checks.
    pub fn new(transitions: TransitionModel, initial: InitialDistribution) -> Result<Self> {
        if initial.weights.len() != transitions.num_states {
            return Err(Error::Malformed(format!(
                "initial distribution has {} entries for {} states",
                initial.weights.len(),
                transitions.num_states
            )));
        }
        if transitions.num_states == 0 {
            return Err(Error::Malformed("model has no active states".into()));
        }
        Ok(Self { transitions, initial })
    }

    pub fn from_rows(
        num_states: usize,
        num_actions: usize,
        rows: Vec<Vec<(StateId, f64)>>,
        initial: Vec<f64>,
    ) -> Result<Self> {
        Self::new(
            TransitionModel::from_rows(num_states, num_actions, rows)?,
            InitialDistribution::new(initial),
        )
    }

    /// Builds a model and rejects it unless it is valid and absorbing.
    pub fn checked(transitions: TransitionModel, initial: InitialDistribution) -> Result<Self> {
        let mdp = Self::new(transitions, initial)?;
        let report = mdp.validate();
        if !report.is_valid() {
            return Err(Error::InvalidModel(report.summary()));
        }
        let abs = mdp.check_absorption(ABSORPTION_TOL, ABSORPTION_MAX_ITER)?;
        if !abs.is_absorbing {
            return Err(Error::InvalidModel(format!(
                "not absorbing: survival probability {}",
                abs.max_survival_prob
            )));
        }
        Ok(mdp)
    }

    pub fn num_states(&self) -> usize {
        self.transitions.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.transitions.num_actions
    }

    pub fn transitions(&self) -> &TransitionModel {
        &self.transitions
    }

    pub fn initial(&self) -> &InitialDistribution {
        &self.initial
    }

    #[inline]
    pub fn row(&self, s: StateId, a: ActionId) -> &[(StateId, f64)] {
        self.transitions.row(s, a)
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> {
        (0..self.num_states()).map(StateId::new)
    }

    pub fn actions(&self) -> impl Iterator<Item = ActionId> {
        (0..self.num_actions() as u32).map(ActionId)
    }

    /// One-step conversion probability `p_{sac}`.
    pub fn conversion_prob(&self, s: StateId, a: ActionId) -> f64 {
        self.row(s, a).iter().filter(|(n, _)| *n == StateId::CONVERT).map(|(_, p)| p).sum()
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        for s in self.states() {
            for a in self.actions() {
                let row = self.row(s, a);
                let mut sum = 0.0;
                for (i, &(next, p)) in row.iter().enumerate() {
                    if !(0.0..=1.0).contains(&p) {
                        violations.push(Violation::ProbabilityOutOfRange { state: s, action: a, next, p });
                    }
                    if row[..i].iter().any(|(n, _)| *n == next) {
                        violations.push(Violation::DuplicateSupport { state: s, action: a, next });
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    violations.push(Violation::RowNotStochastic { state: s, action: a, sum });
                }
            }
        }
        let mut sum = 0.0;
        for s in self.states() {
            let w = self.initial.weight(s);
            if w < 0.0 {
                violations.push(Violation::InitialNegative { state: s });
            }
            sum += w;
        }
        if self.initial.support.is_empty() {
            violations.push(Violation::InitialEmpty);
        } else if (sum - 1.0).abs() > STOCHASTIC_TOL {
            violations.push(Violation::InitialNotNormalized { sum });
        }
        let reachable = self.reachable();
        for s in self.states() {
            if !reachable[s.index()] {
                violations.push(Violation::Unreachable { state: s });
            }
        }
        ValidationReport { violations }
    }

    /// States reachable from the initial support under some policy.
    pub fn reachable(&self) -> Vec<bool> {
        let mut seen = vec![false; self.num_states()];
        let mut queue: VecDeque<StateId> = VecDeque::new();
        for &s in self.initial.support() {
            seen[s.index()] = true;
            queue.push_back(s);
        }
        while let Some(s) = queue.pop_front() {
            for a in self.actions() {
                for &(next, p) in self.row(s, a) {
                    if p > 0.0 && !next.is_terminal() && !seen[next.index()] {
                        seen[next.index()] = true;
                        queue.push_back(next);
                    }
                }
            }
        }
        seen
    }

    /// Removes states unreachable from the initial support, renumbering the
    /// remaining states in their original order.
    pub fn drop_unreachable(&self) -> Result<FunnelMdp> {
        let reachable = self.reachable();
        let mut remap = vec![None; self.num_states()];
        let mut next_id = 0usize;
        for (i, keep) in reachable.iter().enumerate() {
            if *keep {
                remap[i] = Some(StateId::new(next_id));
                next_id += 1;
            }
        }
        let map = |s: StateId| if s.is_terminal() { Some(s) } else { remap[s.index()] };
        let mut rows = Vec::with_capacity(next_id * self.num_actions());
        let mut initial = Vec::with_capacity(next_id);
        for s in self.states().filter(|s| reachable[s.index()]) {
            for a in self.actions() {
                let row = self
                    .row(s, a)
                    .iter()
                    .map(|&(n, p)| (map(n).expect("successor of a reachable state is reachable"), p))
                    .collect();
                rows.push(row);
            }
            initial.push(self.initial.weight(s));
        }
        FunnelMdp::from_rows(next_id, self.num_actions(), rows, initial)
    }

    /// Fixed point of `x_s <- max_a sum_{s' active} p_{sas'} x_{s'}` from
    /// `x = 1`. The result bounds the probability of never absorbing.
    pub fn check_absorption(&self, tol: f64, max_iter: usize) -> Result<Absorption> {
        let mut x = vec![1.0f64; self.num_states()];
        let mut next = vec![0.0f64; self.num_states()];
        let mut max_x = 1.0;
        for it in 1..=max_iter {
            let mut change = 0.0f64;
            max_x = 0.0f64;
            for s in self.states() {
                let mut best = 0.0f64;
                for a in self.actions() {
                    let v: f64 = self
                        .row(s, a)
                        .iter()
                        .filter(|(n, _)| !n.is_terminal())
                        .map(|&(n, p)| p * x[n.index()])
                        .sum();
                    best = best.max(v);
                }
                let v = best.min(x[s.index()]);
                change = change.max((x[s.index()] - v).abs());
                max_x = max_x.max(v);
                next[s.index()] = v;
            }
            std::mem::swap(&mut x, &mut next);
            if max_x < tol || change <= f64::EPSILON * max_x {
                return Ok(Absorption {
                    is_absorbing: max_x < tol,
                    max_survival_prob: max_x,
                    iterations: it,
                });
            }
        }
        Err(Error::AbsorptionNotConverged { iterations: max_iter, last_survival: max_x })
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> StateId {
        self.initial_from_uniform(rng.random::<f64>())
    }

    pub fn initial_from_uniform(&self, u: f64) -> StateId {
        let support = self.initial.support();
        let mut acc = 0.0;
        for &s in support {
            acc += self.initial.weight(s);
            if u < acc {
                return s;
            }
        }
        *support.last().expect("initial support is nonempty")
    }

    pub fn step<R: Rng + ?Sized>(&self, s: StateId, a: ActionId, rng: &mut R) -> Result<StateId> {
        self.check_pair(s, a)?;
        Ok(self.step_from_uniform(s, a, rng.random::<f64>()))
    }

    /// Inverse-CDF draw from row `(s, a)` given a uniform `u` in `[0, 1)`.
    #[inline]
    pub fn step_from_uniform(&self, s: StateId, a: ActionId, u: f64) -> StateId {
        let row = self.row(s, a);
        let mut acc = 0.0;
        for &(next, p) in row {
            acc += p;
            if u < acc {
                return next;
            }
        }
        // rounding slack: fall back to the last positive entry
        row.iter().rev().find(|(_, p)| *p > 0.0).map(|(n, _)| *n).unwrap_or(StateId::QUIT)
    }

    pub fn check_pair(&self, s: StateId, a: ActionId) -> Result<()> {
        if s.is_terminal() || s.index() >= self.num_states() {
            return Err(Error::InvalidState(s));
        }
        if a.index() >= self.num_actions() {
            return Err(Error::InvalidAction { action: a, num_actions: self.num_actions() });
        }
        Ok(())
    }

    /// Relabels actions: row `(s, a)` of the output is row `(s, perm[a])`
    /// of `self`. The initial distribution is unchanged.
    pub fn permute_actions(&self, perm: &[usize]) -> Result<FunnelMdp> {
        check_permutation(perm, self.num_actions())?;
        let rows = self
            .states()
            .flat_map(|s| perm.iter().map(move |&b| self.row(s, ActionId(b as u32)).to_vec()))
            .collect();
        FunnelMdp::from_rows(self.num_states(), self.num_actions(), rows, self.initial.weights.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        json::to_json(self)
    }

    pub fn from_json(text: &str) -> Result<FunnelMdp> {
        json::from_json(text)
    }
}

pub fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::NotAPermutation(format!("{perm:?}")));
    }
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::NotAPermutation(format!("{perm:?}")));
        }
        seen[p] = true;
    }
    Ok(())
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// The two-armed bandit as a single-state funnel: arm index 0 converts with
/// probability 0.3, arm index 1 never converts.
pub fn bandit_example() -> FunnelMdp {
    FunnelMdp::from_rows(
        1,
        2,
        vec![
            vec![(StateId::CONVERT, 0.3), (StateId::QUIT, 0.7)],
            vec![(StateId::QUIT, 1.0)],
        ],
        vec![1.0],
    )
    .expect("bandit example is well formed")
}

/// Stochastic policy `π_{sa}` over active states.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    num_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != num_states * num_actions {
            return Err(Error::Malformed("policy shape mismatch".into()));
        }
        for (s, row) in probs.chunks(num_actions).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::Malformed(format!("policy row {s} is not a distribution")));
            }
        }
        Ok(Self { num_actions, probs })
    }

    pub fn deterministic(num_actions: usize, actions: &[ActionId]) -> Self {
        let mut probs = vec![0.0; actions.len() * num_actions];
        for (s, a) in actions.iter().enumerate() {
            probs[s * num_actions + a.index()] = 1.0;
        }
        Self { num_actions, probs }
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self { num_actions, probs: vec![1.0 / num_actions as f64; num_states * num_actions] }
    }

    pub fn num_states(&self) -> usize {
        self.probs.len() / self.num_actions
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn prob(&self, s: StateId, a: ActionId) -> f64 {
        self.probs[s.index() * self.num_actions + a.index()]
    }

    pub fn row(&self, s: StateId) -> &[f64] {
        &self.probs[s.index() * self.num_actions..(s.index() + 1) * self.num_actions]
    }

    /// The action with the largest probability (lowest index on ties).
    pub fn mode(&self, s: StateId) -> ActionId {
        let row = self.row(s);
        let mut best = 0;
        for (a, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = a;
            }
        }
        ActionId(best as u32)
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: StateId, rng: &mut R) -> ActionId {
        let row = self.row(s);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return ActionId(a as u32);
            }
        }
        self.mode(s)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["state", "action", "prob"])?;
        for (i, &p) in self.probs.iter().enumerate() {
            let (s, a) = (i / self.num_actions, i % self.num_actions);
            w.write_record([s.to_string(), a.to_string(), p.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn chain(rows: Vec<Vec<(StateId, f64)>>, num_states: usize, num_actions: usize) -> FunnelMdp {
        let mut init = vec![0.0; num_states];
        init[0] = 1.0;
        FunnelMdp::from_rows(num_states, num_actions, rows, init).unwrap()
    }

    #[test]
    fn bandit_is_valid_and_absorbing() {
        let m = bandit_example();
        assert_eq!(m.num_states(), 1);
        assert_eq!(m.num_actions(), 2);
        assert_eq!(m.row(StateId::new(0), ActionId(0)), &[(StateId::CONVERT, 0.3), (StateId::QUIT, 0.7)]);
        assert!(m.validate().is_valid());
        let abs = m.check_absorption(ABSORPTION_TOL, ABSORPTION_MAX_ITER).unwrap();
        assert!(abs.is_absorbing);
        assert_eq!(abs.max_survival_prob, 0.0);
    }

    #[test]
    fn row_sum_violation_reported() {
        let m = chain(vec![vec![(StateId::CONVERT, 0.3), (StateId::QUIT, 0.6)]], 1, 1);
        let r = m.validate();
        assert!(matches!(r.violations[..], [Violation::RowNotStochastic { .. }]));
    }

    #[test]
    fn duplicate_and_range_violations_reported() {
        let m = chain(
            vec![vec![(StateId::QUIT, 0.5), (StateId::QUIT, 0.5)], vec![(StateId::QUIT, 1.5), (StateId::CONVERT, -0.5)]],
            1,
            2,
        );
        let r = m.validate();
        assert!(r.violations.iter().any(|v| matches!(v, Violation::DuplicateSupport { .. })));
        assert!(r.violations.iter().any(|v| matches!(v, Violation::ProbabilityOutOfRange { .. })));
    }

    #[test]
    fn unreachable_state_reported_and_dropped() {
        // state 1 is never entered from state 0
        let m = chain(vec![vec![(StateId::CONVERT, 1.0)], vec![(StateId::QUIT, 1.0)]], 2, 1);
        let r = m.validate();
        assert_eq!(r.violations, vec![Violation::Unreachable { state: StateId::new(1) }]);
        let pruned = m.drop_unreachable().unwrap();
        assert_eq!(pruned.num_states(), 1);
        assert!(pruned.validate().is_valid());
    }

    #[test]
    fn initial_distribution_violations() {
        let m = FunnelMdp::from_rows(1, 1, vec![vec![(StateId::QUIT, 1.0)]], vec![0.5]).unwrap();
        assert!(m.validate().violations.iter().any(|v| matches!(v, Violation::InitialNotNormalized { .. })));
        let m = FunnelMdp::from_rows(1, 1, vec![vec![(StateId::QUIT, 1.0)]], vec![0.0]).unwrap();
        assert!(m.validate().violations.contains(&Violation::InitialEmpty));
    }

    #[test]
    fn malformed_rows_rejected() {
        assert!(FunnelMdp::from_rows(1, 1, vec![vec![(StateId::new(3), 1.0)]], vec![1.0]).is_err());
        assert!(FunnelMdp::from_rows(1, 2, vec![vec![(StateId::QUIT, 1.0)]], vec![1.0]).is_err());
        assert!(FunnelMdp::from_rows(2, 1, vec![vec![], vec![]], vec![1.0]).is_err());
    }

    #[test]
    fn self_loop_is_not_absorbing() {
        let m = chain(vec![vec![(StateId::CONVERT, 1.0)], vec![(StateId::new(0), 1.0)]], 1, 2);
        let abs = m.check_absorption(ABSORPTION_TOL, ABSORPTION_MAX_ITER).unwrap();
        assert!(!abs.is_absorbing);
        assert_eq!(abs.max_survival_prob, 1.0);
    }

    #[test]
    fn slow_leak_reports_non_convergence() {
        let m = chain(vec![vec![(StateId::new(0), 0.9999), (StateId::QUIT, 0.0001)]], 1, 1);
        let err = m.check_absorption(1e-9, 100).unwrap_err();
        assert!(matches!(err, Error::AbsorptionNotConverged { iterations: 100, .. }));
    }

    #[test]
    fn leaky_cycle_is_absorbing() {
        let m = chain(
            vec![vec![(StateId::new(1), 0.5), (StateId::QUIT, 0.5)], vec![(StateId::new(0), 0.5), (StateId::CONVERT, 0.5)]],
            2,
            1,
        );
        let abs = m.check_absorption(1e-9, 10_000).unwrap();
        assert!(abs.is_absorbing);
        assert!(abs.max_survival_prob < 1e-9);
    }

    #[test]
    fn sample_initial_point_mass_and_frequency() {
        let mut rng = rng_from_seed(1);
        let m = bandit_example();
        assert_eq!(m.sample_initial(&mut rng), StateId::new(0));
        let m = FunnelMdp::from_rows(
            2,
            1,
            vec![vec![(StateId::QUIT, 1.0)], vec![(StateId::QUIT, 1.0)]],
            vec![0.5, 0.5],
        )
        .unwrap();
        let zeros = (0..100_000).filter(|_| m.sample_initial(&mut rng) == StateId::new(0)).count();
        let f = zeros as f64 / 1e5;
        assert!((0.495..=0.505).contains(&f), "{f}");
    }

    #[test]
    fn step_frequencies_on_bandit() {
        let m = bandit_example();
        let mut rng = rng_from_seed(2);
        let s = StateId::new(0);
        let conv = (0..100_000).filter(|_| m.step(s, ActionId(0), &mut rng).unwrap() == StateId::CONVERT).count();
        let f = conv as f64 / 1e5;
        assert!((0.294..=0.306).contains(&f), "{f}");
        assert!((0..1000).all(|_| m.step(s, ActionId(1), &mut rng).unwrap() == StateId::QUIT));
    }

    #[test]
    fn deterministic_row_and_range_errors() {
        let m = chain(vec![vec![(StateId::new(1), 1.0)], vec![(StateId::CONVERT, 1.0)]], 2, 1);
        let mut rng = rng_from_seed(3);
        assert_eq!(m.step(StateId::new(0), ActionId(0), &mut rng).unwrap(), StateId::new(1));
        assert!(m.step(StateId::new(2), ActionId(0), &mut rng).is_err());
        assert!(m.step(StateId::QUIT, ActionId(0), &mut rng).is_err());
        assert!(m.step(StateId::new(0), ActionId(1), &mut rng).is_err());
    }

    #[test]
    fn permutation_checks() {
        let m = bandit_example();
        assert_eq!(m.permute_actions(&[0, 1]).unwrap(), m);
        let swapped = m.permute_actions(&[1, 0]).unwrap();
        assert_eq!(swapped.row(StateId::new(0), ActionId(1)), m.row(StateId::new(0), ActionId(0)));
        assert!(m.permute_actions(&[0, 0]).is_err());
        assert!(m.permute_actions(&[0]).is_err());
        assert_eq!(inverse_permutation(&[2, 0, 1]), vec![1, 2, 0]);
    }

    #[test]
    fn policy_validation() {
        assert!(Policy::new(1, 2, vec![0.5, 0.5]).is_ok());
        assert!(Policy::new(1, 2, vec![0.5, 0.6]).is_err());
        let p = Policy::deterministic(3, &[ActionId(2)]);
        assert_eq!(p.mode(StateId::new(0)), ActionId(2));
    }
}
