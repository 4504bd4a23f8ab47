//! Synthetic email funnels.
//!
//! A consumer's state on day `t` is `(t, received, opened, clicked)` where the
//! three count vectors are bucketed per email type. Action 0 sends nothing;
//! action `k >= 1` sends an email of type `k`. Each email is ignored, opened,
//! clicked or leads to a conversion, with probabilities from a multinomial
//! logistic link over the state features. Anything other than a conversion on
//! the last day ends in quit.

use std::collections::{HashMap, VecDeque};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{FunnelMdp, InitialDistribution, StateId, StateProjection, TransitionModel};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Base logits (relative to "ignore") of the non-ignore outcomes for one
/// action. `None` makes an outcome impossible.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeLogits {
    pub open: Option<f64>,
    pub click: Option<f64>,
    pub convert: Option<f64>,
}

/// Per-unit feature effect on each non-ignore outcome logit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutcomeCoefs {
    pub open: f64,
    pub click: f64,
    pub convert: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FunnelGenParams {
    pub num_email_types: usize,
    /// Last day on which an action is taken.
    pub horizon: u32,
    /// Received counts are bucketed to `0..=received_cap`.
    pub received_cap: u8,
    /// Opened and clicked counts are bucketed to `0..=engaged_cap`.
    pub engaged_cap: u8,
    /// Whether clicks are tracked for each email type.
    pub clickable: Vec<bool>,
    /// Index 0 is "no email"; index `k` is email type `k`.
    pub base_logits: Vec<OutcomeLogits>,
    /// Effect of the engagement score (total bucketed opens plus clicks).
    pub engagement: OutcomeCoefs,
    /// Effect of the total bucketed received count.
    pub awareness: OutcomeCoefs,
    /// Effect of the bucketed received count of the email type being sent.
    pub fatigue: OutcomeCoefs,
    /// Effect of days since sign-up (`t - 1`).
    pub time: OutcomeCoefs,
    /// Standard deviation of a seeded per-(state, action, outcome) logit perturbation.
    pub logit_noise: f64,
    pub seed: u64,
}

impl Default for FunnelGenParams {
    fn default() -> Self {
        Self::funnel_large()
    }
}

impl FunnelGenParams {
    pub const PRESETS: [&'static str; 2] = ["funnel-small", "funnel-large"];

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "funnel-small" => Some(Self::funnel_small()),
            "funnel-large" => Some(Self::funnel_large()),
            _ => None,
        }
    }

    /// Three days, two email types. Type 1 converts well on the spot but
    /// rarely engages; type 2 almost never converts directly but gets
    /// clicks, and a clicked consumer converts readily afterwards.
    pub fn funnel_small() -> Self {
        Self {
            num_email_types: 2,
            horizon: 3,
            received_cap: 2,
            engaged_cap: 1,
            clickable: vec![true, true],
            base_logits: vec![
                OutcomeLogits { open: None, click: None, convert: Some(-4.0) },
                OutcomeLogits { open: Some(-1.5), click: Some(-4.0), convert: Some(-1.6) },
                OutcomeLogits { open: Some(0.5), click: Some(0.8), convert: Some(-5.0) },
            ],
            engagement: OutcomeCoefs { open: 0.2, click: 0.2, convert: 1.1 },
            awareness: OutcomeCoefs { open: 0.0, click: 0.0, convert: 0.0 },
            fatigue: OutcomeCoefs { open: -0.4, click: -0.4, convert: -0.3 },
            time: OutcomeCoefs { open: 0.0, click: 0.0, convert: 0.0 },
            logit_noise: 0.0,
            seed: 0,
        }
    }

    /// Fourteen days, four email types, clicks tracked for types 1 and 3.
    pub fn funnel_large() -> Self {
        Self {
            num_email_types: 4,
            horizon: 14,
            received_cap: 2,
            engaged_cap: 1,
            clickable: vec![true, false, true, false],
            base_logits: vec![
                OutcomeLogits { open: None, click: None, convert: Some(-6.0) },
                OutcomeLogits { open: Some(-1.2), click: Some(-3.0), convert: Some(-4.2) },
                OutcomeLogits { open: Some(-0.8), click: None, convert: Some(-5.2) },
                OutcomeLogits { open: Some(-1.0), click: Some(-2.2), convert: Some(-5.5) },
                OutcomeLogits { open: Some(-1.5), click: None, convert: Some(-3.6) },
            ],
            engagement: OutcomeCoefs { open: 0.3, click: 0.3, convert: 0.8 },
            awareness: OutcomeCoefs { open: -0.05, click: -0.05, convert: 0.1 },
            fatigue: OutcomeCoefs { open: -0.3, click: -0.3, convert: -0.2 },
            time: OutcomeCoefs { open: -0.03, click: -0.03, convert: -0.04 },
            logit_noise: 0.25,
            seed: 7,
        }
    }

    pub fn num_actions(&self) -> usize {
        self.num_email_types + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_email_types == 0 {
            return Err(Error::param("num_email_types", "must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(Error::param("horizon", "must be at least 1"));
        }
        if self.received_cap == 0 {
            return Err(Error::param("received_cap", "must be at least 1"));
        }
        if self.engaged_cap == 0 {
            return Err(Error::param("engaged_cap", "must be at least 1"));
        }
        if self.clickable.len() != self.num_email_types {
            return Err(Error::param("clickable", "needs one entry per email type"));
        }
        if self.base_logits.len() != self.num_actions() {
            return Err(Error::param("base_logits", "needs one entry per action (including no email)"));
        }
        let no_email = &self.base_logits[0];
        if no_email.open.is_some() || no_email.click.is_some() {
            return Err(Error::param("base_logits[0]", "no-email action cannot be opened or clicked"));
        }
        let finite = |x: f64| x.is_finite();
        let all_logits_finite = self
            .base_logits
            .iter()
            .flat_map(|l| [l.open, l.click, l.convert])
            .flatten()
            .all(finite);
        let all_coefs_finite = [self.engagement, self.awareness, self.fatigue, self.time]
            .iter()
            .flat_map(|c| [c.open, c.click, c.convert])
            .all(finite);
        if !all_logits_finite || !all_coefs_finite {
            return Err(Error::param("base_logits", "logits and coefficients must be finite"));
        }
        if !(self.logit_noise >= 0.0 && self.logit_noise.is_finite()) {
            return Err(Error::param("logit_noise", "must be a finite non-negative number"));
        }
        Ok(())
    }
}

/// Bucketed consumer state.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FunnelState {
    pub t: u32,
    pub received: Vec<u8>,
    pub opened: Vec<u8>,
    pub clicked: Vec<u8>,
}

impl FunnelState {
    pub fn initial(num_email_types: usize) -> Self {
        Self {
            t: 1,
            received: vec![0; num_email_types],
            opened: vec![0; num_email_types],
            clicked: vec![0; num_email_types],
        }
    }

    pub fn engagement(&self) -> u32 {
        self.opened.iter().chain(&self.clicked).map(|&x| x as u32).sum()
    }

    pub fn awareness(&self) -> u32 {
        self.received.iter().map(|&x| x as u32).sum()
    }
}

/// Coarse views of a [`FunnelState`], used to build misspecified learners.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionKind {
    /// Full state.
    Identity,
    /// Day only.
    Temporal,
    /// Day and received counts.
    TemporalAwareness,
    /// Day, opened and clicked counts.
    TemporalEngagement,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Outcome {
    Ignore,
    Open,
    Click,
    Convert,
}

/// A generated funnel together with the feature vector of every state.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticFunnel {
    pub mdp: FunnelMdp,
    pub states: Vec<FunnelState>,
    pub params: FunnelGenParams,
}

impl SyntheticFunnel {
    pub fn projection(&self, kind: ProjectionKind) -> StateProjection {
        match kind {
            ProjectionKind::Identity => StateProjection::identity(self.states.len()),
            ProjectionKind::Temporal => StateProjection::from_keys(self.states.iter().map(|x| x.t)),
            ProjectionKind::TemporalAwareness => {
                StateProjection::from_keys(self.states.iter().map(|x| (x.t, x.received.clone())))
            }
            ProjectionKind::TemporalEngagement => StateProjection::from_keys(
                self.states.iter().map(|x| (x.t, x.opened.clone(), x.clicked.clone())),
            ),
        }
    }
}

fn successor(x: &FunnelState, action: usize, outcome: Outcome, p: &FunnelGenParams) -> FunnelState {
    let mut y = x.clone();
    y.t += 1;
    if action == 0 {
        return y;
    }
    let k = action - 1;
    y.received[k] = (y.received[k] + 1).min(p.received_cap);
    if matches!(outcome, Outcome::Open | Outcome::Click) {
        y.opened[k] = (y.opened[k] + 1).min(p.engaged_cap);
    }
    if outcome == Outcome::Click {
        y.clicked[k] = (y.clicked[k] + 1).min(p.engaged_cap);
    }
    y
}

fn outcome_distribution(
    x: &FunnelState,
    action: usize,
    p: &FunnelGenParams,
    noise: &mut impl FnMut() -> f64,
) -> Vec<(Outcome, f64)> {
    let base = &p.base_logits[action];
    let eng = x.engagement() as f64;
    let aware = x.awareness() as f64;
    let fatigue = if action == 0 { 0.0 } else { x.received[action - 1] as f64 };
    let day = (x.t - 1) as f64;
    let linear = |b: f64, coef: fn(&OutcomeCoefs) -> f64| {
        b + coef(&p.engagement) * eng
            + coef(&p.awareness) * aware
            + coef(&p.fatigue) * fatigue
            + coef(&p.time) * day
    };
    let clickable = action > 0 && p.clickable[action - 1];
    let mut logits = vec![(Outcome::Ignore, 0.0)];
    if let (Some(b), true) = (base.open, action > 0) {
        logits.push((Outcome::Open, linear(b, |c| c.open)));
    }
    if let (Some(b), true) = (base.click, clickable) {
        logits.push((Outcome::Click, linear(b, |c| c.click)));
    }
    if let Some(b) = base.convert {
        logits.push((Outcome::Convert, linear(b, |c| c.convert)));
    }
    for (o, l) in logits.iter_mut() {
        if *o != Outcome::Ignore {
            *l += noise();
        }
    }
    let max = logits.iter().map(|(_, l)| *l).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|(_, l)| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    logits.iter().zip(weights).map(|((o, _), w)| (*o, w / total)).collect()
}

/// Builds the reachable closure of the funnel from `(1, 0, 0, 0)`. State ids
/// follow breadth-first discovery order.
pub fn synthetic_funnel(params: &FunnelGenParams) -> Result<SyntheticFunnel> {
    params.validate()?;
    let num_actions = params.num_actions();
    let mut rng = rng_from_seed(params.seed);
    let sd = params.logit_noise;
    let mut noise = move || {
        if sd > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            sd * z
        } else {
            0.0
        }
    };

    let start = FunnelState::initial(params.num_email_types);
    let mut ids: HashMap<FunnelState, StateId> = HashMap::new();
    let mut states = vec![start.clone()];
    ids.insert(start, StateId::new(0));
    let mut queue = VecDeque::from([StateId::new(0)]);
    let mut rows: Vec<Vec<(StateId, f64)>> = Vec::new();

    while let Some(sid) = queue.pop_front() {
        let x = states[sid.index()].clone();
        for action in 0..num_actions {
            let mut row: Vec<(StateId, f64)> = Vec::new();
            for (outcome, prob) in outcome_distribution(&x, action, params, &mut noise) {
                let next = if outcome == Outcome::Convert {
                    StateId::CONVERT
                } else if x.t >= params.horizon {
                    StateId::QUIT
                } else {
                    let y = successor(&x, action, outcome, params);
                    *ids.entry(y.clone()).or_insert_with(|| {
                        let id = StateId::new(states.len());
                        states.push(y);
                        queue.push_back(id);
                        id
                    })
                };
                match row.iter_mut().find(|(n, _)| *n == next) {
                    Some(entry) => entry.1 += prob,
                    None => row.push((next, prob)),
                }
            }
            rows.push(row);
        }
    }

    let transitions = TransitionModel::from_rows(states.len(), num_actions, rows)?;
    let initial = InitialDistribution::point_mass(states.len(), 0);
    let mdp = FunnelMdp::checked(transitions, initial)?;
    Ok(SyntheticFunnel { mdp, states, params: params.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funnel_mdp::{ActionId, ABSORPTION_MAX_ITER, ABSORPTION_TOL};
    use std::collections::BTreeSet;

    /// Independent enumeration of the small preset's reachable feature vectors:
    /// walk every (action, outcome) sequence of length < T without sharing
    /// any code with the generator.
    fn enumerate_small() -> BTreeSet<(u32, [u8; 2], [u8; 2], [u8; 2])> {
        type S = (u32, [u8; 2], [u8; 2], [u8; 2]);
        let mut frontier: BTreeSet<S> = BTreeSet::from([(1, [0, 0], [0, 0], [0, 0])]);
        let mut all = frontier.clone();
        for _ in 1..3 {
            let mut next = BTreeSet::new();
            for &(t, r, o, c) in &frontier {
                next.insert((t + 1, r, o, c));
                for k in 0..2 {
                    // ignore, open, click
                    for level in 0..3 {
                        let mut r2 = r;
                        let mut o2 = o;
                        let mut c2 = c;
                        r2[k] = (r2[k] + 1).min(2);
                        if level >= 1 {
                            o2[k] = 1;
                        }
                        if level >= 2 {
                            c2[k] = 1;
                        }
                        next.insert((t + 1, r2, o2, c2));
                    }
                }
            }
            all.extend(next.iter().copied());
            frontier = next;
        }
        all
    }

    #[test]
    fn small_preset_matches_independent_enumeration() {
        let f = synthetic_funnel(&FunnelGenParams::funnel_small()).unwrap();
        let got: BTreeSet<_> = f
            .states
            .iter()
            .map(|x| (x.t, [x.received[0], x.received[1]], [x.opened[0], x.opened[1]], [x.clicked[0], x.clicked[1]]))
            .collect();
        assert_eq!(got.len(), f.states.len(), "duplicate feature vectors");
        assert_eq!(got, enumerate_small());
    }

    #[test]
    fn generated_models_are_valid_and_absorbing() {
        for params in [FunnelGenParams::funnel_small(), FunnelGenParams::funnel_large()] {
            let f = synthetic_funnel(&params).unwrap();
            assert!(f.mdp.validate().is_valid());
            let abs = f.mdp.check_absorption(ABSORPTION_TOL, ABSORPTION_MAX_ITER).unwrap();
            assert!(abs.is_absorbing);
            assert!(abs.max_survival_prob < 1e-9);
        }
    }

    #[test]
    fn large_preset_size() {
        let f = synthetic_funnel(&FunnelGenParams::funnel_large()).unwrap();
        assert!((1_000..100_000).contains(&f.mdp.num_states()), "{}", f.mdp.num_states());
        assert_eq!(f.mdp.num_actions(), 5);
    }

    #[test]
    fn closure_contains_start_and_is_closed() {
        let f = synthetic_funnel(&FunnelGenParams::funnel_small()).unwrap();
        assert_eq!(f.states[0], FunnelState::initial(2));
        for s in f.mdp.states() {
            for a in f.mdp.actions() {
                for &(n, _) in f.mdp.row(s, a) {
                    assert!(n.is_terminal() || n.index() < f.mdp.num_states());
                }
            }
        }
        // last-day rows only absorb
        for (i, x) in f.states.iter().enumerate() {
            if x.t == 3 {
                for a in f.mdp.actions() {
                    assert!(f.mdp.row(StateId::new(i), a).iter().all(|(n, _)| n.is_terminal()));
                }
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let p = FunnelGenParams::funnel_large();
        let a = synthetic_funnel(&p).unwrap();
        let b = synthetic_funnel(&p).unwrap();
        assert_eq!(a.mdp, b.mdp);
        let mut q = p.clone();
        q.seed += 1;
        let c = synthetic_funnel(&q).unwrap();
        assert_ne!(a.mdp, c.mdp);
    }

    #[test]
    fn projections() {
        let f = synthetic_funnel(&FunnelGenParams::funnel_small()).unwrap();
        let temporal = f.projection(ProjectionKind::Temporal);
        let days: BTreeSet<u32> = f.states.iter().map(|x| x.t).collect();
        assert_eq!(temporal.num_coarse(), days.len());
        assert_eq!(temporal.num_coarse(), 3);
        let aware = f.projection(ProjectionKind::TemporalAwareness);
        assert!(aware.num_coarse() < f.states.len());
        assert!(f.projection(ProjectionKind::Identity).is_identity());
    }

    #[test]
    fn bad_params_rejected() {
        let mut p = FunnelGenParams::funnel_small();
        p.horizon = 0;
        assert!(synthetic_funnel(&p).is_err());
        let mut p = FunnelGenParams::funnel_small();
        p.clickable.pop();
        assert!(synthetic_funnel(&p).is_err());
        let mut p = FunnelGenParams::funnel_small();
        p.base_logits[0].open = Some(0.0);
        assert!(synthetic_funnel(&p).is_err());
    }

    #[test]
    fn no_email_action_only_converts_or_waits() {
        let f = synthetic_funnel(&FunnelGenParams::funnel_small()).unwrap();
        let row = f.mdp.row(StateId::new(0), ActionId(0));
        assert_eq!(row.len(), 2);
    }
}
