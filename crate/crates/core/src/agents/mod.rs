//! Learning agents. Every agent sees one consumer at a time through
//! [`Agent::act`] and [`Agent::observe`], then [`Agent::end_episode`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funnel_mdp::{ActionId, FunnelMdp, Policy, StateId, StateProjection, TransitionSupport};
use crate::planner::{myopic_policy, solve_q_star_default};
use crate::rng::SimRng;

pub mod beta;
pub mod psrl;
pub mod qlucb;

pub use beta::{
    apply_feedback, feedback_from_uniform, mfabl_act, mfabl_feedback, mfabl_observe, pmfabl_end_episode, ts_act,
    ts_observe, Attribution, BetaEntry, BetaLearner, BetaTable, MfablConfig, Prior, UpdateRule,
};
pub use psrl::{DirichletTable, PsrlAgent, DEFAULT_REOPT_EVERY};
pub use qlucb::{QlUcbAgent, QlUcbParams};

/// Episodic learner. `act` is only called on active states, `observe` sees
/// every transition of the episode in order and `end_episode` closes it.
pub trait Agent: Send {
    fn name(&self) -> &str;
    fn act(&mut self, s: StateId) -> ActionId;
    fn observe(&mut self, s: StateId, a: ActionId, next: StateId);
    fn end_episode(&mut self, converted: bool);

    fn beta_table(&self) -> Option<&BetaTable> {
        None
    }

    /// Writes the current beliefs as CSV. Agents without beliefs write nothing.
    fn write_belief_csv(&self, out: &mut dyn std::io::Write) -> Result<()> {
        match self.beta_table() {
            Some(t) => t.write_csv(out),
            None => Ok(()),
        }
    }
}

/// Plays a fixed policy, optionally sampling stochastic rows.
pub struct FixedPolicyAgent {
    name: String,
    policy: Policy,
    rng: SimRng,
}

impl FixedPolicyAgent {
    pub fn new(name: &str, policy: Policy, rng: SimRng) -> Self {
        Self { name: name.to_string(), policy, rng }
    }
}

impl Agent for FixedPolicyAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn act(&mut self, s: StateId) -> ActionId {
        let row = self.policy.row(s);
        if row.iter().any(|&p| p == 1.0) {
            self.policy.mode(s)
        } else {
            self.policy.sample(s, &mut self.rng)
        }
    }

    fn observe(&mut self, _s: StateId, _a: ActionId, _next: StateId) {}

    fn end_episode(&mut self, _converted: bool) {}
}

/// Hides the true state behind a projection. The wrapped learner only ever
/// sees coarse states; the environment is unchanged.
pub struct Misspecified {
    inner: Box<dyn Agent>,
    projection: StateProjection,
}

impl Misspecified {
    pub fn new(inner: Box<dyn Agent>, projection: StateProjection) -> Self {
        Self { inner, projection }
    }

    pub fn inner(&self) -> &dyn Agent {
        self.inner.as_ref()
    }
}

pub fn wrap_misspecified(inner: Box<dyn Agent>, projection: StateProjection) -> Box<dyn Agent> {
    Box::new(Misspecified::new(inner, projection))
}

impl Agent for Misspecified {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn act(&mut self, s: StateId) -> ActionId {
        self.inner.act(self.projection.project(s))
    }

    fn observe(&mut self, s: StateId, a: ActionId, next: StateId) {
        self.inner.observe(self.projection.project(s), a, self.projection.project(next))
    }

    fn end_episode(&mut self, converted: bool) {
        self.inner.end_episode(converted)
    }

    fn beta_table(&self) -> Option<&BetaTable> {
        self.inner.beta_table()
    }

    fn write_belief_csv(&self, out: &mut dyn std::io::Write) -> Result<()> {
        self.inner.write_belief_csv(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsConfig {
    #[serde(default)]
    pub prior: Prior,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridConfig {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub prior: Prior,
    #[serde(default)]
    pub variant: UpdateRule,
    /// First consumer (0-based) handled by MFABL.
    pub switch_at: u64,
}

fn default_epsilon() -> f64 {
    MfablConfig::default().epsilon
}

impl HybridConfig {
    pub fn mfabl(&self) -> MfablConfig {
        MfablConfig { epsilon: self.epsilon, prior: self.prior, variant: self.variant }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsrlConfig {
    #[serde(default = "default_reopt")]
    pub reopt_every: u64,
}

fn default_reopt() -> u64 {
    DEFAULT_REOPT_EVERY
}

/// Algorithm and hyperparameters of one agent, as written in experiment
/// configs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AgentSpec {
    Ts(TsConfig),
    Mfabl(MfablConfig),
    Pmfabl(MfablConfig),
    Hybrid(HybridConfig),
    Psrl(PsrlConfig),
    Qlucb(QlUcbParams),
    /// Greedy replay of the optimal policy of the first-phase model.
    Optimal,
    /// Replay of the one-step greedy policy of the first-phase model.
    Myopic,
}

impl AgentSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            AgentSpec::Ts(_) => "ts",
            AgentSpec::Mfabl(_) => "mfabl",
            AgentSpec::Pmfabl(_) => "pmfabl",
            AgentSpec::Hybrid(_) => "hybrid",
            AgentSpec::Psrl(_) => "psrl",
            AgentSpec::Qlucb(_) => "qlucb",
            AgentSpec::Optimal => "optimal",
            AgentSpec::Myopic => "myopic",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AgentSpec::Ts(c) => c.prior.validate("prior"),
            AgentSpec::Mfabl(c) | AgentSpec::Pmfabl(c) => c.validate(),
            AgentSpec::Hybrid(c) => c.mfabl().validate(),
            AgentSpec::Psrl(c) => {
                if c.reopt_every == 0 {
                    Err(Error::param("reopt_every", "must be at least 1"))
                } else {
                    Ok(())
                }
            }
            AgentSpec::Qlucb(p) => p.validate(),
            AgentSpec::Optimal | AgentSpec::Myopic => Ok(()),
        }
    }

    pub fn is_fixed_policy(&self) -> bool {
        matches!(self, AgentSpec::Optimal | AgentSpec::Myopic)
    }

    /// Builds the agent for an environment whose phase models are `phases`
    /// (the first is the initial one). With a projection the learner is
    /// wrapped and sized to the coarse state space.
    pub fn build(
        &self,
        phases: &[&FunnelMdp],
        projection: Option<&StateProjection>,
        rng: SimRng,
    ) -> Result<Box<dyn Agent>> {
        self.validate()?;
        let mdp = *phases.first().ok_or_else(|| Error::Malformed("no environment model".into()))?;
        let projection = projection.filter(|p| !p.is_identity());
        if let Some(p) = projection {
            if self.is_fixed_policy() {
                return Err(Error::param("projection", "fixed-policy agents act on the full state"));
            }
            mdp.project_state(p.clone())?;
        }
        let num_states = projection.map_or(mdp.num_states(), |p| p.num_coarse());
        let na = mdp.num_actions();
        let agent: Box<dyn Agent> = match *self {
            AgentSpec::Ts(c) => Box::new(BetaLearner::thompson(na, c.prior, rng)),
            AgentSpec::Mfabl(c) => Box::new(BetaLearner::mfabl(na, &c, rng)),
            AgentSpec::Pmfabl(c) => Box::new(BetaLearner::pmfabl(na, &c, rng)),
            AgentSpec::Hybrid(c) => Box::new(BetaLearner::hybrid(na, &c.mfabl(), c.switch_at, rng)),
            AgentSpec::Psrl(c) => {
                Box::new(PsrlAgent::new(TransitionSupport::union(phases, projection), c.reopt_every, rng))
            }
            AgentSpec::Qlucb(p) => Box::new(QlUcbAgent::new(num_states, na, p, rng)),
            AgentSpec::Optimal => {
                Box::new(FixedPolicyAgent::new("optimal", solve_q_star_default(mdp)?.policy, rng))
            }
            AgentSpec::Myopic => Box::new(FixedPolicyAgent::new("myopic", myopic_policy(mdp), rng)),
        };
        Ok(match projection {
            Some(p) => wrap_misspecified(agent, p.clone()),
            None => agent,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funnel_mdp::{bandit_example, synthetic_funnel, FunnelGenParams, ProjectionKind};
    use crate::rng::rng_from_seed;

    #[test]
    fn spec_round_trip_and_rejection() {
        let specs = [
            AgentSpec::Ts(TsConfig { prior: Prior::new(1.0, 1.0) }),
            AgentSpec::Mfabl(MfablConfig { variant: UpdateRule::Polynomial { omega: 0.7 }, ..Default::default() }),
            AgentSpec::Hybrid(HybridConfig { epsilon: 0.0, prior: Prior::default(), variant: UpdateRule::Linear, switch_at: 5 }),
            AgentSpec::Psrl(PsrlConfig { reopt_every: 10 }),
            AgentSpec::Qlucb(QlUcbParams::default()),
            AgentSpec::Optimal,
        ];
        for s in specs {
            let text = serde_json::to_string(&s).unwrap();
            assert_eq!(serde_json::from_str::<AgentSpec>(&text).unwrap(), s);
        }
        let parsed: AgentSpec = serde_json::from_str(r#"{"kind":"mfabl"}"#).unwrap();
        assert_eq!(parsed, AgentSpec::Mfabl(MfablConfig::default()));
        assert!(serde_json::from_str::<AgentSpec>(r#"{"kind":"mfabl","epsilonn":0.1}"#).is_err());
    }

    #[test]
    fn identity_projection_is_transparent() {
        let mdp = bandit_example();
        let spec = AgentSpec::Mfabl(MfablConfig::default());
        let mut plain = spec.build(&[&mdp], None, rng_from_seed(4)).unwrap();
        let mut wrapped =
            wrap_misspecified(spec.build(&[&mdp], None, rng_from_seed(4)).unwrap(), StateProjection::identity(1));
        let s = StateId::new(0);
        for i in 0..200 {
            let a = plain.act(s);
            assert_eq!(a, wrapped.act(s));
            let next = if i % 4 == 0 { StateId::CONVERT } else { StateId::QUIT };
            plain.observe(s, a, next);
            wrapped.observe(s, a, next);
            plain.end_episode(next == StateId::CONVERT);
            wrapped.end_episode(next == StateId::CONVERT);
        }
        assert_eq!(plain.beta_table(), wrapped.beta_table());
    }

    #[test]
    fn temporal_projection_sizes_table() {
        let f = synthetic_funnel(&FunnelGenParams::funnel_small()).unwrap();
        let proj = f.projection(ProjectionKind::Temporal);
        let mut agent = AgentSpec::Mfabl(MfablConfig::default()).build(&[&f.mdp], Some(&proj), rng_from_seed(1)).unwrap();
        for s in f.mdp.states() {
            let a = agent.act(s);
            agent.observe(s, a, StateId::QUIT);
        }
        let t = agent.beta_table().unwrap();
        assert_eq!(t.allocated_entries(), proj.num_coarse() * f.mdp.num_actions());
    }

    #[test]
    fn fixed_policy_refuses_projection() {
        let f = synthetic_funnel(&FunnelGenParams::funnel_small()).unwrap();
        let proj = f.projection(ProjectionKind::Temporal);
        assert!(AgentSpec::Optimal.build(&[&f.mdp], Some(&proj), rng_from_seed(1)).is_err());
    }
}
