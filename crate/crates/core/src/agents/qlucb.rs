//! Optimistic Q-learning with a Hoeffding bonus, in the discounted
//! infinite-horizon form of Dong et al. (2019).

use serde::{Deserialize, Serialize};

use super::beta::argmax_uniform_ties;
use super::Agent;
use crate::error::{Error, Result};
use crate::funnel_mdp::{ActionId, StateId};
use crate::rng::SimRng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QlUcbParams {
    pub epsilon: f64,
    pub gamma: f64,
    pub delta: f64,
    /// Multiplies the effective horizon `H`.
    pub horizon_scale: f64,
    /// Leading constant of the bonus.
    pub bonus_scale: f64,
}

impl Default for QlUcbParams {
    fn default() -> Self {
        Self { epsilon: 0.01, gamma: 0.99, delta: 0.01, horizon_scale: 1.0, bonus_scale: 1.0 }
    }
}

impl QlUcbParams {
    pub fn validate(&self) -> Result<()> {
        let open = |v: f64, f: &str| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::param(f, format!("{v} outside (0, 1)")))
            }
        };
        open(self.epsilon, "epsilon")?;
        open(self.gamma, "gamma")?;
        open(self.delta, "delta")?;
        if !(self.horizon_scale > 0.0 && self.horizon_scale.is_finite()) {
            return Err(Error::param("horizon_scale", "must be positive"));
        }
        if !(self.bonus_scale >= 0.0 && self.bonus_scale.is_finite()) {
            return Err(Error::param("bonus_scale", "must be non-negative"));
        }
        Ok(())
    }

    /// `H = ln(1/((1-γ)ε)) / ln(1/γ)`, scaled.
    pub fn horizon(&self) -> f64 {
        self.horizon_scale * (1.0 / ((1.0 - self.gamma) * self.epsilon)).ln() / (1.0 / self.gamma).ln()
    }
}

pub struct QlUcbAgent {
    params: QlUcbParams,
    horizon: f64,
    num_states: usize,
    num_actions: usize,
    q: Vec<f64>,
    q_hat: Vec<f64>,
    visits: Vec<u64>,
    scratch: Vec<f64>,
    rng: SimRng,
}

impl QlUcbAgent {
    pub fn new(num_states: usize, num_actions: usize, params: QlUcbParams, rng: SimRng) -> Self {
        let init = 1.0 / (1.0 - params.gamma);
        Self {
            params,
            horizon: params.horizon(),
            num_states,
            num_actions,
            q: vec![init; num_states * num_actions],
            q_hat: vec![init; num_states * num_actions],
            visits: vec![0; num_states * num_actions],
            scratch: vec![0.0; num_actions],
            rng,
        }
    }

    pub fn learning_rate(&self, k: u64) -> f64 {
        (self.horizon + 1.0) / (self.horizon + k as f64)
    }

    /// Bonus after the `k`-th visit of a pair, `k >= 1`.
    pub fn bonus(&self, k: u64) -> f64 {
        let k = k as f64;
        let sa = (self.num_states * self.num_actions) as f64;
        let iota = (sa * (k + 1.0) * (k + 2.0) / self.params.delta).ln();
        self.params.bonus_scale / (1.0 - self.params.gamma) * (self.horizon * iota / k).sqrt()
    }

    /// Optimistic value estimate; fixed at 1 and 0 on the absorbing states.
    pub fn value(&self, s: StateId) -> f64 {
        match s {
            StateId::CONVERT => 1.0,
            StateId::QUIT => 0.0,
            s => {
                let i = s.index() * self.num_actions;
                self.q_hat[i..i + self.num_actions].iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }
        }
    }

    pub fn q_hat(&self, s: StateId, a: ActionId) -> f64 {
        match s {
            StateId::CONVERT => 1.0,
            StateId::QUIT => 0.0,
            s => self.q_hat[s.index() * self.num_actions + a.index()],
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }
}

impl Agent for QlUcbAgent {
    fn name(&self) -> &str {
        "qlucb"
    }

    fn act(&mut self, s: StateId) -> ActionId {
        let i = s.index() * self.num_actions;
        self.scratch.copy_from_slice(&self.q_hat[i..i + self.num_actions]);
        ActionId(argmax_uniform_ties(&self.scratch, &mut self.rng) as u32)
    }

    fn observe(&mut self, s: StateId, a: ActionId, next: StateId) {
        let i = s.index() * self.num_actions + a.index();
        self.visits[i] += 1;
        let k = self.visits[i];
        let lr = self.learning_rate(k);
        let target = self.bonus(k) + self.params.gamma * self.value(next);
        self.q[i] = (1.0 - lr) * self.q[i] + lr * target;
        self.q_hat[i] = self.q_hat[i].min(self.q[i]);
    }

    fn end_episode(&mut self, _converted: bool) {}
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn defaults_and_terminal_values() {
        let p = QlUcbParams::default();
        assert_eq!((p.epsilon, p.gamma, p.delta), (0.01, 0.99, 0.01));
        let agent = QlUcbAgent::new(2, 2, p, rng_from_seed(0));
        assert_eq!(agent.value(StateId::QUIT), 0.0);
        assert_eq!(agent.value(StateId::CONVERT), 1.0);
        assert_eq!(agent.q_hat(StateId::CONVERT, ActionId(1)), 1.0);
        assert!((agent.value(StateId::new(0)) - 100.0).abs() < 1e-9);
    }

    #[test]
    fn bonus_is_decreasing() {
        let agent = QlUcbAgent::new(10, 3, QlUcbParams::default(), rng_from_seed(0));
        for k in 1..1000 {
            assert!(agent.bonus(k) > agent.bonus(k + 1));
        }
        assert_eq!(agent.learning_rate(1), 1.0);
    }

    #[test]
    fn estimates_never_increase() {
        let mut agent = QlUcbAgent::new(1, 2, QlUcbParams::default(), rng_from_seed(3));
        let s = StateId::new(0);
        let mut last = agent.q_hat(s, ActionId(0));
        for i in 0..200 {
            agent.observe(s, ActionId(0), if i % 3 == 0 { StateId::CONVERT } else { StateId::QUIT });
            let now = agent.q_hat(s, ActionId(0));
            assert!(now <= last);
            last = now;
        }
    }

    #[test]
    fn rejects_bad_params() {
        let p = QlUcbParams { gamma: 1.0, ..Default::default() };
        assert!(p.validate().unwrap_err().to_string().contains("gamma"));
    }
}
