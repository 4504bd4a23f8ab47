//! Exact planners. Under the terminal reward every value is an eventual
//! conversion probability, so Q-tables live in `[0, 1]` with the absorbing
//! states pinned at `Q(c, ·) = 1` and `Q(q, ·) = 0`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::funnel_mdp::{ActionId, FunnelMdp, Policy, StateId};

pub const SOLVE_TOL: f64 = 1e-10;
pub const SOLVE_MAX_ITER: usize = 100_000;
/// Largest state count evaluated by a dense linear solve.
pub const DIRECT_SOLVE_MAX_STATES: usize = 2_000;

#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    num_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self { num_actions, values: vec![0.0; num_states * num_actions] }
    }

    pub fn from_values(num_states: usize, num_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_states * num_actions {
            return Err(Error::Malformed("q-table shape mismatch".into()));
        }
        Ok(Self { num_actions, values })
    }

    pub fn num_states(&self) -> usize {
        self.values.len() / self.num_actions
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn get(&self, s: StateId, a: ActionId) -> f64 {
        match s {
            StateId::CONVERT => 1.0,
            StateId::QUIT => 0.0,
            s => self.values[s.index() * self.num_actions + a.index()],
        }
    }

    pub fn set(&mut self, s: StateId, a: ActionId, v: f64) {
        self.values[s.index() * self.num_actions + a.index()] = v;
    }

    pub fn row(&self, s: StateId) -> &[f64] {
        &self.values[s.index() * self.num_actions..(s.index() + 1) * self.num_actions]
    }

    #[inline]
    pub fn max_value(&self, s: StateId) -> f64 {
        match s {
            StateId::CONVERT => 1.0,
            StateId::QUIT => 0.0,
            s => self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Greedy action with the lowest index among ties.
    pub fn greedy_action(&self, s: StateId) -> ActionId {
        let row = self.row(s);
        let mut best = 0;
        for (a, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = a;
            }
        }
        ActionId(best as u32)
    }

    pub fn greedy_policy(&self) -> Policy {
        let actions: Vec<ActionId> =
            (0..self.num_states()).map(|s| self.greedy_action(StateId::new(s))).collect();
        Policy::deterministic(self.num_actions, &actions)
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["state", "action", "value"])?;
        for (i, &v) in self.values.iter().enumerate() {
            let (s, a) = (i / self.num_actions, i % self.num_actions);
            w.write_record([s.to_string(), a.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueTable(pub Vec<f64>);

impl ValueTable {
    pub fn get(&self, s: StateId) -> f64 {
        match s {
            StateId::CONVERT => 1.0,
            StateId::QUIT => 0.0,
            s => self.0[s.index()],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub q: QTable,
    pub v: ValueTable,
    pub policy: Policy,
    pub iterations: usize,
}

/// One application of the Bellman optimality operator:
/// `F(Q)_{sa} = sum_{s'} p_{sas'} max_{a'} Q_{s'a'}`.
pub fn bellman_backup(mdp: &FunnelMdp, q: &QTable) -> QTable {
    let mut out = QTable::zeros(mdp.num_states(), mdp.num_actions());
    let maxima: Vec<f64> = mdp.states().map(|s| q.max_value(s)).collect();
    let value = |n: StateId| match n {
        StateId::CONVERT => 1.0,
        StateId::QUIT => 0.0,
        n => maxima[n.index()],
    };
    for s in mdp.states() {
        for a in mdp.actions() {
            let v: f64 = mdp.row(s, a).iter().map(|&(n, p)| p * value(n)).sum();
            out.set(s, a, v);
        }
    }
    out
}

/// Value iteration from `Q = 0` until the sup-norm change drops below `tol`.
pub fn solve_q_star(mdp: &FunnelMdp, tol: f64, max_iter: usize) -> Result<Solution> {
    let mut q = QTable::zeros(mdp.num_states(), mdp.num_actions());
    let mut change = f64::INFINITY;
    for it in 1..=max_iter {
        let next = bellman_backup(mdp, &q);
        change = next.sup_distance(&q);
        q = next;
        if change < tol {
            let v = ValueTable(mdp.states().map(|s| q.max_value(s)).collect());
            let policy = q.greedy_policy();
            return Ok(Solution { q, v, policy, iterations: it });
        }
    }
    Err(Error::NotConverged { iterations: max_iter, last_change: change })
}

pub fn solve_q_star_default(mdp: &FunnelMdp) -> Result<Solution> {
    solve_q_star(mdp, SOLVE_TOL, SOLVE_MAX_ITER)
}

/// Solves `V = r_π + P_π V` over active states, where `r_π` is the one-step
/// conversion probability, and derives `Q^π_{sa} = p_{sac} + sum_{s'} p_{sas'} V_{s'}`.
pub fn policy_value(mdp: &FunnelMdp, policy: &Policy) -> Result<(ValueTable, QTable)> {
    if policy.num_states() != mdp.num_states() || policy.num_actions() != mdp.num_actions() {
        return Err(Error::Malformed("policy does not match model".into()));
    }
    let n = mdp.num_states();
    let v = if n <= DIRECT_SOLVE_MAX_STATES {
        direct_evaluation(mdp, policy)?
    } else {
        iterative_evaluation(mdp, policy)?
    };
    let v = ValueTable(v);
    let mut q = QTable::zeros(n, mdp.num_actions());
    for s in mdp.states() {
        for a in mdp.actions() {
            let val: f64 = mdp.row(s, a).iter().map(|&(nx, p)| p * v.get(nx)).sum();
            q.set(s, a, val);
        }
    }
    Ok((v, q))
}

fn direct_evaluation(mdp: &FunnelMdp, policy: &Policy) -> Result<Vec<f64>> {
    let n = mdp.num_states();
    let mut m = DMatrix::<f64>::identity(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for s in mdp.states() {
        for a in mdp.actions() {
            let pi = policy.prob(s, a);
            if pi == 0.0 {
                continue;
            }
            for &(nx, p) in mdp.row(s, a) {
                match nx {
                    StateId::CONVERT => rhs[s.index()] += pi * p,
                    StateId::QUIT => {}
                    nx => m[(s.index(), nx.index())] -= pi * p,
                }
            }
        }
    }
    let x = m.clone().lu().solve(&rhs).ok_or(Error::Singular)?;
    let residual = (&m * &x - &rhs).amax();
    if !residual.is_finite() || residual > 1e-8 {
        return Err(Error::Singular);
    }
    Ok(x.iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

fn iterative_evaluation(mdp: &FunnelMdp, policy: &Policy) -> Result<Vec<f64>> {
    let mut v = vec![0.0; mdp.num_states()];
    for _ in 0..SOLVE_MAX_ITER {
        let mut change = 0.0f64;
        for s in mdp.states() {
            let mut val = 0.0;
            for a in mdp.actions() {
                let pi = policy.prob(s, a);
                if pi == 0.0 {
                    continue;
                }
                let row: f64 = mdp
                    .row(s, a)
                    .iter()
                    .map(|&(nx, p)| match nx {
                        StateId::CONVERT => p,
                        StateId::QUIT => 0.0,
                        nx => p * v[nx.index()],
                    })
                    .sum();
                val += pi * row;
            }
            change = change.max((val - v[s.index()]).abs());
            v[s.index()] = val;
        }
        if change < 1e-13 {
            return Ok(v);
        }
    }
    Err(Error::Singular)
}

/// `v* = sum_s λ_s V*_s`.
pub fn optimal_conversion_rate(mdp: &FunnelMdp, v_star: &ValueTable) -> f64 {
    mdp.initial().support().iter().map(|&s| mdp.initial().weight(s) * v_star.get(s)).sum()
}

/// Greedy in the one-step conversion probability (lowest index on ties).
pub fn myopic_policy(mdp: &FunnelMdp) -> Policy {
    let actions: Vec<ActionId> = mdp
        .states()
        .map(|s| {
            let mut best = ActionId(0);
            let mut best_p = f64::NEG_INFINITY;
            for a in mdp.actions() {
                let p = mdp.conversion_prob(s, a);
                if p > best_p {
                    best_p = p;
                    best = a;
                }
            }
            best
        })
        .collect();
    Policy::deterministic(mdp.num_actions(), &actions)
}

/// `max_π Q^π` over all deterministic policies, by enumeration.
pub fn brute_force_q_star(mdp: &FunnelMdp) -> Result<QTable> {
    let (n, k) = (mdp.num_states(), mdp.num_actions());
    if n > 8 || k > 3 {
        return Err(Error::TooLarge { states: n, actions: k });
    }
    let mut best = QTable::from_values(n, k, vec![f64::NEG_INFINITY; n * k])?;
    let total = k.pow(n as u32);
    let mut actions = vec![ActionId(0); n];
    for code in 0..total {
        let mut c = code;
        for slot in actions.iter_mut() {
            *slot = ActionId((c % k) as u32);
            c /= k;
        }
        let policy = Policy::deterministic(k, &actions);
        let (_, q) = policy_value(mdp, &policy)?;
        for (b, v) in best.values.iter_mut().zip(q.values()) {
            *b = b.max(*v);
        }
    }
    Ok(best)
}
