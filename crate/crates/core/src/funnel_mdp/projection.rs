use std::collections::HashMap;
use std::hash::Hash;

use super::{ActionId, FunnelMdp, StateId};
use crate::error::{Error, Result};

/// Maps every active state of a model onto a coarse state id. The absorbing
/// sentinels map to themselves.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateProjection {
    coarse: Vec<u32>,
    num_coarse: usize,
}

impl StateProjection {
    /// `mapping[s]` is the coarse id of active state `s`. Coarse ids must
    /// cover `0..k` for some `k`.
    pub fn new(mapping: Vec<u32>) -> Result<Self> {
        let num_coarse = mapping.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
        let mut used = vec![false; num_coarse];
        for &c in &mapping {
            used[c as usize] = true;
        }
        if used.iter().any(|u| !u) {
            return Err(Error::Malformed("projection is not onto 0..k".into()));
        }
        Ok(Self { coarse: mapping, num_coarse })
    }

    pub fn identity(num_states: usize) -> Self {
        Self { coarse: (0..num_states as u32).collect(), num_coarse: num_states }
    }

    /// Groups states with equal keys; coarse ids follow first appearance.
    pub fn from_keys<K: Hash + Eq>(keys: impl IntoIterator<Item = K>) -> Self {
        let mut ids: HashMap<K, u32> = HashMap::new();
        let coarse = keys
            .into_iter()
            .map(|k| {
                let next = ids.len() as u32;
                *ids.entry(k).or_insert(next)
            })
            .collect();
        Self { coarse, num_coarse: ids.len() }
    }

    pub fn num_fine(&self) -> usize {
        self.coarse.len()
    }

    pub fn num_coarse(&self) -> usize {
        self.num_coarse
    }

    #[inline]
    pub fn project(&self, s: StateId) -> StateId {
        if s.is_terminal() {
            s
        } else {
            StateId::new(self.coarse[s.index()] as usize)
        }
    }

    pub fn is_identity(&self) -> bool {
        self.coarse.iter().enumerate().all(|(i, &c)| i == c as usize)
    }
}

/// Checks that `projection` is total over the active states of `mdp`.
pub fn project_state(mdp: &FunnelMdp, projection: StateProjection) -> Result<StateProjection> {
    if projection.num_fine() != mdp.num_states() {
        return Err(Error::PartialProjection { expected: mdp.num_states(), got: projection.num_fine() });
    }
    Ok(projection)
}

impl FunnelMdp {
    pub fn project_state(&self, projection: StateProjection) -> Result<StateProjection> {
        project_state(self, projection)
    }
}

/// Feasible `(s, a, s')` triples, used by model-based learners to restrict
/// their transition beliefs.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionSupport {
    num_states: usize,
    num_actions: usize,
    offsets: Vec<usize>,
    next: Vec<StateId>,
    initial: Vec<f64>,
}

impl TransitionSupport {
    pub fn from_mdp(mdp: &FunnelMdp) -> Self {
        Self::build(mdp, None, &[])
    }

    /// Support of the projected process: coarse `(c, a)` may lead to coarse
    /// `c'` if some fine state in `c` can make that move.
    pub fn projected(mdp: &FunnelMdp, projection: &StateProjection) -> Self {
        Self::build(mdp, Some(projection), &[])
    }

    /// Union of the supports of several models over the same state space.
    pub fn union(models: &[&FunnelMdp], projection: Option<&StateProjection>) -> Self {
        let (first, rest) = models.split_first().expect("at least one model");
        Self::build(first, projection, rest)
    }

    fn build(mdp: &FunnelMdp, projection: Option<&StateProjection>, extra: &[&FunnelMdp]) -> Self {
        let num_actions = mdp.num_actions();
        let proj = |s: StateId| projection.map_or(s, |p| p.project(s));
        let num_states = projection.map_or(mdp.num_states(), |p| p.num_coarse());
        let mut sets: Vec<Vec<StateId>> = vec![Vec::new(); num_states * num_actions];
        let mut initial = vec![0.0; num_states];
        for model in std::iter::once(mdp).chain(extra.iter().copied()) {
            for s in model.states() {
                let cs = proj(s);
                for a in model.actions() {
                    let set = &mut sets[cs.index() * num_actions + a.index()];
                    for &(n, p) in model.row(s, a) {
                        let cn = proj(n);
                        if p > 0.0 && !set.contains(&cn) {
                            set.push(cn);
                        }
                    }
                }
            }
        }
        for s in mdp.states() {
            initial[proj(s).index()] += mdp.initial().weight(s);
        }
        let mut offsets = vec![0];
        let mut next = Vec::new();
        for mut set in sets {
            set.sort();
            next.extend(set);
            offsets.push(next.len());
        }
        Self { num_states, num_actions, offsets, next, initial }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn len(&self) -> usize {
        self.next.len()
    }

    pub fn is_empty(&self) -> bool {
        self.next.is_empty()
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// Range into the flat triple array for `(s, a)`.
    #[inline]
    pub fn range(&self, s: StateId, a: ActionId) -> std::ops::Range<usize> {
        let i = s.index() * self.num_actions + a.index();
        self.offsets[i]..self.offsets[i + 1]
    }

    #[inline]
    pub fn successors(&self, s: StateId, a: ActionId) -> &[StateId] {
        &self.next[self.range(s, a)]
    }

    /// Flat index of the triple `(s, a, next)`, if feasible.
    #[inline]
    pub fn position(&self, s: StateId, a: ActionId, next: StateId) -> Option<usize> {
        let r = self.range(s, a);
        self.next[r.clone()].iter().position(|&n| n == next).map(|i| r.start + i)
    }
}
