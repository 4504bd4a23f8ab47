//! JSON document form of a [`FunnelMdp`]:
//!
//! ```json
//! {"states": 1, "actions": 2,
//!  "transitions": [[0, 0, "c", 0.3], [0, 0, "q", 0.7], [0, 1, "q", 1.0]],
//!  "initial": [[0, 1.0]]}
//! ```
//!
//! Absorbing successors are written as the strings `"c"` and `"q"`.

use serde::{Deserialize, Serialize};

use super::{FunnelMdp, StateId};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum JsonState {
    Index(u32),
    Sentinel(String),
}

impl JsonState {
    fn from_state(s: StateId) -> Self {
        match s {
            StateId::CONVERT => JsonState::Sentinel("c".into()),
            StateId::QUIT => JsonState::Sentinel("q".into()),
            s => JsonState::Index(s.raw()),
        }
    }

    fn to_state(&self) -> Result<StateId> {
        match self {
            JsonState::Index(i) => Ok(StateId::new(*i as usize)),
            JsonState::Sentinel(s) if s == "c" => Ok(StateId::CONVERT),
            JsonState::Sentinel(s) if s == "q" => Ok(StateId::QUIT),
            JsonState::Sentinel(s) => Err(Error::Malformed(format!("unknown state sentinel {s:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    states: usize,
    actions: usize,
    transitions: Vec<(u32, u32, JsonState, f64)>,
    initial: Vec<(u32, f64)>,
}

pub(super) fn to_json(mdp: &FunnelMdp) -> Result<String> {
    let mut transitions = Vec::with_capacity(mdp.transitions.num_entries());
    for s in mdp.states() {
        for a in mdp.actions() {
            for &(next, p) in mdp.row(s, a) {
                transitions.push((s.raw(), a.0, JsonState::from_state(next), p));
            }
        }
    }
    let initial = mdp
        .states()
        .filter(|&s| mdp.initial.weight(s) != 0.0)
        .map(|s| (s.raw(), mdp.initial.weight(s)))
        .collect();
    let doc = Document { states: mdp.num_states(), actions: mdp.num_actions(), transitions, initial };
    Ok(serde_json::to_string(&doc)?)
}

pub(super) fn from_json(text: &str) -> Result<FunnelMdp> {
    let doc: Document = serde_json::from_str(text)?;
    if doc.actions == 0 {
        return Err(Error::Malformed("actions must be positive".into()));
    }
    let mut rows = vec![Vec::new(); doc.states * doc.actions];
    for (s, a, next, p) in &doc.transitions {
        let (s, a) = (*s as usize, *a as usize);
        if s >= doc.states || a >= doc.actions {
            return Err(Error::Malformed(format!("transition ({s}, {a}) out of range")));
        }
        rows[s * doc.actions + a].push((next.to_state()?, *p));
    }
    let mut initial = vec![0.0; doc.states];
    for &(s, w) in &doc.initial {
        let slot = initial
            .get_mut(s as usize)
            .ok_or_else(|| Error::Malformed(format!("initial state {s} out of range")))?;
        *slot += w;
    }
    FunnelMdp::from_rows(doc.states, doc.actions, rows, initial)
}
