//! Predicted state vectors as grounded predicates, a belief store that
//! reports what changed, and rule-based contradiction checks.

mod rules;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::schema::{AtomIndex, GroundAtom, StateKind, StateVector};
use crate::{Error, Result};

pub use rules::{
    check_consistency, default_rules, load_rules, AtomPattern, ConsistencyRule, Term, Violation,
    DEFAULT_RULES_JSON,
};

fn check_lengths(obj: &StateVector, act: &StateVector, idx: &AtomIndex) -> Result<()> {
    if obj.kind != StateKind::Object || act.kind != StateKind::Action {
        return Err(Error::Contract(
            "expected an object vector and an action vector".into(),
        ));
    }
    if obj.len() != idx.n_obj() || act.len() != idx.n_act() {
        return Err(Error::Contract(format!(
            "state lengths {}/{} do not match atom index {}/{}",
            obj.len(),
            act.len(),
            idx.n_obj(),
            idx.n_act()
        )));
    }
    Ok(())
}

fn true_atoms<'a>(
    obj: &'a StateVector,
    act: &'a StateVector,
    idx: &'a AtomIndex,
) -> impl Iterator<Item = &'a GroundAtom> {
    let o = idx.object_atoms().iter().zip(&obj.bits);
    let a = idx.action_atoms().iter().zip(&act.bits);
    o.chain(a).filter(|(_, b)| **b != 0).map(|(atom, _)| atom)
}

/// True atoms as `name(arg)` / `name(arg1,arg2)`, object atoms first, each
/// group in index order.
pub fn to_predicates(obj: &StateVector, act: &StateVector, idx: &AtomIndex) -> Result<Vec<String>> {
    check_lengths(obj, act, idx)?;
    Ok(true_atoms(obj, act, idx).map(|a| a.to_string()).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Belief {
    pub atom: GroundAtom,
    pub value: bool,
    /// Timestep at which `value` was last set.
    pub since: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transition {
    Activated,
    Deactivated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffEvent {
    pub atom: String,
    pub transition: Transition,
    pub t: u64,
}

/// One belief per atom of the index. Every atom starts false, so the first
/// update activates whatever is true.
#[derive(Debug, Clone)]
pub struct BeliefStore {
    idx: AtomIndex,
    beliefs: BTreeMap<GroundAtom, Belief>,
    last_t: Option<u64>,
}

impl BeliefStore {
    pub fn new(idx: &AtomIndex) -> Self {
        let beliefs = idx
            .object_atoms()
            .iter()
            .chain(idx.action_atoms())
            .map(|a| {
                (
                    a.clone(),
                    Belief {
                        atom: a.clone(),
                        value: false,
                        since: 0,
                    },
                )
            })
            .collect();
        Self {
            idx: idx.clone(),
            beliefs,
            last_t: None,
        }
    }

    pub fn index(&self) -> &AtomIndex {
        &self.idx
    }

    pub fn last_t(&self) -> Option<u64> {
        self.last_t
    }

    pub fn get(&self, atom: &GroundAtom) -> Option<&Belief> {
        self.beliefs.get(atom)
    }

    pub fn is_true(&self, atom: &GroundAtom) -> bool {
        self.beliefs.get(atom).is_some_and(|b| b.value)
    }

    pub fn beliefs(&self) -> impl Iterator<Item = &Belief> {
        self.beliefs.values()
    }

    pub fn true_atoms(&self) -> impl Iterator<Item = &GroundAtom> {
        self.beliefs.values().filter(|b| b.value).map(|b| &b.atom)
    }

    /// Applies a new observation and returns one event per atom whose value
    /// changed, in index order.
    pub fn update(
        &mut self,
        obj: &StateVector,
        act: &StateVector,
        t: u64,
    ) -> Result<Vec<DiffEvent>> {
        check_lengths(obj, act, &self.idx)?;
        if let Some(last) = self.last_t {
            if t < last {
                return Err(Error::Contract(format!(
                    "timestep went back from {last} to {t}"
                )));
            }
        }
        let mut events = Vec::new();
        let o = self.idx.object_atoms().iter().zip(&obj.bits);
        let a = self.idx.action_atoms().iter().zip(&act.bits);
        for (atom, bit) in o.chain(a) {
            let value = *bit != 0;
            let b = self.beliefs.get_mut(atom).expect("store covers the index");
            if b.value != value {
                b.value = value;
                b.since = t;
                events.push(DiffEvent {
                    atom: atom.to_string(),
                    transition: if value {
                        Transition::Activated
                    } else {
                        Transition::Deactivated
                    },
                    t,
                });
            }
        }
        self.last_t = Some(t);
        Ok(events)
    }
}
