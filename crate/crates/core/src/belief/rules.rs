use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::BeliefStore;
use crate::schema::{GroundAtom, Predicate};
use crate::world::Roster;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Term {
    Var(String),
    Const(String),
}

/// A predicate template such as `on(?x,?y)` or `inside(?x,drawer_top_1)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtomPattern {
    pub predicate: Predicate,
    pub args: Vec<Term>,
}

impl FromStr for AtomPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad atom pattern `{s}`"));
        let (name, rest) = s.split_once('(').ok_or_else(bad)?;
        let inner = rest.strip_suffix(')').ok_or_else(bad)?;
        let predicate = Predicate::from_name(name).ok_or_else(bad)?;
        let args = inner
            .split(',')
            .map(|a| {
                let ok = |x: &str| {
                    !x.is_empty()
                        && x.chars()
                            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
                };
                match a.strip_prefix('?') {
                    Some(v) if ok(v) => Ok(Term::Var(v.to_string())),
                    None if ok(a) => Ok(Term::Const(a.to_string())),
                    _ => Err(bad()),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if args.len() != predicate.arity() {
            return Err(bad());
        }
        Ok(Self { predicate, args })
    }
}

impl fmt::Display for AtomPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.predicate.name())?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            match a {
                Term::Var(v) => write!(f, "?{v}")?,
                Term::Const(c) => f.write_str(c)?,
            }
        }
        f.write_str(")")
    }
}

impl Serialize for AtomPattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AtomPattern {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl AtomPattern {
    fn bind(&self, atom: &GroundAtom, env: &mut HashMap<String, String>) -> bool {
        if atom.predicate != self.predicate {
            return false;
        }
        for (term, arg) in self.args.iter().zip(&atom.args) {
            match term {
                Term::Const(c) if c != arg => return false,
                Term::Const(_) => {}
                Term::Var(v) => match env.get(v) {
                    Some(bound) if bound != arg => return false,
                    Some(_) => {}
                    None => {
                        env.insert(v.clone(), arg.clone());
                    }
                },
            }
        }
        true
    }
}

/// Two patterns that must not both hold under one variable binding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyRule {
    pub id: String,
    pub left: AtomPattern,
    pub right: AtomPattern,
}

impl ConsistencyRule {
    /// Constants must be roster objects of the right sort, and every
    /// variable must admit at least one object under all its positions.
    pub fn validate(&self, roster: &Roster) -> Result<()> {
        let mut sorts: HashMap<&str, Vec<crate::world::Flag>> = HashMap::new();
        for p in [&self.left, &self.right] {
            for (term, sort) in p.args.iter().zip(p.predicate.sorts()) {
                match term {
                    Term::Const(c) => {
                        let ok = roster.get(c).is_some_and(|o| o.has(*sort));
                        if !ok {
                            return Err(Error::Config(format!(
                                "rule `{}`: `{c}` is not a {sort:?} in the roster",
                                self.id
                            )));
                        }
                    }
                    Term::Var(v) => sorts.entry(v).or_default().push(*sort),
                }
            }
        }
        for (v, need) in sorts {
            if !roster
                .objects()
                .iter()
                .any(|o| need.iter().all(|f| o.has(*f)))
            {
                return Err(Error::Config(format!(
                    "rule `{}`: no object can bind ?{v}",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

pub const DEFAULT_RULES_JSON: &str = r#"[
  {"id": "on-vs-inside", "left": "on(?x,?y)", "right": "inside(?x,?z)"},
  {"id": "left-vs-right", "left": "left-of(?x,?y)", "right": "right-of(?x,?y)"},
  {"id": "behind-vs-in-front", "left": "behind(?x,?y)", "right": "in-front-of(?x,?y)"},
  {"id": "grasped-vs-on-table", "left": "grasped(?x)", "right": "on-table(?x)"}
]
"#;

pub fn default_rules() -> Vec<ConsistencyRule> {
    serde_json::from_str(DEFAULT_RULES_JSON).expect("default rules parse")
}

pub fn load_rules(path: &Path) -> Result<Vec<ConsistencyRule>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: String,
    pub atoms: [String; 2],
}

/// Every grounding of every rule whose two atoms are currently true.
pub fn check_consistency(store: &BeliefStore, rules: &[ConsistencyRule]) -> Vec<Violation> {
    let true_atoms: Vec<&GroundAtom> = store.true_atoms().collect();
    let mut out = Vec::new();
    for rule in rules {
        for a in &true_atoms {
            let mut env = HashMap::new();
            if !rule.left.bind(a, &mut env) {
                continue;
            }
            for b in &true_atoms {
                if a == b {
                    continue;
                }
                let mut env = env.clone();
                if rule.right.bind(b, &mut env) {
                    out.push(Violation {
                        rule: rule.id.clone(),
                        atoms: [a.to_string(), b.to_string()],
                    });
                }
            }
        }
    }
    out
}
