//! Grounded predicates, the canonical atom ordering, and detector functions
//! that label world states with object-state and action-state vectors.

pub mod detect;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::world::{Flag, Roster};
use crate::{Error, Result};

pub use detect::{
    detect_action, detect_atom, detect_contact, detect_property, detect_spatial, detect_state,
    spatial_from_positions, SpatialRelation, EPS_Z, TAU_XY,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredicateGroup {
    ObjectRelation,
    ObjectProperty,
    ActionStatus,
    ActionSubgoal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Predicate {
    Behind,
    InFrontOf,
    Inside,
    LeftOf,
    On,
    OnTable,
    RightOf,
    Open,
    TurnedOn,
    Grasped,
    ShouldMoveTowards,
}

impl Predicate {
    pub const ALL: [Predicate; 11] = [
        Predicate::Behind,
        Predicate::InFrontOf,
        Predicate::Inside,
        Predicate::LeftOf,
        Predicate::On,
        Predicate::OnTable,
        Predicate::RightOf,
        Predicate::Open,
        Predicate::TurnedOn,
        Predicate::Grasped,
        Predicate::ShouldMoveTowards,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Predicate::Behind => "behind",
            Predicate::InFrontOf => "in-front-of",
            Predicate::Inside => "inside",
            Predicate::LeftOf => "left-of",
            Predicate::On => "on",
            Predicate::OnTable => "on-table",
            Predicate::RightOf => "right-of",
            Predicate::Open => "open",
            Predicate::TurnedOn => "turned-on",
            Predicate::Grasped => "grasped",
            Predicate::ShouldMoveTowards => "should-move-towards",
        }
    }

    pub fn from_name(name: &str) -> Option<Predicate> {
        Predicate::ALL.into_iter().find(|p| p.name() == name)
    }

    /// Argument sorts; the length is the arity.
    pub fn sorts(self) -> &'static [Flag] {
        use Flag::*;
        match self {
            Predicate::Behind
            | Predicate::InFrontOf
            | Predicate::LeftOf
            | Predicate::On
            | Predicate::RightOf => &[TabletopObject, TabletopObject],
            Predicate::Inside => &[TabletopObject, Container],
            Predicate::OnTable | Predicate::ShouldMoveTowards => &[TabletopObject],
            Predicate::Open => &[Container],
            Predicate::TurnedOn => &[OnOffObject],
            Predicate::Grasped => &[Pickupable],
        }
    }

    pub fn arity(self) -> usize {
        self.sorts().len()
    }

    pub fn group(self) -> PredicateGroup {
        match self {
            Predicate::Open | Predicate::TurnedOn => PredicateGroup::ObjectProperty,
            Predicate::Grasped => PredicateGroup::ActionStatus,
            Predicate::ShouldMoveTowards => PredicateGroup::ActionSubgoal,
            _ => PredicateGroup::ObjectRelation,
        }
    }

    pub fn kind(self) -> StateKind {
        match self.group() {
            PredicateGroup::ObjectRelation | PredicateGroup::ObjectProperty => StateKind::Object,
            PredicateGroup::ActionStatus | PredicateGroup::ActionSubgoal => StateKind::Action,
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A predicate applied to concrete object ids, e.g. `on(bowl_1,plate_1)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GroundAtom {
    pub predicate: Predicate,
    pub args: Vec<String>,
}

impl GroundAtom {
    pub fn new(predicate: Predicate, args: &[&str]) -> Self {
        Self {
            predicate,
            args: args.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn arg(&self, i: usize) -> &str {
        &self.args[i]
    }

    /// Checks arity, distinctness and argument sorts against `roster`.
    pub fn check_sorts(&self, roster: &Roster) -> Result<()> {
        let sorts = self.predicate.sorts();
        if sorts.len() != self.args.len() {
            return Err(Error::Contract(format!("{self}: wrong arity")));
        }
        if self.args.len() == 2 && self.args[0] == self.args[1] {
            return Err(Error::Contract(format!("{self}: arguments must differ")));
        }
        for (arg, sort) in self.args.iter().zip(sorts) {
            let o = roster
                .get(arg)
                .ok_or_else(|| Error::Contract(format!("{self}: unknown object `{arg}`")))?;
            if !o.has(*sort) {
                return Err(Error::Contract(format!("{self}: `{arg}` is not {sort:?}")));
            }
        }
        Ok(())
    }
}

impl Ord for GroundAtom {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.predicate
            .name()
            .cmp(other.predicate.name())
            .then_with(|| self.args.cmp(&other.args))
    }
}

impl PartialOrd for GroundAtom {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for GroundAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.predicate.name(), self.args.join(","))
    }
}

/// Parses `name '(' id (',' id)? ')'`: lowercase, no whitespace.
impl FromStr for GroundAtom {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Contract(format!("malformed atom `{s}`"));
        let (name, rest) = s.split_once('(').ok_or_else(bad)?;
        let inner = rest.strip_suffix(')').ok_or_else(bad)?;
        let predicate = Predicate::from_name(name).ok_or_else(bad)?;
        let args: Vec<String> = inner.split(',').map(str::to_string).collect();
        let valid_id = |a: &String| {
            !a.is_empty()
                && a.chars()
                    .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-')
        };
        if args.len() != predicate.arity() || !args.iter().all(valid_id) {
            return Err(bad());
        }
        Ok(GroundAtom { predicate, args })
    }
}

impl Serialize for GroundAtom {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GroundAtom {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateKind {
    Object,
    Action,
}

impl StateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StateKind::Object => "object",
            StateKind::Action => "action",
        }
    }
}

impl FromStr for StateKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "object" => Ok(StateKind::Object),
            "action" => Ok(StateKind::Action),
            other => Err(Error::Config(format!("unknown state kind `{other}`"))),
        }
    }
}

/// Complete 0/1 truth assignment over one kind's atoms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateVector {
    pub kind: StateKind,
    pub bits: Vec<u8>,
}

impl StateVector {
    pub fn zeros(kind: StateKind, n: usize) -> Self {
        Self {
            kind,
            bits: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }
}

/// Canonical ordering of all grounded atoms, split by state kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtomIndex {
    object_atoms: Vec<GroundAtom>,
    action_atoms: Vec<GroundAtom>,
}

/// JSON export of an [`AtomIndex`]; array position is the vector position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomIndexDoc {
    pub hash: String,
    pub object: Vec<String>,
    pub action: Vec<String>,
}

impl AtomIndex {
    /// Enumerates every sort-respecting grounding (ordered distinct pairs for
    /// binary predicates) in lexicographic order of (name, args).
    pub fn build(roster: &Roster) -> Result<Self> {
        if roster.objects().is_empty() {
            return Err(Error::Config("empty roster".into()));
        }
        let mut ids: Vec<&str> = roster.objects().iter().map(|o| o.id.as_str()).collect();
        ids.sort_unstable();
        let of_sort = |f: Flag| -> Vec<&str> {
            ids.iter()
                .copied()
                .filter(|id| roster.get(id).is_some_and(|o| o.has(f)))
                .collect()
        };
        let mut object_atoms = Vec::new();
        let mut action_atoms = Vec::new();
        for p in Predicate::ALL {
            let sorts = p.sorts();
            let atoms: Vec<GroundAtom> = match sorts {
                [s] => of_sort(*s)
                    .into_iter()
                    .map(|a| GroundAtom::new(p, &[a]))
                    .collect(),
                [s0, s1] => {
                    let (xs, ys) = (of_sort(*s0), of_sort(*s1));
                    xs.iter()
                        .flat_map(|a| ys.iter().filter(move |b| a != *b).map(move |b| (*a, *b)))
                        .map(|(a, b)| GroundAtom::new(p, &[a, b]))
                        .collect()
                }
                _ => unreachable!("arity is 1 or 2"),
            };
            match p.kind() {
                StateKind::Object => object_atoms.extend(atoms),
                StateKind::Action => action_atoms.extend(atoms),
            }
        }
        object_atoms.sort();
        action_atoms.sort();
        Ok(Self {
            object_atoms,
            action_atoms,
        })
    }

    pub fn atoms(&self, kind: StateKind) -> &[GroundAtom] {
        match kind {
            StateKind::Object => &self.object_atoms,
            StateKind::Action => &self.action_atoms,
        }
    }

    pub fn object_atoms(&self) -> &[GroundAtom] {
        &self.object_atoms
    }

    pub fn action_atoms(&self) -> &[GroundAtom] {
        &self.action_atoms
    }

    pub fn n_obj(&self) -> usize {
        self.object_atoms.len()
    }

    pub fn n_act(&self) -> usize {
        self.action_atoms.len()
    }

    pub fn len(&self, kind: StateKind) -> usize {
        self.atoms(kind).len()
    }

    pub fn position(&self, atom: &GroundAtom) -> Option<(StateKind, usize)> {
        let kind = atom.predicate.kind();
        self.atoms(kind).binary_search(atom).ok().map(|i| (kind, i))
    }

    /// Atom names per kind, in index order.
    pub fn names(&self, kind: StateKind) -> Vec<String> {
        self.atoms(kind).iter().map(|a| a.to_string()).collect()
    }

    /// SHA-256 over the exported atom names.
    pub fn hash(&self) -> String {
        let body = serde_json::json!({
            "object": self.names(StateKind::Object),
            "action": self.names(StateKind::Action),
        });
        crate::sha256_hex(body.to_string().as_bytes())
    }

    pub fn to_doc(&self) -> AtomIndexDoc {
        AtomIndexDoc {
            hash: self.hash(),
            object: self.names(StateKind::Object),
            action: self.names(StateKind::Action),
        }
    }

    pub fn from_doc(doc: &AtomIndexDoc) -> Result<Self> {
        let parse =
            |v: &[String]| -> Result<Vec<GroundAtom>> { v.iter().map(|s| s.parse()).collect() };
        let idx = Self {
            object_atoms: parse(&doc.object)?,
            action_atoms: parse(&doc.action)?,
        };
        if idx.hash() != doc.hash {
            return Err(Error::Config("atom index document hash mismatch".into()));
        }
        Ok(idx)
    }
}
