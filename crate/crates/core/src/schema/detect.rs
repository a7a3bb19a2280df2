//! Ground-truth detectors. Each one is a pure function of the world state
//! (plus the task for action atoms).

use serde::{Deserialize, Serialize};

use super::{AtomIndex, GroundAtom, Predicate, StateKind, StateVector};
use crate::world::{Aabb, Flag, Roster, TaskSpec, WorldState};
use crate::{Error, Result};

/// Lateral/depth threshold for spatial relations, meters.
pub const TAU_XY: f64 = 0.02;
/// Vertical contact tolerance, meters.
pub const EPS_Z: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpatialRelation {
    LeftOf,
    RightOf,
    Behind,
    InFrontOf,
}

impl SpatialRelation {
    pub fn predicate(self) -> Predicate {
        match self {
            SpatialRelation::LeftOf => Predicate::LeftOf,
            SpatialRelation::RightOf => Predicate::RightOf,
            SpatialRelation::Behind => Predicate::Behind,
            SpatialRelation::InFrontOf => Predicate::InFrontOf,
        }
    }
}

/// Dominant-axis spatial relation between object centers. Lateral relations
/// win ties (`|dx| >= |dy|`), so a diagonal pair gets at most one lateral or
/// one depth relation.
pub fn spatial_from_positions(a: [f64; 3], b: [f64; 3], rel: SpatialRelation) -> bool {
    let dx = b[0] - a[0];
    let dy = b[1] - a[1];
    let lateral = dx.abs() >= dy.abs();
    match rel {
        SpatialRelation::LeftOf => lateral && dx > TAU_XY,
        SpatialRelation::RightOf => lateral && -dx > TAU_XY,
        SpatialRelation::Behind => !lateral && -dy > TAU_XY,
        SpatialRelation::InFrontOf => !lateral && dy > TAU_XY,
    }
}

fn position(world: &WorldState, id: &str) -> Result<[f64; 3]> {
    world
        .position(id)
        .ok_or_else(|| Error::Contract(format!("object `{id}` missing from world")))
}

pub fn detect_spatial(world: &WorldState, a: &str, b: &str, rel: SpatialRelation) -> Result<bool> {
    if a == b {
        return Err(Error::Contract(format!(
            "{rel:?} needs distinct objects, got `{a}` twice"
        )));
    }
    Ok(spatial_from_positions(
        position(world, a)?,
        position(world, b)?,
        rel,
    ))
}

fn aabb(roster: &Roster, world: &WorldState, id: &str) -> Option<Aabb> {
    roster.get(id).and_then(|s| Aabb::of(world, s))
}

/// `a`'s bottom within `EPS_Z` of `b`'s top and `a`'s center over `b`'s footprint.
pub fn resting_on(roster: &Roster, world: &WorldState, a: &str, b: &str) -> bool {
    if a == b {
        return false;
    }
    let (Some(ba), Some(bb)) = (aabb(roster, world, a), aabb(roster, world, b)) else {
        return false;
    };
    (ba.bottom() - bb.top()).abs() <= EPS_Z
        && (ba.center[0] - bb.center[0]).abs() <= bb.half[0]
        && (ba.center[1] - bb.center[1]).abs() <= bb.half[1]
}

/// `a`'s center lies within the container's box.
pub fn inside(roster: &Roster, world: &WorldState, a: &str, container: &str) -> bool {
    if a == container {
        return false;
    }
    match (world.position(a), aabb(roster, world, container)) {
        (Some(p), Some(c)) => c.contains_point(p),
        _ => false,
    }
}

/// Resting on the table surface, not inside any container and not held.
pub fn on_table(roster: &Roster, world: &WorldState, a: &str) -> bool {
    let table = roster.table();
    let (Some(ba), Some(bt)) = (aabb(roster, world, a), Aabb::of(world, table)) else {
        return false;
    };
    if world.attached.as_deref() == Some(a) {
        return false;
    }
    if (ba.bottom() - bt.top()).abs() > EPS_Z {
        return false;
    }
    !roster
        .with_flag(Flag::Container)
        .any(|c| inside(roster, world, a, &c.id))
}

/// Target resting on the destination (or inside it, for containers).
pub fn placed(roster: &Roster, world: &WorldState, task: &TaskSpec) -> bool {
    let dest_is_container = roster
        .get(&task.destination_id)
        .is_some_and(|d| d.has(Flag::Container));
    if dest_is_container {
        inside(roster, world, &task.target_id, &task.destination_id)
    } else {
        resting_on(roster, world, &task.target_id, &task.destination_id)
    }
}

pub fn detect_contact(roster: &Roster, world: &WorldState, atom: &GroundAtom) -> Result<bool> {
    match atom.predicate {
        Predicate::On => Ok(resting_on(roster, world, atom.arg(0), atom.arg(1))),
        Predicate::OnTable => Ok(on_table(roster, world, atom.arg(0))),
        Predicate::Inside => Ok(inside(roster, world, atom.arg(0), atom.arg(1))),
        p => Err(Error::Contract(format!("{p} is not a contact predicate"))),
    }
}

pub fn detect_property(world: &WorldState, atom: &GroundAtom) -> Result<bool> {
    match atom.predicate {
        Predicate::Open => Ok(world
            .drawer_open_frac
            .get(atom.arg(0))
            .is_some_and(|f| *f > 0.5)),
        Predicate::TurnedOn => Ok(world.stove_on),
        p => Err(Error::Contract(format!("{p} is not a property predicate"))),
    }
}

pub fn detect_action(
    roster: &Roster,
    world: &WorldState,
    task: &TaskSpec,
    atom: &GroundAtom,
) -> Result<bool> {
    let holding_target = world.attached.as_deref() == Some(task.target_id.as_str());
    match atom.predicate {
        Predicate::Grasped => Ok(world.attached.as_deref() == Some(atom.arg(0))),
        Predicate::ShouldMoveTowards => {
            let o = atom.arg(0);
            let to_target = o == task.target_id && !holding_target && !placed(roster, world, task);
            let to_dest = o == task.destination_id && holding_target;
            Ok(to_target || to_dest)
        }
        p => Err(Error::Contract(format!("{p} is not an action predicate"))),
    }
}

pub fn detect_atom(
    roster: &Roster,
    world: &WorldState,
    task: &TaskSpec,
    atom: &GroundAtom,
) -> Result<bool> {
    let spatial = |rel| detect_spatial(world, atom.arg(0), atom.arg(1), rel);
    match atom.predicate {
        Predicate::LeftOf => spatial(SpatialRelation::LeftOf),
        Predicate::RightOf => spatial(SpatialRelation::RightOf),
        Predicate::Behind => spatial(SpatialRelation::Behind),
        Predicate::InFrontOf => spatial(SpatialRelation::InFrontOf),
        Predicate::On | Predicate::OnTable | Predicate::Inside => {
            detect_contact(roster, world, atom)
        }
        Predicate::Open | Predicate::TurnedOn => detect_property(world, atom),
        Predicate::Grasped | Predicate::ShouldMoveTowards => {
            detect_action(roster, world, task, atom)
        }
    }
}

/// Evaluates every atom of `idx` in index order.
pub fn detect_state(
    roster: &Roster,
    world: &WorldState,
    task: &TaskSpec,
    idx: &AtomIndex,
) -> Result<(StateVector, StateVector)> {
    let eval = |kind: StateKind| -> Result<StateVector> {
        let bits = idx
            .atoms(kind)
            .iter()
            .map(|a| detect_atom(roster, world, task, a).map(u8::from))
            .collect::<Result<Vec<u8>>>()?;
        Ok(StateVector { kind, bits })
    };
    Ok((eval(StateKind::Object)?, eval(StateKind::Action)?))
}
