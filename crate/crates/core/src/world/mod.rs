//! Kinematic tabletop world: object roster, scene initialisation, a scripted
//! pick-and-place controller, a top-down renderer and episode recording.
//!
//! Frame convention: +x points right, +y points away from the camera, +z is
//! up and the table surface sits at z = 0. All lengths are meters.

mod episode;
mod render;
mod scene;
mod sim;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use episode::{
    collect_episodes, read_episode, run_episode, write_episode, Episode, EpisodeHeader, Frame,
    EPISODE_MAGIC,
};
pub use render::{render, Image, RenderConfig};
pub use scene::{default_scene, init_scene, Placement, SceneConfig, TaskLayout};
pub use sim::{apply_action, goal_reached, phase, scripted_action, Phase, SimParams};

/// Object category. Flags are a function of the category, see
/// [`Category::flags`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Bowl,
    Plate,
    Ramekin,
    Cabinet,
    Drawer,
    Stove,
    Table,
}

/// Sort flags used to ground predicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Flag {
    TabletopObject,
    Container,
    Pickupable,
    OnOffObject,
}

impl Category {
    pub fn flags(self) -> BTreeSet<Flag> {
        use Flag::*;
        let flags: &[Flag] = match self {
            Category::Bowl | Category::Ramekin => &[TabletopObject, Pickupable],
            Category::Plate | Category::Cabinet => &[TabletopObject],
            Category::Drawer => &[Container],
            Category::Stove => &[TabletopObject, OnOffObject],
            Category::Table => &[],
        };
        flags.iter().copied().collect()
    }
}

/// An object in the roster, modelled as an axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: String,
    pub category: Category,
    pub flags: BTreeSet<Flag>,
    pub half_extents: [f64; 3],
    /// Owning cabinet for drawers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

impl ObjectSpec {
    pub fn new(id: &str, category: Category, half_extents: [f64; 3]) -> Self {
        Self {
            id: id.to_string(),
            category,
            flags: category.flags(),
            half_extents,
            parent: None,
        }
    }

    pub fn with_parent(mut self, parent: &str) -> Self {
        self.parent = Some(parent.to_string());
        self
    }

    pub fn has(&self, flag: Flag) -> bool {
        self.flags.contains(&flag)
    }
}

/// A validated list of objects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ObjectSpec>", into = "Vec<ObjectSpec>")]
pub struct Roster {
    objects: Vec<ObjectSpec>,
}

impl Roster {
    pub fn new(objects: Vec<ObjectSpec>) -> crate::Result<Self> {
        use crate::Error::Config;
        if objects.is_empty() {
            return Err(Config("roster is empty".into()));
        }
        let mut ids = BTreeSet::new();
        for o in &objects {
            if !ids.insert(o.id.as_str()) {
                return Err(Config(format!("duplicate object id `{}`", o.id)));
            }
            if o.flags != o.category.flags() {
                return Err(Config(format!(
                    "object `{}` has flags {:?}, expected {:?} for {:?}",
                    o.id,
                    o.flags,
                    o.category.flags(),
                    o.category
                )));
            }
            if o.half_extents.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
                return Err(Config(format!("object `{}` has invalid extents", o.id)));
            }
        }
        for o in &objects {
            if o.category == Category::Drawer {
                let parent = o
                    .parent
                    .as_deref()
                    .ok_or_else(|| Config(format!("drawer `{}` has no parent cabinet", o.id)))?;
                let ok = objects
                    .iter()
                    .any(|p| p.id == parent && p.category == Category::Cabinet);
                if !ok {
                    return Err(Config(format!(
                        "drawer `{}` names unknown cabinet `{parent}`",
                        o.id
                    )));
                }
            }
        }
        let tables = objects
            .iter()
            .filter(|o| o.category == Category::Table)
            .count();
        if tables != 1 {
            return Err(Config(format!(
                "roster needs exactly one table, found {tables}"
            )));
        }
        Ok(Self { objects })
    }

    pub fn objects(&self) -> &[ObjectSpec] {
        &self.objects
    }

    pub fn get(&self, id: &str) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn with_flag(&self, flag: Flag) -> impl Iterator<Item = &ObjectSpec> {
        self.objects.iter().filter(move |o| o.has(flag))
    }

    pub fn table(&self) -> &ObjectSpec {
        self.objects
            .iter()
            .find(|o| o.category == Category::Table)
            .expect("validated roster has a table")
    }

    /// SHA-256 over the canonical JSON encoding.
    pub fn hash(&self) -> String {
        crate::sha256_hex(&serde_json::to_vec(&self.objects).expect("roster serializes"))
    }
}

impl TryFrom<Vec<ObjectSpec>> for Roster {
    type Error = crate::Error;
    fn try_from(objects: Vec<ObjectSpec>) -> crate::Result<Self> {
        Roster::new(objects)
    }
}

impl From<Roster> for Vec<ObjectSpec> {
    fn from(r: Roster) -> Self {
        r.objects
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    /// Radians in `[-pi, pi)`.
    pub yaw: f64,
}

impl Pose {
    pub fn at(position: [f64; 3]) -> Self {
        Self { position, yaw: 0.0 }
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

/// Full kinematic snapshot of the scene at one timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub poses: BTreeMap<String, Pose>,
    pub gripper_pos: [f64; 3],
    pub gripper_rpy: [f64; 3],
    pub gripper_aperture: f64,
    pub attached: Option<String>,
    /// Object center minus gripper position, captured at grasp time.
    pub attach_offset: [f64; 3],
    pub drawer_open_frac: BTreeMap<String, f64>,
    pub stove_on: bool,
    pub t: u64,
}

impl WorldState {
    pub fn position(&self, id: &str) -> Option<[f64; 3]> {
        self.poses.get(id).map(|p| p.position)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub instruction: String,
    pub target_id: String,
    pub destination_id: String,
}

impl TaskSpec {
    pub fn new(instruction: &str, target_id: &str, destination_id: &str) -> Self {
        Self {
            instruction: instruction.into(),
            target_id: target_id.into(),
            destination_id: destination_id.into(),
        }
    }

    pub fn validate(&self, roster: &Roster) -> crate::Result<()> {
        use crate::Error::Config;
        let target = roster
            .get(&self.target_id)
            .ok_or_else(|| Config(format!("unknown target object `{}`", self.target_id)))?;
        let dest = roster.get(&self.destination_id).ok_or_else(|| {
            Config(format!(
                "unknown destination object `{}`",
                self.destination_id
            ))
        })?;
        if !target.has(Flag::Pickupable) {
            return Err(Config(format!("target `{}` is not pickupable", target.id)));
        }
        if !(dest.has(Flag::TabletopObject) || dest.has(Flag::Container)) {
            return Err(Config(format!(
                "destination `{}` is neither a tabletop object nor a container",
                dest.id
            )));
        }
        if target.id == dest.id {
            return Err(Config("target and destination coincide".into()));
        }
        Ok(())
    }
}

/// End-effector command: translation, rotation and gripper.
/// `dgrip` is +1 to close and -1 to open.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub dpos: [f64; 3],
    pub drot: [f64; 3],
    pub dgrip: f64,
}

impl Action {
    pub fn clamped(&self, params: &SimParams) -> Action {
        let c = |v: f64, m: f64| if v.is_finite() { v.clamp(-m, m) } else { 0.0 };
        Action {
            dpos: self.dpos.map(|v| c(v, params.max_dpos)),
            drot: self.drot.map(|v| c(v, params.max_drot)),
            dgrip: c(self.dgrip, 1.0),
        }
    }

    pub fn is_within(&self, params: &SimParams) -> bool {
        self.clamped(params) == *self
    }
}

/// Axis-aligned bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Bounds {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - 1e-9 && p[i] <= self.max[i] + 1e-9)
    }

    pub fn clamp(&self, p: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|i| p[i].clamp(self.min[i], self.max[i]))
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn depth(&self) -> f64 {
        self.max[1] - self.min[1]
    }
}

/// Axis-aligned box of an object at its current pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub center: [f64; 3],
    pub half: [f64; 3],
}

impl Aabb {
    pub fn of(world: &WorldState, spec: &ObjectSpec) -> Option<Aabb> {
        world.position(&spec.id).map(|center| Aabb {
            center,
            half: spec.half_extents,
        })
    }

    pub fn bottom(&self) -> f64 {
        self.center[2] - self.half[2]
    }

    pub fn top(&self) -> f64 {
        self.center[2] + self.half[2]
    }

    /// Strict interpenetration; touching faces do not count.
    pub fn overlaps(&self, other: &Aabb) -> bool {
        (0..3)
            .all(|i| (self.center[i] - other.center[i]).abs() < self.half[i] + other.half[i] - 1e-9)
    }

    pub fn contains_point(&self, p: [f64; 3]) -> bool {
        (0..3).all(|i| (p[i] - self.center[i]).abs() <= self.half[i])
    }
}
