use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Bounds, Category, ObjectSpec, Pose, Roster, SimParams, TaskSpec, WorldState};
use crate::{Error, Result};

/// Where an object sits at t = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Placement {
    /// Explicit center (used for drawers, at their closed position).
    At {
        position: [f64; 3],
    },
    OnTable {
        xy: [f64; 2],
    },
    On {
        support: String,
        xy: [f64; 2],
    },
    Inside {
        container: String,
        xy: [f64; 2],
    },
}

impl Placement {
    fn xy_mut(&mut self) -> Option<&mut [f64; 2]> {
        match self {
            Placement::At { .. } => None,
            Placement::OnTable { xy } | Placement::On { xy, .. } | Placement::Inside { xy, .. } => {
                Some(xy)
            }
        }
    }

    fn depends_on(&self) -> Option<&str> {
        match self {
            Placement::On { support, .. } => Some(support),
            Placement::Inside { container, .. } => Some(container),
            _ => None,
        }
    }
}

/// Per-task placement overrides, keyed by instruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLayout {
    pub task: TaskSpec,
    pub placements: BTreeMap<String, Placement>,
}

/// Everything needed to instantiate scenes: roster, nominal placements,
/// task roster, simulator limits and workspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub roster: Roster,
    pub placements: BTreeMap<String, Placement>,
    pub tasks: Vec<TaskLayout>,
    pub drawer_open_frac: BTreeMap<String, f64>,
    /// Distance a drawer slides toward the camera when fully open.
    pub drawer_travel: f64,
    pub stove_on: bool,
    pub gripper_home: [f64; 3],
    pub workspace: Bounds,
    /// Half-width of the uniform x/y jitter applied to bowls.
    pub bowl_jitter: f64,
    pub sim: SimParams,
}

impl SceneConfig {
    pub fn task_specs(&self) -> Vec<TaskSpec> {
        self.tasks.iter().map(|l| l.task.clone()).collect()
    }

    fn layout_for(&self, task: &TaskSpec) -> BTreeMap<String, Placement> {
        let mut placements = self.placements.clone();
        if let Some(l) = self.tasks.iter().find(|l| l.task == *task) {
            placements.extend(l.placements.clone());
        }
        placements
    }

    pub fn hash(&self) -> String {
        crate::sha256_hex(&serde_json::to_vec(self).expect("scene serializes"))
    }
}

const BOWL: [f64; 3] = [0.045, 0.045, 0.025];

/// Stand-in for the LIBERO-spatial scene: two black bowls, a plate, a
/// ramekin, a cabinet with two drawers and a stove on a 1 m x 1 m table.
pub fn default_scene() -> SceneConfig {
    use Category::*;
    let roster = Roster::new(vec![
        ObjectSpec::new("table_1", Table, [0.5, 0.5, 0.02]),
        ObjectSpec::new("bowl_1", Bowl, BOWL),
        ObjectSpec::new("bowl_2", Bowl, BOWL),
        ObjectSpec::new("plate_1", Plate, [0.07, 0.07, 0.008]),
        ObjectSpec::new("ramekin_1", Ramekin, [0.04, 0.04, 0.025]),
        ObjectSpec::new("cabinet_1", Cabinet, [0.12, 0.08, 0.15]),
        ObjectSpec::new("drawer_top_1", Drawer, [0.10, 0.08, 0.04]).with_parent("cabinet_1"),
        ObjectSpec::new("drawer_bottom_1", Drawer, [0.10, 0.08, 0.04]).with_parent("cabinet_1"),
        ObjectSpec::new("stove_1", Stove, [0.08, 0.08, 0.02]),
    ])
    .expect("default roster is valid");

    let on_table = |x: f64, y: f64| Placement::OnTable { xy: [x, y] };
    let mut placements = BTreeMap::new();
    placements.insert(
        "table_1".to_string(),
        Placement::At {
            position: [0.0, 0.0, -0.02],
        },
    );
    placements.insert("plate_1".into(), on_table(-0.15, -0.15));
    placements.insert("ramekin_1".into(), on_table(0.15, -0.15));
    placements.insert("stove_1".into(), on_table(-0.30, 0.22));
    placements.insert("cabinet_1".into(), on_table(0.25, 0.32));
    placements.insert(
        "drawer_top_1".into(),
        Placement::At {
            position: [0.25, 0.32, 0.22],
        },
    );
    placements.insert(
        "drawer_bottom_1".into(),
        Placement::At {
            position: [0.25, 0.32, 0.08],
        },
    );
    placements.insert("bowl_1".into(), on_table(0.0, 0.05));
    placements.insert("bowl_2".into(), on_table(-0.05, 0.15));

    let on = |s: &str, x: f64, y: f64| Placement::On {
        support: s.into(),
        xy: [x, y],
    };
    let layout = |instruction: &str, target: &str, bowls: [(&str, Placement); 2]| TaskLayout {
        task: TaskSpec::new(instruction, target, "plate_1"),
        placements: bowls
            .into_iter()
            .map(|(id, p)| (id.to_string(), p))
            .collect(),
    };
    let tasks = vec![
        layout(
            "pick up the black bowl between the plate and the ramekin and place it on the plate",
            "bowl_1",
            [("bowl_1", on_table(0.0, -0.15)), ("bowl_2", on_table(-0.05, 0.15))],
        ),
        layout(
            "pick up the black bowl next to the ramekin and place it on the plate",
            "bowl_1",
            [("bowl_1", on_table(0.30, -0.15)), ("bowl_2", on_table(-0.05, 0.15))],
        ),
        layout(
            "pick up the black bowl from table center and place it on the plate",
            "bowl_2",
            [("bowl_1", on_table(-0.35, -0.05)), ("bowl_2", on_table(0.0, 0.0))],
        ),
        layout(
            "pick up the black bowl on the ramekin and place it on the plate",
            "bowl_1",
            [("bowl_1", on("ramekin_1", 0.15, -0.15)), ("bowl_2", on_table(-0.05, 0.15))],
        ),
        layout(
            "pick up the black bowl next to the plate and place it on the plate",
            "bowl_2",
            [("bowl_1", on_table(0.0, 0.05)), ("bowl_2", on_table(-0.35, -0.15))],
        ),
        layout(
            "pick up the black bowl on the stove and place it on the plate",
            "bowl_1",
            [("bowl_1", on("stove_1", -0.30, 0.22)), ("bowl_2", on_table(0.0, 0.02))],
        ),
        layout(
            "pick up the black bowl on the wooden cabinet and place it on the plate",
            "bowl_2",
            [("bowl_1", on_table(0.0, 0.0)), ("bowl_2", on("cabinet_1", 0.25, 0.32))],
        ),
        layout(
            "pick up the black bowl in the top drawer of the wooden cabinet and place it on the plate",
            "bowl_1",
            [
                (
                    "bowl_1",
                    Placement::Inside {
                        container: "drawer_top_1".into(),
                        xy: [0.25, 0.15],
                    },
                ),
                ("bowl_2", on_table(-0.05, 0.15)),
            ],
        ),
        layout(
            "pick up the black bowl in front of the plate and place it on the plate",
            "bowl_1",
            [("bowl_1", on_table(-0.15, -0.35)), ("bowl_2", on_table(0.05, 0.10))],
        ),
        layout(
            "pick up the black bowl behind the ramekin and place it on the plate",
            "bowl_2",
            [("bowl_1", on_table(-0.35, 0.0)), ("bowl_2", on_table(0.15, 0.0))],
        ),
    ];

    let mut drawer_open_frac = BTreeMap::new();
    drawer_open_frac.insert("drawer_top_1".to_string(), 1.0);
    drawer_open_frac.insert("drawer_bottom_1".to_string(), 0.0);

    SceneConfig {
        roster,
        placements,
        tasks,
        drawer_open_frac,
        drawer_travel: 0.17,
        stove_on: false,
        gripper_home: [0.0, -0.35, 0.45],
        workspace: Bounds {
            min: [-0.5, -0.5, -0.05],
            max: [0.5, 0.5, 0.6],
        },
        bowl_jitter: 0.03,
        sim: SimParams::default(),
    }
}

/// Builds the t = 0 state for `task`. Everything except bowls sits at its
/// nominal placement; bowls get a seeded uniform x/y jitter.
pub fn init_scene(scene: &SceneConfig, task: &TaskSpec, seed: u64) -> Result<WorldState> {
    task.validate(&scene.roster)?;
    let mut placements = scene.layout_for(task);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for spec in scene.roster.objects() {
        if spec.category != Category::Bowl {
            continue;
        }
        if let Some(xy) = placements.get_mut(&spec.id).and_then(Placement::xy_mut) {
            for v in xy.iter_mut() {
                *v += rng.random_range(-scene.bowl_jitter..=scene.bowl_jitter);
            }
        }
    }

    let mut drawer_open_frac = BTreeMap::new();
    for spec in scene.roster.objects() {
        if spec.category == Category::Drawer {
            let f = scene
                .drawer_open_frac
                .get(&spec.id)
                .copied()
                .unwrap_or(0.0)
                .clamp(0.0, 1.0);
            drawer_open_frac.insert(spec.id.clone(), f);
        }
    }

    let mut poses: BTreeMap<String, Pose> = BTreeMap::new();
    for id in placements.keys() {
        if scene.roster.get(id).is_none() {
            return Err(Error::Config(format!(
                "placement for unknown object `{id}`"
            )));
        }
    }
    // Resolve placements whose supports are already placed until fixpoint.
    let mut pending: Vec<&ObjectSpec> = scene.roster.objects().iter().collect();
    while !pending.is_empty() {
        let before = pending.len();
        let mut rest = Vec::new();
        for spec in pending {
            let placement = placements
                .get(&spec.id)
                .ok_or_else(|| Error::Config(format!("object `{}` has no placement", spec.id)))?;
            if let Some(dep) = placement.depends_on() {
                if !poses.contains_key(dep) {
                    rest.push(spec);
                    continue;
                }
            }
            let mut position = resolve(scene, spec, placement, &poses)?;
            if spec.category == Category::Drawer {
                position[1] -= drawer_open_frac[&spec.id] * scene.drawer_travel;
            }
            poses.insert(spec.id.clone(), Pose::at(position));
        }
        if rest.len() == before {
            return Err(Error::Config(
                "cyclic or dangling support placements".into(),
            ));
        }
        pending = rest;
    }

    Ok(WorldState {
        poses,
        gripper_pos: scene.gripper_home,
        gripper_rpy: [0.0; 3],
        gripper_aperture: scene.sim.max_aperture,
        attached: None,
        attach_offset: [0.0; 3],
        drawer_open_frac,
        stove_on: scene.stove_on,
        t: 0,
    })
}

fn resolve(
    scene: &SceneConfig,
    spec: &ObjectSpec,
    placement: &Placement,
    poses: &BTreeMap<String, Pose>,
) -> Result<[f64; 3]> {
    let hz = spec.half_extents[2];
    let support_top = |id: &str| -> Result<f64> {
        let s = scene
            .roster
            .get(id)
            .ok_or_else(|| Error::Config(format!("unknown support `{id}`")))?;
        Ok(poses[id].position[2] + s.half_extents[2])
    };
    Ok(match placement {
        Placement::At { position } => *position,
        Placement::OnTable { xy } => [xy[0], xy[1], hz],
        Placement::On { support, xy } => [xy[0], xy[1], support_top(support)? + hz],
        Placement::Inside { container, xy } => {
            let c = scene
                .roster
                .get(container)
                .ok_or_else(|| Error::Config(format!("unknown container `{container}`")))?;
            let floor = poses[container.as_str()].position[2] - c.half_extents[2];
            [xy[0], xy[1], floor + hz]
        }
    })
}
