use serde::{Deserialize, Serialize};

use super::{wrap_angle, Action, Flag, SceneConfig, TaskSpec, WorldState};
use crate::schema::detect;

/// Simulator limits and the scripted controller's waypoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    /// Per-axis translation clamp per step.
    pub max_dpos: f64,
    /// Per-axis rotation clamp per step.
    pub max_drot: f64,
    /// Aperture change per step at |dgrip| = 1.
    pub aperture_rate: f64,
    pub max_aperture: f64,
    /// Grasp closes when the aperture drops below this.
    pub grasp_aperture: f64,
    pub grasp_radius: f64,
    /// Gripper height for approach, transport and retreat.
    pub hover_z: f64,
    /// Waypoint tolerance of the scripted controller.
    pub waypoint_tol: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            max_dpos: 0.02,
            max_drot: 0.1,
            aperture_rate: 0.01,
            max_aperture: 0.08,
            grasp_aperture: 0.02,
            grasp_radius: 0.04,
            hover_z: 0.40,
            waypoint_tol: 1e-6,
        }
    }
}

/// Controller phase, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Approach,
    Descend,
    Close,
    Lift,
    Transport,
    Lower,
    Open,
    Retreat,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn xy_dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Integrates one step: gripper pose and aperture, grasp and release, and
/// attached-object tracking.
pub fn apply_action(scene: &SceneConfig, world: &WorldState, action: &Action) -> WorldState {
    let p = &scene.sim;
    let a = action.clamped(p);
    let mut next = world.clone();

    next.gripper_pos = scene.workspace.clamp(add(world.gripper_pos, a.dpos));
    for i in 0..3 {
        next.gripper_rpy[i] = wrap_angle(world.gripper_rpy[i] + a.drot[i]);
    }
    next.gripper_aperture =
        (world.gripper_aperture - a.dgrip * p.aperture_rate).clamp(0.0, p.max_aperture);

    if next.attached.is_some() && next.gripper_aperture >= p.grasp_aperture {
        next.attached = None;
        next.attach_offset = [0.0; 3];
    }
    if let Some(id) = &next.attached {
        let target = scene
            .workspace
            .clamp(add(next.gripper_pos, next.attach_offset));
        if let Some(pose) = next.poses.get_mut(id) {
            pose.position = target;
        }
    } else if next.gripper_aperture < p.grasp_aperture {
        let grip = next.gripper_pos;
        let nearest = scene
            .roster
            .with_flag(Flag::Pickupable)
            .filter_map(|o| next.position(&o.id).map(|c| (o.id.clone(), c)))
            .map(|(id, c)| (norm(sub(c, grip)), id, c))
            .filter(|(d, _, _)| *d < p.grasp_radius)
            .min_by(|x, y| x.0.total_cmp(&y.0).then_with(|| x.1.cmp(&y.1)));
        if let Some((_, id, c)) = nearest {
            next.attach_offset = sub(c, grip);
            next.attached = Some(id);
        }
    }

    next.t = world.t + 1;
    next
}

/// Success condition: target resting on the destination, released, and the
/// gripper back at hover height.
pub fn goal_reached(scene: &SceneConfig, world: &WorldState, task: &TaskSpec) -> bool {
    world.attached.is_none()
        && detect::placed(&scene.roster, world, task)
        && world.gripper_pos[2] >= scene.sim.hover_z - scene.sim.waypoint_tol
}

/// Phase of the scripted controller. A pure function of `(world, task)`.
pub fn phase(scene: &SceneConfig, world: &WorldState, task: &TaskSpec) -> Phase {
    let p = &scene.sim;
    let tol = p.waypoint_tol;
    let grip = world.gripper_pos;
    let (Some(target), Some(dest)) = (
        world.position(&task.target_id),
        world.position(&task.destination_id),
    ) else {
        return Phase::Retreat;
    };
    let placed = detect::placed(&scene.roster, world, task);
    match world.attached.as_deref() {
        Some(id) if id == task.target_id => {
            if placed {
                Phase::Open
            } else if xy_dist(target, dest) <= tol {
                Phase::Lower
            } else if grip[2] < p.hover_z - tol {
                Phase::Lift
            } else {
                Phase::Transport
            }
        }
        Some(_) => Phase::Open,
        None => {
            if placed {
                Phase::Retreat
            } else if norm(sub(grip, target)) <= tol {
                Phase::Close
            } else if xy_dist(grip, target) <= tol {
                Phase::Descend
            } else {
                Phase::Approach
            }
        }
    }
}

/// Eight-phase pick-and-place controller standing in for the policy.
pub fn scripted_action(scene: &SceneConfig, world: &WorldState, task: &TaskSpec) -> Action {
    let p = &scene.sim;
    let grip = world.gripper_pos;
    let target = world.position(&task.target_id).unwrap_or(grip);
    let dest = world.position(&task.destination_id).unwrap_or(grip);
    let toward = |goal: [f64; 3]| sub(goal, grip);

    let (dpos, dgrip) = match phase(scene, world, task) {
        Phase::Approach => (toward([target[0], target[1], p.hover_z]), -1.0),
        Phase::Descend => (toward(target), -1.0),
        Phase::Close => ([0.0; 3], 1.0),
        Phase::Lift => ([0.0, 0.0, p.hover_z - grip[2]], 1.0),
        Phase::Transport => {
            let off = world.attach_offset;
            (toward([dest[0] - off[0], dest[1] - off[1], p.hover_z]), 1.0)
        }
        Phase::Lower => {
            let spec_t = scene.roster.get(&task.target_id);
            let spec_d = scene.roster.get(&task.destination_id);
            let rest_z = match (spec_t, spec_d) {
                (Some(t), Some(d)) => dest[2] + d.half_extents[2] + t.half_extents[2],
                _ => target[2],
            };
            ([0.0, 0.0, rest_z - target[2]], 1.0)
        }
        Phase::Open => ([0.0; 3], -1.0),
        Phase::Retreat => ([0.0, 0.0, p.hover_z - grip[2]], -1.0),
    };
    Action {
        dpos,
        drot: [0.0; 3],
        dgrip,
    }
    .clamped(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{default_scene, init_scene};

    #[test]
    fn zero_action_only_advances_time() {
        let scene = default_scene();
        let w = init_scene(&scene, &scene.tasks[0].task, 3).unwrap();
        let next = apply_action(&scene, &w, &Action::default());
        let mut expected = w.clone();
        expected.t += 1;
        assert_eq!(next, expected);
    }

    #[test]
    fn closing_far_from_everything_grasps_nothing() {
        let scene = default_scene();
        let mut w = init_scene(&scene, &scene.tasks[0].task, 0).unwrap();
        w.gripper_pos = [0.45, -0.45, 0.55];
        for _ in 0..10 {
            w = apply_action(
                &scene,
                &w,
                &Action {
                    dgrip: 1.0,
                    ..Action::default()
                },
            );
        }
        assert_eq!(w.gripper_aperture, 0.0);
        assert!(w.attached.is_none());
    }

    #[test]
    fn closing_within_radius_grasps_bowl() {
        let scene = default_scene();
        let mut w = init_scene(&scene, &scene.tasks[0].task, 0).unwrap();
        let bowl = w.position("bowl_1").unwrap();
        // 3 cm off-center, inside the 4 cm radius
        w.gripper_pos = [bowl[0] + 0.03, bowl[1], bowl[2]];
        w.gripper_aperture = 0.025;
        let next = apply_action(
            &scene,
            &w,
            &Action {
                dgrip: 1.0,
                ..Action::default()
            },
        );
        assert_eq!(next.attached.as_deref(), Some("bowl_1"));
        assert_eq!(next.position("bowl_1").unwrap(), bowl);
        // the bowl now follows the gripper
        let moved = apply_action(
            &scene,
            &next,
            &Action {
                dpos: [0.0, 0.0, 0.02],
                dgrip: 1.0,
                ..Action::default()
            },
        );
        assert!((moved.position("bowl_1").unwrap()[2] - (bowl[2] + 0.02)).abs() < 1e-12);
    }

    #[test]
    fn approach_heads_to_hover_waypoint_with_open_gripper() {
        let scene = default_scene();
        let task = &scene.tasks[0].task;
        let w = init_scene(&scene, task, 0).unwrap();
        assert_eq!(phase(&scene, &w, task), Phase::Approach);
        let a = scripted_action(&scene, &w, task);
        let target = w.position(&task.target_id).unwrap();
        assert_eq!(a.dgrip, -1.0);
        for ((d, t), g) in a.dpos.iter().zip(target).zip(w.gripper_pos).take(2) {
            assert_eq!(d.signum(), (t - g).signum());
        }
        assert!(a.dpos[2] < 0.0, "home is above hover height");
    }

    #[test]
    fn lower_phase_descends_holding_grip() {
        let scene = default_scene();
        let task = &scene.tasks[0].task;
        let mut w = init_scene(&scene, task, 0).unwrap();
        let plate = w.position("plate_1").unwrap();
        w.gripper_pos = [plate[0], plate[1], 0.30];
        w.gripper_aperture = 0.0;
        w.attached = Some(task.target_id.clone());
        w.attach_offset = [0.0; 3];
        w.poses.get_mut(&task.target_id).unwrap().position = w.gripper_pos;
        assert_eq!(phase(&scene, &w, task), Phase::Lower);
        let a = scripted_action(&scene, &w, task);
        assert!(a.dpos[2] < 0.0);
        assert_eq!(a.dgrip, 1.0);
    }

    #[test]
    fn actions_respect_clamps() {
        let scene = default_scene();
        let a = Action {
            dpos: [1.0, -1.0, 0.01],
            drot: [0.5, 0.0, -2.0],
            dgrip: 3.0,
        }
        .clamped(&scene.sim);
        assert_eq!(a.dpos, [0.02, -0.02, 0.01]);
        assert_eq!(a.drot, [0.1, 0.0, -0.1]);
        assert_eq!(a.dgrip, 1.0);
    }
}
