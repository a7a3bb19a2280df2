mod common;

use std::collections::HashMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vlaprobe::schema::{detect_state, spatial_from_positions, Predicate, SpatialRelation};
use vlaprobe::world::Flag;

use common::{idx, random_world, scene, true_atoms, Oracle};

#[test]
fn detectors_match_geometric_oracle_on_random_scenes() {
    let idx = idx();
    let roster = &scene().roster;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    // predicate -> (true count, false count)
    let mut seen: HashMap<Predicate, (usize, usize)> = HashMap::new();
    for n in 0..10_000 {
        let (w, task) = random_world(&mut rng);
        let oracle = Oracle {
            world: &w,
            task: &task,
        };
        let (obj, act) = detect_state(roster, &w, &task, idx).unwrap();
        for v in [&obj, &act] {
            for (atom, bit) in idx.atoms(v.kind).iter().zip(&v.bits) {
                let want = oracle.eval(atom);
                assert_eq!(
                    *bit == 1,
                    want,
                    "scene {n}: {atom} detector={bit} oracle={want}"
                );
                let e = seen.entry(atom.predicate).or_default();
                if want {
                    e.0 += 1
                } else {
                    e.1 += 1
                }
            }
        }
    }
    for p in Predicate::ALL {
        let (t, f) = seen[&p];
        assert!(
            t > 0 && f > 0,
            "{p} never took both values ({t} true, {f} false)"
        );
    }
}

#[test]
fn schema_invariants_hold_on_every_episode_frame() {
    let mut frames = 0;
    for ep in common::labels() {
        for (t, (obj, act)) in ep.object.iter().zip(&ep.action).enumerate() {
            frames += 1;
            if let Err(e) = common::frame_invariants(obj, act) {
                panic!("{} t={t}: {e}", ep.episode_id);
            }
        }
    }
    assert!(frames > 1000);
}

#[test]
fn episodes_stay_in_workspace_and_hold_at_most_one_object() {
    let ws = &scene().workspace;
    for ep in common::episodes() {
        assert!(ep.success, "{} failed", ep.id);
        for f in &ep.frames {
            assert!(
                ws.contains(f.state.gripper_pos),
                "{} t={}",
                ep.id,
                f.state.t
            );
            for o in scene().roster.with_flag(Flag::Pickupable) {
                let p = f.state.position(&o.id).unwrap();
                assert!(ws.contains(p), "{} {} t={}", ep.id, o.id, f.state.t);
            }
        }
    }
}

#[test]
fn first_frame_has_target_on_table_and_subgoal() {
    let idx = idx();
    for ep in common::episodes() {
        let labels =
            vlaprobe::probe::label_episodes(&scene().roster, std::slice::from_ref(ep), idx)
                .unwrap();
        let o: Vec<String> = true_atoms(idx, &labels[0].object[0])
            .iter()
            .map(|a| a.to_string())
            .collect();
        let a: Vec<String> = true_atoms(idx, &labels[0].action[0])
            .iter()
            .map(|a| a.to_string())
            .collect();
        let target = &ep.task.target_id;
        let supported = o.iter().any(|x| {
            (x.starts_with("on(") || x.starts_with("inside(")) && x.contains(&format!("({target},"))
        });
        assert_eq!(
            o.contains(&format!("on-table({target})")),
            !supported,
            "{}",
            ep.id
        );
        assert_eq!(
            a,
            vec![format!("should-move-towards({target})")],
            "{}",
            ep.id
        );
        let last = labels[0].action.last().unwrap();
        assert_eq!(
            last.popcount(),
            0,
            "{}: action atoms after placement",
            ep.id
        );
    }
}

fn rel() -> impl Strategy<Value = SpatialRelation> {
    prop_oneof![
        Just(SpatialRelation::LeftOf),
        Just(SpatialRelation::RightOf),
        Just(SpatialRelation::Behind),
        Just(SpatialRelation::InFrontOf),
    ]
}

fn mirror(r: SpatialRelation) -> SpatialRelation {
    match r {
        SpatialRelation::LeftOf => SpatialRelation::RightOf,
        SpatialRelation::RightOf => SpatialRelation::LeftOf,
        SpatialRelation::Behind => SpatialRelation::InFrontOf,
        SpatialRelation::InFrontOf => SpatialRelation::Behind,
    }
}

proptest! {
    #[test]
    fn spatial_antisymmetry(ax in -1.0..1.0f64, ay in -1.0..1.0f64, bx in -1.0..1.0f64, by in -1.0..1.0f64, r in rel()) {
        let a = [ax, ay, 0.0];
        let b = [bx, by, 0.0];
        prop_assert_eq!(spatial_from_positions(a, b, r), spatial_from_positions(b, a, mirror(r)));
        prop_assert!(!(spatial_from_positions(a, b, r) && spatial_from_positions(a, b, mirror(r))));
        let n = [SpatialRelation::LeftOf, SpatialRelation::RightOf, SpatialRelation::Behind, SpatialRelation::InFrontOf]
            .iter()
            .filter(|r| spatial_from_positions(a, b, **r))
            .count();
        prop_assert!(n <= 1);
    }
}
