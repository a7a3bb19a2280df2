//! Rolls out the scripted controller on every task and prints episode
//! lengths plus how often each atom is true across all frames.
//!
//! ```bash
//! cargo run --release --example collect_episodes
//! ```

use vlaprobe::schema::{detect_state, AtomIndex, StateKind};
use vlaprobe::world::{collect_episodes, default_scene, RenderConfig};

fn main() -> vlaprobe::Result<()> {
    let scene = default_scene();
    let idx = AtomIndex::build(&scene.roster)?;
    let tasks = scene.task_specs();
    let episodes = collect_episodes(&scene, &tasks, 5, 0, 400, &RenderConfig::default())?;

    println!("{} episodes", episodes.len());
    for ep in &episodes {
        println!(
            "  {}  {:>3} frames  success={}  {}",
            ep.id,
            ep.frames.len(),
            ep.success,
            ep.task.instruction
        );
    }

    let mut counts = [vec![0usize; idx.n_obj()], vec![0usize; idx.n_act()]];
    let mut frames = 0usize;
    for ep in &episodes {
        for state in ep.states() {
            let (obj, act) = detect_state(&scene.roster, state, &ep.task, &idx)?;
            for (c, b) in counts[0].iter_mut().zip(&obj.bits) {
                *c += *b as usize;
            }
            for (c, b) in counts[1].iter_mut().zip(&act.bits) {
                *c += *b as usize;
            }
            frames += 1;
        }
    }
    println!("\natom frequencies over {frames} frames (constant atoms omitted)");
    for (kind, counts) in [StateKind::Object, StateKind::Action].iter().zip(&counts) {
        for (atom, c) in idx.atoms(*kind).iter().zip(counts) {
            if *c != 0 && *c != frames {
                println!(
                    "  {:<40} {:.4}",
                    atom.to_string(),
                    *c as f64 / frames as f64
                );
            }
        }
    }
    Ok(())
}
