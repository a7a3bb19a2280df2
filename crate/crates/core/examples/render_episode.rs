//! Runs one scripted episode and writes its first and last frames as PNGs.
//!
//! ```bash
//! cargo run --release --example render_episode -- [task_index] [out_dir]
//! ```

use std::path::PathBuf;

use vlaprobe::world::{default_scene, phase, run_episode, RenderConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let task_idx: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let out = PathBuf::from(args.next().unwrap_or_else(|| ".".into()));

    let scene = default_scene();
    let tasks = scene.task_specs();
    let task = &tasks[task_idx % tasks.len()];
    let ep = run_episode(&scene, task, 0, 400, &RenderConfig::default())?;
    println!(
        "{}: {} frames, success={}",
        task.instruction,
        ep.frames.len(),
        ep.success
    );

    // Phase changes show where the controller switches sub-goal.
    let mut last = None;
    for (t, f) in ep.frames.iter().enumerate() {
        let p = phase(&scene, &f.state, task);
        if last != Some(p) {
            println!("  t={t:>3} {p:?}");
            last = Some(p);
        }
    }

    std::fs::create_dir_all(&out)?;
    for (name, f) in [("first", ep.frames.first()), ("last", ep.frames.last())] {
        let path = out.join(format!("{}_{name}.png", ep.id));
        std::fs::write(&path, &f.unwrap().png)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
