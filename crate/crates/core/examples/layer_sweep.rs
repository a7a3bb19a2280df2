//! Full probing sweep on synthetic activations: 50 scripted episodes, a
//! 33-layer encoder whose first layer carries no state information, one
//! object-state and one action-state probe per layer.
//!
//! ```bash
//! cargo run --release --example layer_sweep
//! ```

use std::time::Instant;

use vlaprobe::embeddings::{synth_encoder, LayerSpec, SyntheticEncoderConfig};
use vlaprobe::probe::{label_episodes, sweep_layers, SplitConfig, SyntheticSource, TrainConfig};
use vlaprobe::schema::AtomIndex;
use vlaprobe::world::{collect_episodes, default_scene, RenderConfig};

fn main() -> vlaprobe::Result<()> {
    let start = Instant::now();
    let scene = default_scene();
    let idx = AtomIndex::build(&scene.roster)?;
    let episodes = collect_episodes(
        &scene,
        &scene.task_specs(),
        5,
        0,
        400,
        &RenderConfig::default(),
    )?;
    let labels = label_episodes(&scene.roster, &episodes, &idx)?;

    let layers = LayerSpec {
        num_layers: 33,
        dim: 256,
    };
    let enc = synth_encoder(
        &SyntheticEncoderConfig::default_for(&layers, 0),
        idx.n_obj() + idx.n_act(),
    )?;
    let source = SyntheticSource {
        encoder: &enc,
        labels: &labels,
        atom_index_hash: idx.hash(),
    };
    let out = sweep_layers(
        &labels,
        &idx,
        &source,
        &SplitConfig::default(),
        &TrainConfig::default(),
        None,
        "example",
    )?;

    println!("test episodes: {}", out.test_episodes.join(" "));
    println!("\ndropped object labels:");
    for d in &out.object_filter.dropped {
        let atom = &idx.object_atoms()[d.position];
        if d.frequency > 0.0 && d.frequency < 1.0 {
            println!("  {atom:<32} {:.4}", d.frequency);
        }
    }
    println!("\n{}", out.table.to_csv());
    let r0: Vec<_> = out.reports.iter().filter(|r| r.layer == 0).collect();
    println!("layer 0 base rates:");
    for r in r0 {
        for p in &r.per_predicate {
            println!(
                "  {:<20} acc {:.4}  base {:.4}",
                p.predicate, p.accuracy, p.base_rate
            );
        }
    }
    println!(
        "\nbest object layer {} ({:.4}), best action layer {} ({:.4})",
        out.best.object.layer,
        out.best.object.mean_accuracy,
        out.best.action.layer,
        out.best.action.mean_accuracy
    );
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
