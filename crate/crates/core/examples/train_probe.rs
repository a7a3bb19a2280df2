//! Trains and evaluates the object-state probe for a single layer, then
//! writes it to disk and checks the reloaded probe predicts identically.
//!
//! ```bash
//! cargo run --release --example train_probe -- [layer]
//! ```

use vlaprobe::embeddings::{synth_encoder, LayerSpec, SyntheticEncoderConfig};
use vlaprobe::probe::{
    assemble_dataset, evaluate, filter_labels, label_episodes, predict_full, read_probe,
    split_by_episode, train_probe, write_probe, LayerSource, SplitConfig, SyntheticSource,
    TrainConfig,
};
use vlaprobe::schema::{AtomIndex, StateKind};
use vlaprobe::world::{collect_episodes, default_scene, RenderConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let layer: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(8);
    let scene = default_scene();
    let idx = AtomIndex::build(&scene.roster)?;
    let episodes = collect_episodes(
        &scene,
        &scene.task_specs(),
        3,
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
    let acts = source.load(layer)?;
    let ds = assemble_dataset(&labels, &acts, layer, StateKind::Object, &idx.hash())?;
    let (train, test) = split_by_episode(&ds, &SplitConfig::default())?;
    println!(
        "{} pairs: {} train frames over {} episodes, {} test frames over {} episodes",
        ds.len(),
        train.len(),
        train.episode_ids().len(),
        test.len(),
        test.episode_ids().len()
    );

    let (_, filter) = filter_labels(&train)?;
    println!(
        "kept {} of {} object labels",
        filter.kept.len(),
        ds.n_labels
    );
    let model = train_probe(&train, &filter.kept, &TrainConfig::default())?;
    let report = evaluate(&model, &test, &idx)?;
    for p in &report.per_predicate {
        println!(
            "  {:<14} acc {:.4}  base {:.4}",
            p.predicate, p.accuracy, p.base_rate
        );
    }
    println!("mean {:.4}", report.mean_accuracy());

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("probe.prb");
    write_probe(&path, &model, "example")?;
    let (_, back) = read_probe(&path)?;
    let same = test
        .pairs
        .iter()
        .all(|p| predict_full(&model, &p.h).ok() == predict_full(&back, &p.h).ok());
    println!("reloaded probe agrees on every test frame: {same}");
    Ok(())
}
