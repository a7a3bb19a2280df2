//! Encodes two episodes with the synthetic encoder, writes them to an
//! activation trace and reads one layer back.
//!
//! ```bash
//! cargo run --release --example activation_trace
//! ```

use vlaprobe::embeddings::{
    read_sidecar, synth_encoder, trace_file_size, LayerSpec, SyntheticEncoderConfig, TraceEpisode,
    TraceMeta, TraceReader, TraceWriter,
};
use vlaprobe::probe::label_episodes;
use vlaprobe::schema::AtomIndex;
use vlaprobe::world::{collect_episodes, default_scene, RenderConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = default_scene();
    let idx = AtomIndex::build(&scene.roster)?;
    let tasks = &scene.task_specs()[..2];
    let episodes = collect_episodes(&scene, tasks, 1, 0, 400, &RenderConfig::default())?;
    let labels = label_episodes(&scene.roster, &episodes, &idx)?;

    let layers = LayerSpec {
        num_layers: 4,
        dim: 64,
    };
    let enc = synth_encoder(
        &SyntheticEncoderConfig::default_for(&layers, 0),
        idx.n_obj() + idx.n_act(),
    )?;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("example.avt");
    let meta = TraceMeta {
        episodes: episodes
            .iter()
            .map(|e| TraceEpisode {
                id: e.id.clone(),
                instruction: e.task.instruction.clone(),
                seed: e.seed,
                frames: e.frames.len(),
            })
            .collect(),
        atom_index_hash: idx.hash(),
        config_hash: "example".into(),
        producer: serde_json::json!({"encoder": enc.config()}),
    };
    let mut w = TraceWriter::create(&path, layers, meta)?;
    for ep in &labels {
        for (t, (o, a)) in ep.object.iter().zip(&ep.action).enumerate() {
            for layer in 0..layers.num_layers {
                w.write(&enc.gen_activation(&ep.episode_id, t as u64, o, a, layer)?)?;
            }
        }
    }
    let n = w.finish()?;

    let r = TraceReader::open_expecting(&path, layers)?;
    let meta_len = r.header().data_start - 16 - 4;
    let size = std::fs::metadata(&path)?.len();
    println!(
        "{n} records, {size} bytes (expected {})",
        trace_file_size(meta_len, n, layers.dim)
    );
    println!("sidecar: {:?}", read_sidecar(&path)?.atom_index_hash);

    let layer2 = r.layer_vectors(2)?;
    let key = (labels[0].episode_id.clone(), 0);
    let again = enc.gen_activation(&key.0, 0, &labels[0].object[0], &labels[0].action[0], 2)?;
    println!(
        "layer 2 has {} vectors; first frame reproduces bit for bit: {}",
        layer2.len(),
        layer2[&key] == again.vector
    );
    Ok(())
}
