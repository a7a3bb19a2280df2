//! Drives a monitor session in process, without a socket: lists tasks,
//! starts one and runs it to completion, then summarizes the JSON messages a
//! client would have received.
//!
//! Probes are trained on the spot at a small width so the example is quick.
//!
//! ```bash
//! cargo run --release --example monitor_session -- [task_id]
//! ```

use std::sync::Arc;

use serde_json::Value;
use vlaprobe::embeddings::{synth_encoder, LayerSpec, SyntheticEncoderConfig};
use vlaprobe::probe::{
    assemble_dataset, filter_labels, label_episodes, train_probe, LayerSource, SyntheticSource,
    TrainConfig,
};
use vlaprobe::schema::{AtomIndex, StateKind};
use vlaprobe::service::{ProbeSet, ServiceConfig, ServiceContext, Session, SourceSpec};
use vlaprobe::world::{collect_episodes, default_scene, RenderConfig};

fn main() -> vlaprobe::Result<()> {
    let task_id: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let scene = default_scene();
    let idx = AtomIndex::build(&scene.roster)?;
    let render = RenderConfig {
        width: 64,
        height: 64,
    };
    let episodes = collect_episodes(&scene, &scene.task_specs(), 2, 0, 400, &render)?;
    let labels = label_episodes(&scene.roster, &episodes, &idx)?;

    let enc_cfg = SyntheticEncoderConfig::default_for(
        &LayerSpec {
            num_layers: 2,
            dim: 64,
        },
        0,
    );
    let enc = synth_encoder(&enc_cfg, idx.n_obj() + idx.n_act())?;
    let source = SyntheticSource {
        encoder: &enc,
        labels: &labels,
        atom_index_hash: idx.hash(),
    };
    let acts = source.load(1)?;
    let train = |kind| -> vlaprobe::Result<_> {
        let ds = assemble_dataset(&labels, &acts, 1, kind, &idx.hash())?;
        let (_, filter) = filter_labels(&ds)?;
        train_probe(&ds, &filter.kept, &TrainConfig::default())
    };
    let probes = ProbeSet::new(train(StateKind::Object)?, train(StateKind::Action)?)?;

    let config = ServiceConfig {
        render,
        ..ServiceConfig::default()
    };
    let ctx = Arc::new(ServiceContext::new(
        scene,
        probes,
        SourceSpec::Synthetic(enc_cfg),
        config,
    )?);
    let mut session = Session::new("example", ctx);
    println!("{}", session.hello());

    let mut msgs = session.handle_message(r#"{"type":"list_tasks"}"#);
    msgs.extend(session.handle_message(&format!(r#"{{"type":"start_task","task_id":{task_id}}}"#)));
    msgs.extend(session.run_to_end());

    let (mut steps, mut events, mut violations) = (0, 0, 0);
    for m in &msgs {
        let v: Value = serde_json::from_str(m).expect("server output is JSON");
        match v["type"].as_str().unwrap_or_default() {
            "step" => {
                steps += 1;
                events += v["events"].as_array().map_or(0, Vec::len);
                violations += v["violations"].as_array().map_or(0, Vec::len);
            }
            "tasks" => println!(
                "{} tasks available",
                v["tasks"].as_array().map_or(0, Vec::len)
            ),
            "task_started" => println!(
                "started: {} (object layer {}, action layer {})",
                v["instruction"], v["object_layer"], v["action_layer"]
            ),
            _ => println!("{m}"),
        }
    }
    println!("{steps} step messages, {events} belief events, {violations} violation reports");
    println!("first step is {} bytes of JSON", session.history()[0].len());
    Ok(())
}
