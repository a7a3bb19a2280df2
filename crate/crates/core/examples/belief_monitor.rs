//! Feeds noisy probe predictions for one held-out episode through the belief
//! store and prints every change event and rule violation.
//!
//! A very noisy encoder layer is used on purpose so the probe makes mistakes
//! and the consistency rules have something to catch.
//!
//! ```bash
//! cargo run --release --example belief_monitor -- [noise_std]
//! ```

use vlaprobe::belief::{check_consistency, default_rules, BeliefStore};
use vlaprobe::embeddings::{noise_seed, synth_encoder, LayerSpec, SyntheticEncoderConfig};
use vlaprobe::probe::{
    assemble_dataset, filter_labels, label_episodes, predict_full, split_by_episode, train_probe,
    LayerSource, ProbeModel, SplitConfig, SyntheticSource, TrainConfig,
};
use vlaprobe::schema::{AtomIndex, StateKind, StateVector};
use vlaprobe::world::{collect_episodes, default_scene, RenderConfig};

fn main() -> vlaprobe::Result<()> {
    let noise_std: f64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(6.0);
    let scene = default_scene();
    let idx = AtomIndex::build(&scene.roster)?;
    let episodes = collect_episodes(
        &scene,
        &scene.task_specs(),
        2,
        0,
        400,
        &RenderConfig::default(),
    )?;
    let labels = label_episodes(&scene.roster, &episodes, &idx)?;

    let cfg = SyntheticEncoderConfig {
        noise_std,
        ..SyntheticEncoderConfig::default_for(
            &LayerSpec {
                num_layers: 2,
                dim: 64,
            },
            0,
        )
    };
    let enc = synth_encoder(&cfg, idx.n_obj() + idx.n_act())?;
    let source = SyntheticSource {
        encoder: &enc,
        labels: &labels,
        atom_index_hash: idx.hash(),
    };
    let acts = source.load(1)?;

    let mut probes: Vec<ProbeModel> = Vec::new();
    let mut test_ids = Vec::new();
    for kind in [StateKind::Object, StateKind::Action] {
        let ds = assemble_dataset(&labels, &acts, 1, kind, &idx.hash())?;
        let (train, test) = split_by_episode(&ds, &SplitConfig::default())?;
        let (_, filter) = filter_labels(&train)?;
        probes.push(train_probe(&train, &filter.kept, &TrainConfig::default())?);
        test_ids = test.episode_ids().into_iter().map(String::from).collect();
    }

    let ep = labels.iter().find(|e| e.episode_id == test_ids[0]).unwrap();
    println!(
        "replaying {} ({} frames), noise_std {noise_std}",
        ep.episode_id,
        ep.frames()
    );
    let rules = default_rules();
    let mut store = BeliefStore::new(&idx);
    let (mut n_events, mut n_violations) = (0, 0);
    for t in 0..ep.frames() as u64 {
        let h = enc.activation(
            &ep.object[t as usize],
            &ep.action[t as usize],
            1,
            noise_seed(&ep.episode_id, t),
        )?;
        let obj = StateVector {
            kind: StateKind::Object,
            bits: predict_full(&probes[0], &h)?,
        };
        let act = StateVector {
            kind: StateKind::Action,
            bits: predict_full(&probes[1], &h)?,
        };
        for e in store.update(&obj, &act, t)? {
            println!("  t={t:>3} {:?} {}", e.transition, e.atom);
            n_events += 1;
        }
        for v in check_consistency(&store, &rules) {
            println!(
                "  t={t:>3} VIOLATION {}: {} & {}",
                v.rule, v.atoms[0], v.atoms[1]
            );
            n_violations += 1;
        }
    }
    println!("{n_events} events, {n_violations} violation reports");
    let truths: Vec<String> = store.true_atoms().map(|a| a.to_string()).collect();
    println!("final beliefs: {}", truths.join(" "));
    Ok(())
}
