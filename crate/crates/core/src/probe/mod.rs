//! Linear probing: pair activations with ground-truth states, split by
//! episode, drop near-constant labels, train multi-label logistic probes,
//! evaluate per atom and per predicate, and sweep every layer.

mod eval;
mod sweep;
mod train;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::{TraceReader, TraceSidecar};
use crate::schema::{detect_state, AtomIndex, StateKind, StateVector};
use crate::world::{Episode, Roster};
use crate::{Error, Result};

pub use eval::{
    evaluate, export_heatmap, parse_heatmap_csv, parse_heatmap_json, AtomScore, EvalReport,
    HeatmapFormat, HeatmapRow, HeatmapTable, Omitted, PredicateScore,
};
pub use sweep::{
    best_layer, probe_file_name, read_probe, sweep_layers, write_probe, BestLayer, BestLayers,
    LayerSource, ProbeHeader, SweepOutput, SyntheticSource, TraceSource, PROBE_MAGIC,
};
pub use train::{
    loss_and_grad, predict, predict_full, train_probe, Batch, Grads, ProbeModel, TrainConfig,
};

/// Activations of one layer keyed by (episode_id, t).
pub type LayerActivations = HashMap<(String, u64), Vec<f32>>;

/// Ground-truth object and action states for every frame of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLabels {
    pub episode_id: String,
    pub object: Vec<StateVector>,
    pub action: Vec<StateVector>,
}

impl EpisodeLabels {
    pub fn frames(&self) -> usize {
        self.object.len()
    }

    pub fn states(&self, kind: StateKind) -> &[StateVector] {
        match kind {
            StateKind::Object => &self.object,
            StateKind::Action => &self.action,
        }
    }
}

/// Runs the detectors over every frame.
pub fn label_episodes(
    roster: &Roster,
    episodes: &[Episode],
    idx: &AtomIndex,
) -> Result<Vec<EpisodeLabels>> {
    episodes
        .iter()
        .map(|ep| {
            let mut object = Vec::with_capacity(ep.frames.len());
            let mut action = Vec::with_capacity(ep.frames.len());
            for state in ep.states() {
                let (o, a) = detect_state(roster, state, &ep.task, idx)?;
                object.push(o);
                action.push(a);
            }
            Ok(EpisodeLabels {
                episode_id: ep.id.clone(),
                object,
                action,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub episode_id: String,
    pub t: u64,
    pub h: Vec<f32>,
    pub y: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDataset {
    pub kind: StateKind,
    pub layer: usize,
    pub dim: usize,
    pub n_labels: usize,
    pub atom_index_hash: String,
    pub pairs: Vec<Pair>,
}

impl ProbeDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn episode_ids(&self) -> BTreeSet<&str> {
        self.pairs.iter().map(|p| p.episode_id.as_str()).collect()
    }

    /// Fraction of frames where each label is 1.
    pub fn frequencies(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.n_labels];
        for p in &self.pairs {
            for (c, y) in counts.iter_mut().zip(&p.y) {
                *c += *y as usize;
            }
        }
        let n = self.pairs.len().max(1) as f64;
        counts.into_iter().map(|c| c as f64 / n).collect()
    }

    fn subset(&self, keep: impl Fn(&Pair) -> bool) -> ProbeDataset {
        ProbeDataset {
            pairs: self.pairs.iter().filter(|p| keep(p)).cloned().collect(),
            atom_index_hash: self.atom_index_hash.clone(),
            ..*self
        }
    }
}

/// Pairs each frame's state with the activation recorded at the same
/// timestep. Every frame must have a vector.
pub fn assemble_dataset(
    labels: &[EpisodeLabels],
    acts: &LayerActivations,
    layer: usize,
    kind: StateKind,
    atom_index_hash: &str,
) -> Result<ProbeDataset> {
    let mut pairs = Vec::new();
    let mut seen = HashSet::new();
    let mut dim = None;
    let mut n_labels = None;
    for ep in labels {
        if !seen.insert(ep.episode_id.as_str()) {
            return Err(Error::Assembly(format!(
                "duplicate episode `{}`",
                ep.episode_id
            )));
        }
        for (t, y) in ep.states(kind).iter().enumerate() {
            let key = (ep.episode_id.clone(), t as u64);
            let h = acts.get(&key).ok_or_else(|| {
                Error::Assembly(format!(
                    "no activation for episode `{}` t={t} layer={layer}",
                    ep.episode_id
                ))
            })?;
            if *dim.get_or_insert(h.len()) != h.len() {
                return Err(Error::Assembly(format!(
                    "activation width changes at episode `{}` t={t}",
                    ep.episode_id
                )));
            }
            if *n_labels.get_or_insert(y.len()) != y.len() {
                return Err(Error::Assembly(format!(
                    "label length changes at episode `{}` t={t}",
                    ep.episode_id
                )));
            }
            pairs.push(Pair {
                episode_id: ep.episode_id.clone(),
                t: t as u64,
                h: h.clone(),
                y: y.bits.clone(),
            });
        }
    }
    if pairs.is_empty() {
        return Err(Error::Assembly("no frames to assemble".into()));
    }
    Ok(ProbeDataset {
        kind,
        layer,
        dim: dim.unwrap_or(0),
        n_labels: n_labels.unwrap_or(0),
        atom_index_hash: atom_index_hash.to_string(),
        pairs,
    })
}

/// Checks that a trace was produced against `idx` before pairing.
pub fn check_trace_schema(sidecar: &TraceSidecar, idx: &AtomIndex) -> Result<()> {
    if sidecar.atom_index_hash != idx.hash() {
        return Err(Error::Assembly(format!(
            "trace atom index {} does not match schema {}",
            sidecar.atom_index_hash,
            idx.hash()
        )));
    }
    Ok(())
}

/// [`assemble_dataset`] reading one layer from a trace file.
pub fn assemble_from_trace(
    labels: &[EpisodeLabels],
    trace: &Path,
    idx: &AtomIndex,
    layer: usize,
    kind: StateKind,
) -> Result<ProbeDataset> {
    let reader = TraceReader::open(trace)?;
    let header = reader.header();
    if header.meta.atom_index_hash != idx.hash() {
        return Err(Error::Assembly(format!(
            "trace atom index {} does not match schema {}",
            header.meta.atom_index_hash,
            idx.hash()
        )));
    }
    if layer >= header.layers.num_layers {
        return Err(Error::Assembly(format!(
            "layer {layer} not in trace with {} layers",
            header.layers.num_layers
        )));
    }
    let acts = reader.layer_vectors(layer)?;
    assemble_dataset(labels, &acts, layer, kind, &idx.hash())
}

pub const DATASET_MAGIC: &[u8; 4] = b"PDS1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub kind: StateKind,
    pub layer: usize,
    pub dim: usize,
    pub n_labels: usize,
    pub pairs: usize,
    pub episodes: Vec<String>,
    pub atom_index_hash: String,
    pub config_hash: String,
}

/// `PDS1`, u32 header length, header JSON, then per pair: episode position
/// in the header list (u32), t (u32), `dim` f32 and `n_labels` bytes.
pub fn write_dataset(path: &Path, ds: &ProbeDataset, config_hash: &str) -> Result<()> {
    let episodes: Vec<String> = ds.episode_ids().into_iter().map(String::from).collect();
    let pos: HashMap<&str, u32> = episodes
        .iter()
        .enumerate()
        .map(|(i, e)| (e.as_str(), i as u32))
        .collect();
    let header = DatasetHeader {
        format: "vlaprobe-dataset".into(),
        version: 1,
        kind: ds.kind,
        layer: ds.layer,
        dim: ds.dim,
        n_labels: ds.n_labels,
        pairs: ds.len(),
        episodes: episodes.clone(),
        atom_index_hash: ds.atom_index_hash.clone(),
        config_hash: config_hash.to_string(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(8 + json.len() + ds.len() * (8 + 4 * ds.dim + ds.n_labels));
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in &ds.pairs {
        buf.extend_from_slice(&pos[p.episode_id.as_str()].to_le_bytes());
        buf.extend_from_slice(&(p.t as u32).to_le_bytes());
        for v in &p.h {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&p.y);
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, ProbeDataset)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 || &bytes[..4] != DATASET_MAGIC {
        return Err(Error::format(0, "not a dataset file"));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let mut off = 8 + len;
    if bytes.len() < off {
        return Err(Error::format(8, "truncated dataset header"));
    }
    let header: DatasetHeader = serde_json::from_slice(&bytes[8..off])
        .map_err(|e| Error::format(8, format!("dataset header: {e}")))?;
    let rec = 8 + 4 * header.dim + header.n_labels;
    if bytes.len() != off + header.pairs * rec {
        return Err(Error::format(off as u64, "dataset body has the wrong size"));
    }
    let mut pairs = Vec::with_capacity(header.pairs);
    for _ in 0..header.pairs {
        let r = &bytes[off..off + rec];
        let ep = u32::from_le_bytes(r[0..4].try_into().unwrap()) as usize;
        let episode_id = header
            .episodes
            .get(ep)
            .ok_or_else(|| Error::format(off as u64, "episode position out of range"))?
            .clone();
        let h = r[8..8 + 4 * header.dim]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        pairs.push(Pair {
            episode_id,
            t: u32::from_le_bytes(r[4..8].try_into().unwrap()) as u64,
            h,
            y: r[8 + 4 * header.dim..].to_vec(),
        });
        off += rec;
    }
    let ds = ProbeDataset {
        kind: header.kind,
        layer: header.layer,
        dim: header.dim,
        n_labels: header.n_labels,
        atom_index_hash: header.atom_index_hash.clone(),
        pairs,
    };
    Ok((header, ds))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Seeded episode-level partition of `ids` into (train, test) id sets.
pub fn split_episode_ids(ids: &[&str], cfg: &SplitConfig) -> Result<(Vec<String>, Vec<String>)> {
    if !(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test_fraction must lie in (0, 1), got {}",
            cfg.test_fraction
        )));
    }
    let mut ids: Vec<String> = ids.iter().map(|s| s.to_string()).collect();
    ids.sort();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::Split(format!(
            "need at least 2 episodes to split, got {}",
            ids.len()
        )));
    }
    let n_test = ((cfg.test_fraction * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    ids.shuffle(&mut rng);
    let test = ids.split_off(ids.len() - n_test);
    ids.sort();
    let mut test = test;
    test.sort();
    Ok((ids, test))
}

pub fn split_by_episode(
    ds: &ProbeDataset,
    cfg: &SplitConfig,
) -> Result<(ProbeDataset, ProbeDataset)> {
    let ids: Vec<&str> = ds.episode_ids().into_iter().collect();
    let (_, test) = split_episode_ids(&ids, cfg)?;
    let test: HashSet<&str> = test.iter().map(String::as_str).collect();
    Ok((
        ds.subset(|p| !test.contains(p.episode_id.as_str())),
        ds.subset(|p| test.contains(p.episode_id.as_str())),
    ))
}

pub const FILTER_LOW: f64 = 0.01;
pub const FILTER_HIGH: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedLabel {
    pub position: usize,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelFilterReport {
    pub kept: Vec<usize>,
    pub dropped: Vec<DroppedLabel>,
    pub low: f64,
    pub high: f64,
}

/// Keeps labels whose training frequency lies in [0.01, 0.99].
pub fn filter_labels(train: &ProbeDataset) -> Result<(Vec<bool>, LabelFilterReport)> {
    if train.is_empty() {
        return Err(Error::Pipeline(
            "cannot filter labels of an empty training set".into(),
        ));
    }
    let freqs = train.frequencies();
    let mask: Vec<bool> = freqs
        .iter()
        .map(|f| (FILTER_LOW..=FILTER_HIGH).contains(f))
        .collect();
    let report = LabelFilterReport {
        kept: (0..mask.len()).filter(|&i| mask[i]).collect(),
        dropped: (0..mask.len())
            .filter(|&i| !mask[i])
            .map(|i| DroppedLabel {
                position: i,
                frequency: freqs[i],
            })
            .collect(),
        low: FILTER_LOW,
        high: FILTER_HIGH,
    };
    if report.kept.is_empty() {
        return Err(Error::Pipeline(format!(
            "every {} label is constant on the training split",
            train.kind.as_str()
        )));
    }
    Ok((mask, report))
}
