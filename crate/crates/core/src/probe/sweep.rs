use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate, EvalReport, HeatmapTable};
use super::train::{train_probe, ProbeModel, TrainConfig};
use super::{
    assemble_dataset, filter_labels, split_by_episode, EpisodeLabels, LabelFilterReport,
    LayerActivations, SplitConfig,
};
use crate::embeddings::{noise_seed, Encoder, TraceReader};
use crate::schema::{AtomIndex, StateKind};
use crate::{Error, Result};

/// Where per-layer activations come from.
pub trait LayerSource: Sync {
    fn num_layers(&self) -> usize;
    fn atom_index_hash(&self) -> String;
    fn load(&self, layer: usize) -> Result<LayerActivations>;
}

/// Computes activations on demand from ground-truth labels.
pub struct SyntheticSource<'a> {
    pub encoder: &'a Encoder,
    pub labels: &'a [EpisodeLabels],
    pub atom_index_hash: String,
}

impl LayerSource for SyntheticSource<'_> {
    fn num_layers(&self) -> usize {
        self.encoder.num_layers()
    }

    fn atom_index_hash(&self) -> String {
        self.atom_index_hash.clone()
    }

    fn load(&self, layer: usize) -> Result<LayerActivations> {
        let mut out = LayerActivations::new();
        for ep in self.labels {
            for (t, (o, a)) in ep.object.iter().zip(&ep.action).enumerate() {
                let h =
                    self.encoder
                        .activation(o, a, layer, noise_seed(&ep.episode_id, t as u64))?;
                out.insert((ep.episode_id.clone(), t as u64), h);
            }
        }
        Ok(out)
    }
}

/// Reads layers from a trace file.
pub struct TraceSource {
    path: PathBuf,
    num_layers: usize,
    atom_index_hash: String,
}

impl TraceSource {
    pub fn open(path: &Path) -> Result<Self> {
        let r = TraceReader::open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            num_layers: r.header().layers.num_layers,
            atom_index_hash: r.header().meta.atom_index_hash.clone(),
        })
    }
}

impl LayerSource for TraceSource {
    fn num_layers(&self) -> usize {
        self.num_layers
    }

    fn atom_index_hash(&self) -> String {
        self.atom_index_hash.clone()
    }

    fn load(&self, layer: usize) -> Result<LayerActivations> {
        TraceReader::open(&self.path)?.layer_vectors(layer)
    }
}

pub const PROBE_MAGIC: &[u8; 4] = b"PRB1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeHeader {
    pub format: String,
    pub version: u32,
    pub layer: usize,
    pub kind: StateKind,
    pub dim: usize,
    pub n_labels: usize,
    pub kept: Vec<usize>,
    pub fill: Vec<u8>,
    pub atom_index_hash: String,
    pub config_hash: String,
}

pub fn probe_file_name(layer: usize, kind: StateKind) -> String {
    format!("layer{layer:02}_{}.prb", kind.as_str())
}

/// `PRB1`, u32 header length, header JSON, then `W` row-major and `b` as
/// little-endian f32.
pub fn write_probe(path: &Path, model: &ProbeModel, config_hash: &str) -> Result<()> {
    let header = ProbeHeader {
        format: "vlaprobe-probe".into(),
        version: 1,
        layer: model.layer,
        kind: model.kind,
        dim: model.dim,
        n_labels: model.n_labels,
        kept: model.kept.clone(),
        fill: model.fill.clone(),
        atom_index_hash: model.atom_index_hash.clone(),
        config_hash: config_hash.to_string(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(8 + json.len() + 4 * (model.w.len() + model.b.len()));
    buf.extend_from_slice(PROBE_MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for v in model.w.iter().chain(&model.b) {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_probe(path: &Path) -> Result<(ProbeHeader, ProbeModel)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 || &bytes[..4] != PROBE_MAGIC {
        return Err(Error::format(0, "not a probe file"));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = 8 + len;
    if bytes.len() < body {
        return Err(Error::format(8, "truncated probe header"));
    }
    let header: ProbeHeader = serde_json::from_slice(&bytes[8..body])
        .map_err(|e| Error::format(8, format!("probe header: {e}")))?;
    let n_kept = header.kept.len();
    let n_params = n_kept * header.dim + n_kept;
    if bytes.len() != body + 4 * n_params {
        return Err(Error::format(
            body as u64,
            format!(
                "expected {} parameter bytes, found {}",
                4 * n_params,
                bytes.len() - body
            ),
        ));
    }
    let params: Vec<f64> = bytes[body..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let mut model = ProbeModel::zeros(
        header.layer,
        header.kind,
        header.dim,
        header.n_labels,
        header.kept.clone(),
        &header.atom_index_hash,
    )?;
    if header.fill.len() != header.n_labels {
        return Err(Error::format(
            8,
            "fill vector length does not match label count",
        ));
    }
    model.fill = header.fill.clone();
    model.w.copy_from_slice(&params[..n_kept * header.dim]);
    model.b.copy_from_slice(&params[n_kept * header.dim..]);
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::format(body as u64, "non-finite probe parameter"));
    }
    Ok((header, model))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestLayer {
    pub layer: usize,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestLayers {
    pub object: BestLayer,
    pub action: BestLayer,
    pub config_hash: String,
}

/// Layer with the highest mean per-predicate accuracy; ties go to the
/// lower layer.
pub fn best_layer(reports: &[EvalReport], kind: StateKind) -> Option<BestLayer> {
    let mut best: Option<BestLayer> = None;
    let mut rs: Vec<&EvalReport> = reports.iter().filter(|r| r.kind == kind).collect();
    rs.sort_by_key(|r| r.layer);
    for r in rs {
        let m = r.mean_accuracy();
        if best.is_none_or(|b| m > b.mean_accuracy) {
            best = Some(BestLayer {
                layer: r.layer,
                mean_accuracy: m,
            });
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub table: HeatmapTable,
    /// Object and action report per layer, ascending by layer.
    pub reports: Vec<EvalReport>,
    pub models: Vec<ProbeModel>,
    pub object_filter: LabelFilterReport,
    pub action_filter: LabelFilterReport,
    pub best: BestLayers,
    pub train_episodes: Vec<String>,
    pub test_episodes: Vec<String>,
}

struct LayerResult {
    reports: [EvalReport; 2],
    models: [ProbeModel; 2],
    filters: [LabelFilterReport; 2],
    split: (Vec<String>, Vec<String>),
}

fn run_layer(
    labels: &[EpisodeLabels],
    idx: &AtomIndex,
    source: &dyn LayerSource,
    layer: usize,
    split_cfg: &SplitConfig,
    train_cfg: &TrainConfig,
) -> Result<LayerResult> {
    let acts = source.load(layer)?;
    let hash = idx.hash();
    let mut out = Vec::new();
    for kind in [StateKind::Object, StateKind::Action] {
        let ds = assemble_dataset(labels, &acts, layer, kind, &hash)?;
        let (train, test) = split_by_episode(&ds, split_cfg)?;
        let (_, filter) = filter_labels(&train)?;
        let model = train_probe(&train, &filter.kept, train_cfg)?;
        let report = evaluate(&model, &test, idx)?;
        let split = (
            train.episode_ids().into_iter().map(String::from).collect(),
            test.episode_ids().into_iter().map(String::from).collect(),
        );
        out.push((report, model, filter, split));
    }
    let (ra, ma, fa, _) = out.pop().unwrap();
    let (ro, mo, fo, split) = out.pop().unwrap();
    Ok(LayerResult {
        reports: [ro, ra],
        models: [mo, ma],
        filters: [fo, fa],
        split,
    })
}

/// Trains one object-state and one action-state probe per layer on a
/// shared episode split, evaluates them and builds the heatmap. When
/// `probe_dir` is set, every probe is written there.
pub fn sweep_layers(
    labels: &[EpisodeLabels],
    idx: &AtomIndex,
    source: &dyn LayerSource,
    split_cfg: &SplitConfig,
    train_cfg: &TrainConfig,
    probe_dir: Option<&Path>,
    config_hash: &str,
) -> Result<SweepOutput> {
    if source.atom_index_hash() != idx.hash() {
        return Err(Error::Assembly(format!(
            "activation source was built for atom index {}, schema is {}",
            source.atom_index_hash(),
            idx.hash()
        )));
    }
    let n = source.num_layers();
    if n == 0 {
        return Err(Error::Config("no layers to sweep".into()));
    }
    if let Some(dir) = probe_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let results: Vec<LayerResult> = (0..n)
        .into_par_iter()
        .map(|layer| {
            let r = run_layer(labels, idx, source, layer, split_cfg, train_cfg)
                .map_err(|e| e.at_layer(layer))?;
            if let Some(dir) = probe_dir {
                for m in &r.models {
                    write_probe(&dir.join(probe_file_name(layer, m.kind)), m, config_hash)
                        .map_err(|e| e.at_layer(layer))?;
                }
            }
            tracing::debug!(layer, "probes trained");
            Ok(r)
        })
        .collect::<Result<_>>()?;

    let first = &results[0];
    let (object_filter, action_filter) = (first.filters[0].clone(), first.filters[1].clone());
    let (train_episodes, test_episodes) = first.split.clone();
    let mut reports = Vec::with_capacity(2 * n);
    let mut models = Vec::with_capacity(2 * n);
    for r in results {
        reports.extend(r.reports);
        models.extend(r.models);
    }
    let table = HeatmapTable::from_reports(&reports);
    let best = BestLayers {
        object: best_layer(&reports, StateKind::Object).unwrap(),
        action: best_layer(&reports, StateKind::Action).unwrap(),
        config_hash: config_hash.to_string(),
    };
    Ok(SweepOutput {
        table,
        reports,
        models,
        object_filter,
        action_filter,
        best,
        train_episodes,
        test_episodes,
    })
}
