//! The `vlaprobe` command line.
//!
//! Every subcommand reads and writes under one output directory:
//!
//! ```text
//! <out>/episodes/*.epi, manifest.json     gen-episodes
//! <out>/activations.avt(.json)            gen-activations
//! <out>/datasets/layerLL_<kind>.pds       build-dataset
//! <out>/probes/*.prb, best_layers.json    train, sweep
//! <out>/sweep/reports.json, heatmap.*     sweep, export-heatmap
//! ```
//!
//! Exit codes: 0 success, 1 pipeline failure, 2 usage or configuration
//! error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::embeddings::{
    synth_encoder, LayerSpec, SyntheticEncoderConfig, TraceEpisode, TraceMeta, TraceWriter,
};
use crate::probe::{
    assemble_from_trace, evaluate, export_heatmap, filter_labels, label_episodes, probe_file_name,
    split_by_episode, sweep_layers, train_probe, write_dataset, write_probe, EvalReport,
    HeatmapFormat, HeatmapTable, SplitConfig, TraceSource, TrainConfig,
};
use crate::schema::{AtomIndex, StateKind};
use crate::service::{server, ProbeSet, ServiceConfig, ServiceContext, SourceSpec};
use crate::world::{
    collect_episodes, default_scene, read_episode, write_episode, Episode, RenderConfig,
    SceneConfig,
};
use crate::{sha256_hex, Error, Result};

/// Experiment settings. Loaded from `--config` and overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drives episode seeds, the encoder, the split and training.
    pub seed: u64,
    /// Scene JSON; the built-in scene when absent.
    pub scene: Option<PathBuf>,
    pub tasks: usize,
    pub per_task: usize,
    pub max_steps: usize,
    pub layers: LayerSpec,
    pub noise_std: f64,
    /// Per-layer gains; layer 0 at 0 and the rest at 1 when absent.
    pub layer_gains: Option<Vec<f64>>,
    pub test_fraction: f64,
    pub train: TrainConfig,
    pub render: RenderConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scene: None,
            tasks: 10,
            per_task: 5,
            max_steps: 400,
            layers: LayerSpec::default(),
            noise_std: 0.5,
            layer_gains: None,
            test_fraction: 0.2,
            train: TrainConfig::default(),
            render: RenderConfig::default(),
            output_dir: PathBuf::from("vlaprobe-out"),
        }
    }
}

/// Resolved configuration plus its hash.
pub struct Run {
    pub cfg: RunConfig,
    pub scene: SceneConfig,
    pub idx: AtomIndex,
    pub config_hash: String,
}

impl Run {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let scene = match &cfg.scene {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("scene: {e}")))?
            }
            None => default_scene(),
        };
        if cfg.tasks == 0 || cfg.tasks > scene.tasks.len() {
            return Err(Error::Config(format!(
                "--tasks must lie in 1..={}",
                scene.tasks.len()
            )));
        }
        if cfg.per_task == 0 || cfg.max_steps == 0 {
            return Err(Error::Config(
                "per_task and max_steps must be at least 1".into(),
            ));
        }
        if cfg.layers.num_layers == 0 || cfg.layers.dim == 0 {
            return Err(Error::Config(
                "layers need num_layers >= 1 and dim >= 1".into(),
            ));
        }
        let idx = AtomIndex::build(&scene.roster)?;
        let hashed = json!({
            "seed": cfg.seed,
            "scene": scene.hash(),
            "tasks": cfg.tasks,
            "per_task": cfg.per_task,
            "max_steps": cfg.max_steps,
            "layers": cfg.layers,
            "encoder": Self::encoder_cfg(&cfg),
            "split": Self::split_cfg(&cfg),
            "train": Self::train_cfg(&cfg),
            "render": cfg.render,
        });
        let config_hash = sha256_hex(&serde_json::to_vec(&hashed)?);
        Ok(Self {
            cfg,
            scene,
            idx,
            config_hash,
        })
    }

    fn encoder_cfg(cfg: &RunConfig) -> SyntheticEncoderConfig {
        let mut e = SyntheticEncoderConfig::default_for(&cfg.layers, cfg.seed);
        e.noise_std = cfg.noise_std;
        if let Some(g) = &cfg.layer_gains {
            e.layer_gains = g.clone();
        }
        e
    }

    fn split_cfg(cfg: &RunConfig) -> SplitConfig {
        SplitConfig {
            test_fraction: cfg.test_fraction,
            seed: cfg.seed,
        }
    }

    fn train_cfg(cfg: &RunConfig) -> TrainConfig {
        TrainConfig {
            seed: cfg.seed,
            ..cfg.train
        }
    }

    pub fn encoder(&self) -> Result<SyntheticEncoderConfig> {
        let e = Self::encoder_cfg(&self.cfg);
        if e.layer_gains.len() != self.cfg.layers.num_layers {
            return Err(Error::Config(format!(
                "layer_gains has {} entries for {} layers",
                e.layer_gains.len(),
                self.cfg.layers.num_layers
            )));
        }
        Ok(e)
    }

    pub fn split(&self) -> SplitConfig {
        Self::split_cfg(&self.cfg)
    }

    pub fn train(&self) -> TrainConfig {
        Self::train_cfg(&self.cfg)
    }

    pub fn out(&self) -> &Path {
        &self.cfg.output_dir
    }

    pub fn episodes_dir(&self) -> PathBuf {
        self.out().join("episodes")
    }

    pub fn trace_path(&self) -> PathBuf {
        self.out().join("activations.avt")
    }

    pub fn probes_dir(&self) -> PathBuf {
        self.out().join("probes")
    }

    pub fn sweep_dir(&self) -> PathBuf {
        self.out().join("sweep")
    }

    /// Episodes under `<out>/episodes`, sorted by id, checked against the
    /// roster.
    pub fn load_episodes(&self) -> Result<Vec<Episode>> {
        let dir = self.episodes_dir();
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "epi"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::Pipeline(format!("no episodes in {}", dir.display())));
        }
        let roster = self.scene.roster.hash();
        paths
            .iter()
            .map(|p| {
                let (h, ep) = read_episode(p)?;
                if h.roster_hash != roster {
                    return Err(Error::Pipeline(format!(
                        "{} was recorded with a different roster",
                        p.display()
                    )));
                }
                Ok(ep)
            })
            .collect()
    }
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn file_sha(path: &Path) -> Result<String> {
    Ok(sha256_hex(
        &std::fs::read(path).map_err(|e| Error::io(path, e))?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Object,
    Action,
}

impl From<KindArg> for StateKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Object => StateKind::Object,
            KindArg::Action => StateKind::Action,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(
    name = "vlaprobe",
    version,
    about = "Probe policy activations for symbolic object and action states"
)]
pub struct Cli {
    /// JSON run configuration; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root shared by all subcommands.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub layers: Option<usize>,
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    #[arg(long, global = true)]
    pub noise_std: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Print a machine-readable summary on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roll out the scripted policy and write episode files.
    GenEpisodes {
        #[arg(long)]
        tasks: Option<usize>,
        #[arg(long)]
        per_task: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Encode every recorded frame into a synthetic activation trace.
    GenActivations,
    /// Pair one layer's activations with ground-truth labels.
    BuildDataset {
        #[arg(long)]
        layer: usize,
        #[arg(long, value_enum)]
        kind: KindArg,
    },
    /// Train and evaluate one probe.
    Train {
        #[arg(long)]
        layer: usize,
        #[arg(long, value_enum)]
        kind: KindArg,
    },
    /// Train both probes on every layer and build the heatmap.
    Sweep,
    /// Write the heatmap from the last sweep's reports.
    ExportHeatmap {
        #[arg(long, value_enum)]
        format: FormatArg,
        /// Destination; `<out>/sweep/heatmap.<format>` by default.
        #[arg(long)]
        to: Option<PathBuf>,
    },
    /// Serve the live monitor over WebSocket.
    Serve {
        #[arg(long, default_value_t = server::DEFAULT_PORT)]
        port: u16,
        /// Probe directory with best_layers.json; `<out>/probes` by default.
        #[arg(long)]
        probes: Option<PathBuf>,
        /// `synthetic` or `trace:<path>`.
        #[arg(long, default_value = "synthetic")]
        source: String,
        #[arg(long, default_value_t = 5.0)]
        rate_hz: f64,
        #[arg(long)]
        max_steps: Option<usize>,
    },
}

impl Cli {
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(l) = self.layers {
            cfg.layers.num_layers = l;
        }
        if let Some(d) = self.dim {
            cfg.layers.dim = d;
        }
        if let Some(n) = self.noise_std {
            cfg.noise_std = n;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        match &self.command {
            Command::GenEpisodes {
                tasks,
                per_task,
                max_steps,
            } => {
                cfg.tasks = tasks.unwrap_or(cfg.tasks);
                cfg.per_task = per_task.unwrap_or(cfg.per_task);
                cfg.max_steps = max_steps.unwrap_or(cfg.max_steps);
            }
            Command::Serve { max_steps, .. } => cfg.max_steps = max_steps.unwrap_or(cfg.max_steps),
            _ => {}
        }
        Ok(cfg)
    }
}

fn gen_episodes(run: &Run) -> Result<serde_json::Value> {
    let tasks: Vec<_> = run
        .scene
        .task_specs()
        .into_iter()
        .take(run.cfg.tasks)
        .collect();
    let episodes = collect_episodes(
        &run.scene,
        &tasks,
        run.cfg.per_task,
        run.cfg.seed,
        run.cfg.max_steps,
        &run.cfg.render,
    )?;
    let dir = run.episodes_dir();
    mkdir(&dir)?;
    let roster = run.scene.roster.hash();
    let mut entries = Vec::new();
    for ep in &episodes {
        let name = format!("{}.epi", ep.id);
        let p = dir.join(&name);
        write_episode(&p, ep, &roster, &run.config_hash)?;
        entries.push(json!({
            "file": name,
            "id": ep.id,
            "instruction": ep.task.instruction,
            "seed": ep.seed,
            "frames": ep.frames.len(),
            "success": ep.success,
            "sha256": file_sha(&p)?,
        }));
    }
    let manifest = json!({
        "config_hash": run.config_hash,
        "roster_hash": roster,
        "episodes": entries,
    });
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(json!({
        "episodes": episodes.len(),
        "frames": episodes.iter().map(|e| e.frames.len()).sum::<usize>(),
        "dir": dir,
    }))
}

fn gen_activations(run: &Run) -> Result<serde_json::Value> {
    let episodes = run.load_episodes()?;
    let labels = label_episodes(&run.scene.roster, &episodes, &run.idx)?;
    let enc_cfg = run.encoder()?;
    let enc = synth_encoder(&enc_cfg, run.idx.n_obj() + run.idx.n_act())?;
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
        atom_index_hash: run.idx.hash(),
        config_hash: run.config_hash.clone(),
        producer: json!({ "synthetic_encoder": enc_cfg }),
    };
    let path = run.trace_path();
    mkdir(run.out())?;
    let mut w = TraceWriter::create(&path, run.cfg.layers, meta)?;
    let mut order: Vec<&crate::probe::EpisodeLabels> = labels.iter().collect();
    order.sort_by(|a, b| a.episode_id.cmp(&b.episode_id));
    for ep in order {
        for t in 0..ep.frames() {
            for layer in 0..run.cfg.layers.num_layers {
                let rec = enc.gen_activation(
                    &ep.episode_id,
                    t as u64,
                    &ep.object[t],
                    &ep.action[t],
                    layer,
                )?;
                w.write(&rec)?;
            }
        }
    }
    let n = w.finish()?;
    Ok(json!({ "records": n, "trace": path }))
}

fn build_dataset(run: &Run, layer: usize, kind: StateKind) -> Result<serde_json::Value> {
    let episodes = run.load_episodes()?;
    let labels = label_episodes(&run.scene.roster, &episodes, &run.idx)?;
    let ds = assemble_from_trace(&labels, &run.trace_path(), &run.idx, layer, kind)?;
    let dir = run.out().join("datasets");
    mkdir(&dir)?;
    let p = dir.join(format!("layer{layer:02}_{}.pds", kind.as_str()));
    write_dataset(&p, &ds, &run.config_hash)?;
    let (train, test) = split_by_episode(&ds, &run.split())?;
    let (_, filter) = filter_labels(&train)?;
    Ok(json!({
        "dataset": p,
        "pairs": ds.len(),
        "dim": ds.dim,
        "labels": ds.n_labels,
        "train_episodes": train.episode_ids(),
        "test_episodes": test.episode_ids(),
        "kept_labels": filter.kept.len(),
    }))
}

fn atom_name(idx: &AtomIndex, kind: StateKind, pos: usize) -> String {
    idx.atoms(kind)[pos].to_string()
}

fn train_one(run: &Run, layer: usize, kind: StateKind) -> Result<serde_json::Value> {
    let episodes = run.load_episodes()?;
    let labels = label_episodes(&run.scene.roster, &episodes, &run.idx)?;
    let ds = assemble_from_trace(&labels, &run.trace_path(), &run.idx, layer, kind)?;
    let (train, test) = split_by_episode(&ds, &run.split())?;
    let (_, filter) = filter_labels(&train)?;
    let model = train_probe(&train, &filter.kept, &run.train())?;
    let report = evaluate(&model, &test, &run.idx)?;
    let dir = run.probes_dir();
    mkdir(&dir)?;
    let p = dir.join(probe_file_name(layer, kind));
    write_probe(&p, &model, &run.config_hash)?;
    Ok(json!({
        "probe": p,
        "kept_labels": filter.kept.len(),
        "dropped": filter.dropped.iter().map(|d| json!({
            "atom": atom_name(&run.idx, kind, d.position),
            "frequency": d.frequency,
        })).collect::<Vec<_>>(),
        "mean_accuracy": report.mean_accuracy(),
        "per_predicate": report.per_predicate,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
struct ReportsFile {
    config_hash: String,
    reports: Vec<EvalReport>,
}

fn sweep(run: &Run) -> Result<serde_json::Value> {
    let episodes = run.load_episodes()?;
    let labels = label_episodes(&run.scene.roster, &episodes, &run.idx)?;
    let source = TraceSource::open(&run.trace_path())?;
    let probes = run.probes_dir();
    let out = sweep_layers(
        &labels,
        &run.idx,
        &source,
        &run.split(),
        &run.train(),
        Some(&probes),
        &run.config_hash,
    )?;
    write_json(&probes.join("best_layers.json"), &out.best)?;
    let dir = run.sweep_dir();
    mkdir(&dir)?;
    write_json(
        &dir.join("reports.json"),
        &ReportsFile {
            config_hash: run.config_hash.clone(),
            reports: out.reports.clone(),
        },
    )?;
    let dropped = |kind, f: &crate::probe::LabelFilterReport| {
        f.dropped
            .iter()
            .map(|d| json!({ "atom": atom_name(&run.idx, kind, d.position), "frequency": d.frequency }))
            .collect::<Vec<_>>()
    };
    write_json(
        &dir.join("label_filter.json"),
        &json!({
            "config_hash": run.config_hash,
            "low": out.object_filter.low,
            "high": out.object_filter.high,
            "train_episodes": out.train_episodes,
            "test_episodes": out.test_episodes,
            "object_dropped": dropped(StateKind::Object, &out.object_filter),
            "action_dropped": dropped(StateKind::Action, &out.action_filter),
        }),
    )?;
    export_heatmap(&out.table, &dir.join("heatmap.csv"), HeatmapFormat::Csv)?;
    export_heatmap(&out.table, &dir.join("heatmap.json"), HeatmapFormat::Json)?;
    let mut files = Vec::new();
    for name in [
        "heatmap.csv",
        "heatmap.json",
        "reports.json",
        "label_filter.json",
    ] {
        files.push(json!({ "file": name, "sha256": file_sha(&dir.join(name))? }));
    }
    write_json(
        &dir.join("manifest.json"),
        &json!({ "config_hash": run.config_hash, "files": files }),
    )?;
    Ok(json!({
        "probes": out.models.len(),
        "rows": out.table.rows.len(),
        "columns": out.table.columns,
        "best": out.best,
        "sweep_dir": dir,
    }))
}

fn export(run: &Run, format: FormatArg, to: Option<PathBuf>) -> Result<serde_json::Value> {
    let src = run.sweep_dir().join("reports.json");
    let text = std::fs::read_to_string(&src).map_err(|e| Error::io(&src, e))?;
    let file: ReportsFile = serde_json::from_str(&text)?;
    let table = HeatmapTable::from_reports(&file.reports);
    let (fmt, ext) = match format {
        FormatArg::Csv => (HeatmapFormat::Csv, "csv"),
        FormatArg::Json => (HeatmapFormat::Json, "json"),
    };
    let to = to.unwrap_or_else(|| run.sweep_dir().join(format!("heatmap.{ext}")));
    export_heatmap(&table, &to, fmt)?;
    Ok(json!({ "heatmap": to, "rows": table.rows.len(), "config_hash": file.config_hash }))
}

fn serve(
    run: &Run,
    port: u16,
    probes: Option<PathBuf>,
    source: &str,
    rate_hz: f64,
) -> Result<serde_json::Value> {
    let source = match source {
        "synthetic" => SourceSpec::Synthetic(run.encoder()?),
        s => match s.strip_prefix("trace:") {
            Some(p) if !p.is_empty() => SourceSpec::Trace(PathBuf::from(p)),
            _ => {
                return Err(Error::Config(format!(
                    "--source must be `synthetic` or `trace:<path>`, got `{s}`"
                )))
            }
        },
    };
    let probes = ProbeSet::load(&probes.unwrap_or_else(|| run.probes_dir()))?;
    let config = ServiceConfig {
        rate_hz,
        max_steps: run.cfg.max_steps,
        seed: run.cfg.seed,
        render: run.cfg.render,
    };
    let ctx = Arc::new(ServiceContext::new(
        run.scene.clone(),
        probes,
        source,
        config,
    )?);
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::io("<runtime>", e))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(("0.0.0.0", port))
            .await
            .map_err(|e| Error::io(format!("0.0.0.0:{port}"), e))?;
        server::serve(ctx, listener).await
    })?;
    Ok(json!({}))
}

fn dispatch(cli: &Cli) -> Result<serde_json::Value> {
    let run = Run::new(cli.run_config()?)?;
    let summary = match &cli.command {
        Command::GenEpisodes { .. } => gen_episodes(&run)?,
        Command::GenActivations => gen_activations(&run)?,
        Command::BuildDataset { layer, kind } => build_dataset(&run, *layer, (*kind).into())?,
        Command::Train { layer, kind } => train_one(&run, *layer, (*kind).into())?,
        Command::Sweep => sweep(&run)?,
        Command::ExportHeatmap { format, to } => export(&run, *format, to.clone())?,
        Command::Serve {
            port,
            probes,
            source,
            rate_hz,
            ..
        } => serve(&run, *port, probes.clone(), source, *rate_hz)?,
    };
    Ok(json!({
        "ok": true,
        "config_hash": run.config_hash,
        "seed": run.cfg.seed,
        "result": summary,
    }))
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Layer { source, .. } => exit_code(source),
        _ => 1,
    }
}

// A closed pipe on stdout is not worth a panic.
fn emit(line: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(summary) => {
            if cli.json {
                emit(&summary.to_string());
            } else {
                emit(&serde_json::to_string_pretty(&summary["result"]).unwrap_or_default());
            }
            0
        }
        Err(e) => {
            let code = exit_code(&e);
            if cli.json {
                emit(
                    &json!({ "ok": false, "error": e.to_string(), "exit_code": code }).to_string(),
                );
            }
            eprintln!("error: {e}");
            code
        }
    }
}
