//! The live monitor: a session steps the simulator under the scripted
//! policy, produces activations, runs the probes, updates beliefs and emits
//! JSON messages. [`server`] puts sessions behind a WebSocket.

mod protocol;
pub mod server;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use base64::Engine;

use crate::belief::{check_consistency, default_rules, BeliefStore, ConsistencyRule};
use crate::embeddings::{noise_seed, synth_encoder, Encoder, SyntheticEncoderConfig, TraceReader};
use crate::probe::{predict_full, read_probe, BestLayers, ProbeModel};
use crate::schema::{detect_state, AtomIndex, StateKind, StateVector};
use crate::world::{
    apply_action, goal_reached, init_scene, render, scripted_action, RenderConfig, SceneConfig,
    TaskSpec, WorldState,
};
use crate::{Error, Result};

pub use protocol::{
    AtomNames, ClientMessage, ErrorCode, EventView, ServerMessage, StepMessage, TaskInfo,
    PROTOCOL_VERSION,
};

/// Object-state and action-state probes served together.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    pub object: ProbeModel,
    pub action: ProbeModel,
}

impl ProbeSet {
    pub fn new(object: ProbeModel, action: ProbeModel) -> Result<Self> {
        if object.kind != StateKind::Object || action.kind != StateKind::Action {
            return Err(Error::Config(
                "probe set needs one object and one action probe".into(),
            ));
        }
        Ok(Self { object, action })
    }

    /// Loads the probes named by `best_layers.json` in `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join("best_layers.json");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let best: BestLayers = serde_json::from_str(&text)?;
        Self::load_layers(dir, best.object.layer, best.action.layer)
    }

    pub fn load_layers(dir: &Path, object_layer: usize, action_layer: usize) -> Result<Self> {
        use crate::probe::probe_file_name;
        let (_, o) = read_probe(&dir.join(probe_file_name(object_layer, StateKind::Object)))?;
        let (_, a) = read_probe(&dir.join(probe_file_name(action_layer, StateKind::Action)))?;
        Self::new(o, a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    Synthetic(SyntheticEncoderConfig),
    /// Replays the recorded episode whose instruction matches the task.
    Trace(PathBuf),
}

enum Source {
    Synthetic(Encoder),
    Trace(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub rate_hz: f64,
    pub max_steps: usize,
    /// Scene seed for synthetic runs.
    pub seed: u64,
    pub render: RenderConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            rate_hz: 5.0,
            max_steps: 400,
            seed: 0,
            render: RenderConfig::default(),
        }
    }
}

/// Everything sessions share read-only.
pub struct ServiceContext {
    pub scene: SceneConfig,
    pub idx: AtomIndex,
    pub probes: ProbeSet,
    pub rules: Vec<ConsistencyRule>,
    pub config: ServiceConfig,
    source: Source,
}

impl ServiceContext {
    pub fn new(
        scene: SceneConfig,
        probes: ProbeSet,
        source: SourceSpec,
        config: ServiceConfig,
    ) -> Result<Self> {
        let idx = AtomIndex::build(&scene.roster)?;
        if !(config.rate_hz > 0.0 && config.rate_hz.is_finite()) {
            return Err(Error::Config("rate_hz must be positive".into()));
        }
        if config.max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        let source = match source {
            SourceSpec::Synthetic(cfg) => {
                Source::Synthetic(synth_encoder(&cfg, idx.n_obj() + idx.n_act())?)
            }
            SourceSpec::Trace(p) => {
                TraceReader::open(&p)?;
                Source::Trace(p)
            }
        };
        Ok(Self {
            scene,
            idx,
            probes,
            rules: default_rules(),
            config,
            source,
        })
    }

    pub fn tasks(&self) -> Vec<TaskInfo> {
        self.scene
            .task_specs()
            .into_iter()
            .enumerate()
            .map(|(id, t)| TaskInfo {
                id,
                instruction: t.instruction,
            })
            .collect()
    }

    fn check_schema(&self) -> std::result::Result<(), String> {
        let h = self.idx.hash();
        for p in [&self.probes.object, &self.probes.action] {
            if p.atom_index_hash != h {
                return Err(format!(
                    "{} probe was trained for atom index {}, schema is {h}",
                    p.kind.as_str(),
                    p.atom_index_hash
                ));
            }
        }
        if self.probes.object.n_labels != self.idx.n_obj()
            || self.probes.action.n_labels != self.idx.n_act()
        {
            return Err("probe label counts do not match the schema".into());
        }
        match &self.source {
            Source::Synthetic(enc) => {
                if enc.dim() != self.probes.object.dim || enc.dim() != self.probes.action.dim {
                    return Err(format!(
                        "encoder width {} does not match probe width {}/{}",
                        enc.dim(),
                        self.probes.object.dim,
                        self.probes.action.dim
                    ));
                }
            }
            Source::Trace(p) => {
                let r = TraceReader::open(p).map_err(|e| e.to_string())?;
                let hd = r.header();
                if hd.meta.atom_index_hash != h {
                    return Err(format!(
                        "trace atom index {} does not match schema {h}",
                        hd.meta.atom_index_hash
                    ));
                }
                if hd.layers.dim != self.probes.object.dim
                    || hd.layers.dim != self.probes.action.dim
                {
                    return Err("trace width does not match the probes".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Idle,
    Running,
    Complete,
    Error,
}

struct ActiveTask {
    task_id: usize,
    spec: TaskSpec,
    world: WorldState,
    noise_key: String,
    /// Replayed activations keyed by (layer, t).
    trace: Option<HashMap<(usize, u64), Vec<f32>>>,
}

/// One client's task loop state. Not shared between sessions.
pub struct Session {
    id: String,
    ctx: Arc<ServiceContext>,
    status: Status,
    task: Option<ActiveTask>,
    history: Vec<String>,
    store: BeliefStore,
    runs: u64,
}

fn out(msg: &ServerMessage) -> String {
    serde_json::to_string(msg).expect("server messages serialize")
}

fn error(code: ErrorCode, message: impl Into<String>) -> String {
    out(&ServerMessage::Error {
        code,
        message: message.into(),
    })
}

impl Session {
    pub fn new(id: &str, ctx: Arc<ServiceContext>) -> Self {
        let store = BeliefStore::new(&ctx.idx);
        Self {
            id: id.to_string(),
            ctx,
            status: Status::Idle,
            task: None,
            history: Vec::new(),
            store,
            runs: 0,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn is_running(&self) -> bool {
        self.status == Status::Running
    }

    /// Serialized step messages of the current or last task.
    pub fn history(&self) -> &[String] {
        &self.history
    }

    pub fn store(&self) -> &BeliefStore {
        &self.store
    }

    pub fn hello(&self) -> String {
        out(&ServerMessage::Hello {
            session_id: self.id.clone(),
            protocol_version: PROTOCOL_VERSION,
            status: self.status,
            history_len: self.history.len(),
        })
    }

    /// Replies to one inbound text frame.
    pub fn handle_message(&mut self, text: &str) -> Vec<String> {
        let msg: ClientMessage = match serde_json::from_str(text) {
            Ok(m) => m,
            Err(e) => return vec![error(ErrorCode::BadMessage, e.to_string())],
        };
        match msg {
            ClientMessage::ListTasks => vec![out(&ServerMessage::Tasks {
                tasks: self.ctx.tasks(),
            })],
            ClientMessage::StartTask { task_id } => self.start(task_id),
            ClientMessage::Stop => {
                self.status = Status::Idle;
                vec![out(&ServerMessage::Stopped {
                    total_steps: self.history.len(),
                })]
            }
            ClientMessage::GetStep { index } => match self.history.get(index) {
                Some(s) => vec![s.clone()],
                None => vec![error(
                    ErrorCode::BadIndex,
                    format!(
                        "step {index} not in history of {} steps",
                        self.history.len()
                    ),
                )],
            },
        }
    }

    fn start(&mut self, task_id: usize) -> Vec<String> {
        if self.status == Status::Running {
            return vec![error(ErrorCode::Busy, "a task is already running")];
        }
        let tasks = self.ctx.scene.task_specs();
        let Some(spec) = tasks.get(task_id).cloned() else {
            return vec![error(
                ErrorCode::UnknownTask,
                format!("no task {task_id}; {} tasks configured", tasks.len()),
            )];
        };
        self.history.clear();
        self.store = BeliefStore::new(&self.ctx.idx);
        self.task = None;
        if let Err(m) = self.ctx.check_schema() {
            self.status = Status::Error;
            return vec![error(ErrorCode::SchemaMismatch, m)];
        }
        match self.prepare(task_id, spec) {
            Ok(task) => {
                let names = AtomNames {
                    object: self.ctx.idx.names(StateKind::Object),
                    action: self.ctx.idx.names(StateKind::Action),
                };
                let reply = ServerMessage::TaskStarted {
                    task_id,
                    instruction: task.spec.instruction.clone(),
                    atom_names: names,
                    object_layer: self.ctx.probes.object.layer,
                    action_layer: self.ctx.probes.action.layer,
                    max_steps: self.ctx.config.max_steps,
                };
                self.task = Some(task);
                self.status = Status::Running;
                self.runs += 1;
                vec![out(&reply)]
            }
            Err((code, e)) => {
                self.status = Status::Error;
                vec![error(code, e.to_string())]
            }
        }
    }

    fn prepare(
        &self,
        task_id: usize,
        spec: TaskSpec,
    ) -> std::result::Result<ActiveTask, (ErrorCode, Error)> {
        let internal = |e| (ErrorCode::Internal, e);
        let (seed, trace) = match &self.ctx.source {
            Source::Synthetic(_) => (self.ctx.config.seed, None),
            Source::Trace(path) => {
                let reader = TraceReader::open(path).map_err(internal)?;
                let Some(ep) = reader
                    .header()
                    .meta
                    .episodes
                    .iter()
                    .find(|e| e.instruction == spec.instruction)
                    .cloned()
                else {
                    return Err((
                        ErrorCode::NoTraceEpisode,
                        Error::Config(format!("trace has no episode for `{}`", spec.instruction)),
                    ));
                };
                let mut map = HashMap::new();
                for layer in [self.ctx.probes.object.layer, self.ctx.probes.action.layer] {
                    if map.keys().any(|(l, _)| *l == layer) {
                        continue;
                    }
                    let vecs = TraceReader::open(path)
                        .map_err(internal)?
                        .layer_vectors(layer)
                        .map_err(internal)?;
                    for ((id, t), v) in vecs {
                        if id == ep.id {
                            map.insert((layer, t), v);
                        }
                    }
                }
                (ep.seed, Some(map))
            }
        };
        let world = init_scene(&self.ctx.scene, &spec, seed).map_err(internal)?;
        Ok(ActiveTask {
            task_id,
            spec,
            world,
            noise_key: format!("{}_run{}_task{task_id:02}", self.id, self.runs),
            trace,
        })
    }

    fn activation(&self, task: &ActiveTask, layer: usize, t: u64) -> Result<Vec<f32>> {
        match &self.ctx.source {
            Source::Synthetic(enc) => {
                let (o, a) = detect_state(
                    &self.ctx.scene.roster,
                    &task.world,
                    &task.spec,
                    &self.ctx.idx,
                )?;
                enc.activation(&o, &a, layer, noise_seed(&task.noise_key, t))
            }
            Source::Trace(_) => task
                .trace
                .as_ref()
                .and_then(|m| m.get(&(layer, t)))
                .cloned()
                .ok_or_else(|| {
                    Error::Pipeline(format!("trace has no layer {layer} vector at t={t}"))
                }),
        }
    }

    fn step(&mut self) -> Result<Vec<String>> {
        let task = self.task.as_ref().expect("running session has a task");
        let t = self.history.len() as u64;
        let img = render(
            &self.ctx.scene.roster,
            &task.world,
            &self.ctx.scene.workspace,
            &self.ctx.config.render,
        );
        let png = img.to_png()?;
        let p = &self.ctx.probes;
        let obj = StateVector {
            kind: StateKind::Object,
            bits: predict_full(&p.object, &self.activation(task, p.object.layer, t)?)?,
        };
        let act = StateVector {
            kind: StateKind::Action,
            bits: predict_full(&p.action, &self.activation(task, p.action.layer, t)?)?,
        };
        let events = self.store.update(&obj, &act, t)?;
        let violations = check_consistency(&self.store, &self.ctx.rules);
        let step = StepMessage {
            timestep: t,
            image_b64: base64::engine::general_purpose::STANDARD.encode(&png),
            object_state: obj.bits,
            action_state: act.bits,
            atom_names: (t == 0).then(|| AtomNames {
                object: self.ctx.idx.names(StateKind::Object),
                action: self.ctx.idx.names(StateKind::Action),
            }),
            events: events.into_iter().map(EventView::from).collect(),
            violations,
        };
        let msg = out(&ServerMessage::Step(step));
        self.history.push(msg.clone());
        let mut msgs = vec![msg];

        let task = self.task.as_mut().unwrap();
        let success = goal_reached(&self.ctx.scene, &task.world, &task.spec);
        if success || self.history.len() >= self.ctx.config.max_steps {
            self.status = Status::Complete;
            msgs.push(out(&ServerMessage::TaskComplete {
                task_id: task.task_id,
                total_steps: self.history.len(),
                success,
            }));
        } else {
            let a = scripted_action(&self.ctx.scene, &task.world, &task.spec);
            task.world = apply_action(&self.ctx.scene, &task.world, &a);
        }
        Ok(msgs)
    }

    /// Advances a running task by one step. Returns nothing when idle.
    pub fn tick(&mut self) -> Vec<String> {
        if self.status != Status::Running {
            return Vec::new();
        }
        match self.step() {
            Ok(m) => m,
            Err(e) => {
                self.status = Status::Error;
                vec![error(ErrorCode::Internal, e.to_string())]
            }
        }
    }

    /// Runs the current task to completion without pacing.
    pub fn run_to_end(&mut self) -> Vec<String> {
        let mut all = Vec::new();
        while self.is_running() {
            all.extend(self.tick());
        }
        all
    }
}
