#![allow(dead_code)]

use std::sync::{Arc, OnceLock};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vlaprobe::embeddings::{LayerSpec, SyntheticEncoderConfig};
use vlaprobe::probe::{label_episodes, EpisodeLabels, ProbeModel};
use vlaprobe::schema::{AtomIndex, GroundAtom, Predicate, StateKind, StateVector};
use vlaprobe::service::{ProbeSet, ServiceConfig, ServiceContext, SourceSpec};
use vlaprobe::world::{
    collect_episodes, default_scene, init_scene, Episode, Flag, RenderConfig, SceneConfig,
    TaskSpec, WorldState,
};

pub const SMALL_RENDER: RenderConfig = RenderConfig {
    width: 32,
    height: 32,
};

pub fn scene() -> &'static SceneConfig {
    static S: OnceLock<SceneConfig> = OnceLock::new();
    S.get_or_init(default_scene)
}

pub fn idx() -> &'static AtomIndex {
    static I: OnceLock<AtomIndex> = OnceLock::new();
    I.get_or_init(|| AtomIndex::build(&scene().roster).unwrap())
}

/// The default 10 tasks x 5 episodes, small frames.
pub fn episodes() -> &'static [Episode] {
    static E: OnceLock<Vec<Episode>> = OnceLock::new();
    E.get_or_init(|| {
        collect_episodes(scene(), &scene().task_specs(), 5, 0, 400, &SMALL_RENDER).unwrap()
    })
}

pub fn labels() -> &'static [EpisodeLabels] {
    static L: OnceLock<Vec<EpisodeLabels>> = OnceLock::new();
    L.get_or_init(|| label_episodes(&scene().roster, episodes(), idx()).unwrap())
}

/// Service context with untrained probes (every atom predicted from bias 0,
/// so streamed bits are all 1 on kept positions).
pub fn service_ctx(rate_hz: f64, max_steps: usize) -> Arc<ServiceContext> {
    let scene = scene().clone();
    let idx = idx();
    let dim = 16;
    let mk = |kind, n| ProbeModel::zeros(1, kind, dim, n, (0..n).collect(), &idx.hash()).unwrap();
    let probes = ProbeSet::new(
        mk(StateKind::Object, idx.n_obj()),
        mk(StateKind::Action, idx.n_act()),
    )
    .unwrap();
    let enc = SyntheticEncoderConfig::default_for(&LayerSpec { num_layers: 2, dim }, 0);
    let config = ServiceConfig {
        rate_hz,
        max_steps,
        seed: 0,
        render: SMALL_RENDER,
    };
    Arc::new(ServiceContext::new(scene, probes, SourceSpec::Synthetic(enc), config).unwrap())
}

/// A scene with every pickupable object and the plate thrown to a random
/// pose. Poses are biased toward contact configurations (resting on the
/// table, stacked, inside a drawer) so every predicate takes both values.
pub fn random_world(rng: &mut ChaCha8Rng) -> (WorldState, TaskSpec) {
    let scene = scene();
    let tasks = scene.task_specs();
    let task = tasks[rng.random_range(0..tasks.len())].clone();
    let mut w = init_scene(scene, &task, rng.random()).unwrap();
    let roster = &scene.roster;
    let table = roster.table();
    let table_top = w.position(&table.id).unwrap()[2] + table.half_extents[2];
    let drawers: Vec<_> = roster
        .with_flag(Flag::Container)
        .map(|d| d.id.clone())
        .collect();
    for d in &drawers {
        w.drawer_open_frac
            .insert(d.clone(), rng.random_range(0.0..1.0));
    }
    w.stove_on = rng.random_bool(0.3);
    let movable: Vec<_> = roster
        .objects()
        .iter()
        .filter(|o| o.has(Flag::Pickupable) || o.id.starts_with("plate"))
        .cloned()
        .collect();
    for o in &movable {
        let hz = o.half_extents[2];
        let jitter = rng.random_range(-0.015..0.015);
        let p = match rng.random_range(0..10) {
            0..=2 => [
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
                table_top + hz + jitter,
            ],
            3..=5 => {
                let other = &movable[rng.random_range(0..movable.len())];
                let q = w.position(&other.id).unwrap();
                let h = other.half_extents;
                [
                    q[0] + rng.random_range(-1.2..1.2) * h[0],
                    q[1] + rng.random_range(-1.2..1.2) * h[1],
                    q[2] + h[2] + hz + jitter,
                ]
            }
            6 | 7 => {
                let d = roster
                    .get(&drawers[rng.random_range(0..drawers.len())])
                    .unwrap();
                let q = w.position(&d.id).unwrap();
                let h = d.half_extents;
                [
                    q[0] + rng.random_range(-1.2..1.2) * h[0],
                    q[1] + rng.random_range(-1.2..1.2) * h[1],
                    q[2] + rng.random_range(-1.2..1.2) * h[2],
                ]
            }
            _ => [
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(0.0..0.6),
            ],
        };
        w.poses.get_mut(&o.id).unwrap().position = p;
    }
    let pickup: Vec<_> = roster
        .with_flag(Flag::Pickupable)
        .map(|o| o.id.clone())
        .collect();
    w.attached = if rng.random_bool(0.3) {
        Some(pickup[rng.random_range(0..pickup.len())].clone())
    } else {
        None
    };
    (w, task)
}

/// Independent geometric re-evaluation of one atom from box corners and
/// bearing angles.
pub struct Oracle<'a> {
    pub world: &'a WorldState,
    pub task: &'a TaskSpec,
}

impl Oracle<'_> {
    const TAU: f64 = 0.02;
    const EPS: f64 = 0.01;

    fn corners(&self, id: &str) -> Vec<[f64; 3]> {
        let c = self.world.position(id).unwrap();
        let h = scene().roster.get(id).unwrap().half_extents;
        let mut out = Vec::with_capacity(8);
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    out.push([c[0] + sx * h[0], c[1] + sy * h[1], c[2] + sz * h[2]]);
                }
            }
        }
        out
    }

    fn range(&self, id: &str, axis: usize) -> (f64, f64) {
        let cs = self.corners(id);
        let lo = cs.iter().map(|c| c[axis]).fold(f64::INFINITY, f64::min);
        let hi = cs.iter().map(|c| c[axis]).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    fn inside(&self, a: &str, c: &str) -> bool {
        if a == c {
            return false;
        }
        let p = self.world.position(a).unwrap();
        (0..3).all(|i| {
            let (lo, hi) = self.range(c, i);
            p[i] >= lo - 1e-12 && p[i] <= hi + 1e-12
        })
    }

    fn on(&self, a: &str, b: &str) -> bool {
        if a == b {
            return false;
        }
        let bottom = self.range(a, 2).0;
        let top = self.range(b, 2).1;
        let p = self.world.position(a).unwrap();
        let (x0, x1) = self.range(b, 0);
        let (y0, y1) = self.range(b, 1);
        (bottom - top).abs() <= Self::EPS && p[0] >= x0 && p[0] <= x1 && p[1] >= y0 && p[1] <= y1
    }

    fn on_table(&self, a: &str) -> bool {
        let roster = &scene().roster;
        let top = self.range(&roster.table().id, 2).1;
        (self.range(a, 2).0 - top).abs() <= Self::EPS
            && self.world.attached.as_deref() != Some(a)
            && !roster
                .with_flag(Flag::Container)
                .any(|c| self.inside(a, &c.id))
    }

    /// Bearing of `b` seen from `a`, degrees in (-180, 180].
    fn bearing(&self, a: &str, b: &str) -> (f64, f64) {
        let pa = self.world.position(a).unwrap();
        let pb = self.world.position(b).unwrap();
        let (dx, dy) = (pb[0] - pa[0], pb[1] - pa[1]);
        (dx.hypot(dy), dy.atan2(dx).to_degrees())
    }

    fn spatial(&self, p: Predicate, a: &str, b: &str) -> bool {
        let pa = self.world.position(a).unwrap();
        let pb = self.world.position(b).unwrap();
        let (_, ang) = self.bearing(a, b);
        match p {
            Predicate::LeftOf => pb[0] - pa[0] > Self::TAU && ang.abs() <= 45.0,
            Predicate::RightOf => pa[0] - pb[0] > Self::TAU && ang.abs() >= 135.0,
            Predicate::InFrontOf => pb[1] - pa[1] > Self::TAU && ang > 45.0 && ang < 135.0,
            Predicate::Behind => pa[1] - pb[1] > Self::TAU && ang < -45.0 && ang > -135.0,
            _ => unreachable!(),
        }
    }

    fn placed(&self) -> bool {
        let dest = scene().roster.get(&self.task.destination_id).unwrap();
        if dest.has(Flag::Container) {
            self.inside(&self.task.target_id, &dest.id)
        } else {
            self.on(&self.task.target_id, &dest.id)
        }
    }

    pub fn eval(&self, atom: &GroundAtom) -> bool {
        let a = atom.arg(0);
        match atom.predicate {
            Predicate::LeftOf | Predicate::RightOf | Predicate::Behind | Predicate::InFrontOf => {
                self.spatial(atom.predicate, a, atom.arg(1))
            }
            Predicate::On => self.on(a, atom.arg(1)),
            Predicate::Inside => self.inside(a, atom.arg(1)),
            Predicate::OnTable => self.on_table(a),
            Predicate::Open => self.world.drawer_open_frac[a] > 0.5,
            Predicate::TurnedOn => self.world.stove_on,
            Predicate::Grasped => self.world.attached.as_deref() == Some(a),
            Predicate::ShouldMoveTowards => {
                let holding = self.world.attached.as_deref() == Some(self.task.target_id.as_str());
                (a == self.task.target_id && !holding && !self.placed())
                    || (a == self.task.destination_id && holding)
            }
        }
    }
}

pub fn true_atoms<'a>(idx: &'a AtomIndex, v: &StateVector) -> Vec<&'a GroundAtom> {
    idx.atoms(v.kind)
        .iter()
        .zip(&v.bits)
        .filter(|(_, b)| **b == 1)
        .map(|(a, _)| a)
        .collect()
}

/// One random (dim 16, 5 labels) gradient instance: returns the largest
/// relative error between the analytic gradient and central differences.
pub fn gradient_check(seed: u64) -> f64 {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    use vlaprobe::probe::{loss_and_grad, Batch};

    let (dim, n) = (16, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = ProbeModel::zeros(0, StateKind::Object, dim, n, (0..n).collect(), "h").unwrap();
    for w in model.w.iter_mut().chain(model.b.iter_mut()) {
        *w = 0.5 * Distribution::<f64>::sample(&StandardNormal, &mut rng);
    }
    let batch_size = rng.random_range(1..=8);
    let hs: Vec<Vec<f32>> = (0..batch_size)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let ys: Vec<Vec<u8>> = (0..batch_size)
        .map(|_| (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect())
        .collect();
    let batch = Batch {
        h: hs.iter().map(Vec::as_slice).collect(),
        y: ys.iter().map(Vec::as_slice).collect(),
    };
    let (_, g) = loss_and_grad(&model, &batch).unwrap();
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    let nw = model.w.len();
    for i in 0..nw + model.b.len() {
        let bump = |delta: f64| {
            let mut m = model.clone();
            if i < nw {
                m.w[i] += delta;
            } else {
                m.b[i - nw] += delta;
            }
            m
        };
        let (plus, minus) = (bump(step), bump(-step));
        let lp = loss_and_grad(&plus, &batch).unwrap().0;
        let lm = loss_and_grad(&minus, &batch).unwrap().0;
        let numeric = (lp - lm) / (2.0 * step);
        let analytic = if i < nw { g.w[i] } else { g.b[i - nw] };
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

/// Validator for `docs/protocol.schema.json`.
pub fn protocol_validator() -> jsonschema::Validator {
    let path = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../docs/protocol.schema.json"
    );
    let schema: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

pub mod ws {
    use std::net::SocketAddr;
    use std::sync::Arc;
    use std::time::{Duration, Instant};

    use futures_util::{SinkExt, StreamExt};
    use serde_json::Value;
    use tokio::net::{TcpListener, TcpStream};
    use tokio_tungstenite::tungstenite::Message;
    use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};
    use vlaprobe::service::{server, ServiceContext};

    pub async fn spawn(ctx: Arc<ServiceContext>) -> SocketAddr {
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(server::serve(ctx, listener));
        addr
    }

    pub struct Client {
        ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
        validator: jsonschema::Validator,
    }

    pub struct Received {
        pub text: String,
        pub json: Value,
        pub at: Instant,
    }

    impl Client {
        pub async fn connect(addr: SocketAddr, session: Option<&str>) -> Client {
            let url = match session {
                Some(s) => format!("ws://{addr}/ws?session={s}"),
                None => format!("ws://{addr}/ws"),
            };
            let (ws, _) = connect_async(url).await.unwrap();
            Client {
                ws,
                validator: super::protocol_validator(),
            }
        }

        pub async fn send(&mut self, v: Value) {
            assert!(
                self.validator.is_valid(&v),
                "client message off schema: {v}"
            );
            self.ws.send(Message::text(v.to_string())).await.unwrap();
        }

        /// Next text frame, checked against the schema; `None` once closed.
        pub async fn recv(&mut self) -> Option<Received> {
            loop {
                let msg = tokio::time::timeout(Duration::from_secs(10), self.ws.next())
                    .await
                    .expect("no frame within 10 s")?;
                match msg {
                    Ok(Message::Text(t)) => {
                        let text = t.as_str().to_string();
                        let json: Value = serde_json::from_str(&text).unwrap();
                        if let Err(e) = self.validator.validate(&json) {
                            panic!("server message off schema ({e}): {text}");
                        }
                        return Some(Received {
                            text,
                            json,
                            at: Instant::now(),
                        });
                    }
                    Ok(Message::Close(_)) | Err(_) => return None,
                    Ok(_) => continue,
                }
            }
        }

        pub async fn expect(&mut self, kind: &str) -> Received {
            let r = self.recv().await.expect("connection closed");
            assert_eq!(r.json["type"], kind, "{}", r.text);
            r
        }
    }
}

fn pairs<'a>(atoms: &[&'a GroundAtom], p: Predicate) -> Vec<(&'a str, &'a str)> {
    atoms
        .iter()
        .filter(|a| a.predicate == p)
        .map(|a| (a.arg(0), a.arg(1)))
        .collect()
}

/// Mutual exclusion, antisymmetry, on-table/inside exclusion and the two
/// action exclusivity rules for one labelled frame.
pub fn frame_invariants(obj: &StateVector, act: &StateVector) -> Result<(), String> {
    let idx = idx();
    let o = true_atoms(idx, obj);
    let a = true_atoms(idx, act);
    for (fwd, back) in [
        (Predicate::LeftOf, Predicate::RightOf),
        (Predicate::Behind, Predicate::InFrontOf),
    ] {
        let f = pairs(&o, fwd);
        let b = pairs(&o, back);
        for (x, y) in &f {
            if b.contains(&(x, y)) {
                return Err(format!("{fwd}({x},{y}) and {back}({x},{y})"));
            }
            if !b.contains(&(y, x)) {
                return Err(format!("{fwd}({x},{y}) without {back}({y},{x})"));
            }
        }
    }
    let inside = pairs(&o, Predicate::Inside);
    for t in o.iter().filter(|x| x.predicate == Predicate::OnTable) {
        if let Some((_, c)) = inside.iter().find(|(x, _)| *x == t.arg(0)) {
            return Err(format!("{t} while inside {c}"));
        }
    }
    for p in [Predicate::Grasped, Predicate::ShouldMoveTowards] {
        let n = a.iter().filter(|x| x.predicate == p).count();
        if n > 1 {
            return Err(format!("{n} {p} atoms true"));
        }
    }
    Ok(())
}

/// Copies of the vectors with the named atoms set to `value`.
pub fn set_atoms(
    obj: &StateVector,
    act: &StateVector,
    atoms: &[&str],
    value: u8,
) -> (StateVector, StateVector) {
    let (mut o, mut a) = (obj.clone(), act.clone());
    for s in atoms {
        let atom: GroundAtom = s.parse().unwrap();
        match idx().position(&atom).unwrap() {
            (StateKind::Object, k) => o.bits[k] = value,
            (StateKind::Action, k) => a.bits[k] = value,
        }
    }
    (o, a)
}
