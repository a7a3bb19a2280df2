use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    apply_action, goal_reached, init_scene, render, scripted_action, Action, RenderConfig,
    SceneConfig, TaskSpec, WorldState,
};
use crate::{Error, Result};

pub const EPISODE_MAGIC: &[u8; 4] = b"EPI1";

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub state: WorldState,
    /// Action taken from `state`; the zero action on a terminal frame.
    pub action: Action,
    pub png: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: String,
    pub task: TaskSpec,
    pub seed: u64,
    pub frames: Vec<Frame>,
    pub success: bool,
}

impl Episode {
    pub fn states(&self) -> impl Iterator<Item = &WorldState> {
        self.frames.iter().map(|f| &f.state)
    }
}

/// Rolls out the scripted controller from `init_scene(task, seed)` until the
/// goal holds or `max_steps` frames have been recorded.
pub fn run_episode(
    scene: &SceneConfig,
    task: &TaskSpec,
    seed: u64,
    max_steps: usize,
    render_cfg: &RenderConfig,
) -> Result<Episode> {
    if max_steps == 0 {
        return Err(Error::Contract("max_steps must be at least 1".into()));
    }
    let mut world = init_scene(scene, task, seed)?;
    let mut frames = Vec::new();
    let success = loop {
        let png = render(&scene.roster, &world, &scene.workspace, render_cfg).to_png()?;
        if goal_reached(scene, &world, task) {
            frames.push(Frame {
                state: world,
                action: Action::default(),
                png,
            });
            break true;
        }
        let action = scripted_action(scene, &world, task);
        let next = apply_action(scene, &world, &action);
        frames.push(Frame {
            state: world,
            action,
            png,
        });
        if frames.len() >= max_steps {
            break false;
        }
        world = next;
    };
    Ok(Episode {
        id: format!("seed{seed}"),
        task: task.clone(),
        seed,
        frames,
        success,
    })
}

/// Collects `per_task` successful episodes for each task, retrying failed
/// rollouts with the next seed. Episode ids are `task{ii}_ep{kk}`.
pub fn collect_episodes(
    scene: &SceneConfig,
    tasks: &[TaskSpec],
    per_task: usize,
    base_seed: u64,
    max_steps: usize,
    render_cfg: &RenderConfig,
) -> Result<Vec<Episode>> {
    const MAX_ATTEMPTS_PER_EPISODE: usize = 20;
    let per_task_eps: Vec<Result<Vec<Episode>>> = tasks
        .par_iter()
        .enumerate()
        .map(|(ti, task)| {
            let mut out = Vec::with_capacity(per_task);
            let mut seed = base_seed;
            let budget = per_task * MAX_ATTEMPTS_PER_EPISODE;
            let mut attempts = 0;
            while out.len() < per_task {
                if attempts == budget {
                    return Err(Error::Pipeline(format!(
                        "task {ti}: only {} of {per_task} episodes succeeded after {budget} attempts",
                        out.len()
                    )));
                }
                let mut ep = run_episode(scene, task, seed, max_steps, render_cfg)?;
                attempts += 1;
                seed = seed.wrapping_add(1);
                if ep.success {
                    ep.id = format!("task{:02}_ep{:02}", ti, out.len());
                    out.push(ep);
                }
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::new();
    for r in per_task_eps {
        all.extend(r?);
    }
    Ok(all)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub format: String,
    pub version: u32,
    pub episode_id: String,
    pub task: TaskSpec,
    pub seed: u64,
    pub success: bool,
    pub roster_hash: String,
    pub frame_count: usize,
    pub config_hash: String,
}

fn put_block(w: &mut impl Write, bytes: &[u8]) -> std::io::Result<()> {
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(bytes)
}

/// Layout: `EPI1`, u32 header length, header JSON, then per frame three
/// length-prefixed blocks (state JSON, action JSON, PNG). Lengths are
/// little-endian u32.
pub fn write_episode(
    path: &Path,
    episode: &Episode,
    roster_hash: &str,
    config_hash: &str,
) -> Result<()> {
    let header = EpisodeHeader {
        format: "vlaprobe-episode".into(),
        version: 1,
        episode_id: episode.id.clone(),
        task: episode.task.clone(),
        seed: episode.seed,
        success: episode.success,
        roster_hash: roster_hash.into(),
        frame_count: episode.frames.len(),
        config_hash: config_hash.into(),
    };
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(EPISODE_MAGIC).map_err(io)?;
    put_block(&mut w, &serde_json::to_vec(&header)?).map_err(io)?;
    for f in &episode.frames {
        put_block(&mut w, &serde_json::to_vec(&f.state)?).map_err(io)?;
        put_block(&mut w, &serde_json::to_vec(&f.action)?).map_err(io)?;
        put_block(&mut w, &f.png).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn exact(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::format(self.offset, format!("truncated {what}")))?;
        self.offset += n as u64;
        Ok(buf)
    }

    fn block(&mut self, what: &str) -> Result<Vec<u8>> {
        let len = self.exact(4, what)?;
        let len = u32::from_le_bytes(len.try_into().unwrap()) as usize;
        self.exact(len, what)
    }
}

pub fn read_episode(path: &Path) -> Result<(EpisodeHeader, Episode)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut c = Cursor {
        inner: BufReader::new(file),
        offset: 0,
    };
    if c.exact(4, "magic")? != EPISODE_MAGIC {
        return Err(Error::format(0, "bad episode magic"));
    }
    let at = c.offset;
    let header: EpisodeHeader = serde_json::from_slice(&c.block("header")?)
        .map_err(|e| Error::format(at, e.to_string()))?;
    let mut frames = Vec::with_capacity(header.frame_count);
    for _ in 0..header.frame_count {
        let at = c.offset;
        let state = serde_json::from_slice(&c.block("state")?)
            .map_err(|e| Error::format(at, e.to_string()))?;
        let at = c.offset;
        let action = serde_json::from_slice(&c.block("action")?)
            .map_err(|e| Error::format(at, e.to_string()))?;
        let png = c.block("png")?;
        frames.push(Frame { state, action, png });
    }
    let episode = Episode {
        id: header.episode_id.clone(),
        task: header.task.clone(),
        seed: header.seed,
        frames,
        success: header.success,
    };
    Ok((header, episode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::default_scene;

    #[test]
    fn single_step_budget_cannot_succeed() {
        let scene = default_scene();
        let ep = run_episode(&scene, &scene.tasks[0].task, 0, 1, &RenderConfig::default()).unwrap();
        assert_eq!(ep.frames.len(), 1);
        assert!(!ep.success);
    }

    #[test]
    fn episode_file_round_trip() {
        let scene = default_scene();
        let cfg = RenderConfig {
            width: 32,
            height: 32,
        };
        let mut ep = run_episode(&scene, &scene.tasks[1].task, 5, 400, &cfg).unwrap();
        ep.id = "task01_ep00".into();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ep.bin");
        write_episode(&path, &ep, &scene.roster.hash(), "cafe").unwrap();
        let (header, back) = read_episode(&path).unwrap();
        assert_eq!(header.frame_count, ep.frames.len());
        assert_eq!(header.config_hash, "cafe");
        assert_eq!(back, ep);
    }

    #[test]
    fn truncated_episode_is_a_format_error() {
        let scene = default_scene();
        let cfg = RenderConfig {
            width: 16,
            height: 16,
        };
        let ep = run_episode(&scene, &scene.tasks[0].task, 0, 5, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ep.bin");
        write_episode(&path, &ep, "r", "c").unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(read_episode(&path), Err(Error::Format { .. })));
    }
}
