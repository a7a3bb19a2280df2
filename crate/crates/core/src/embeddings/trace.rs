//! Activation trace files.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "AVT1"
//! 4       2     version (u16 LE)
//! 6       4     dim (u32 LE)
//! 10      2     num_layers (u16 LE)
//! 12      4     reserved, zero
//! 16      4     metadata length M (u32 LE)
//! 20      M     metadata JSON (TraceMeta)
//! 20+M    ...   records
//!
//! record: episode index (u32) | t (u32) | layer (u16) | reserved (u16)
//!         | dim x f32 LE
//! ```
//!
//! Records are sorted by (episode index, t, layer); the episode list in the
//! metadata is sorted by id, so this is also (episode_id, t, layer) order.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ActivationRecord, LayerSpec};
use crate::{Error, Result};

pub const TRACE_MAGIC: &[u8; 4] = b"AVT1";
pub const TRACE_VERSION: u16 = 1;
pub const HEADER_LEN: u64 = 16;
pub const RECORD_HEADER_LEN: u64 = 12;

pub fn record_size(dim: usize) -> u64 {
    RECORD_HEADER_LEN + 4 * dim as u64
}

/// Exact file size for `n_records` records with a metadata block of
/// `meta_len` bytes.
pub fn trace_file_size(meta_len: u64, n_records: u64, dim: usize) -> u64 {
    HEADER_LEN + 4 + meta_len + n_records * record_size(dim)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEpisode {
    pub id: String,
    pub instruction: String,
    pub seed: u64,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub episodes: Vec<TraceEpisode>,
    pub atom_index_hash: String,
    #[serde(default)]
    pub config_hash: String,
    /// Producer description, e.g. the synthetic encoder config.
    #[serde(default)]
    pub producer: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceHeader {
    pub version: u16,
    pub layers: LayerSpec,
    pub meta: TraceMeta,
    /// Byte offset of the first record.
    pub data_start: u64,
}

/// `<trace>.json` next to the trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSidecar {
    pub layers: LayerSpec,
    pub atom_index_hash: String,
    pub config_hash: String,
}

pub fn sidecar_path(trace: &Path) -> PathBuf {
    let mut s = trace.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn read_sidecar(trace: &Path) -> Result<TraceSidecar> {
    let p = sidecar_path(trace);
    let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub struct TraceWriter {
    path: PathBuf,
    out: BufWriter<File>,
    layers: LayerSpec,
    meta: TraceMeta,
    episode_pos: HashMap<String, u32>,
    last: Option<(u32, u32, u16)>,
    written: u64,
}

impl TraceWriter {
    pub fn create(path: &Path, layers: LayerSpec, mut meta: TraceMeta) -> Result<Self> {
        if layers.dim == 0 || layers.num_layers == 0 {
            return Err(Error::Config(
                "trace needs dim >= 1 and at least one layer".into(),
            ));
        }
        let dim = u32::try_from(layers.dim).map_err(|_| Error::Config("dim too large".into()))?;
        let nl = u16::try_from(layers.num_layers)
            .map_err(|_| Error::Config("too many layers".into()))?;
        meta.episodes.sort_by(|a, b| a.id.cmp(&b.id));
        let episode_pos: HashMap<String, u32> = meta
            .episodes
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.clone(), i as u32))
            .collect();
        if episode_pos.len() != meta.episodes.len() {
            return Err(Error::Config(
                "duplicate episode ids in trace metadata".into(),
            ));
        }
        let io = |e| Error::io(path, e);
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        let mut header = Vec::with_capacity(HEADER_LEN as usize);
        header.extend_from_slice(TRACE_MAGIC);
        header.extend_from_slice(&TRACE_VERSION.to_le_bytes());
        header.extend_from_slice(&dim.to_le_bytes());
        header.extend_from_slice(&nl.to_le_bytes());
        header.extend_from_slice(&[0; 4]);
        out.write_all(&header).map_err(io)?;
        let json = serde_json::to_vec(&meta)?;
        out.write_all(&(json.len() as u32).to_le_bytes())
            .map_err(io)?;
        out.write_all(&json).map_err(io)?;
        Ok(Self {
            path: path.to_path_buf(),
            out,
            layers,
            meta,
            episode_pos,
            last: None,
            written: 0,
        })
    }

    pub fn write(&mut self, rec: &ActivationRecord) -> Result<()> {
        let ep = *self.episode_pos.get(&rec.episode_id).ok_or_else(|| {
            Error::Contract(format!(
                "episode `{}` not declared in metadata",
                rec.episode_id
            ))
        })?;
        if rec.vector.len() != self.layers.dim {
            return Err(Error::Contract(format!(
                "vector has {} dims, trace expects {}",
                rec.vector.len(),
                self.layers.dim
            )));
        }
        if rec.layer >= self.layers.num_layers {
            return Err(Error::Contract(format!("layer {} out of range", rec.layer)));
        }
        if rec.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite activation".into()));
        }
        let t = u32::try_from(rec.t).map_err(|_| Error::Contract("timestep overflow".into()))?;
        let key = (ep, t, rec.layer as u16);
        if self.last.is_some_and(|l| l >= key) {
            return Err(Error::Contract(format!(
                "records must be strictly sorted by (episode, t, layer); got {}/{}/{} after {:?}",
                rec.episode_id, rec.t, rec.layer, self.last
            )));
        }
        self.last = Some(key);
        let mut buf = Vec::with_capacity(record_size(self.layers.dim) as usize);
        buf.extend_from_slice(&ep.to_le_bytes());
        buf.extend_from_slice(&t.to_le_bytes());
        buf.extend_from_slice(&(rec.layer as u16).to_le_bytes());
        buf.extend_from_slice(&[0; 2]);
        for v in &rec.vector {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.out
            .write_all(&buf)
            .map_err(|e| Error::io(&self.path, e))?;
        self.written += 1;
        Ok(())
    }

    /// Flushes the file and writes the JSON sidecar. Returns the number of
    /// records written.
    pub fn finish(mut self) -> Result<u64> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))?;
        let sidecar = TraceSidecar {
            layers: self.layers,
            atom_index_hash: self.meta.atom_index_hash.clone(),
            config_hash: self.meta.config_hash.clone(),
        };
        let p = sidecar_path(&self.path);
        std::fs::write(&p, serde_json::to_vec_pretty(&sidecar)?).map_err(|e| Error::io(&p, e))?;
        Ok(self.written)
    }
}

pub struct TraceReader {
    path: PathBuf,
    file: BufReader<File>,
    header: TraceHeader,
    len: u64,
    pos: u64,
}

impl TraceReader {
    pub fn open(path: &Path) -> Result<Self> {
        let io = |e| Error::io(path, e);
        let file = File::open(path).map_err(io)?;
        let len = file.metadata().map_err(io)?.len();
        let mut file = BufReader::new(file);
        let mut head = [0u8; HEADER_LEN as usize];
        file.read_exact(&mut head)
            .map_err(|_| Error::format(0, "truncated header"))?;
        if &head[0..4] != TRACE_MAGIC {
            return Err(Error::format(0, "bad magic"));
        }
        let version = u16::from_le_bytes([head[4], head[5]]);
        if version != TRACE_VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let dim = u32::from_le_bytes(head[6..10].try_into().unwrap()) as usize;
        if dim == 0 {
            return Err(Error::format(6, "dim is zero"));
        }
        let num_layers = u16::from_le_bytes([head[10], head[11]]) as usize;
        if num_layers == 0 {
            return Err(Error::format(10, "num_layers is zero"));
        }
        let mut lenb = [0u8; 4];
        file.read_exact(&mut lenb)
            .map_err(|_| Error::format(HEADER_LEN, "truncated metadata length"))?;
        let meta_len = u32::from_le_bytes(lenb) as u64;
        let data_start = HEADER_LEN + 4 + meta_len;
        if data_start > len {
            return Err(Error::format(HEADER_LEN + 4, "truncated metadata"));
        }
        let mut json = vec![0; meta_len as usize];
        file.read_exact(&mut json)
            .map_err(|_| Error::format(HEADER_LEN + 4, "truncated metadata"))?;
        let meta: TraceMeta = serde_json::from_slice(&json)
            .map_err(|e| Error::format(HEADER_LEN + 4, format!("metadata: {e}")))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            header: TraceHeader {
                version,
                layers: LayerSpec { num_layers, dim },
                meta,
                data_start,
            },
            len,
            pos: data_start,
        })
    }

    /// Opens `path` and checks it against an expected layer spec.
    pub fn open_expecting(path: &Path, layers: LayerSpec) -> Result<Self> {
        let r = Self::open(path)?;
        if r.header.layers.dim != layers.dim {
            return Err(Error::format(
                6,
                format!(
                    "dim mismatch: file has {}, expected {}",
                    r.header.layers.dim, layers.dim
                ),
            ));
        }
        if r.header.layers.num_layers != layers.num_layers {
            return Err(Error::format(
                10,
                format!(
                    "layer count mismatch: file has {}, expected {}",
                    r.header.layers.num_layers, layers.num_layers
                ),
            ));
        }
        Ok(r)
    }

    pub fn header(&self) -> &TraceHeader {
        &self.header
    }

    fn rec_size(&self) -> u64 {
        record_size(self.header.layers.dim)
    }

    fn read_head(&mut self) -> Result<Option<(u32, u32, u16)>> {
        if self.pos == self.len {
            return Ok(None);
        }
        if self.len - self.pos < self.rec_size() {
            return Err(Error::format(self.pos, "truncated record"));
        }
        let mut h = [0u8; RECORD_HEADER_LEN as usize];
        self.file
            .read_exact(&mut h)
            .map_err(|e| Error::io(&self.path, e))?;
        let ep = u32::from_le_bytes(h[0..4].try_into().unwrap());
        let t = u32::from_le_bytes(h[4..8].try_into().unwrap());
        let layer = u16::from_le_bytes([h[8], h[9]]);
        if ep as usize >= self.header.meta.episodes.len() {
            return Err(Error::format(
                self.pos,
                format!("episode index {ep} out of range"),
            ));
        }
        if layer as usize >= self.header.layers.num_layers {
            return Err(Error::format(
                self.pos + 8,
                format!("layer {layer} out of range"),
            ));
        }
        Ok(Some((ep, t, layer)))
    }

    fn read_vector(&mut self) -> Result<Vec<f32>> {
        let mut bytes = vec![0u8; 4 * self.header.layers.dim];
        self.file
            .read_exact(&mut bytes)
            .map_err(|e| Error::io(&self.path, e))?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn next_record(&mut self) -> Result<Option<ActivationRecord>> {
        let Some((ep, t, layer)) = self.read_head()? else {
            return Ok(None);
        };
        let vector = self.read_vector()?;
        self.pos += self.rec_size();
        Ok(Some(ActivationRecord {
            episode_id: self.header.meta.episodes[ep as usize].id.clone(),
            t: t as u64,
            layer: layer as usize,
            vector,
        }))
    }

    /// Streams all records in stored order.
    pub fn records(mut self) -> impl Iterator<Item = Result<ActivationRecord>> {
        let mut done = false;
        std::iter::from_fn(move || {
            if done {
                return None;
            }
            match self.next_record() {
                Ok(Some(r)) => Some(Ok(r)),
                Ok(None) => {
                    done = true;
                    None
                }
                Err(e) => {
                    done = true;
                    Some(Err(e))
                }
            }
        })
    }

    /// All vectors of one layer keyed by (episode_id, t). Skips other
    /// layers without decoding them.
    pub fn layer_vectors(mut self, layer: usize) -> Result<HashMap<(String, u64), Vec<f32>>> {
        let mut out = HashMap::new();
        let skip = 4 * self.header.layers.dim as i64;
        self.file
            .seek(SeekFrom::Start(self.pos))
            .map_err(|e| Error::io(&self.path, e))?;
        while let Some((ep, t, l)) = self.read_head()? {
            if l as usize == layer {
                let v = self.read_vector()?;
                let id = self.header.meta.episodes[ep as usize].id.clone();
                out.insert((id, t as u64), v);
            } else {
                self.file
                    .seek_relative(skip)
                    .map_err(|e| Error::io(&self.path, e))?;
            }
            self.pos += self.rec_size();
        }
        Ok(out)
    }
}
