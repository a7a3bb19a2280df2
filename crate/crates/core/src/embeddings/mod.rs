//! Per-(timestep, layer) activation vectors: the synthetic encoder that
//! stands in for a real policy backbone, and the binary trace format used to
//! persist activations.

mod encoder;
mod trace;

use serde::{Deserialize, Serialize};

pub use encoder::{noise_seed, synth_encoder, Encoder, SyntheticEncoderConfig};
pub use trace::{
    read_sidecar, record_size, trace_file_size, TraceEpisode, TraceHeader, TraceMeta, TraceReader,
    TraceSidecar, TraceWriter, HEADER_LEN, RECORD_HEADER_LEN, TRACE_MAGIC, TRACE_VERSION,
};

/// Number of hidden states and their width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub num_layers: usize,
    pub dim: usize,
}

impl Default for LayerSpec {
    fn default() -> Self {
        Self {
            num_layers: 33,
            dim: 4096,
        }
    }
}

/// One layer's hidden vector at one timestep of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRecord {
    pub episode_id: String,
    pub t: u64,
    pub layer: usize,
    pub vector: Vec<f32>,
}
