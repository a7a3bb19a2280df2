use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ActivationRecord, LayerSpec};
use crate::schema::StateVector;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEncoderConfig {
    pub seed: u64,
    /// One non-negative gain per layer.
    pub layer_gains: Vec<f64>,
    pub noise_std: f64,
    pub dim: usize,
}

impl SyntheticEncoderConfig {
    /// Layer 0 carries no state information; every later layer has gain 1.
    pub fn default_for(layers: &LayerSpec, seed: u64) -> Self {
        let layer_gains = (0..layers.num_layers)
            .map(|l| if l == 0 { 0.0 } else { 1.0 })
            .collect();
        Self {
            seed,
            layer_gains,
            noise_std: 0.5,
            dim: layers.dim,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layer_gains.len()
    }

    pub fn layer_spec(&self) -> LayerSpec {
        LayerSpec {
            num_layers: self.num_layers(),
            dim: self.dim,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.layer_gains.is_empty() || self.dim == 0 {
            return Err(Error::Config(
                "encoder needs at least one layer and dim >= 1".into(),
            ));
        }
        if self
            .layer_gains
            .iter()
            .any(|g| !(g.is_finite() && *g >= 0.0))
        {
            return Err(Error::Config(
                "layer gains must be finite and non-negative".into(),
            ));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::Config(
                "noise_std must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5E_ED0F_AC71_u64, |acc, p| mix(acc ^ mix(*p)))
}

/// Stable per-(episode, timestep) noise seed.
pub fn noise_seed(episode_id: &str, t: u64) -> u64 {
    let digest = crate::sha256_hex(episode_id.as_bytes());
    let head = u64::from_str_radix(&digest[..16], 16).expect("hex digest");
    stream_seed(&[head, t])
}

/// Stand-in activation source: per layer a fixed Gaussian read-in matrix
/// and bias, so that `h = g * (M s + c) + noise` with `s` the state bits
/// mapped to {-1, +1}.
#[derive(Debug, Clone)]
pub struct Encoder {
    cfg: SyntheticEncoderConfig,
    n_bits: usize,
    /// Per layer, `dim x n_bits` row-major.
    matrices: Vec<Vec<f32>>,
    biases: Vec<Vec<f32>>,
}

/// Materializes the per-layer matrices for `n_bits` state bits
/// (object + action atoms).
pub fn synth_encoder(cfg: &SyntheticEncoderConfig, n_bits: usize) -> Result<Encoder> {
    cfg.validate()?;
    if n_bits == 0 {
        return Err(Error::Config("encoder needs at least one state bit".into()));
    }
    let mut matrices = Vec::with_capacity(cfg.num_layers());
    let mut biases = Vec::with_capacity(cfg.num_layers());
    for layer in 0..cfg.num_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[cfg.seed, 1, layer as u64]));
        let m: Vec<f32> = (0..cfg.dim * n_bits)
            .map(|_| rng.sample::<f32, _>(StandardNormal))
            .collect();
        let c: Vec<f32> = (0..cfg.dim)
            .map(|_| rng.sample::<f32, _>(StandardNormal))
            .collect();
        matrices.push(m);
        biases.push(c);
    }
    Ok(Encoder {
        cfg: cfg.clone(),
        n_bits,
        matrices,
        biases,
    })
}

impl Encoder {
    pub fn config(&self) -> &SyntheticEncoderConfig {
        &self.cfg
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    pub fn num_layers(&self) -> usize {
        self.cfg.num_layers()
    }

    /// Read-in matrix of `layer`, `dim x n_bits` row-major.
    pub fn matrix(&self, layer: usize) -> &[f32] {
        &self.matrices[layer]
    }

    pub fn bias(&self, layer: usize) -> &[f32] {
        &self.biases[layer]
    }

    /// Activation vector for one layer at one timestep. `noise_seed`
    /// selects the noise draw; the same arguments give the same vector.
    pub fn activation(
        &self,
        obj: &StateVector,
        act: &StateVector,
        layer: usize,
        noise_seed: u64,
    ) -> Result<Vec<f32>> {
        if layer >= self.num_layers() {
            return Err(Error::Contract(format!(
                "layer {layer} out of range 0..{}",
                self.num_layers()
            )));
        }
        if obj.len() + act.len() != self.n_bits {
            return Err(Error::Contract(format!(
                "state has {} bits, encoder expects {}",
                obj.len() + act.len(),
                self.n_bits
            )));
        }
        let signs: Vec<f64> = obj
            .bits
            .iter()
            .chain(&act.bits)
            .map(|&b| if b != 0 { 1.0 } else { -1.0 })
            .collect();
        let gain = self.cfg.layer_gains[layer];
        let m = &self.matrices[layer];
        let c = &self.biases[layer];
        let mut rng =
            ChaCha8Rng::seed_from_u64(stream_seed(&[self.cfg.seed, 2, layer as u64, noise_seed]));
        let mut h = Vec::with_capacity(self.cfg.dim);
        for (row, bias) in m.chunks_exact(self.n_bits).zip(c) {
            let signal = if gain == 0.0 {
                0.0
            } else {
                let dot: f64 = row.iter().zip(&signs).map(|(w, s)| *w as f64 * s).sum();
                gain * (dot + *bias as f64)
            };
            let noise: f64 = rng.sample::<f64, _>(StandardNormal) * self.cfg.noise_std;
            h.push((signal + noise) as f32);
        }
        Ok(h)
    }

    /// [`Encoder::activation`] wrapped as a trace record, with noise keyed by
    /// `(episode_id, t)`.
    pub fn gen_activation(
        &self,
        episode_id: &str,
        t: u64,
        obj: &StateVector,
        act: &StateVector,
        layer: usize,
    ) -> Result<ActivationRecord> {
        Ok(ActivationRecord {
            episode_id: episode_id.to_string(),
            t,
            layer,
            vector: self.activation(obj, act, layer, noise_seed(episode_id, t))?,
        })
    }
}
