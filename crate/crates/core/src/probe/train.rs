use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ProbeDataset;
use crate::schema::StateKind;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 64,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::Config("Adam eps must be positive".into()));
        }
        Ok(())
    }
}

/// Multi-label logistic probe `sigma(W h + b)` over the kept label
/// positions. Parameters are held in f64 but always f32-representable, so
/// writing them as f32 is lossless.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub layer: usize,
    pub kind: StateKind,
    pub dim: usize,
    /// Length of the full label vector.
    pub n_labels: usize,
    /// Positions of the kept labels, ascending.
    pub kept: Vec<usize>,
    /// `kept.len() x dim`, row-major.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    /// Full-length vector; at dropped positions the training majority
    /// value, zero at kept positions.
    pub fill: Vec<u8>,
    pub atom_index_hash: String,
}

impl ProbeModel {
    pub fn zeros(
        layer: usize,
        kind: StateKind,
        dim: usize,
        n_labels: usize,
        kept: Vec<usize>,
        atom_index_hash: &str,
    ) -> Result<Self> {
        if kept.windows(2).any(|w| w[0] >= w[1]) || kept.last().is_some_and(|&k| k >= n_labels) {
            return Err(Error::Contract(
                "kept positions must be ascending and in range".into(),
            ));
        }
        Ok(Self {
            layer,
            kind,
            dim,
            n_labels,
            w: vec![0.0; kept.len() * dim],
            b: vec![0.0; kept.len()],
            fill: vec![0; n_labels],
            kept,
            atom_index_hash: atom_index_hash.to_string(),
        })
    }

    pub fn n_kept(&self) -> usize {
        self.kept.len()
    }

    /// Full-length mask with `true` at kept positions.
    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.n_labels];
        for &k in &self.kept {
            m[k] = true;
        }
        m
    }

    pub fn logits(&self, h: &[f32]) -> Vec<f64> {
        self.w
            .chunks_exact(self.dim.max(1))
            .zip(&self.b)
            .map(|(row, b)| row.iter().zip(h).map(|(w, x)| w * *x as f64).sum::<f64>() + b)
            .collect()
    }

    fn check_input(&self, h: &[f32]) -> Result<()> {
        if h.len() != self.dim {
            return Err(Error::Contract(format!(
                "activation has {} dims, probe expects {}",
                h.len(),
                self.dim
            )));
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-[y ln sigma(z) + (1-y) ln(1 - sigma(z))]` without forming sigma.
fn bce_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
}

/// Probabilities and 0/1 decisions for the kept labels; a probability of
/// exactly 0.5 decides 1.
pub fn predict(model: &ProbeModel, h: &[f32]) -> Result<(Vec<f64>, Vec<u8>)> {
    model.check_input(h)?;
    let z = model.logits(h);
    let probs: Vec<f64> = z.iter().map(|&z| sigmoid(z)).collect();
    let bits = probs.iter().map(|&p| u8::from(p >= 0.5)).collect();
    Ok((probs, bits))
}

/// [`predict`] expanded to the full label vector: kept positions take the
/// probe's decision, dropped positions their fill value.
pub fn predict_full(model: &ProbeModel, h: &[f32]) -> Result<Vec<u8>> {
    let (_, bits) = predict(model, h)?;
    let mut out = model.fill.clone();
    for (&k, b) in model.kept.iter().zip(bits) {
        out[k] = b;
    }
    Ok(out)
}

/// Activations and full-length label vectors of one minibatch.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub h: Vec<&'a [f32]>,
    pub y: Vec<&'a [u8]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Mean binary cross-entropy over batch and kept labels, with its exact
/// gradient.
pub fn loss_and_grad(model: &ProbeModel, batch: &Batch) -> Result<(f64, Grads)> {
    if batch.h.is_empty() || batch.h.len() != batch.y.len() {
        return Err(Error::Contract(
            "batch must be non-empty with one label row per input".into(),
        ));
    }
    let n = model.n_kept();
    if n == 0 {
        return Err(Error::Contract("probe has no kept labels".into()));
    }
    let scale = 1.0 / (batch.h.len() * n) as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; model.w.len()];
    let mut gb = vec![0.0; n];
    for (h, y) in batch.h.iter().zip(&batch.y) {
        model.check_input(h)?;
        if y.len() != model.n_labels {
            return Err(Error::Contract(format!(
                "label row has {} entries, probe expects {}",
                y.len(),
                model.n_labels
            )));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite activation in batch".into()));
        }
        let z = model.logits(h);
        for (i, (&k, z)) in model.kept.iter().zip(z).enumerate() {
            let target = y[k] as f64;
            loss += bce_logit(z, target);
            let d = (sigmoid(z) - target) * scale;
            gb[i] += d;
            let row = &mut gw[i * model.dim..(i + 1) * model.dim];
            for (g, x) in row.iter_mut().zip(h.iter()) {
                *g += d * *x as f64;
            }
        }
    }
    Ok((loss * scale, Grads { w: gw, b: gb }))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        let mut i = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            for (p, g) in p.iter_mut().zip(g.iter()) {
                let m = &mut self.m[i];
                let v = &mut self.v[i];
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
                i += 1;
            }
        }
    }
}

/// Trains a probe over the kept label positions with Adam from a zero
/// initialization. The training set is reshuffled each epoch.
pub fn train_probe(train: &ProbeDataset, kept: &[usize], cfg: &TrainConfig) -> Result<ProbeModel> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Pipeline("empty training set".into()));
    }
    if kept.is_empty() {
        return Err(Error::Pipeline("no labels to train on".into()));
    }
    let mut model = ProbeModel::zeros(
        train.layer,
        train.kind,
        train.dim,
        train.n_labels,
        kept.to_vec(),
        &train.atom_index_hash,
    )?;
    let freqs = train.frequencies();
    for (i, f) in freqs.iter().enumerate() {
        if !model.kept.contains(&i) {
            model.fill[i] = u8::from(*f >= 0.5);
        }
    }
    let mut adam = Adam::new(model.w.len() + model.b.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = Batch {
                h: chunk.iter().map(|&i| train.pairs[i].h.as_slice()).collect(),
                y: chunk.iter().map(|&i| train.pairs[i].y.as_slice()).collect(),
            };
            let (loss, g) = loss_and_grad(&model, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: bi,
                    loss,
                });
            }
            let ProbeModel { w, b, .. } = &mut model;
            adam.update(&mut [w, b], &[&g.w, &g.b], cfg);
            if model.w.iter().chain(&model.b).any(|p| !p.is_finite()) {
                return Err(Error::Training {
                    epoch,
                    batch: bi,
                    loss,
                });
            }
        }
    }
    for p in model.w.iter_mut().chain(model.b.iter_mut()) {
        *p = *p as f32 as f64;
    }
    Ok(model)
}
