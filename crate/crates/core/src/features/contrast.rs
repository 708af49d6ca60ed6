//! Contrastive learning head and the multi-positive contrastive loss.
//!
//! Features are laid out sample-major: the anchor for sample `i`, crop `m`
//! has flat index `i * M + m`. The positives of an anchor are the other
//! `M - 1` crops of the same sample; the denominator runs over every feature
//! in the batch except the anchor itself.

use serde::{Deserialize, Serialize};

use super::nn::{l2_normalize, l2_normalize_backward, log_sum_exp, sigmoid, Dense};
use crate::error::{Error, Result};
use crate::rng;

/// `z = g(sigmoid(W h + c) ⊙ h)` where `g` is two dense + L2-norm blocks with
/// a ReLU between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastNet {
    pub d: usize,
    pub weighting: Dense,
    pub block1: Dense,
    pub block2: Dense,
}

impl ContrastNet {
    pub fn new(d: usize, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::Shape("feature dim must be >= 1".into()));
        }
        let mut rng = rng::seeded(seed);
        Ok(Self {
            d,
            weighting: Dense::init(d, d, &mut rng),
            block1: Dense::init(d, d, &mut rng),
            block2: Dense::init(d, d, &mut rng),
        })
    }

    /// Per-dimension weights `W ∈ (0, 1)^d`.
    pub fn weights(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.d {
            return Err(Error::Shape(format!("feature dim {} != {}", h.len(), self.d)));
        }
        Ok(self.weighting.forward(h).into_iter().map(sigmoid).collect())
    }

    pub fn project(&self, h: &[f64]) -> Result<Vec<f64>> {
        let w = self.weights(h)?;
        let x: Vec<f64> = w.iter().zip(h).map(|(a, b)| a * b).collect();
        let (y1, _) = l2_normalize(&self.block1.forward(&x));
        let r: Vec<f64> = y1.into_iter().map(|v| v.max(0.0)).collect();
        let (z, _) = l2_normalize(&self.block2.forward(&r));
        Ok(z)
    }
}

pub fn clm_project(h: &[f64], net: &ContrastNet) -> Result<Vec<f64>> {
    net.project(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub tau: f64,
    /// L2-normalize every feature before taking dot products.
    pub normalize: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            normalize: true,
        }
    }
}

/// `N × M × d` batch of features.
pub type Batch = Vec<Vec<Vec<f64>>>;

fn batch_shape(z: &Batch) -> Result<(usize, usize, usize)> {
    let n = z.len();
    let m = z.first().map_or(0, Vec::len);
    if n < 2 || m < 2 {
        return Err(Error::NotEnoughSamples { n, m });
    }
    let d = z[0][0].len();
    if z.iter().any(|s| s.len() != m || s.iter().any(|v| v.len() != d)) {
        return Err(Error::Shape("ragged contrastive batch".into()));
    }
    Ok((n, m, d))
}

/// Loss as a function of the scaled similarity matrix `S[a][l] = z_a · z_l / τ`
/// (flattened row-major, `NM × NM`; the diagonal is ignored). Returns the
/// loss and `∂L/∂S`.
pub fn similarity_loss(sim: &[f64], n: usize, m: usize) -> Result<(f64, Vec<f64>)> {
    if n < 2 || m < 2 {
        return Err(Error::NotEnoughSamples { n, m });
    }
    let k = n * m;
    if sim.len() != k * k {
        return Err(Error::Shape(format!("similarity matrix has {} entries, want {}", sim.len(), k * k)));
    }
    let pos_weight = 1.0 / (m as f64 - 1.0);
    let mut loss = 0.0;
    let mut grad = vec![0.0; k * k];
    for a in 0..k {
        let row = &sim[a * k..(a + 1) * k];
        let others = (0..k).filter(|&l| l != a).map(|l| row[l]);
        let lse = log_sum_exp(others);
        let sample = a / m;
        let mut pos_sum = 0.0;
        for j in sample * m..(sample + 1) * m {
            if j != a {
                pos_sum += row[j] - lse;
            }
        }
        loss -= pos_weight * pos_sum;
        // dL/dS_al = p_al - [l positive] / (M - 1), with p the softmax over l != a
        for l in 0..k {
            if l == a {
                continue;
            }
            let mut g = (row[l] - lse).exp();
            if l / m == sample {
                g -= pos_weight;
            }
            grad[a * k + l] = g;
        }
    }
    if !loss.is_finite() {
        return Err(Error::numerical("non-finite contrastive loss"));
    }
    Ok((loss, grad))
}

fn prepared(z: &Batch, cfg: &ContrastiveConfig) -> Result<(usize, usize, Vec<Vec<f64>>, Vec<f64>)> {
    if !(cfg.tau > 0.0) {
        return Err(Error::InvalidConfig(format!("temperature {} must be > 0", cfg.tau)));
    }
    let (n, m, _) = batch_shape(z)?;
    let mut feats = Vec::with_capacity(n * m);
    let mut norms = Vec::with_capacity(n * m);
    for v in z.iter().flatten() {
        if cfg.normalize {
            let (y, norm) = l2_normalize(v);
            feats.push(y);
            norms.push(norm);
        } else {
            feats.push(v.clone());
            norms.push(1.0);
        }
    }
    Ok((n, m, feats, norms))
}

fn similarities(feats: &[Vec<f64>], tau: f64) -> Vec<f64> {
    let k = feats.len();
    let mut sim = vec![0.0; k * k];
    for a in 0..k {
        for l in 0..k {
            sim[a * k + l] = feats[a].iter().zip(&feats[l]).map(|(x, y)| x * y).sum::<f64>() / tau;
        }
    }
    sim
}

pub fn contrastive_loss(z: &Batch, cfg: &ContrastiveConfig) -> Result<f64> {
    let (n, m, feats, _) = prepared(z, cfg)?;
    similarity_loss(&similarities(&feats, cfg.tau), n, m).map(|(l, _)| l)
}

/// Loss and its gradient with respect to every entry of `z`.
pub fn contrastive_loss_grad(z: &Batch, cfg: &ContrastiveConfig) -> Result<(f64, Batch)> {
    let (n, m, feats, norms) = prepared(z, cfg)?;
    let k = n * m;
    let (loss, ds) = similarity_loss(&similarities(&feats, cfg.tau), n, m)?;
    let d = feats[0].len();
    let mut grads = Vec::with_capacity(k);
    for a in 0..k {
        let mut g = vec![0.0; d];
        for l in 0..k {
            if l == a {
                continue;
            }
            let c = (ds[a * k + l] + ds[l * k + a]) / cfg.tau;
            for (acc, v) in g.iter_mut().zip(&feats[l]) {
                *acc += c * v;
            }
        }
        if cfg.normalize {
            g = l2_normalize_backward(&feats[a], norms[a], &g);
        }
        grads.push(g);
    }
    let mut it = grads.into_iter();
    let batch = (0..n).map(|_| it.by_ref().take(m).collect()).collect();
    Ok((loss, batch))
}
