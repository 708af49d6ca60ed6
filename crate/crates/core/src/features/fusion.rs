//! Crop-aware fusion.
//!
//! For target crop `m`, every crop `n` contributes `F_mn = [h_n, γ(B_m) − γ(B_n)]`.
//! A small network maps the `M` rows to `M` logits, a softmax turns them into
//! weights `w_mn`, and the fused feature is `u_m = Σ_n w_mn h_n`.

use serde::{Deserialize, Serialize};

use super::nn::{softmax, Dense};
use super::Matrix;
use crate::encoding::Encoder;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionVariant {
    /// Per-pair reducer to `reduce_dim`, flatten, then tanh MLP down to `M` logits.
    Mlp,
    /// One linear layer from `F_mn` to a scalar logit.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub d: usize,
    pub m: usize,
    pub encoder: Encoder,
    pub reduce_dim: usize,
    pub hidden: Vec<usize>,
    pub variant: FusionVariant,
    pub seed: u64,
}

impl FusionConfig {
    pub fn new(d: usize, m: usize, seed: u64) -> Self {
        Self {
            d,
            m,
            encoder: Encoder::default(),
            reduce_dim: 256,
            hidden: vec![64],
            variant: FusionVariant::Mlp,
            seed,
        }
    }

    pub fn pair_dim(&self) -> usize {
        self.d + self.encoder.bbox_len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionNet {
    pub config: FusionConfig,
    pub reducer: Dense,
    /// Layers after flattening; tanh follows every layer but the last.
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionOutput {
    pub u: Matrix,
    pub w: Matrix,
}

/// Intermediate values of one target row, kept for the backward pass.
struct RowCache {
    pair_inputs: Vec<Vec<f64>>,
    /// Layer inputs, starting with the flattened reducer output.
    acts: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl FusionNet {
    pub fn new(config: FusionConfig) -> Result<Self> {
        if config.d == 0 || config.m == 0 {
            return Err(Error::Shape(format!("fusion needs d, m >= 1 (d={}, m={})", config.d, config.m)));
        }
        let mut rng = rng::seeded(config.seed);
        let pair = config.pair_dim();
        let (reducer, layers) = match config.variant {
            FusionVariant::Linear => (Dense::init(pair, 1, &mut rng), Vec::new()),
            FusionVariant::Mlp => {
                let reducer = Dense::init(pair, config.reduce_dim, &mut rng);
                let mut dims = vec![config.reduce_dim * config.m];
                dims.extend(&config.hidden);
                dims.push(config.m);
                let layers = dims.windows(2).map(|w| Dense::init(w[0], w[1], &mut rng)).collect();
                (reducer, layers)
            }
        };
        Ok(Self {
            config,
            reducer,
            layers,
        })
    }

    /// Zero the layer producing the logits so every crop gets the same weight.
    pub fn flatten_logits(&mut self) {
        let last = self.layers.last_mut().unwrap_or(&mut self.reducer);
        *last = last.zeros_like();
    }

    pub fn param_count(&self) -> usize {
        self.reducer.param_count() + self.layers.iter().map(Dense::param_count).sum::<usize>()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.reducer.write_params(&mut out);
        for l in &self.layers {
            l.write_params(&mut out);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!("{} params for a {}-param net", params.len(), self.param_count())));
        }
        let mut rest = self.reducer.read_params(params);
        for l in &mut self.layers {
            rest = l.read_params(rest);
        }
        Ok(())
    }

    fn zeros_like(&self) -> FusionNet {
        FusionNet {
            config: self.config.clone(),
            reducer: self.reducer.zeros_like(),
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
        }
    }

    fn check_inputs(&self, h: &Matrix, bboxes: &[BBox]) -> Result<()> {
        let m = self.config.m;
        if h.len() != m || bboxes.len() != m {
            return Err(Error::Shape(format!(
                "net built for M={m}, got {} features and {} boxes",
                h.len(),
                bboxes.len()
            )));
        }
        if let Some(row) = h.iter().find(|r| r.len() != self.config.d) {
            return Err(Error::Shape(format!("feature dim {} != {}", row.len(), self.config.d)));
        }
        Ok(())
    }

    fn logits(&self, pair_inputs: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
        match self.config.variant {
            FusionVariant::Linear => (pair_inputs.iter().map(|x| self.reducer.forward(x)[0]).collect(), Vec::new()),
            FusionVariant::Mlp => {
                let mut x: Vec<f64> = pair_inputs.iter().flat_map(|p| self.reducer.forward(p)).collect();
                let mut acts = Vec::with_capacity(self.layers.len());
                let last = self.layers.len() - 1;
                for (k, layer) in self.layers.iter().enumerate() {
                    let mut y = layer.forward(&x);
                    if k < last {
                        y.iter_mut().for_each(|v| *v = v.tanh());
                    }
                    acts.push(std::mem::replace(&mut x, y));
                }
                (x, acts)
            }
        }
    }

    fn row(&self, m: usize, h: &Matrix, gammas: &[Vec<f64>]) -> (Vec<f64>, RowCache) {
        let pair_inputs: Vec<Vec<f64>> = (0..self.config.m)
            .map(|n| {
                let mut f = h[n].clone();
                f.extend(gammas[m].iter().zip(&gammas[n]).map(|(a, b)| a - b));
                f
            })
            .collect();
        let (logits, acts) = self.logits(&pair_inputs);
        let weights = softmax(&logits);
        // normalize after summing so equal logits give exactly the mean
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let mut u = vec![0.0; self.config.d];
        for (e, hn) in exps.iter().zip(h) {
            for (acc, v) in u.iter_mut().zip(hn) {
                *acc += e * v;
            }
        }
        u.iter_mut().for_each(|v| *v /= z);
        (
            u,
            RowCache {
                pair_inputs,
                acts,
                weights,
            },
        )
    }

    fn encodings(&self, bboxes: &[BBox]) -> Vec<Vec<f64>> {
        bboxes.iter().map(|b| self.config.encoder.encode_bbox(b).values).collect()
    }

    pub fn fuse(&self, h: &Matrix, bboxes: &[BBox]) -> Result<FusionOutput> {
        self.check_inputs(h, bboxes)?;
        let gammas = self.encodings(bboxes);
        let (u, w) = (0..self.config.m)
            .map(|m| {
                let (u, cache) = self.row(m, h, &gammas);
                (u, cache.weights)
            })
            .unzip();
        Ok(FusionOutput { u, w })
    }

    /// Gradients of `Σ du ⊙ u` with respect to the parameters (flattened as
    /// in [`FusionNet::params`]) and to the features `h`.
    pub fn fuse_backward(&self, h: &Matrix, bboxes: &[BBox], du: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        self.check_inputs(h, bboxes)?;
        let (m_count, d) = (self.config.m, self.config.d);
        if du.len() != m_count || du.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("upstream gradient must be M x d".into()));
        }
        let gammas = self.encodings(bboxes);
        let mut grad = self.zeros_like();
        let mut dh = vec![vec![0.0; d]; m_count];
        for m in 0..m_count {
            let (_, cache) = self.row(m, h, &gammas);
            let w = &cache.weights;
            // u_m = Σ w_n h_n
            let dw: Vec<f64> = h.iter().map(|hn| hn.iter().zip(&du[m]).map(|(a, b)| a * b).sum()).collect();
            for (n, wn) in w.iter().enumerate() {
                for (acc, g) in dh[n].iter_mut().zip(&du[m]) {
                    *acc += wn * g;
                }
            }
            let mean: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
            let dlogits: Vec<f64> = w.iter().zip(&dw).map(|(wn, g)| wn * (g - mean)).collect();

            let dpairs: Vec<Vec<f64>> = match self.config.variant {
                FusionVariant::Linear => cache
                    .pair_inputs
                    .iter()
                    .zip(&dlogits)
                    .map(|(x, g)| self.reducer.backward(x, &[*g], &mut grad.reducer))
                    .collect(),
                FusionVariant::Mlp => {
                    let mut dy = dlogits;
                    for k in (0..self.layers.len()).rev() {
                        let x = &cache.acts[k];
                        let mut dx = self.layers[k].backward(x, &dy, &mut grad.layers[k]);
                        if k > 0 {
                            // x is tanh output of the previous layer
                            dx.iter_mut().zip(x).for_each(|(g, t)| *g *= 1.0 - t * t);
                        }
                        dy = dx;
                    }
                    let rd = self.config.reduce_dim;
                    cache
                        .pair_inputs
                        .iter()
                        .zip(dy.chunks_exact(rd))
                        .map(|(x, g)| self.reducer.backward(x, g, &mut grad.reducer))
                        .collect()
                }
            };
            for (n, dp) in dpairs.iter().enumerate() {
                for (acc, g) in dh[n].iter_mut().zip(&dp[..d]) {
                    *acc += g;
                }
            }
        }
        Ok((grad.params(), dh))
    }
}

/// `ū`: componentwise mean of the fused features.
pub fn fused_mean(u: &Matrix) -> Result<Vec<f64>> {
    let first = u.first().ok_or_else(|| Error::Shape("no fused features".into()))?;
    let d = first.len();
    if u.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("ragged feature matrix".into()));
    }
    let mut mean = vec![0.0; d];
    for row in u {
        for (acc, v) in mean.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let n = u.len() as f64;
    mean.iter_mut().for_each(|v| *v /= n);
    Ok(mean)
}
