//! Minimal dense layers with hand-written backward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::SeededRng;

/// Fully connected layer `y = W x + b`, `W` stored row-major as `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    /// Uniform weights in `[-1/sqrt(in), 1/sqrt(in)]`, zero bias.
    pub fn init(inputs: usize, outputs: usize, rng: &mut SeededRng) -> Self {
        let a = 1.0 / (inputs as f64).sqrt();
        let weight = (0..inputs * outputs).map(|_| rng.random_range(-a..=a)).collect();
        Self {
            inputs,
            outputs,
            weight,
            bias: vec![0.0; outputs],
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        self.weight
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut dx = vec![0.0; self.inputs];
        for (o, g) in dy.iter().enumerate() {
            if *g == 0.0 {
                continue;
            }
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut grad.weight[o * self.inputs..(o + 1) * self.inputs];
            for i in 0..self.inputs {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
            grad.bias[o] += g;
        }
        dx
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.inputs, self.outputs)
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.weight);
        out.extend_from_slice(&self.bias);
    }

    /// Reads parameters in [`Dense::write_params`] order; returns the rest of the slice.
    pub fn read_params<'a>(&mut self, src: &'a [f64]) -> &'a [f64] {
        let (w, rest) = src.split_at(self.weight.len());
        self.weight.copy_from_slice(w);
        let (b, rest) = rest.split_at(self.bias.len());
        self.bias.copy_from_slice(b);
        rest
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// `log Σ exp(x)` over the given values.
pub fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn l2_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Per-vector L2 normalization. A zero vector stays zero.
pub fn l2_normalize(x: &[f64]) -> (Vec<f64>, f64) {
    let n = l2_norm(x);
    if n == 0.0 {
        return (x.to_vec(), n);
    }
    (x.iter().map(|v| v / n).collect(), n)
}

/// Backward pass of [`l2_normalize`] given the normalized output and the input norm.
pub fn l2_normalize_backward(y: &[f64], norm: f64, dy: &[f64]) -> Vec<f64> {
    if norm == 0.0 {
        return dy.to_vec();
    }
    let proj: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    y.iter().zip(dy).map(|(yi, gi)| (gi - yi * proj) / norm).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows() {
        let w = softmax(&[1.0, 2.0, 3.0]);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(w[2] > w[1] && w[1] > w[0]);
        let w = softmax(&[1000.0, 0.0]);
        assert_eq!(w, vec![1.0, 0.0]);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) == 1.0);
    }

    #[test]
    fn lse_matches_naive() {
        let v = [0.1, -2.0, 3.5];
        let naive = v.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(v.iter().copied()) - naive).abs() < 1e-14);
    }

    #[test]
    fn dense_param_round_trip() {
        let mut rng = crate::rng::seeded(3);
        let layer = Dense::init(4, 3, &mut rng);
        let mut flat = Vec::new();
        layer.write_params(&mut flat);
        assert_eq!(flat.len(), layer.param_count());
        let mut copy = layer.zeros_like();
        assert!(copy.read_params(&flat).is_empty());
        assert_eq!(copy, layer);
        let a = 0.5;
        assert!(layer.weight.iter().all(|w| w.abs() <= a));
    }
}
