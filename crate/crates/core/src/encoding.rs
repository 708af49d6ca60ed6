//! Sinusoidal positional encoding of bounding boxes.
//!
//! A scalar `p` becomes `[p, sin(2^0 π p), cos(2^0 π p), …, sin(2^L π p), cos(2^L π p)]`,
//! i.e. `2L + 3` values. Boxes encode each of `(c_x, c_y, b)` and concatenate.
//!
//! Coordinates are encoded in raw pixels unless a pre-scale is set. With the
//! default `L = 32` the top bands see arguments near `2^32 π p`; for
//! pixel-sized `p` those entries carry no usable phase information in f64,
//! but they are still deterministic.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;

pub const DEFAULT_BANDS: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    /// Highest frequency exponent `L`.
    pub bands: u32,
    /// Multiplier applied to each coordinate before encoding.
    pub prescale: f64,
}

impl Default for Encoder {
    fn default() -> Self {
        Self {
            bands: DEFAULT_BANDS,
            prescale: 1.0,
        }
    }
}

impl Encoder {
    pub fn new(bands: u32) -> Self {
        Self { bands, prescale: 1.0 }
    }

    pub fn scalar_len(&self) -> usize {
        2 * self.bands as usize + 3
    }

    pub fn bbox_len(&self) -> usize {
        3 * self.scalar_len()
    }

    pub fn encode_bbox(&self, bbox: &BBox) -> PosEncoding {
        let mut values = Vec::with_capacity(self.bbox_len());
        for p in [bbox.c_x, bbox.c_y, bbox.b] {
            encode_into(p * self.prescale, self.bands, &mut values);
        }
        PosEncoding {
            values,
            bands: self.bands,
        }
    }

    pub fn relative(&self, m: (usize, &BBox), n: (usize, &BBox)) -> RelEncoding {
        let a = self.encode_bbox(m.1);
        let b = self.encode_bbox(n.1);
        RelEncoding {
            values: a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect(),
            m: m.0,
            n: n.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosEncoding {
    pub values: Vec<f64>,
    pub bands: u32,
}

/// `γ(B_m) − γ(B_n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelEncoding {
    pub values: Vec<f64>,
    pub m: usize,
    pub n: usize,
}

fn encode_into(p: f64, bands: u32, out: &mut Vec<f64>) {
    out.push(p);
    for k in 0..=bands {
        let arg = (2f64).powi(k as i32) * PI * p;
        out.push(arg.sin());
        out.push(arg.cos());
    }
}

pub fn encode(p: f64, bands: u32) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * bands as usize + 3);
    encode_into(p, bands, &mut out);
    out
}

pub fn encode_bbox(bbox: &BBox, bands: u32) -> PosEncoding {
    Encoder::new(bands).encode_bbox(bbox)
}

pub fn relative(bbox_m: &BBox, bbox_n: &BBox, bands: u32) -> RelEncoding {
    Encoder::new(bands).relative((0, bbox_m), (1, bbox_n))
}
