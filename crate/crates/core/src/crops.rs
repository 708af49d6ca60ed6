//! Multi-crop bounding box generation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::rng;

/// Shift (in units of `b`) and scale factor of the four extra fixed crops.
const FIXED_TRANSFORMS: [(f64, f64, f64); 4] = [
    (0.1, 0.0, 1.5),
    (-0.1, 0.0, 1.25),
    (0.0, 0.1, 0.8),
    (0.0, -0.1, 0.65),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CropMode {
    Fixed,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub mode: CropMode,
    pub m: usize,
    /// Maximum center shift as a fraction of `b`.
    pub shift_range: f64,
    pub scale_range: [f64; 2],
    pub seed: u64,
    /// Zero every center shift.
    #[serde(default)]
    pub no_shift: bool,
    /// Keep every box at the base size.
    #[serde(default)]
    pub no_scale: bool,
}

impl Default for CropSpec {
    fn default() -> Self {
        Self {
            mode: CropMode::Fixed,
            m: 5,
            shift_range: 0.1,
            scale_range: [0.65, 1.5],
            seed: 0,
            no_shift: false,
            no_scale: false,
        }
    }
}

impl CropSpec {
    pub fn validate(&self) -> Result<()> {
        let [low, high] = self.scale_range;
        if self.m < 1 {
            return Err(Error::InvalidSpec("m must be >= 1".into()));
        }
        if !(self.shift_range >= 0.0 && self.shift_range.is_finite()) {
            return Err(Error::InvalidSpec(format!("shift_range = {}", self.shift_range)));
        }
        if !(low > 0.0 && low <= high && high.is_finite()) {
            return Err(Error::InvalidSpec(format!("scale_range = [{low}, {high}]")));
        }
        if self.mode == CropMode::Fixed && self.m != 5 {
            return Err(Error::InvalidSpec(format!("fixed mode yields 5 crops, m = {}", self.m)));
        }
        Ok(())
    }
}

/// The original box followed by the four shifted/scaled boxes.
pub fn fixed_crops(base: &BBox) -> Result<Vec<BBox>> {
    fixed_crops_with(base, true, true)
}

/// Fixed crops with the shift and/or scale component optionally switched off.
pub fn fixed_crops_with(base: &BBox, shift: bool, scale: bool) -> Result<Vec<BBox>> {
    if !(base.b > 0.0) {
        return Err(Error::InvalidBBox(format!("side b = {} must be > 0", base.b)));
    }
    base.validate()?;
    let b = base.b;
    let mut out = Vec::with_capacity(5);
    out.push(*base);
    for (dx, dy, k) in FIXED_TRANSFORMS {
        let c_x = if shift { base.c_x + dx * b } else { base.c_x };
        let c_y = if shift { base.c_y + dy * b } else { base.c_y };
        let side = if scale { k * b } else { b };
        out.push(BBox::new(c_x, c_y, side));
    }
    Ok(out)
}

/// The original box followed by `m - 1` randomly shifted and scaled boxes.
pub fn random_crops(base: &BBox, spec: &CropSpec) -> Result<Vec<BBox>> {
    let mut spec = spec.clone();
    spec.mode = CropMode::Random;
    spec.validate()?;
    base.validate()?;
    let mut rng = rng::seeded(spec.seed);
    let b = base.b;
    let shift = spec.shift_range * b;
    let [low, high] = spec.scale_range;
    let mut out = Vec::with_capacity(spec.m);
    out.push(*base);
    for _ in 1..spec.m {
        // Draw all three even when disabled so toggles do not reshuffle the others.
        let x: f64 = rng.random_range(-shift..=shift);
        let y: f64 = rng.random_range(-shift..=shift);
        let k: f64 = rng.random_range(low..=high);
        out.push(BBox::new(
            if spec.no_shift { base.c_x } else { base.c_x + x },
            if spec.no_shift { base.c_y } else { base.c_y + y },
            if spec.no_scale { b } else { k * b },
        ));
    }
    Ok(out)
}

pub fn generate(base: &BBox, spec: &CropSpec) -> Result<Vec<BBox>> {
    spec.validate()?;
    match spec.mode {
        CropMode::Fixed => fixed_crops_with(base, !spec.no_shift, !spec.no_scale),
        CropMode::Random => random_crops(base, spec),
    }
}
