//! Weak-perspective cameras for cropped and full images.
//!
//! Pixel convention: origin at the top-left corner, y pointing down. A
//! bounding box is a square of side `b` whose center sits at the signed
//! offset `(c_x, c_y)` from the full-image center. Joints arrive already
//! rotated into the camera-aligned body frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scales at or below this value are rejected as degenerate.
pub const MIN_SCALE: f64 = 1e-9;

/// Square crop box relative to the full-image center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub c_x: f64,
    pub c_y: f64,
    pub b: f64,
}

impl BBox {
    pub fn new(c_x: f64, c_y: f64, b: f64) -> Self {
        Self { c_x, c_y, b }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_x.is_finite() && self.c_y.is_finite() && self.b.is_finite()) {
            return Err(Error::InvalidBBox(format!("non-finite box {self:?}")));
        }
        if self.b <= 0.0 {
            return Err(Error::InvalidBBox(format!("side b = {} must be > 0", self.b)));
        }
        Ok(())
    }

    /// Left-top corner in full-image pixels.
    pub fn left_top(&self, img: ImageSize) -> (f64, f64) {
        (
            self.c_x + img.width / 2.0 - self.b / 2.0,
            self.c_y + img.height / 2.0 - self.b / 2.0,
        )
    }

    /// Whether any part of the box lies outside the image.
    pub fn exceeds(&self, img: ImageSize) -> bool {
        let (x0, y0) = self.left_top(img);
        x0 < 0.0 || y0 < 0.0 || x0 + self.b > img.width || y0 + self.b > img.height
    }
}

/// Per-crop weak-perspective camera `(s, t_x, t_y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalCamera {
    pub s: f64,
    pub t_x: f64,
    pub t_y: f64,
}

impl LocalCamera {
    pub fn new(s: f64, t_x: f64, t_y: f64) -> Self {
        Self { s, t_x, t_y }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s.is_finite() && self.t_x.is_finite() && self.t_y.is_finite()) {
            return Err(Error::DegenerateCamera(format!("non-finite camera {self:?}")));
        }
        if self.s <= MIN_SCALE {
            return Err(Error::DegenerateCamera(format!("scale s = {} too small", self.s)));
        }
        Ok(())
    }
}

/// Full-image camera: translation plus the image it projects into.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullCamera {
    pub t_x: f64,
    pub t_y: f64,
    pub t_z: f64,
    pub width: f64,
    pub height: f64,
    pub f_full: f64,
}

impl FullCamera {
    pub fn new(t_x: f64, t_y: f64, t_z: f64, width: f64, height: f64) -> Result<Self> {
        let f_full = full_focal(width, height)?;
        let cam = Self {
            t_x,
            t_y,
            t_z,
            width,
            height,
            f_full,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn image(&self) -> ImageSize {
        ImageSize {
            width: self.width,
            height: self.height,
        }
    }

    pub fn translation(&self) -> [f64; 3] {
        [self.t_x, self.t_y, self.t_z]
    }

    pub fn validate(&self) -> Result<()> {
        self.image().validate()?;
        if !(self.t_x.is_finite() && self.t_y.is_finite() && self.t_z.is_finite()) {
            return Err(Error::DegenerateCamera(format!("non-finite translation {self:?}")));
        }
        if self.t_z <= 0.0 {
            return Err(Error::DegenerateCamera(format!("t_z = {} must be > 0", self.t_z)));
        }
        let expected = self.width.hypot(self.height);
        if (self.f_full - expected).abs() > 1e-9 * expected {
            return Err(Error::DegenerateCamera(format!(
                "f_full = {} does not match image diagonal {expected}",
                self.f_full
            )));
        }
        Ok(())
    }
}

/// Crop intrinsics: focal length and side of the resized square crop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropIntrinsics {
    pub f: f64,
    pub res: f64,
}

impl Default for CropIntrinsics {
    fn default() -> Self {
        Self {
            f: 5000.0,
            res: 224.0,
        }
    }
}

impl CropIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.f > 0.0 && self.res > 0.0 && self.f.is_finite() && self.res.is_finite()) {
            return Err(Error::InvalidConfig(format!("crop intrinsics {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: f64,
    pub height: f64,
}

impl ImageSize {
    pub fn new(width: f64, height: f64) -> Self {
        Self { width, height }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.height > 0.0 && self.width.is_finite() && self.height.is_finite()) {
            return Err(Error::InvalidImage {
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Joint3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Joint3D {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Joint2D {
    pub u: f64,
    pub v: f64,
}

impl Joint2D {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

/// Depth of the crop camera, `2 f / (res s)`.
///
/// The 2 is the side in meters of the cube assumed to enclose the body.
pub fn crop_tz(cam: &LocalCamera, intr: &CropIntrinsics) -> Result<f64> {
    cam.validate()?;
    Ok(2.0 * intr.f / (intr.res * cam.s))
}

/// Pinhole projection into the resized crop.
pub fn project_crop(j: &Joint3D, cam: &LocalCamera, intr: &CropIntrinsics) -> Result<Joint2D> {
    let t_z = crop_tz(cam, intr)?;
    let depth = j.z + t_z;
    if depth <= 0.0 {
        return Err(Error::BehindCamera { depth });
    }
    let c = intr.res / 2.0;
    Ok(Joint2D {
        u: intr.f * (j.x + cam.t_x) / depth + c,
        v: intr.f * (j.y + cam.t_y) / depth + c,
    })
}

/// Focal length assigned to the full image: its diagonal in pixels.
pub fn full_focal(width: f64, height: f64) -> Result<f64> {
    ImageSize::new(width, height).validate()?;
    Ok(width.hypot(height))
}

/// Lift a crop camera into the full image.
pub fn local_to_full(cam: &LocalCamera, bbox: &BBox, img: ImageSize) -> Result<FullCamera> {
    cam.validate()?;
    bbox.validate()?;
    let f_full = full_focal(img.width, img.height)?;
    let bs = bbox.b * cam.s;
    if bs == 0.0 || !bs.is_finite() {
        return Err(Error::DegenerateCamera(format!("b*s = {bs}")));
    }
    Ok(FullCamera {
        t_x: cam.t_x + 2.0 * bbox.c_x / bs,
        t_y: cam.t_y + 2.0 * bbox.c_y / bs,
        t_z: 2.0 * f_full / bs,
        width: img.width,
        height: img.height,
        f_full,
    })
}

/// Local camera of `bbox` that lifts back to `full`.
pub fn full_to_local(full: &FullCamera, bbox: &BBox) -> Result<LocalCamera> {
    if !(full.t_z > 0.0) {
        return Err(Error::DegenerateCamera(format!("t_z = {} must be > 0", full.t_z)));
    }
    if !(bbox.b > 0.0) {
        return Err(Error::DegenerateCamera(format!("b = {} must be > 0", bbox.b)));
    }
    bbox.validate()?;
    let s = 2.0 * full.f_full / (bbox.b * full.t_z);
    let bs = bbox.b * s;
    Ok(LocalCamera {
        s,
        t_x: full.t_x - 2.0 * bbox.c_x / bs,
        t_y: full.t_y - 2.0 * bbox.c_y / bs,
    })
}

/// Pinhole projection into the full image.
pub fn project_full(j: &Joint3D, full: &FullCamera) -> Result<Joint2D> {
    let depth = j.z + full.t_z;
    if depth <= 0.0 {
        return Err(Error::BehindCamera { depth });
    }
    Ok(Joint2D {
        u: full.f_full * (j.x + full.t_x) / depth + full.width / 2.0,
        v: full.f_full * (j.y + full.t_y) / depth + full.height / 2.0,
    })
}

/// Map a full-image pixel into resized-crop pixels of `bbox`.
pub fn crop_pixel_map(p: &Joint2D, bbox: &BBox, img: ImageSize, intr: &CropIntrinsics) -> Result<Joint2D> {
    bbox.validate()?;
    let (x0, y0) = bbox.left_top(img);
    let scale = intr.res / bbox.b;
    Ok(Joint2D {
        u: (p.u - x0) * scale,
        v: (p.v - y0) * scale,
    })
}

pub fn project_crop_all(joints: &[Joint3D], cam: &LocalCamera, intr: &CropIntrinsics) -> Result<Vec<Joint2D>> {
    joints.iter().map(|j| project_crop(j, cam, intr)).collect()
}

pub fn project_full_all(joints: &[Joint3D], full: &FullCamera) -> Result<Vec<Joint2D>> {
    joints.iter().map(|j| project_full(j, full)).collect()
}
