//! Camera-consistency residuals and losses, plus the 2D/3D joint losses,
//! each with an analytic gradient.
//!
//! Every crop of one person must imply the same full-image translation.
//! For crops `i` and `j` the residuals are
//!
//! ```text
//! r_x = (t_xi + 2 c_xi / (b_i s_i)) - (t_xj + 2 c_xj / (b_j s_j))
//! r_y = (t_yi + 2 c_yi / (b_i s_i)) - (t_yj + 2 c_yj / (b_j s_j))
//! r_s = b_i s_i - b_j s_j
//! ```
//!
//! and `L_cam` sums `λ_x r_x² + λ_y r_y² + λ_s r_s²` over unordered pairs `i < j`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{local_to_full, BBox, ImageSize, Joint2D, Joint3D, LocalCamera};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyWeights {
    pub lambda_x: f64,
    pub lambda_y: f64,
    pub lambda_s: f64,
}

impl Default for ConsistencyWeights {
    fn default() -> Self {
        Self {
            lambda_x: 1.0,
            lambda_y: 1.0,
            lambda_s: 1e-4,
        }
    }
}

impl ConsistencyWeights {
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            lambda_x: self.lambda_x * k,
            lambda_y: self.lambda_y * k,
            lambda_s: self.lambda_s * k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if !(ok(self.lambda_x) && ok(self.lambda_y) && ok(self.lambda_s)) {
            return Err(Error::InvalidConfig(format!("consistency weights {self:?}")));
        }
        Ok(())
    }
}

/// Partial derivatives of a scalar loss with respect to one local camera.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CamGrad {
    pub s: f64,
    pub t_x: f64,
    pub t_y: f64,
}

impl CamGrad {
    pub fn as_array(&self) -> [f64; 3] {
        [self.s, self.t_x, self.t_y]
    }

    fn add(&mut self, other: &CamGrad) {
        self.s += other.s;
        self.t_x += other.t_x;
        self.t_y += other.t_y;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairResiduals {
    pub r_x: f64,
    pub r_y: f64,
    pub r_s: f64,
}

fn check_pair(cam: &LocalCamera, bbox: &BBox) -> Result<()> {
    cam.validate()?;
    if !(bbox.b > 0.0) {
        return Err(Error::DegenerateCamera(format!("bbox side b = {}", bbox.b)));
    }
    bbox.validate()
}

/// Full-image x/y translation implied by a crop, plus `b s`.
fn implied(cam: &LocalCamera, bbox: &BBox) -> (f64, f64, f64) {
    let bs = bbox.b * cam.s;
    (cam.t_x + 2.0 * bbox.c_x / bs, cam.t_y + 2.0 * bbox.c_y / bs, bs)
}

pub fn pair_residuals(cam_i: &LocalCamera, bbox_i: &BBox, cam_j: &LocalCamera, bbox_j: &BBox) -> Result<PairResiduals> {
    check_pair(cam_i, bbox_i)?;
    check_pair(cam_j, bbox_j)?;
    let (xi, yi, bsi) = implied(cam_i, bbox_i);
    let (xj, yj, bsj) = implied(cam_j, bbox_j);
    Ok(PairResiduals {
        r_x: xi - xj,
        r_y: yi - yj,
        r_s: bsi - bsj,
    })
}

fn check_crops(cams: &[LocalCamera], bboxes: &[BBox]) -> Result<()> {
    if cams.len() != bboxes.len() {
        return Err(Error::Shape(format!("{} cameras vs {} boxes", cams.len(), bboxes.len())));
    }
    for (cam, bbox) in cams.iter().zip(bboxes) {
        check_pair(cam, bbox)?;
    }
    Ok(())
}

fn check_cam_inputs(cams: &[LocalCamera], bboxes: &[BBox], w: &ConsistencyWeights) -> Result<()> {
    check_crops(cams, bboxes)?;
    if cams.len() < 2 {
        return Err(Error::NotEnoughCrops(cams.len()));
    }
    w.validate()
}

/// Residuals for every unordered pair `(i, j)` with `i < j`.
pub fn all_pair_residuals(cams: &[LocalCamera], bboxes: &[BBox]) -> Result<Vec<((usize, usize), PairResiduals)>> {
    check_crops(cams, bboxes)?;
    if cams.len() < 2 {
        return Err(Error::NotEnoughCrops(cams.len()));
    }
    let mut out = Vec::with_capacity(cams.len() * (cams.len() - 1) / 2);
    for i in 0..cams.len() {
        for j in i + 1..cams.len() {
            out.push(((i, j), pair_residuals(&cams[i], &bboxes[i], &cams[j], &bboxes[j])?));
        }
    }
    Ok(out)
}

pub fn cam_loss(cams: &[LocalCamera], bboxes: &[BBox], w: &ConsistencyWeights) -> Result<f64> {
    check_cam_inputs(cams, bboxes, w)?;
    let mut total = 0.0;
    for (_, r) in all_pair_residuals(cams, bboxes)? {
        total += w.lambda_x * r.r_x * r.r_x + w.lambda_y * r.r_y * r.r_y + w.lambda_s * r.r_s * r.r_s;
    }
    Ok(total)
}

pub fn cam_loss_grad(cams: &[LocalCamera], bboxes: &[BBox], w: &ConsistencyWeights) -> Result<Vec<CamGrad>> {
    check_cam_inputs(cams, bboxes, w)?;
    let m = cams.len();
    let mut grads = vec![CamGrad::default(); m];
    for i in 0..m {
        for j in i + 1..m {
            let r = pair_residuals(&cams[i], &bboxes[i], &cams[j], &bboxes[j])?;
            let gx = 2.0 * w.lambda_x * r.r_x;
            let gy = 2.0 * w.lambda_y * r.r_y;
            let gs = 2.0 * w.lambda_s * r.r_s;
            for (k, sign) in [(i, 1.0), (j, -1.0)] {
                let (cam, bbox) = (&cams[k], &bboxes[k]);
                // d(2c/(b s))/ds = -2c/(b s^2)
                let ds_denom = bbox.b * cam.s * cam.s;
                grads[k].add(&CamGrad {
                    s: sign * (gx * (-2.0 * bbox.c_x / ds_denom) + gy * (-2.0 * bbox.c_y / ds_denom) + gs * bbox.b),
                    t_x: sign * gx,
                    t_y: sign * gy,
                });
            }
        }
    }
    Ok(grads)
}

/// Joint count and camera count both have to line up for the 2D loss.
fn check_2d_inputs(j3d: &[Joint3D], gt2d: &[Joint2D], cams: &[LocalCamera], bboxes: &[BBox]) -> Result<()> {
    if j3d.len() != gt2d.len() {
        return Err(Error::Shape(format!("{} 3D joints vs {} 2D joints", j3d.len(), gt2d.len())));
    }
    check_crops(cams, bboxes)
}

/// Sum over crops and joints of the squared full-image reprojection error.
pub fn loss_2d(j3d: &[Joint3D], gt2d: &[Joint2D], cams: &[LocalCamera], bboxes: &[BBox], img: ImageSize) -> Result<f64> {
    check_2d_inputs(j3d, gt2d, cams, bboxes)?;
    let mut total = 0.0;
    for (cam, bbox) in cams.iter().zip(bboxes) {
        let full = local_to_full(cam, bbox, img)?;
        for (j, gt) in j3d.iter().zip(gt2d) {
            let p = crate::geometry::project_full(j, &full)?;
            let (du, dv) = (p.u - gt.u, p.v - gt.v);
            total += du * du + dv * dv;
        }
    }
    Ok(total)
}

/// Gradient of [`loss_2d`] with respect to each camera and each 3D joint.
#[derive(Debug, Clone, PartialEq)]
pub struct Loss2dGrad {
    pub cams: Vec<CamGrad>,
    pub joints: Vec<[f64; 3]>,
}

pub fn loss_2d_grad(
    j3d: &[Joint3D],
    gt2d: &[Joint2D],
    cams: &[LocalCamera],
    bboxes: &[BBox],
    img: ImageSize,
) -> Result<Loss2dGrad> {
    check_2d_inputs(j3d, gt2d, cams, bboxes)?;
    let mut cam_grads = vec![CamGrad::default(); cams.len()];
    let mut joint_grads = vec![[0.0; 3]; j3d.len()];
    for (k, (cam, bbox)) in cams.iter().zip(bboxes).enumerate() {
        let full = local_to_full(cam, bbox, img)?;
        let f = full.f_full;
        let bss = bbox.b * cam.s * cam.s;
        // Derivatives of the full translation with respect to s.
        let dtx_ds = -2.0 * bbox.c_x / bss;
        let dty_ds = -2.0 * bbox.c_y / bss;
        let dtz_ds = -2.0 * f / bss;
        let (mut g_tx, mut g_ty, mut g_tz) = (0.0, 0.0, 0.0);
        for (n, (j, gt)) in j3d.iter().zip(gt2d).enumerate() {
            let depth = j.z + full.t_z;
            if depth <= 0.0 {
                return Err(Error::BehindCamera { depth });
            }
            let px = j.x + full.t_x;
            let py = j.y + full.t_y;
            let eu = f * px / depth + full.width / 2.0 - gt.u;
            let ev = f * py / depth + full.height / 2.0 - gt.v;
            // dL/du = 2 eu; du/dpx = f/D; du/dD = -f px / D^2
            let a = 2.0 * eu * f / depth;
            let c = 2.0 * ev * f / depth;
            let dz = -(a * px + c * py) / depth;
            g_tx += a;
            g_ty += c;
            g_tz += dz;
            joint_grads[n][0] += a;
            joint_grads[n][1] += c;
            joint_grads[n][2] += dz;
        }
        cam_grads[k] = CamGrad {
            s: g_tx * dtx_ds + g_ty * dty_ds + g_tz * dtz_ds,
            t_x: g_tx,
            t_y: g_ty,
        };
    }
    Ok(Loss2dGrad {
        cams: cam_grads,
        joints: joint_grads,
    })
}

pub fn loss_3d(j3d: &[Joint3D], gt3d: &[Joint3D]) -> Result<f64> {
    if j3d.len() != gt3d.len() {
        return Err(Error::Shape(format!("{} joints vs {} ground truth", j3d.len(), gt3d.len())));
    }
    Ok(j3d
        .iter()
        .zip(gt3d)
        .map(|(a, b)| {
            let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
            dx * dx + dy * dy + dz * dz
        })
        .sum())
}

/// Gradient of [`loss_3d`] with respect to the predicted joints.
pub fn loss_3d_grad(j3d: &[Joint3D], gt3d: &[Joint3D]) -> Result<Vec<[f64; 3]>> {
    if j3d.len() != gt3d.len() {
        return Err(Error::Shape(format!("{} joints vs {} ground truth", j3d.len(), gt3d.len())));
    }
    Ok(j3d
        .iter()
        .zip(gt3d)
        .map(|(a, b)| [2.0 * (a.x - b.x), 2.0 * (a.y - b.y), 2.0 * (a.z - b.z)])
        .collect())
}
