//! Synthetic scenes: a jittered 24-joint skeleton in front of a full-image
//! camera, the crops around it, and the local cameras each crop implies.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::crops::{self, CropSpec};
use crate::error::{Error, Result};
use crate::geometry::{full_to_local, project_full_all, BBox, FullCamera, ImageSize, Joint2D, Joint3D, LocalCamera};
use crate::rng;

/// Rest-pose joint template in meters, y up, pelvis at the origin.
const TEMPLATE: [[f64; 3]; 24] = [
    [0.0, 0.0, 0.0],       // pelvis
    [0.06, -0.09, 0.0],    // left hip
    [-0.06, -0.09, 0.0],   // right hip
    [0.0, 0.11, -0.02],    // spine 1
    [0.10, -0.47, 0.0],    // left knee
    [-0.10, -0.47, 0.0],   // right knee
    [0.0, 0.25, 0.0],      // spine 2
    [0.09, -0.87, -0.04],  // left ankle
    [-0.09, -0.87, -0.04], // right ankle
    [0.0, 0.31, 0.02],     // spine 3
    [0.11, -0.93, 0.08],   // left foot
    [-0.11, -0.93, 0.08],  // right foot
    [0.0, 0.52, -0.01],    // neck
    [0.08, 0.43, 0.0],     // left collar
    [-0.08, 0.43, 0.0],    // right collar
    [0.0, 0.60, 0.05],     // head
    [0.18, 0.46, -0.01],   // left shoulder
    [-0.18, 0.46, -0.01],  // right shoulder
    [0.22, 0.20, -0.03],   // left elbow
    [-0.22, 0.20, -0.03],  // right elbow
    [0.24, -0.04, 0.02],   // left wrist
    [-0.24, -0.04, 0.02],  // right wrist
    [0.25, -0.12, 0.03],   // left hand
    [-0.25, -0.12, 0.03],  // right hand
];

const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub image: ImageSize,
    pub tz_range: [f64; 2],
    /// Std dev of per-joint jitter in meters.
    pub joint_jitter: f64,
    /// Joints are rescaled so none is farther than this from their centroid.
    pub max_spread: f64,
    /// Extra fraction of the joint extent added around the base box.
    pub bbox_margin: f64,
    /// Fraction of the image around its center where the body center may land.
    pub center_region: f64,
    pub crops: CropSpec,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            image: ImageSize::new(1920.0, 1080.0),
            tz_range: [4.0, 15.0],
            joint_jitter: 0.02,
            max_spread: 1.0,
            bbox_margin: 0.2,
            center_region: 0.5,
            crops: CropSpec::default(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        self.image.validate()?;
        let [lo, hi] = self.tz_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidConfig(format!("tz_range = [{lo}, {hi}]")));
        }
        if !(self.joint_jitter >= 0.0 && self.max_spread > 0.0 && self.max_spread <= 1.0) {
            return Err(Error::InvalidConfig("joint jitter must be >= 0 and spread in (0, 1] m".into()));
        }
        if !(self.bbox_margin >= 0.0 && (0.0..=1.0).contains(&self.center_region)) {
            return Err(Error::InvalidConfig("bbox_margin >= 0 and center_region in [0, 1]".into()));
        }
        self.crops.validate()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseSigma {
    pub s: f64,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub joints3d: Vec<Joint3D>,
    pub full_cam: FullCamera,
    pub bboxes: Vec<BBox>,
    pub local_cams: Vec<LocalCamera>,
    pub gt2d_full: Vec<Joint2D>,
    pub noise_sigma: NoiseSigma,
}

impl Scene {
    pub fn image(&self) -> ImageSize {
        self.full_cam.image()
    }

    pub fn validate(&self) -> Result<()> {
        self.full_cam.validate()?;
        if self.bboxes.len() != self.local_cams.len() {
            return Err(Error::Shape(format!(
                "{} boxes vs {} local cameras",
                self.bboxes.len(),
                self.local_cams.len()
            )));
        }
        if self.joints3d.len() != self.gt2d_full.len() {
            return Err(Error::Shape(format!(
                "{} 3D joints vs {} 2D joints",
                self.joints3d.len(),
                self.gt2d_full.len()
            )));
        }
        for (b, c) in self.bboxes.iter().zip(&self.local_cams) {
            b.validate()?;
            c.validate()?;
        }
        Ok(())
    }
}

fn skeleton(rng: &mut rng::SeededRng, cfg: &SceneConfig) -> Vec<Joint3D> {
    let jitter = Normal::new(0.0, cfg.joint_jitter.max(f64::MIN_POSITIVE)).expect("finite jitter");
    let yaw: f64 = rng.random_range(-PI..PI);
    let (sin, cos) = yaw.sin_cos();
    let mut joints: Vec<Joint3D> = TEMPLATE
        .iter()
        .map(|[x, y, z]| {
            let (x, y, z) = if cfg.joint_jitter > 0.0 {
                (x + jitter.sample(rng), y + jitter.sample(rng), z + jitter.sample(rng))
            } else {
                (*x, *y, *z)
            };
            // yaw about the vertical axis, then flip to the y-down camera frame
            Joint3D::new(cos * x + sin * z, -y, -sin * x + cos * z)
        })
        .collect();
    let k = joints.len() as f64;
    let (cx, cy, cz) = joints
        .iter()
        .fold((0.0, 0.0, 0.0), |(a, b, c), j| (a + j.x / k, b + j.y / k, c + j.z / k));
    let mut radius: f64 = 0.0;
    for j in &mut joints {
        j.x -= cx;
        j.y -= cy;
        j.z -= cz;
        radius = radius.max((j.x * j.x + j.y * j.y + j.z * j.z).sqrt());
    }
    if radius > cfg.max_spread {
        let k = cfg.max_spread / radius;
        for j in &mut joints {
            j.x *= k;
            j.y *= k;
            j.z *= k;
        }
    }
    joints
}

/// Square box around the projected joints, enlarged by the margin.
pub fn enclosing_bbox(points: &[Joint2D], img: ImageSize, margin: f64) -> Result<BBox> {
    let (mut u0, mut u1, mut v0, mut v1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        u0 = u0.min(p.u);
        u1 = u1.max(p.u);
        v0 = v0.min(p.v);
        v1 = v1.max(p.v);
    }
    let side = (u1 - u0).max(v1 - v0) * (1.0 + margin);
    let bbox = BBox::new((u0 + u1) / 2.0 - img.width / 2.0, (v0 + v1) / 2.0 - img.height / 2.0, side);
    bbox.validate()?;
    Ok(bbox)
}

pub fn make_scene(seed: u64, cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = rng::seeded(seed);
    let img = cfg.image;
    let focal = img.width.hypot(img.height);
    for _ in 0..MAX_ATTEMPTS {
        let joints = skeleton(&mut rng, cfg);
        let [lo, hi] = cfg.tz_range;
        let t_z: f64 = rng.random_range(lo..=hi);
        let half = cfg.center_region / 2.0;
        let du: f64 = rng.random_range(-half..=half) * img.width;
        let dv: f64 = rng.random_range(-half..=half) * img.height;
        if joints.iter().any(|j| j.z + t_z <= 0.0) {
            continue;
        }
        let full_cam = FullCamera::new(du * t_z / focal, dv * t_z / focal, t_z, img.width, img.height)?;
        let gt2d_full = project_full_all(&joints, &full_cam)?;
        let base = enclosing_bbox(&gt2d_full, img, cfg.bbox_margin)?;
        let spec = CropSpec {
            seed: rng.random(),
            ..cfg.crops.clone()
        };
        let bboxes = crops::generate(&base, &spec)?;
        let local_cams = bboxes
            .iter()
            .map(|b| full_to_local(&full_cam, b))
            .collect::<Result<Vec<_>>>()?;
        return Ok(Scene {
            joints3d: joints,
            full_cam,
            bboxes,
            local_cams,
            gt2d_full,
            noise_sigma: NoiseSigma::default(),
        });
    }
    Err(Error::numerical(format!("no valid scene after {MAX_ATTEMPTS} attempts")))
}

/// Floor applied to perturbed scales.
pub const MIN_PERTURBED_SCALE: f64 = 1e-3;

/// Add Gaussian noise to every local camera.
pub fn perturb(scene: &Scene, sigma_s: f64, sigma_t: f64, seed: u64) -> Result<Scene> {
    if !(sigma_s >= 0.0 && sigma_t >= 0.0 && sigma_s.is_finite() && sigma_t.is_finite()) {
        return Err(Error::InvalidConfig(format!("noise sigmas ({sigma_s}, {sigma_t}) must be >= 0")));
    }
    let mut rng = rng::seeded(seed);
    let mut out = scene.clone();
    for cam in &mut out.local_cams {
        let [ns, nx, ny]: [f64; 3] = std::array::from_fn(|_| rng.sample(rand_distr::StandardNormal));
        cam.s = (cam.s + sigma_s * ns).max(MIN_PERTURBED_SCALE);
        cam.t_x += sigma_t * nx;
        cam.t_y += sigma_t * ny;
    }
    out.noise_sigma = NoiseSigma { s: sigma_s, t: sigma_t };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consistency::{cam_loss, loss_2d, ConsistencyWeights};

    #[test]
    fn scenes_are_consistent() {
        for seed in 0..20 {
            let scene = make_scene(seed, &SceneConfig::default()).unwrap();
            scene.validate().unwrap();
            assert_eq!(scene.joints3d.len(), 24);
            assert_eq!(scene.bboxes.len(), 5);
            let l = cam_loss(&scene.local_cams, &scene.bboxes, &ConsistencyWeights::default()).unwrap();
            assert!(l <= 1e-12, "seed {seed}: {l}");
            let l2 = loss_2d(&scene.joints3d, &scene.gt2d_full, &scene.local_cams, &scene.bboxes, scene.image()).unwrap();
            assert!(l2 <= 1e-9, "seed {seed}: {l2}");
            let [lo, hi] = SceneConfig::default().tz_range;
            assert!((lo..=hi).contains(&scene.full_cam.t_z));
        }
    }

    #[test]
    fn skeleton_spread_is_bounded() {
        let scene = make_scene(3, &SceneConfig::default()).unwrap();
        let k = scene.joints3d.len() as f64;
        let c = scene.joints3d.iter().fold([0.0; 3], |a, j| [a[0] + j.x / k, a[1] + j.y / k, a[2] + j.z / k]);
        for j in &scene.joints3d {
            let r = ((j.x - c[0]).powi(2) + (j.y - c[1]).powi(2) + (j.z - c[2]).powi(2)).sqrt();
            assert!(r <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn base_box_covers_joints() {
        let scene = make_scene(5, &SceneConfig::default()).unwrap();
        let img = scene.image();
        let (x0, y0) = scene.bboxes[0].left_top(img);
        let b = scene.bboxes[0].b;
        for p in &scene.gt2d_full {
            assert!(p.u > x0 && p.u < x0 + b && p.v > y0 && p.v < y0 + b);
        }
    }

    #[test]
    fn deterministic_json() {
        let a = serde_json::to_string(&make_scene(7, &SceneConfig::default()).unwrap()).unwrap();
        let b = serde_json::to_string(&make_scene(7, &SceneConfig::default()).unwrap()).unwrap();
        assert_eq!(a, b);
        let back: Scene = serde_json::from_str(&a).unwrap();
        assert_eq!(back, make_scene(7, &SceneConfig::default()).unwrap());
    }

    #[test]
    fn zero_noise_is_identity() {
        let scene = make_scene(1, &SceneConfig::default()).unwrap();
        let noisy = perturb(&scene, 0.0, 0.0, 99).unwrap();
        assert_eq!(noisy.local_cams, scene.local_cams);
    }

    #[test]
    fn scale_noise_breaks_consistency() {
        for seed in 0..100 {
            let scene = make_scene(seed, &SceneConfig::default()).unwrap();
            let noisy = perturb(&scene, 0.05, 0.0, seed + 1000).unwrap();
            let l = cam_loss(&noisy.local_cams, &noisy.bboxes, &ConsistencyWeights::default()).unwrap();
            assert!(l > 0.0);
        }
    }

    #[test]
    fn noise_is_centered() {
        let scene = Scene {
            local_cams: vec![LocalCamera::new(5.0, 0.0, 0.0); 10_000],
            bboxes: vec![BBox::new(0.0, 0.0, 1.0); 10_000],
            ..make_scene(0, &SceneConfig::default()).unwrap()
        };
        let (sigma_s, sigma_t) = (0.05, 0.2);
        let noisy = perturb(&scene, sigma_s, sigma_t, 4).unwrap();
        let n = 10_000.0;
        let mean_s = noisy.local_cams.iter().map(|c| c.s - 5.0).sum::<f64>() / n;
        let mean_x = noisy.local_cams.iter().map(|c| c.t_x).sum::<f64>() / n;
        let mean_y = noisy.local_cams.iter().map(|c| c.t_y).sum::<f64>() / n;
        assert!(mean_s.abs() <= 3.0 * sigma_s / 100.0);
        assert!(mean_x.abs() <= 3.0 * sigma_t / 100.0);
        assert!(mean_y.abs() <= 3.0 * sigma_t / 100.0);
    }

    #[test]
    fn invalid_configs() {
        let bad = SceneConfig {
            tz_range: [-1.0, 3.0],
            ..SceneConfig::default()
        };
        assert!(make_scene(0, &bad).is_err());
        assert!(perturb(&make_scene(0, &SceneConfig::default()).unwrap(), -0.1, 0.0, 0).is_err());
    }
}
