//! Randomized finite-difference checks for every analytic gradient in the crate.
//!
//! Each `check_*` function builds one random configuration from `seed`,
//! evaluates the analytic gradient and compares it with central differences.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::consistency::{cam_loss, cam_loss_grad, loss_2d, loss_2d_grad, loss_3d, loss_3d_grad, ConsistencyWeights};
use crate::encoding::Encoder;
use crate::error::Result;
use crate::features::contrast::{contrastive_loss, contrastive_loss_grad, Batch, ContrastiveConfig};
use crate::features::fusion::{FusionConfig, FusionNet};
use crate::features::gradcheck::{grad_check, GradReport, Tolerance};
use crate::features::{random_matrix, Matrix};
use crate::geometry::{BBox, Joint3D, LocalCamera};
use crate::rng;
use crate::synth::{make_scene, perturb, SceneConfig};

pub const CAMERA_TOL: Tolerance = Tolerance::new(1e-5, 1e-8);
pub const CONTRASTIVE_TOL: Tolerance = Tolerance::new(1e-5, 1e-8);
pub const FUSION_TOL: Tolerance = Tolerance::new(1e-4, 1e-8);

/// Number of network parameters probed per fusion configuration.
const FUSION_PARAM_SAMPLES: usize = 40;

fn flatten_cams(cams: &[LocalCamera]) -> Vec<f64> {
    cams.iter().flat_map(|c| [c.s, c.t_x, c.t_y]).collect()
}

fn unflatten_cams(x: &[f64]) -> Vec<LocalCamera> {
    x.chunks_exact(3).map(|p| LocalCamera::new(p[0], p[1], p[2])).collect()
}

fn random_crop_set(rng: &mut rng::SeededRng, m: usize) -> (Vec<LocalCamera>, Vec<BBox>) {
    let cams = (0..m)
        .map(|_| {
            LocalCamera::new(
                rng.random_range(0.5..2.0),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            )
        })
        .collect();
    let bboxes = (0..m)
        .map(|_| {
            BBox::new(
                rng.random_range(-500.0..500.0),
                rng.random_range(-300.0..300.0),
                rng.random_range(100.0..600.0),
            )
        })
        .collect();
    (cams, bboxes)
}

pub fn check_cam_loss(seed: u64) -> Result<GradReport> {
    let mut rng = rng::seeded(seed);
    let m = rng.random_range(2..=5);
    let (cams, bboxes) = random_crop_set(&mut rng, m);
    let w = ConsistencyWeights::default();
    let g: Vec<f64> = cam_loss_grad(&cams, &bboxes, &w)?
        .iter()
        .flat_map(|g| g.as_array())
        .collect();
    grad_check(
        |x| cam_loss(&unflatten_cams(x), &bboxes, &w),
        &flatten_cams(&cams),
        &g,
        None,
        CAMERA_TOL,
    )
}

/// Checks both the camera and the joint gradient of the 2D loss.
pub fn check_loss_2d(seed: u64) -> Result<GradReport> {
    let mut rng = rng::seeded(seed);
    let m = rng.random_range(2..=5);
    let spec = crate::crops::CropSpec {
        mode: crate::crops::CropMode::Random,
        m,
        ..Default::default()
    };
    let cfg = SceneConfig {
        crops: spec,
        ..SceneConfig::default()
    };
    let scene = perturb(&make_scene(rng.random(), &cfg)?, 0.01, 0.01, rng.random())?;
    let img = scene.image();
    let grad = loss_2d_grad(&scene.joints3d, &scene.gt2d_full, &scene.local_cams, &scene.bboxes, img)?;

    let g: Vec<f64> = grad.cams.iter().flat_map(|g| g.as_array()).collect();
    let cams = grad_check(
        |x| loss_2d(&scene.joints3d, &scene.gt2d_full, &unflatten_cams(x), &scene.bboxes, img),
        &flatten_cams(&scene.local_cams),
        &g,
        None,
        CAMERA_TOL,
    )?;

    let x0: Vec<f64> = scene.joints3d.iter().flat_map(|j| [j.x, j.y, j.z]).collect();
    let g: Vec<f64> = grad.joints.iter().flatten().copied().collect();
    let joints = grad_check(
        |x| {
            let js: Vec<Joint3D> = x.chunks_exact(3).map(|p| Joint3D::new(p[0], p[1], p[2])).collect();
            loss_2d(&js, &scene.gt2d_full, &scene.local_cams, &scene.bboxes, img)
        },
        &x0,
        &g,
        None,
        CAMERA_TOL,
    )?;
    Ok(GradReport::merge(&[cams, joints]).expect("two reports"))
}

pub fn check_loss_3d(seed: u64) -> Result<GradReport> {
    let mut rng = rng::seeded(seed);
    let k = rng.random_range(1..=24);
    let mut joint = || Joint3D::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let pred: Vec<Joint3D> = (0..k).map(|_| joint()).collect();
    let gt: Vec<Joint3D> = (0..k).map(|_| joint()).collect();
    let x0: Vec<f64> = pred.iter().flat_map(|j| [j.x, j.y, j.z]).collect();
    let g: Vec<f64> = loss_3d_grad(&pred, &gt)?.into_iter().flatten().collect();
    grad_check(
        |x| {
            let js: Vec<Joint3D> = x.chunks_exact(3).map(|p| Joint3D::new(p[0], p[1], p[2])).collect();
            loss_3d(&js, &gt)
        },
        &x0,
        &g,
        None,
        CAMERA_TOL,
    )
}

fn unflatten_batch(x: &[f64], n: usize, m: usize, d: usize) -> Batch {
    let mut rows = x.chunks_exact(d).map(<[f64]>::to_vec);
    (0..n).map(|_| rows.by_ref().take(m).collect()).collect()
}

pub fn check_contrastive(seed: u64) -> Result<GradReport> {
    let mut rng = rng::seeded(seed);
    let n = rng.random_range(2..=4);
    let m = rng.random_range(2..=5);
    let d = rng.random_range(2..=8);
    let z: Batch = (0..n).map(|_| random_matrix(m, d, rng.random())).collect();
    let cfg = ContrastiveConfig::default();
    let (_, g) = contrastive_loss_grad(&z, &cfg)?;
    let x0: Vec<f64> = z.iter().flatten().flatten().copied().collect();
    let g: Vec<f64> = g.iter().flatten().flatten().copied().collect();
    grad_check(
        |x| contrastive_loss(&unflatten_batch(x, n, m, d), &cfg),
        &x0,
        &g,
        None,
        CONTRASTIVE_TOL,
    )
}

/// Gradient of `Σ c ⊙ u` for a random fixed `c`, with respect to a random
/// subset of the network parameters and to every feature entry.
pub fn check_fusion(seed: u64) -> Result<GradReport> {
    let mut rng = rng::seeded(seed);
    let m = rng.random_range(2..=5);
    let d = rng.random_range(2..=8);
    let cfg = FusionConfig {
        encoder: Encoder {
            prescale: 0.01,
            ..Encoder::default()
        },
        ..FusionConfig::new(d, m, rng.random())
    };
    let net = FusionNet::new(cfg)?;
    let h = random_matrix(m, d, rng.random());
    let c = random_matrix(m, d, rng.random());
    let bboxes: Vec<BBox> = random_crop_set(&mut rng, m).1;
    let objective = |net: &FusionNet, h: &Matrix| -> Result<f64> {
        let out = net.fuse(h, &bboxes)?;
        Ok(out.u.iter().flatten().zip(c.iter().flatten()).map(|(a, b)| a * b).sum())
    };
    let (gp, gh) = net.fuse_backward(&h, &bboxes, &c)?;

    let params = net.params();
    let picks = sample(&mut rng, params.len(), FUSION_PARAM_SAMPLES.min(params.len())).into_vec();
    let by_params = grad_check(
        |p| {
            let mut probe = net.clone();
            probe.set_params(p)?;
            objective(&probe, &h)
        },
        &params,
        &gp,
        Some(&picks),
        FUSION_TOL,
    )?;

    let x0: Vec<f64> = h.iter().flatten().copied().collect();
    let gh: Vec<f64> = gh.into_iter().flatten().collect();
    let by_features = grad_check(
        |x| objective(&net, &x.chunks_exact(d).map(<[f64]>::to_vec).collect()),
        &x0,
        &gh,
        None,
        FUSION_TOL,
    )?;
    Ok(GradReport::merge(&[by_params, by_features]).expect("two reports"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub name: String,
    pub configs: usize,
    pub failures: usize,
    pub worst: GradReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub entries: Vec<SuiteEntry>,
    pub passed: bool,
}

type Check = fn(u64) -> Result<GradReport>;

pub const CHECKS: [(&str, Check); 5] = [
    ("cam_loss", check_cam_loss),
    ("loss_2d", check_loss_2d),
    ("loss_3d", check_loss_3d),
    ("contrastive_loss", check_contrastive),
    ("fuse", check_fusion),
];

/// Run every check on `configs` configurations derived from `seed`.
pub fn run_suite(seed: u64, configs: usize) -> Result<SuiteReport> {
    let mut entries = Vec::with_capacity(CHECKS.len());
    for (k, (name, check)) in CHECKS.iter().enumerate() {
        let mut reports = Vec::with_capacity(configs);
        for c in 0..configs {
            let config_seed = seed.wrapping_mul(1_000_003).wrapping_add((k * 100_000 + c) as u64);
            reports.push(check(config_seed)?);
        }
        let failures = reports.iter().filter(|r| !r.passed).count();
        if let Some(worst) = GradReport::merge(&reports) {
            entries.push(SuiteEntry {
                name: name.to_string(),
                configs,
                failures,
                worst,
            });
        }
    }
    let passed = entries.iter().all(|e| e.failures == 0);
    Ok(SuiteReport { seed, entries, passed })
}
