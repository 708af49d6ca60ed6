//! First-order refinement of noisy local cameras.
//!
//! Minimizes `λ_cam · L_cam + λ_2D · L_2D` over each crop's `(log s, t_x, t_y)`.
//! Working in `log s` keeps every scale positive without clamping.

use serde::{Deserialize, Serialize};

use crate::consistency::{cam_loss, cam_loss_grad, loss_2d, loss_2d_grad, ConsistencyWeights};
use crate::error::{Error, Result};
use crate::features::gradcheck::{grad_check, GradReport, Tolerance};
use crate::geometry::{local_to_full, BBox, ImageSize, LocalCamera};
use crate::synth::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    /// Gradient descent with halving backtracking.
    Gd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    pub max_iters: usize,
    pub step: f64,
    pub optimizer: Optimizer,
    /// Stop once the largest gradient entry drops to this value.
    pub tol_grad: f64,
    pub lambda_cam: f64,
    pub lambda_2d: f64,
    pub weights: ConsistencyWeights,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            step: 1e-2,
            optimizer: Optimizer::default(),
            tol_grad: 1e-8,
            lambda_cam: 1.0,
            lambda_2d: 1e-3,
            weights: ConsistencyWeights::default(),
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidConfig(format!("step = {} must be > 0", self.step)));
        }
        if !(self.lambda_cam >= 0.0 && self.lambda_2d >= 0.0 && self.tol_grad >= 0.0) {
            return Err(Error::InvalidConfig("loss weights and tol_grad must be >= 0".into()));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                return Err(Error::InvalidConfig("Adam needs betas in [0, 1) and eps > 0".into()));
            }
        }
        self.weights.validate()
    }
}

/// Per-term values of the refinement objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub l_cam: f64,
    pub l_2d: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub converged: bool,
    /// Iteration whose cameras are returned (lowest total loss seen).
    pub best_iteration: usize,
    pub initial: LossTerms,
    #[serde(rename = "final")]
    pub final_: LossTerms,
    pub implied_before: Vec<[f64; 3]>,
    pub implied_after: Vec<[f64; 3]>,
    pub spread_before: f64,
    pub spread_after: f64,
    pub spread_reduction: f64,
    /// Total loss after each iteration, starting with the initial value.
    pub history: Vec<f64>,
}

/// The refinement objective over flattened `(log s, t_x, t_y)` triples.
pub struct Objective<'a> {
    pub scene: &'a Scene,
    pub cfg: &'a SolveConfig,
}

pub fn encode_params(cams: &[LocalCamera]) -> Vec<f64> {
    cams.iter().flat_map(|c| [c.s.ln(), c.t_x, c.t_y]).collect()
}

pub fn decode_params(theta: &[f64]) -> Vec<LocalCamera> {
    theta.chunks_exact(3).map(|p| LocalCamera::new(p[0].exp(), p[1], p[2])).collect()
}

impl Objective<'_> {
    pub fn terms(&self, theta: &[f64]) -> Result<LossTerms> {
        let cams = decode_params(theta);
        let s = self.scene;
        let l_cam = cam_loss(&cams, &s.bboxes, &self.cfg.weights)?;
        let l_2d = loss_2d(&s.joints3d, &s.gt2d_full, &cams, &s.bboxes, s.image())?;
        Ok(LossTerms {
            l_cam,
            l_2d,
            total: self.cfg.lambda_cam * l_cam + self.cfg.lambda_2d * l_2d,
        })
    }

    pub fn value(&self, theta: &[f64]) -> Result<f64> {
        self.terms(theta).map(|t| t.total)
    }

    pub fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let cams = decode_params(theta);
        let s = self.scene;
        let gc = cam_loss_grad(&cams, &s.bboxes, &self.cfg.weights)?;
        let g2 = loss_2d_grad(&s.joints3d, &s.gt2d_full, &cams, &s.bboxes, s.image())?;
        let (lc, l2) = (self.cfg.lambda_cam, self.cfg.lambda_2d);
        Ok(cams
            .iter()
            .zip(gc.iter().zip(&g2.cams))
            .flat_map(|(cam, (a, b))| {
                [
                    // d/d(log s) = s d/ds
                    cam.s * (lc * a.s + l2 * b.s),
                    lc * a.t_x + l2 * b.t_x,
                    lc * a.t_y + l2 * b.t_y,
                ]
            })
            .collect())
    }
}

/// Full-image translation implied by each crop.
pub fn implied_translations(cams: &[LocalCamera], bboxes: &[BBox], img: ImageSize) -> Result<Vec<[f64; 3]>> {
    cams.iter()
        .zip(bboxes)
        .map(|(c, b)| local_to_full(c, b, img).map(|f| f.translation()))
        .collect()
}

/// Largest pairwise distance between implied translations.
pub fn spread(translations: &[[f64; 3]]) -> f64 {
    let mut best: f64 = 0.0;
    for (i, a) in translations.iter().enumerate() {
        for b in &translations[i + 1..] {
            let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
            best = best.max(d);
        }
    }
    best
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m: f64, x| m.max(x.abs()))
}

fn nan_guard(value: f64, iteration: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numerical {
            iteration: Some(iteration),
            message: format!("loss became {value}"),
        })
    }
}

pub fn refine_cameras(scene: &Scene, cfg: &SolveConfig) -> Result<(Vec<LocalCamera>, SolveReport)> {
    cfg.validate()?;
    scene.validate()?;
    if scene.local_cams.len() < 2 {
        return Err(Error::NotEnoughCrops(scene.local_cams.len()));
    }
    let objective = Objective { scene, cfg };
    let mut theta = encode_params(&scene.local_cams);
    let initial = objective.terms(&theta)?;
    nan_guard(initial.total, 0)?;

    let mut best = (initial.total, theta.clone(), 0usize);
    let mut history = vec![initial.total];
    let mut current = initial.total;
    let mut converged = false;
    let mut iterations = 0;

    // Adam moments
    let mut m1 = vec![0.0; theta.len()];
    let mut m2 = vec![0.0; theta.len()];
    let mut step = cfg.step;

    for it in 1..=cfg.max_iters {
        let grad = objective.gradient(&theta)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical {
                iteration: Some(it),
                message: "non-finite gradient".into(),
            });
        }
        if max_abs(&grad) <= cfg.tol_grad {
            converged = true;
            break;
        }
        iterations = it;
        match cfg.optimizer {
            Optimizer::Adam { beta1, beta2, eps } => {
                let (c1, c2) = (1.0 - beta1.powi(it as i32), 1.0 - beta2.powi(it as i32));
                for k in 0..theta.len() {
                    m1[k] = beta1 * m1[k] + (1.0 - beta1) * grad[k];
                    m2[k] = beta2 * m2[k] + (1.0 - beta2) * grad[k] * grad[k];
                    theta[k] -= cfg.step * (m1[k] / c1) / ((m2[k] / c2).sqrt() + eps);
                }
                current = nan_guard(objective.value(&theta)?, it)?;
            }
            Optimizer::Gd => {
                let mut accepted = false;
                // allow the step to grow back after earlier halvings
                step = (step * 2.0).min(cfg.step);
                for _ in 0..=30 {
                    let trial: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
                    let value = match objective.value(&trial) {
                        Ok(v) => v,
                        Err(Error::DegenerateCamera(_)) | Err(Error::BehindCamera { .. }) => f64::INFINITY,
                        Err(e) => return Err(e),
                    };
                    if value.is_nan() {
                        return Err(Error::Numerical {
                            iteration: Some(it),
                            message: "loss became NaN".into(),
                        });
                    }
                    if value <= current {
                        theta = trial;
                        current = value;
                        accepted = true;
                        break;
                    }
                    step *= 0.5;
                }
                if !accepted {
                    converged = true;
                    history.push(current);
                    break;
                }
            }
        }
        history.push(current);
        if current < best.0 {
            best = (current, theta.clone(), it);
        }
    }

    let (_, theta, best_iteration) = best;
    let cams = decode_params(&theta);
    let final_ = objective.terms(&theta)?;
    let img = scene.image();
    let implied_before = implied_translations(&scene.local_cams, &scene.bboxes, img)?;
    let implied_after = implied_translations(&cams, &scene.bboxes, img)?;
    let spread_before = spread(&implied_before);
    let spread_after = spread(&implied_after);
    let report = SolveReport {
        iterations,
        converged,
        best_iteration,
        initial,
        final_,
        spread_reduction: if spread_after > 0.0 {
            spread_before / spread_after
        } else {
            f64::INFINITY
        },
        implied_before,
        implied_after,
        spread_before,
        spread_after,
        history,
    };
    Ok((cams, report))
}

/// Compare the analytic objective gradient against central differences at
/// the scene's current cameras.
pub fn fd_validate(scene: &Scene, cfg: &SolveConfig) -> Result<GradReport> {
    cfg.validate()?;
    scene.validate()?;
    let objective = Objective { scene, cfg };
    let theta = encode_params(&scene.local_cams);
    let grad = objective.gradient(&theta)?;
    grad_check(|x| objective.value(x), &theta, &grad, None, Tolerance::new(1e-4, 1e-8))
}
