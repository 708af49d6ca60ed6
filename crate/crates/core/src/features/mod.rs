//! Crop-aware fusion and the contrastive learning head, evaluated on
//! synthetic features with hand-written gradients.

pub mod contrast;
pub mod fusion;
pub mod gradcheck;
pub mod nn;

use rand_distr::{Distribution, StandardNormal};

pub use contrast::{clm_project, contrastive_loss, contrastive_loss_grad, Batch, ContrastNet, ContrastiveConfig};
pub use fusion::{fused_mean, FusionConfig, FusionNet, FusionOutput, FusionVariant};
pub use gradcheck::{grad_check, GradReport, Tolerance};

/// Row-major list of feature vectors.
pub type Matrix = Vec<Vec<f64>>;

/// `rows × cols` standard-normal entries from a seeded stream.
pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = crate::rng::seeded(seed);
    (0..rows)
        .map(|_| (0..cols).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect()
}
