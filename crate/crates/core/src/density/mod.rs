//! Per-block Gaussian mixtures over latent vectors.

mod fit;
mod gmm;

pub use fit::{em_fit, fit_mixture, kmeans_init, EmTrace, GmmConfig};
pub use gmm::{Component, GmmModel};

use serde::{Deserialize, Serialize};

use crate::tensorops::Tensor4;

/// How a latent step becomes the vector the mixture models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduction {
    /// Every value of the step, row-major.
    None,
    /// Channel means over the spatial grid.
    SpatialMeanPool,
}

impl Reduction {
    pub fn output_dim(self, side: usize, channels: usize) -> usize {
        match self {
            Reduction::None => side * side * channels,
            Reduction::SpatialMeanPool => channels,
        }
    }

    pub(crate) fn code(self) -> &'static str {
        match self {
            Reduction::None => "none",
            Reduction::SpatialMeanPool => "spatial-mean-pool",
        }
    }

    pub(crate) fn from_code(code: &str) -> Option<Self> {
        match code {
            "none" => Some(Reduction::None),
            "spatial-mean-pool" => Some(Reduction::SpatialMeanPool),
            _ => None,
        }
    }
}

/// Turns time step `t` of a latent tensor into a vector.
pub fn reduce_latent(latent: &Tensor4, t: usize, reduction: Reduction) -> Vec<f64> {
    let frame = latent.frame(t);
    match reduction {
        Reduction::None => frame.to_vec(),
        Reduction::SpatialMeanPool => {
            let c = latent.c();
            let cells = (latent.h() * latent.w()) as f64;
            let mut out = vec![0.0; c];
            for px in frame.chunks_exact(c) {
                out.iter_mut().zip(px).for_each(|(o, v)| *o += v);
            }
            out.iter_mut().for_each(|o| *o /= cells);
            out
        }
    }
}
