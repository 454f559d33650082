use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{reduce_latent, GmmModel};
use crate::error::{Error, Result};
use crate::preprocessing::{block_divide, FrameSequence, BLOCKS};
use crate::rcae::RcaeModel;
use crate::tensorops::Tensor4;

/// Standard deviation of the temporal smoothing kernel, in frames.
pub const SMOOTHING_SIGMA: f64 = 10.0;

/// Per-frame scores of one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCurves {
    /// `BLOCKS × T` weighted log-likelihoods.
    pub block: Vec<Vec<f64>>,
    /// Mean over blocks per frame.
    pub video: Vec<f64>,
    /// Smoothed `video`.
    pub smoothed: Vec<f64>,
    /// Smoothed video curve before any normalization.
    pub raw_smoothed: Vec<f64>,
    pub normalized: bool,
}

fn check_rectangular(block: &[Vec<f64>]) -> Result<usize> {
    let t = block.first().map(Vec::len).ok_or_else(|| Error::arg("no block curves"))?;
    if t == 0 || block.iter().any(|b| b.len() != t) {
        return Err(Error::shape("block curves must share one non-zero length"));
    }
    Ok(t)
}

impl ScoreCurves {
    /// Pools, smooths and optionally min–max normalizes per-block scores.
    /// Normalization uses the video curve's range and is applied to the
    /// block curves with the same affine map.
    pub fn from_block_scores(mut block: Vec<Vec<f64>>, normalize: bool) -> Result<Self> {
        let t = check_rectangular(&block)?;
        let pool = |block: &[Vec<f64>]| -> Vec<f64> {
            (0..t)
                .map(|i| block.iter().map(|b| b[i]).sum::<f64>() / block.len() as f64)
                .collect()
        };
        let mut video = pool(&block);
        let raw_smoothed = smooth(&video, SMOOTHING_SIGMA);
        if normalize {
            let lo = video.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = video.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            let map = |v: f64| if span > 0.0 { (v - lo) / span } else { 0.0 };
            block.iter_mut().flatten().for_each(|v| *v = map(*v));
            video.iter_mut().for_each(|v| *v = map(*v));
        }
        let smoothed = if normalize {
            smooth(&video, SMOOTHING_SIGMA)
        } else {
            raw_smoothed.clone()
        };
        Ok(Self {
            block,
            video,
            smoothed,
            raw_smoothed,
            normalized: normalize,
        })
    }

    pub fn len(&self) -> usize {
        self.video.len()
    }

    pub fn is_empty(&self) -> bool {
        self.video.is_empty()
    }
}

/// Normalized Gaussian kernel of radius `3σ`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).round() as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Index into `0..n` reflecting about the half-sample edges
/// (`… c b a | a b c …`), periodic for offsets beyond one length.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let k = i.rem_euclid(period) as usize;
    if k < n {
        k
    } else {
        period as usize - 1 - k
    }
}

/// Gaussian smoothing with reflect padding at both ends.
pub fn smooth(signal: &[f64], sigma: f64) -> Vec<f64> {
    if signal.is_empty() {
        return Vec::new();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let n = signal.len();
    (0..n as isize)
        .map(|t| {
            kernel
                .iter()
                .enumerate()
                .map(|(j, w)| w * signal[reflect(t + j as isize - radius, n)])
                .sum()
        })
        .collect()
}

fn window(features: &Tensor4, end: usize, len: usize) -> Tensor4 {
    let n = features.frame_len();
    let start = end + 1 - len;
    Tensor4::from_vec(
        [len, features.h(), features.w(), features.c()],
        features.data()[start * n..(end + 1) * n].to_vec(),
    )
    .expect("window lies inside the feature tensor")
}

/// Weighted log-likelihood of every block at every frame. The window ending
/// at frame `t` scores frame `t`; frames before the first full window copy
/// the first score.
pub fn block_scores(clip: &FrameSequence, rcae: &RcaeModel, mixtures: &[GmmModel]) -> Result<Vec<Vec<f64>>> {
    let len = rcae.arch.time_steps;
    if clip.len() < len {
        return Err(Error::arg(format!(
            "clip {} has {} frames, scoring needs at least {len}",
            clip.clip_id,
            clip.len()
        )));
    }
    if mixtures.len() != BLOCKS {
        return Err(Error::arg(format!("expected {BLOCKS} block mixtures, got {}", mixtures.len())));
    }
    let blocks = block_divide(clip, rcae.arch.block)?;
    blocks
        .par_iter()
        .map(|b| {
            let gmm = &mixtures[b.block_index];
            let features = rcae.encode_frames(&b.frames)?;
            let mut scores = vec![0.0; clip.len()];
            for t in len - 1..clip.len() {
                let latent = rcae.encode_features(&window(&features, t, len))?;
                let v = reduce_latent(&latent.steps, len - 1, gmm.reduction);
                scores[t] = gmm.log_likelihood(&v)?;
            }
            let first = scores[len - 1];
            scores[..len - 1].iter_mut().for_each(|s| *s = first);
            Ok(scores)
        })
        .collect()
}

/// Scores a clip end to end: per-block likelihoods, pooling and smoothing.
pub fn score_clip(
    clip: &FrameSequence,
    rcae: &RcaeModel,
    mixtures: &[GmmModel],
    normalize: bool,
) -> Result<ScoreCurves> {
    ScoreCurves::from_block_scores(block_scores(clip, rcae, mixtures)?, normalize)
}
