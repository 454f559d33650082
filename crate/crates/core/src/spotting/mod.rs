//! Sliding-window scoring, smoothing, thresholding and segment extraction.

mod curves;
mod spot;

pub use curves::{block_scores, gaussian_kernel, score_clip, smooth, ScoreCurves, SMOOTHING_SIGMA};
pub use spot::{adaptive_threshold, is_eventless, spot, write_curves_csv, SpotRule, SpottingResult};
