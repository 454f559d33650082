use std::io::Write;

use serde::{Deserialize, Serialize};

use super::curves::{smooth, ScoreCurves, SMOOTHING_SIGMA};
use crate::error::{Error, Result};
use crate::segment::{runs, Segment};

/// `max − mean + min + ½·std` of the curve (population std).
pub fn adaptive_threshold(curve: &[f64]) -> f64 {
    let n = curve.len() as f64;
    let max = curve.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = curve.iter().cloned().fold(f64::INFINITY, f64::min);
    let mean = curve.iter().sum::<f64>() / n;
    let var = curve.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    max - mean + min + 0.5 * var.sqrt()
}

/// Decides when a clip holds no event at all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpotRule {
    /// Minimum dynamic range of the smoothed curve, relative to its
    /// reference scale, for anything to be reported.
    pub range_floor: f64,
    /// Largest raw smoothed-curve range seen on held-out normal clips. When
    /// set, a clip is eventless unless its raw range exceeds this by more
    /// than `range_floor` (relative); otherwise `range_floor` applies to the
    /// curve directly.
    pub reference_span: Option<f64>,
    /// Smooth block curves before the spatial comparison.
    pub smooth_blocks: bool,
}

impl Default for SpotRule {
    fn default() -> Self {
        Self {
            range_floor: 0.05,
            reference_span: None,
            smooth_blocks: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpottingResult {
    pub threshold: f64,
    /// Sorted, disjoint, inclusive frame ranges.
    pub segments: Vec<Segment>,
    /// Block indices below threshold at each frame; empty outside segments.
    pub active_blocks: Vec<Vec<usize>>,
    pub no_event: bool,
}

impl SpottingResult {
    pub fn flagged(&self, t: usize) -> bool {
        self.segments.iter().any(|s| s.contains(t))
    }

    /// Per-frame flags.
    pub fn frame_flags(&self, len: usize) -> Vec<bool> {
        let mut flags = vec![false; len];
        for s in &self.segments {
            flags[s.onset..=s.offset.min(len - 1)].iter_mut().for_each(|f| *f = true);
        }
        flags
    }
}

fn range(curve: &[f64]) -> f64 {
    let max = curve.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = curve.iter().cloned().fold(f64::INFINITY, f64::min);
    max - min
}

/// Whether the curves are too flat to hold an event under `rule`.
pub fn is_eventless(curves: &ScoreCurves, rule: &SpotRule) -> bool {
    match rule.reference_span {
        Some(reference) if reference > 0.0 => range(&curves.raw_smoothed) < reference * (1.0 + rule.range_floor),
        _ => range(&curves.smoothed) < rule.range_floor,
    }
}

/// Flags frames whose smoothed score falls below the adaptive threshold and
/// reports, per flagged frame, the blocks that fall below it too.
pub fn spot(curves: &ScoreCurves, rule: &SpotRule) -> SpottingResult {
    let t = curves.len();
    let threshold = adaptive_threshold(&curves.smoothed);
    if t == 0 || is_eventless(curves, rule) {
        return SpottingResult {
            threshold,
            segments: Vec::new(),
            active_blocks: vec![Vec::new(); t],
            no_event: true,
        };
    }
    let flags: Vec<bool> = curves.smoothed.iter().map(|&v| v < threshold).collect();
    let smoothed_blocks;
    let blocks = if rule.smooth_blocks {
        smoothed_blocks = curves
            .block
            .iter()
            .map(|b| smooth(b, SMOOTHING_SIGMA))
            .collect::<Vec<_>>();
        &smoothed_blocks
    } else {
        &curves.block
    };
    let active_blocks = (0..t)
        .map(|i| {
            if !flags[i] {
                return Vec::new();
            }
            (0..blocks.len()).filter(|&b| blocks[b][i] < threshold).collect()
        })
        .collect();
    let segments = runs(&flags);
    SpottingResult {
        threshold,
        no_event: segments.is_empty(),
        segments,
        active_blocks,
    }
}

/// Writes `frame,p_video,p_sv,threshold,flagged,active_blocks` rows, the
/// last column a bitmask over block indices.
pub fn write_curves_csv<W: Write>(out: W, curves: &ScoreCurves, result: &SpottingResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Format(format!("writing curves: {e}"));
    w.write_record(["frame", "p_video", "p_sv", "threshold", "flagged", "active_blocks"])
        .map_err(csv_err)?;
    for t in 0..curves.len() {
        let mask: u32 = result.active_blocks[t].iter().map(|&b| 1u32 << b).sum();
        w.write_record([
            t.to_string(),
            curves.video[t].to_string(),
            curves.smoothed[t].to_string(),
            result.threshold.to_string(),
            u8::from(result.flagged(t)).to_string(),
            mask.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("writing curves", e))
}
