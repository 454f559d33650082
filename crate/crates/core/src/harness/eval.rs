use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, Split};
use crate::error::{Error, Result};
use crate::segment::Segment;
use crate::spotting::SpottingResult;

/// What spotting produced for one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotRecord {
    pub clip_id: String,
    pub result: SpottingResult,
    /// Per-frame anomaly score (higher = more anomalous), used for ROC.
    pub anomaly_score: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEval {
    pub clip_id: String,
    pub labeled_frames: usize,
    pub flagged_frames: usize,
    pub true_positive_frames: usize,
    pub no_event: bool,
    /// Mean onset/offset shift of this clip's labeled segments, in frames.
    pub mean_shift_frames: Option<f64>,
    pub unmatched_segments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    /// `None` when the test frames hold only one class.
    pub auc: Option<f64>,
    /// Mean average shift of onsets and offsets.
    pub mas_ms: f64,
    /// Population standard deviation of per-segment shifts.
    pub mas_std_ms: f64,
    pub mas_frames: f64,
    /// Mean labeled segment duration.
    pub mad_ms: f64,
    pub labeled_segments: usize,
    pub unmatched_segments: usize,
    pub clips: Vec<ClipEval>,
}

/// Area under the ROC curve via the rank-sum statistic, ties averaged.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * avg_rank;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos as f64 * neg as f64))
}

/// Pairs each labeled segment with the unused prediction overlapping it
/// most. Labeled segments are visited in onset order.
pub fn match_segments(labels: &[Segment], predicted: &[Segment]) -> Vec<Option<Segment>> {
    let mut used = vec![false; predicted.len()];
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by_key(|&i| labels[i].onset);
    let mut out = vec![None; labels.len()];
    for i in order {
        let best = (0..predicted.len())
            .filter(|&p| !used[p])
            .map(|p| (p, labels[i].overlap(&predicted[p])))
            .filter(|&(_, o)| o > 0)
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)));
        if let Some((p, _)) = best {
            used[p] = true;
            out[i] = Some(predicted[p]);
        }
    }
    out
}

/// Onset and offset shift of one labeled segment, in frames. An unmatched
/// segment is charged the distance from its bounds to the clip edges.
fn segment_shift(label: &Segment, matched: Option<Segment>, frames: usize) -> (f64, f64) {
    match matched {
        Some(p) => (
            (p.onset as f64 - label.onset as f64).abs(),
            (p.offset as f64 - label.offset as f64).abs(),
        ),
        None => (label.onset as f64, (frames - 1 - label.offset) as f64),
    }
}

/// Scores spotting records against the test clips of a manifest.
pub fn evaluate(records: &[SpotRecord], manifest: &Manifest) -> Result<EvalReport> {
    let tests: Vec<_> = manifest.split(Split::Test).collect();
    if tests.is_empty() {
        return Err(Error::arg("manifest has no test clips"));
    }
    let (mut tp, mut flagged_total, mut labeled_total) = (0usize, 0usize, 0usize);
    let (mut scores, mut truth) = (Vec::new(), Vec::new());
    let mut shifts_ms = Vec::new();
    let mut shifts_frames = Vec::new();
    let mut durations_ms = Vec::new();
    let mut clips = Vec::with_capacity(tests.len());
    for clip in tests {
        let rec = records
            .iter()
            .find(|r| r.clip_id == clip.clip_id)
            .ok_or_else(|| Error::arg(format!("no spotting result for test clip {}", clip.clip_id)))?;
        let n = clip.frame_count;
        if rec.anomaly_score.len() != n || rec.result.active_blocks.len() != n {
            return Err(Error::shape(format!(
                "clip {}: results cover {} frames, clip has {n}",
                clip.clip_id,
                rec.anomaly_score.len()
            )));
        }
        let flags = rec.result.frame_flags(n);
        let mut labels = vec![false; n];
        for s in &clip.labels {
            labels[s.onset..=s.offset].iter_mut().for_each(|l| *l = true);
            durations_ms.push(s.len() as f64 * clip.frame_period_ms);
        }
        let clip_tp = flags.iter().zip(&labels).filter(|(f, l)| **f && **l).count();
        let clip_flagged = flags.iter().filter(|&&f| f).count();
        let clip_labeled = labels.iter().filter(|&&l| l).count();
        tp += clip_tp;
        flagged_total += clip_flagged;
        labeled_total += clip_labeled;
        scores.extend_from_slice(&rec.anomaly_score);
        truth.extend_from_slice(&labels);

        let matched = match_segments(&clip.labels, &rec.result.segments);
        let mut clip_shifts = Vec::new();
        for (label, m) in clip.labels.iter().zip(&matched) {
            let (dq, du) = segment_shift(label, *m, n);
            let s = (dq + du) / 2.0;
            clip_shifts.push(s);
            shifts_frames.push(s);
            shifts_ms.push(s * clip.frame_period_ms);
        }
        clips.push(ClipEval {
            clip_id: clip.clip_id.clone(),
            labeled_frames: clip_labeled,
            flagged_frames: clip_flagged,
            true_positive_frames: clip_tp,
            no_event: rec.result.no_event,
            mean_shift_frames: (!clip_shifts.is_empty())
                .then(|| clip_shifts.iter().sum::<f64>() / clip_shifts.len() as f64),
            unmatched_segments: matched.iter().filter(|m| m.is_none()).count(),
        });
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let mas_ms = mean(&shifts_ms);
    let mas_std_ms = if shifts_ms.is_empty() {
        0.0
    } else {
        (shifts_ms.iter().map(|s| (s - mas_ms).powi(2)).sum::<f64>() / shifts_ms.len() as f64).sqrt()
    };
    // Flagging nothing is only precise when there was nothing to find;
    // recall over zero labeled frames is vacuously perfect.
    let precision = match flagged_total {
        0 => f64::from(labeled_total == 0),
        n => tp as f64 / n as f64,
    };
    let recall = match labeled_total {
        0 => 1.0,
        n => tp as f64 / n as f64,
    };
    Ok(EvalReport {
        precision,
        recall,
        auc: roc_auc(&scores, &truth),
        mas_ms,
        mas_std_ms,
        mas_frames: mean(&shifts_frames),
        mad_ms: mean(&durations_ms),
        labeled_segments: shifts_ms.len(),
        unmatched_segments: clips.iter().map(|c| c.unmatched_segments).sum(),
        clips,
    })
}
