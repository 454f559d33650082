use rand::Rng;
use serde::{Deserialize, Serialize};

use super::blocks::{block_divide, BlockSequence, FrameSequence, BLOCKS};
use crate::error::{Error, Result};
use crate::segment::Segment;
use crate::seed;
use crate::tensorops::Tensor4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    /// Frames per instance.
    pub window: usize,
    /// Frame strides to sample at.
    pub scales: Vec<usize>,
    /// Random windows drawn per (clip, block, scale).
    pub windows_per_scale: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            window: 20,
            scales: vec![1, 2, 3],
            windows_per_scale: 1,
        }
    }
}

/// A fixed-length block sequence taken every `scale` frames from `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub block_index: usize,
    pub scale: usize,
    pub start: usize,
    pub frames: Tensor4,
}

impl Instance {
    /// Source frame indices covered by this instance.
    pub fn source_frames(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.frames.t()).map(move |k| self.start + k * self.scale)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub block_index: usize,
    pub instances: Vec<Instance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub instances: Vec<Instance>,
    /// Scales for which no valid start existed.
    pub skipped_scales: Vec<usize>,
}

impl SampleOutcome {
    /// Set when nothing at all could be sampled.
    pub fn too_short(&self) -> bool {
        self.instances.is_empty()
    }
}

/// A normal-behaviour clip plus frame ranges that must not be sampled.
#[derive(Debug, Clone)]
pub struct TrainingClip {
    pub sequence: FrameSequence,
    pub excluded: Vec<Segment>,
}

fn valid_starts(len: usize, window: usize, scale: usize, excluded: &[Segment]) -> Vec<usize> {
    let span = (window - 1) * scale;
    if len <= span {
        return Vec::new();
    }
    (0..len - span)
        .filter(|&s| {
            let covered = Segment::new(s, s + span);
            !excluded.iter().any(|e| e.intersects(&covered))
        })
        .collect()
}

/// Draws `n_windows` windows per scale with uniformly random starts. A window
/// at scale `S` takes frames `start, start+S, …` and must fit in the sequence
/// and avoid every excluded range.
pub fn temporal_multiscale_sample<R: Rng + ?Sized>(
    block: &BlockSequence,
    window: usize,
    n_windows: usize,
    scales: &[usize],
    excluded: &[Segment],
    rng: &mut R,
) -> Result<SampleOutcome> {
    if n_windows == 0 || window == 0 {
        return Err(Error::arg("need at least one window of at least one frame"));
    }
    if scales.iter().any(|&s| s == 0) {
        return Err(Error::arg("temporal scales must be at least 1"));
    }
    let f = &block.frames;
    let mut outcome = SampleOutcome {
        instances: Vec::new(),
        skipped_scales: Vec::new(),
    };
    for &scale in scales {
        let starts = valid_starts(f.t(), window, scale, excluded);
        if starts.is_empty() {
            outcome.skipped_scales.push(scale);
            continue;
        }
        for _ in 0..n_windows {
            let start = starts[rng.gen_range(0..starts.len())];
            let mut frames = Tensor4::zeros(window, f.h(), f.w(), f.c());
            for k in 0..window {
                frames.frame_mut(k).copy_from_slice(f.frame(start + k * scale));
            }
            outcome.instances.push(Instance {
                block_index: block.block_index,
                scale,
                start,
                frames,
            });
        }
    }
    Ok(outcome)
}

/// One empty bag per block.
pub fn empty_bags() -> Vec<Bag> {
    (0..BLOCKS)
        .map(|b| Bag {
            block_index: b,
            instances: Vec::new(),
        })
        .collect()
}

/// Samples every block of one clip into `bags`. Each (clip, block, scale)
/// triple draws from its own stream derived from `seed`, so clips can be
/// added one at a time with the same result as [`build_bags`].
pub fn extend_bags(
    bags: &mut [Bag],
    clip: &TrainingClip,
    clip_index: usize,
    cfg: &SamplingConfig,
    block: usize,
    seed: u64,
) -> Result<()> {
    for bs in block_divide(&clip.sequence, block)? {
        for &scale in &cfg.scales {
            let mut rng = seed::rng(seed, &[clip_index as u64, bs.block_index as u64, scale as u64]);
            let out = temporal_multiscale_sample(
                &bs,
                cfg.window,
                cfg.windows_per_scale,
                &[scale],
                &clip.excluded,
                &mut rng,
            )?;
            bags[bs.block_index].instances.extend(out.instances);
        }
    }
    Ok(())
}

/// Samples every block of every clip and groups the instances by block.
pub fn build_bags(clips: &[TrainingClip], cfg: &SamplingConfig, block: usize, seed: u64) -> Result<Vec<Bag>> {
    if clips.is_empty() {
        return Err(Error::arg("no training clips"));
    }
    let mut bags = empty_bags();
    for (ci, clip) in clips.iter().enumerate() {
        extend_bags(&mut bags, clip, ci, cfg, block, seed)?;
    }
    Ok(bags)
}
