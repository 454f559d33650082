use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::frames::{frame_path, write_frame};
use super::manifest::{ClipEntry, Manifest, Split};
use crate::error::{Error, Result};
use crate::preprocessing::{FrameSequence, GRID};
use crate::segment::Segment;
use crate::seed;
use crate::tensorops::Tensor4;

/// Parameters of the synthetic face-like corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub clip_length: usize,
    /// Side of a square frame; split into a 4×4 block grid.
    pub frame_side: usize,
    pub frame_period_ms: f64,
    /// Fraction of test clips carrying one burst.
    pub anomaly_rate: f64,
    /// Fraction of training clips carrying one (labeled) burst.
    pub train_anomaly_rate: f64,
    /// Inclusive range of burst lengths in frames.
    pub burst_frames: (usize, usize),
    pub burst_amplitude: f64,
    /// Standard deviation of per-pixel sensor noise.
    pub noise: f64,
    pub clips_per_subject: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_train: 40,
            n_val: 6,
            n_test: 10,
            clip_length: 200,
            frame_side: 96,
            frame_period_ms: 5.0,
            anomaly_rate: 0.5,
            train_anomaly_rate: 0.0,
            burst_frames: (3, 8),
            burst_amplitude: 0.3,
            noise: 0.01,
            clips_per_subject: 5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.burst_frames;
        if lo < 2 || hi < lo {
            return Err(Error::Config(format!("burst length range {lo}..={hi} must start at 2 or more")));
        }
        if !(self.burst_amplitude > 0.0) {
            return Err(Error::Config("burst amplitude must be positive".into()));
        }
        if self.frame_side == 0 || self.frame_side % GRID != 0 {
            return Err(Error::Config(format!("frame side must be a positive multiple of {GRID}")));
        }
        if self.clip_length < hi + 2 * MARGIN {
            return Err(Error::Config(format!(
                "clips of {} frames cannot hold a burst of {hi} frames",
                self.clip_length
            )));
        }
        for r in [self.anomaly_rate, self.train_anomaly_rate] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("anomaly rate {r} outside [0, 1]")));
            }
        }
        if self.clips_per_subject == 0 || !(self.frame_period_ms > 0.0) || self.noise < 0.0 {
            return Err(Error::Config("invalid subject count, frame period or noise".into()));
        }
        Ok(())
    }
}

/// Frames kept free of bursts at each end of a clip.
const MARGIN: usize = 25;

/// Where and how a burst is drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Burst {
    pub segment: Segment,
    pub block_index: usize,
}

/// Appearance shared by all clips of one subject.
struct Subject {
    brightness: f64,
    waves: Vec<Wave>,
}

struct Wave {
    fx: f64,
    fy: f64,
    amplitude: f64,
    speed: f64,
}

impl Subject {
    fn draw<R: Rng>(rng: &mut R) -> Self {
        let waves = (0..3)
            .map(|_| Wave {
                fx: rng.gen_range(0.3..1.5),
                fy: rng.gen_range(0.3..1.5),
                amplitude: rng.gen_range(0.05..0.1),
                speed: rng.gen_range(0.01..0.04) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
            })
            .collect();
        Self {
            brightness: rng.gen_range(0.45..0.55),
            waves,
        }
    }
}

fn split_tag(split: Split) -> u64 {
    match split {
        Split::Train => 0,
        Split::Val => 1,
        Split::Test => 2,
    }
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    }
}

fn split_count(cfg: &SynthConfig, split: Split) -> usize {
    match split {
        Split::Train => cfg.n_train,
        Split::Val => cfg.n_val,
        Split::Test => cfg.n_test,
    }
}

/// Indices of the clips in `split` that carry a burst: exactly
/// `round(rate · n)` of them, chosen by the seed.
fn anomalous_clips(cfg: &SynthConfig, split: Split) -> Vec<bool> {
    let n = split_count(cfg, split);
    let rate = match split {
        Split::Train => cfg.train_anomaly_rate,
        Split::Val => 0.0,
        Split::Test => cfg.anomaly_rate,
    };
    let k = (rate * n as f64).round() as usize;
    let mut flags: Vec<bool> = (0..n).map(|i| i < k).collect();
    flags.shuffle(&mut seed::rng(cfg.seed, &[0x5e1, split_tag(split)]));
    flags
}

/// Renders one clip. Normal content is a slowly drifting low-frequency
/// pattern plus periodic blinks across the eye band of the upper blocks; a
/// burst is a checkerboard flickering every frame inside one block.
pub fn generate_clip(cfg: &SynthConfig, split: Split, index: usize, anomalous: bool) -> Result<(FrameSequence, Option<Burst>)> {
    cfg.validate()?;
    let subject_index = index / cfg.clips_per_subject;
    let subject = Subject::draw(&mut seed::rng(cfg.seed, &[0x5b, split_tag(split), subject_index as u64]));
    let mut rng = seed::rng(cfg.seed, &[0xc1, split_tag(split), index as u64]);
    let phases: Vec<f64> = subject
        .waves
        .iter()
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();
    let blink_period = rng.gen_range(50..90);
    let blink_offset = rng.gen_range(0..blink_period);
    let blink_len = 10;
    let burst = anomalous.then(|| {
        let len = rng.gen_range(cfg.burst_frames.0..=cfg.burst_frames.1);
        let onset = rng.gen_range(MARGIN..=cfg.clip_length - MARGIN - len);
        Burst {
            segment: Segment::new(onset, onset + len - 1),
            block_index: rng.gen_range(0..GRID * GRID),
        }
    });

    let side = cfg.frame_side;
    let block = side / GRID;
    let noise = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).expect("noise deviation is finite");
    let eye_rows = (side as f64 * 0.28) as usize..(side as f64 * 0.42) as usize;
    let tau = std::f64::consts::TAU;
    let mut frames = Tensor4::zeros(cfg.clip_length, side, side, 1);
    for t in 0..cfg.clip_length {
        let k = (t + blink_offset) % blink_period;
        let blink = if k < blink_len {
            0.2 * (std::f64::consts::PI * k as f64 / blink_len as f64).sin().powi(2)
        } else {
            0.0
        };
        let frame = frames.frame_mut(t);
        for y in 0..side {
            for x in 0..side {
                let (u, v) = (x as f64 / side as f64, y as f64 / side as f64);
                let mut p = subject.brightness;
                for (w, ph) in subject.waves.iter().zip(&phases) {
                    p += w.amplitude * (tau * (w.fx * u + w.fy * v) + ph + w.speed * t as f64).sin();
                }
                if eye_rows.contains(&y) {
                    p -= blink;
                }
                if cfg.noise > 0.0 {
                    p += noise.sample(&mut rng);
                }
                frame[y * side + x] = p;
            }
        }
        if let Some(b) = burst.filter(|b| b.segment.contains(t)) {
            let (by, bx) = (b.block_index / GRID, b.block_index % GRID);
            let center = (block as f64 - 1.0) / 2.0;
            let radius = 0.35 * block as f64;
            let sign = if (t - b.segment.onset) % 2 == 0 { 1.0 } else { -1.0 };
            for y in 0..block {
                for x in 0..block {
                    let (dy, dx) = (y as f64 - center, x as f64 - center);
                    if dy * dy + dx * dx <= radius * radius {
                        let cell = if (y / 2 + x / 2) % 2 == 0 { 1.0 } else { -1.0 };
                        frame[(by * block + y) * side + bx * block + x] += sign * cell * cfg.burst_amplitude;
                    }
                }
            }
        }
        frame.iter_mut().for_each(|p| *p = (*p * 255.0).round().clamp(0.0, 255.0) / 255.0);
    }
    let id = format!("{}_{index:03}", split_name(split));
    Ok((FrameSequence::new(id, frames, cfg.frame_period_ms)?, burst))
}

/// Writes the whole corpus under `out_dir` (frames in `frames/<clip>/`) and
/// returns its manifest, also saved as `manifest.json`.
pub fn synth_generate(cfg: &SynthConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        for (i, anomalous) in anomalous_clips(cfg, split).into_iter().enumerate() {
            jobs.push((split, i, anomalous));
        }
    }
    let clips = jobs
        .par_iter()
        .map(|&(split, i, anomalous)| {
            let (seq, burst) = generate_clip(cfg, split, i, anomalous)?;
            let rel = Path::new("frames").join(&seq.clip_id);
            let dir = out_dir.join(&rel);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
            for t in 0..seq.len() {
                write_frame(&frame_path(&dir, t), cfg.frame_side, seq.frames.frame(t))?;
            }
            Ok(ClipEntry {
                clip_id: seq.clip_id.clone(),
                frames_dir: rel,
                frame_count: seq.len(),
                frame_period_ms: cfg.frame_period_ms,
                subject_id: format!("{}_s{:02}", split_name(split), i / cfg.clips_per_subject),
                split,
                labels: burst.map(|b| vec![b.segment]).unwrap_or_default(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest::new(clips, out_dir);
    manifest.validate()?;
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}
