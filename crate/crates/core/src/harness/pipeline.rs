use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;

use super::config::Config;
use super::eval::{evaluate, EvalReport, SpotRecord};
use super::manifest::{ClipEntry, Manifest, Split};
use super::persist::{Calibration, ModelFile};
use super::synth::synth_generate;
use crate::density::{fit_mixture, reduce_latent, GmmModel};
use crate::error::{Error, Result};
use crate::preprocessing::{empty_bags, extend_bags, Bag, FrameSequence, TrainingClip};
use crate::rcae::{train_layerwise, Mode, RcaeModel, TrainTrace};
use crate::seed;
use crate::spotting::{score_clip, spot, write_curves_csv, ScoreCurves, SpotRule};

fn sampling_seed(seed: u64) -> u64 {
    seed::derive(seed, &[0xba9])
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

/// Samples the training split into per-block bags, skipping labeled frames.
pub fn training_bags(manifest: &Manifest, cfg: &Config, seed: u64) -> Result<Vec<Bag>> {
    let clips: Vec<&ClipEntry> = manifest.split(Split::Train).collect();
    if clips.is_empty() {
        return Err(Error::arg("manifest has no training clips"));
    }
    let mut bags = empty_bags();
    for (i, entry) in clips.iter().enumerate() {
        let clip = TrainingClip {
            sequence: manifest.load_clip(entry)?,
            excluded: entry.labels.clone(),
        };
        extend_bags(&mut bags, &clip, i, &cfg.sampling, cfg.arch.block, sampling_seed(seed))?;
    }
    if bags.iter().all(|b| b.instances.is_empty()) {
        return Err(Error::arg("training clips are too short to sample any window"));
    }
    Ok(bags)
}

pub fn train_model(manifest: &Manifest, cfg: &Config, seed: u64) -> Result<(RcaeModel, TrainTrace)> {
    let bags = training_bags(manifest, cfg, seed)?;
    train_layerwise(&bags, &cfg.arch, &cfg.train, seed::derive(seed, &[0x7a1]))
}

/// Reduced latents of every step of every instance in a bag.
pub fn bag_latents(bag: &Bag, rcae: &RcaeModel, cfg: &Config) -> Result<Vec<Vec<f64>>> {
    let per_instance = bag
        .instances
        .par_iter()
        .map(|inst| {
            let latent = rcae.encode(&inst.frames, Mode::Eval)?;
            Ok((0..latent.len())
                .map(|t| reduce_latent(&latent.steps, t, cfg.gmm.reduction))
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_instance.into_iter().flatten().collect())
}

/// Clips used to calibrate the no-event rule: unlabeled validation clips,
/// or unlabeled training clips when there is no validation split.
fn calibration_clips<'a>(manifest: &'a Manifest, cfg: &Config) -> Vec<&'a ClipEntry> {
    let pick = |split| -> Vec<&ClipEntry> {
        manifest
            .split(split)
            .filter(|c| c.labels.is_empty() && c.frame_count >= cfg.arch.time_steps)
            .take(cfg.spot.calibration_clips)
            .collect()
    };
    let val = pick(Split::Val);
    if val.is_empty() {
        pick(Split::Train)
    } else {
        val
    }
}

/// Fits one mixture per block and calibrates the no-event rule.
pub fn fit_densities(
    manifest: &Manifest,
    rcae: &RcaeModel,
    cfg: &Config,
    seed: u64,
) -> Result<(Vec<GmmModel>, Option<Calibration>)> {
    let bags = training_bags(manifest, cfg, seed)?;
    let mut mixtures = Vec::with_capacity(bags.len());
    for bag in &bags {
        let samples = bag_latents(bag, rcae, cfg)?;
        let mut rng = seed::rng(seed, &[0x933, bag.block_index as u64]);
        mixtures.push(fit_mixture(&samples, &cfg.gmm, bag.block_index, &mut rng)?.0);
    }
    drop(bags);
    let mut spans = Vec::new();
    for entry in calibration_clips(manifest, cfg) {
        let curves = score_clip(&manifest.load_clip(entry)?, rcae, &mixtures, false)?;
        let lo = curves.raw_smoothed.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = curves.raw_smoothed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        spans.push(hi - lo);
    }
    let calibration = (!spans.is_empty()).then(|| Calibration {
        reference_span: spans.iter().cloned().fold(0.0, f64::max),
        clips: spans.len(),
    });
    Ok((mixtures, calibration))
}

/// The rule spotting uses: the configured one, with the calibrated
/// reference filled in when the configuration leaves it open.
pub fn effective_rule(cfg: &Config, model: &ModelFile) -> SpotRule {
    let mut rule = cfg.spot.rule.clone();
    if rule.reference_span.is_none() {
        rule.reference_span = model.calibration.as_ref().map(|c| c.reference_span);
    }
    rule
}

pub fn spot_sequence(clip: &FrameSequence, model: &ModelFile, cfg: &Config) -> Result<(ScoreCurves, SpotRecord)> {
    let mixtures = model
        .mixtures
        .as_deref()
        .ok_or_else(|| Error::arg("model file has no density section; run fit-density first"))?;
    let curves = score_clip(clip, &model.rcae, mixtures, cfg.spot.normalize)?;
    let result = spot(&curves, &effective_rule(cfg, model));
    let record = SpotRecord {
        clip_id: clip.clip_id.clone(),
        result,
        anomaly_score: curves.raw_smoothed.iter().map(|v| -v).collect(),
    };
    Ok((curves, record))
}

/// Spots every clip of `split`, writing `<clip>.csv` and `<clip>.json`
/// into `out_dir` when given.
pub fn spot_split(
    manifest: &Manifest,
    model: &ModelFile,
    cfg: &Config,
    split: Split,
    out_dir: Option<&Path>,
) -> Result<Vec<SpotRecord>> {
    if let Some(dir) = out_dir {
        create_dir(dir)?;
    }
    let entries: Vec<&ClipEntry> = manifest.split(split).collect();
    entries
        .par_iter()
        .map(|entry| {
            let (curves, record) = spot_sequence(&manifest.load_clip(entry)?, model, cfg)?;
            if let Some(dir) = out_dir {
                let csv_path = dir.join(format!("{}.csv", entry.clip_id));
                let file = std::fs::File::create(&csv_path)
                    .map_err(|e| Error::io(format!("creating {}", csv_path.display()), e))?;
                write_curves_csv(file, &curves, &record.result)?;
                write_json(&dir.join(format!("{}.json", entry.clip_id)), &record)?;
            }
            Ok(record)
        })
        .collect()
}

/// Reads the `<clip>.json` records `spot_split` wrote for `split`.
pub fn read_records(manifest: &Manifest, split: Split, dir: &Path) -> Result<Vec<SpotRecord>> {
    manifest
        .split(split)
        .map(|c| {
            let path = dir.join(format!("{}.json", c.clip_id));
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
            Ok(serde_json::from_str(&text)?)
        })
        .collect()
}

/// Files and wall-clock timings of a full run.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: EvalReport,
    pub manifest_path: PathBuf,
    pub model_path: PathBuf,
    pub report_path: PathBuf,
    pub timings: Vec<(&'static str, Duration)>,
}

/// Synthesizes a corpus, trains, fits densities, spots the test clips and
/// evaluates, all from one seed. Layout under `out_dir`: `corpus/`,
/// `model.bin`, `train_trace.json`, `spots/`, `report.json`.
pub fn run_pipeline(cfg: &Config, seed: u64, out_dir: &Path) -> Result<PipelineOutcome> {
    cfg.validate()?;
    create_dir(out_dir)?;
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &'static str, timings: &mut Vec<(&'static str, Duration)>| {
        timings.push((name, clock.elapsed()));
        clock = Instant::now();
    };

    let synth = super::synth::SynthConfig {
        seed,
        ..cfg.synth.clone()
    };
    let corpus = out_dir.join("corpus");
    synth_generate(&synth, &corpus)?;
    let manifest_path = corpus.join("manifest.json");
    let manifest = Manifest::load(&manifest_path)?;
    lap("synth", &mut timings);

    let (rcae, trace) = train_model(&manifest, cfg, seed)?;
    write_json(&out_dir.join("train_trace.json"), &trace)?;
    lap("train", &mut timings);

    let (mixtures, calibration) = fit_densities(&manifest, &rcae, cfg, seed)?;
    let model = ModelFile {
        rcae,
        mixtures: Some(mixtures),
        calibration,
    };
    let model_path = out_dir.join("model.bin");
    model.save(&model_path)?;
    lap("fit-density", &mut timings);

    let records = spot_split(&manifest, &model, cfg, Split::Test, Some(&out_dir.join("spots")))?;
    lap("spot", &mut timings);

    let report = evaluate(&records, &manifest)?;
    let report_path = out_dir.join("report.json");
    write_json(&report_path, &report)?;
    lap("eval", &mut timings);
    Ok(PipelineOutcome {
        report,
        manifest_path,
        model_path,
        report_path,
        timings,
    })
}
