//! A burst painted into one block of an otherwise normal clip shows up as
//! a likelihood dip in that block's score curve.

use mespot::harness::pipeline::{fit_densities, train_model};
use mespot::harness::{generate_clip, synth_generate, Config, ModelFile, Profile, Split};
use mespot::preprocessing::{FrameSequence, GRID};
use mespot::spotting::block_scores;

const BLOCK: usize = 13;

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

#[test]
fn injected_burst_dips_below_the_block_median() {
    let mut cfg = Config::profile(Profile::Desk);
    cfg.synth.n_train = 8;
    cfg.synth.n_val = 2;
    cfg.synth.n_test = 1;
    cfg.synth.clip_length = 80;
    cfg.synth.clips_per_subject = 2;
    cfg.train.pretrain_epochs = 2;
    cfg.train.epochs = 4;
    cfg.train.instances_per_epoch = Some(96);

    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_generate(&cfg.synth, dir.path()).unwrap();
    let (rcae, _) = train_model(&manifest, &cfg, 1).unwrap();
    let (mixtures, _) = fit_densities(&manifest, &rcae, &cfg, 1).unwrap();
    let model = ModelFile::new(rcae);

    let long = mespot::harness::SynthConfig { clip_length: 160, ..cfg.synth.clone() };
    let (clip, _) = generate_clip(&long, Split::Test, 0, false).unwrap();
    let mut frames = clip.frames.clone();
    let (side, block) = (frames.w(), cfg.arch.block);
    let (r0, c0) = (block * (BLOCK / GRID), block * (BLOCK % GRID));
    let burst = 80..86;
    for t in burst.clone() {
        let sign = if t % 2 == 0 { 0.3 } else { -0.3 };
        let frame = frames.frame_mut(t);
        for y in 0..block {
            for x in 0..block {
                let cell = if (y / 2 + x / 2) % 2 == 0 { 1.0 } else { -1.0 };
                let p = &mut frame[(r0 + y) * side + c0 + x];
                *p = (*p + sign * cell).clamp(0.0, 1.0);
            }
        }
    }
    let clip = FrameSequence::new("injected", frames, clip.frame_period_ms).unwrap();

    let scores = block_scores(&clip, &model.rcae, &mixtures).unwrap();
    let curve = &scores[BLOCK];
    let med = median(curve);
    // Windows ending at t contain burst frames for t in [onset, offset + 19].
    let during = &curve[burst.start..burst.end + 19];
    let mean = during.iter().sum::<f64>() / during.len() as f64;
    assert!(mean < med, "mean during burst {mean} vs clip median {med}");
}
