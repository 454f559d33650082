//! Corpus handling, evaluation, configuration, persistence and the stages
//! the command line chains together.

pub mod config;
pub mod eval;
pub mod frames;
pub mod manifest;
pub mod persist;
pub mod pipeline;
pub mod synth;

pub use config::{Config, Profile, SpotConfig};
pub use eval::{evaluate, roc_auc, EvalReport, SpotRecord};
pub use manifest::{ClipEntry, Manifest, Split};
pub use persist::{Calibration, ModelFile};
pub use synth::{generate_clip, synth_generate, SynthConfig};
