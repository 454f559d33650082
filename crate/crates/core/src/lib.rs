//! Spatiotemporal event spotting in block-divided image sequences.
//!
//! Frames are split into a 4×4 grid. A recurrent convolutional autoencoder
//! ([`rcae`]) encodes short windows of each block, one Gaussian mixture per
//! block ([`density`]) scores the codes, and [`spotting`] pools, smooths and
//! thresholds the scores into temporal segments with per-block localization.
//! [`harness`] holds corpus I/O, synthetic data, metrics and the stages the
//! `mespot` binary runs.

pub mod density;
pub mod error;
pub mod harness;
pub mod preprocessing;
pub mod rcae;
pub mod segment;
pub mod seed;
pub mod spotting;
pub mod tensorops;

pub use error::{Error, Result};
pub use segment::Segment;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod book_introduction {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/tensors.md")]
mod book_tensors {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/sampling.md")]
mod book_sampling {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/model.md")]
mod book_model {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/density.md")]
mod book_density {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/spotting.md")]
mod book_spotting {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/evaluation.md")]
mod book_evaluation {}
