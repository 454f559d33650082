//! From cropped grayscale clips to per-block bags of fixed-length
//! multiscale training instances.

mod blocks;
mod sampling;

pub use blocks::{block_divide, BlockSequence, FrameSequence, BLOCKS, GRID};
pub use sampling::{build_bags, empty_bags, extend_bags, temporal_multiscale_sample, Bag, Instance, SampleOutcome, SamplingConfig, TrainingClip};
