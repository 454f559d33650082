use crate::error::{Error, Result};
use crate::tensorops::Tensor4;

/// Blocks per side of the spatial grid.
pub const GRID: usize = 4;
pub const BLOCKS: usize = GRID * GRID;

/// A cropped grayscale clip with pixels scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub clip_id: String,
    pub frames: Tensor4,
    pub frame_period_ms: f64,
}

impl FrameSequence {
    pub fn new(clip_id: impl Into<String>, frames: Tensor4, frame_period_ms: f64) -> Result<Self> {
        if frames.t() == 0 {
            return Err(Error::arg("a clip needs at least one frame"));
        }
        if frames.c() != 1 {
            return Err(Error::shape(format!("expected grayscale frames, got {} channels", frames.c())));
        }
        if frames.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::arg("pixel values must lie in [0, 1]"));
        }
        Ok(Self {
            clip_id: clip_id.into(),
            frames,
            frame_period_ms,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.t()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.t() == 0
    }
}

/// One grid cell tracked through time.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSequence {
    pub block_index: usize,
    pub frames: Tensor4,
}

/// Splits every frame into a 4×4 grid of `block × block` tiles. Block `k`
/// covers rows `block·⌊k/4⌋..` and columns `block·(k mod 4)..`.
pub fn block_divide(seq: &FrameSequence, block: usize) -> Result<Vec<BlockSequence>> {
    let f = &seq.frames;
    let side = GRID * block;
    if f.h() != side || f.w() != side || f.c() != 1 {
        return Err(Error::shape(format!(
            "expected {side}x{side}x1 frames for {block}px blocks, got {}x{}x{}",
            f.h(),
            f.w(),
            f.c()
        )));
    }
    Ok((0..BLOCKS)
        .map(|k| {
            let (r0, c0) = (block * (k / GRID), block * (k % GRID));
            let mut out = Tensor4::zeros(f.t(), block, block, 1);
            for t in 0..f.t() {
                for y in 0..block {
                    let src = f.index(t, r0 + y, c0, 0);
                    let dst = out.index(t, y, 0, 0);
                    out.data_mut()[dst..dst + block].copy_from_slice(&f.data()[src..src + block]);
                }
            }
            BlockSequence {
                block_index: k,
                frames: out,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn clip(frames: Tensor4) -> FrameSequence {
        FrameSequence::new("c", frames, 5.0).unwrap()
    }

    #[test]
    fn full_resolution_gives_sixteen_90px_blocks() {
        let blocks = block_divide(&clip(Tensor4::zeros(2, 360, 360, 1)), 90).unwrap();
        assert_eq!(blocks.len(), 16);
        assert!(blocks.iter().all(|b| b.frames.dims() == [2, 90, 90, 1]));
    }

    #[test]
    fn constant_frame_gives_constant_blocks() {
        let blocks = block_divide(&clip(Tensor4::filled(1, 40, 40, 1, 0.25)), 10).unwrap();
        assert!(blocks.iter().all(|b| b.frames.data().iter().all(|&v| v == 0.25)));
    }

    #[test]
    fn single_pixel_lands_in_block_six() {
        let mut f = Tensor4::zeros(1, 360, 360, 1);
        f.set(0, 100, 200, 0, 1.0);
        let blocks = block_divide(&clip(f), 90).unwrap();
        let lit: Vec<usize> = blocks
            .iter()
            .filter(|b| b.frames.data().iter().any(|&v| v != 0.0))
            .map(|b| b.block_index)
            .collect();
        assert_eq!(lit, vec![6]);
    }

    #[test]
    fn blocks_partition_the_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = Tensor4::random([3, 24, 24, 1], 0.0, 1.0, &mut rng);
        let blocks = block_divide(&clip(f.clone()), 6).unwrap();
        let mut rebuilt = Tensor4::zeros(3, 24, 24, 1);
        for b in &blocks {
            let (r0, c0) = (6 * (b.block_index / 4), 6 * (b.block_index % 4));
            for t in 0..3 {
                for y in 0..6 {
                    for x in 0..6 {
                        rebuilt.set(t, r0 + y, c0 + x, 0, b.frames.get(t, y, x, 0));
                    }
                }
            }
        }
        assert_eq!(rebuilt, f);
    }

    #[test]
    fn wrong_size_is_a_shape_error() {
        assert!(matches!(
            block_divide(&clip(Tensor4::zeros(1, 100, 100, 1)), 90),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn out_of_range_pixels_are_rejected() {
        assert!(FrameSequence::new("x", Tensor4::filled(1, 4, 4, 1, 1.5), 5.0).is_err());
        assert!(FrameSequence::new("x", Tensor4::zeros(0, 4, 4, 1), 5.0).is_err());
    }
}
