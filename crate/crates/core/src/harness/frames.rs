use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};
use crate::preprocessing::FrameSequence;
use crate::tensorops::Tensor4;

/// File name of frame `t` inside a clip directory.
pub fn frame_name(t: usize) -> String {
    format!("{t:05}.pgm")
}

pub fn frame_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(frame_name(t))
}

/// Writes one frame as binary 8-bit PGM, rounding `[0, 1]` to `0..=255`.
pub fn write_frame(path: &Path, side: usize, pixels: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = pixels.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    PnmEncoder::new(BufWriter::new(file))
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(&bytes, side as u32, side as u32, ExtendedColorType::L8)
        .map_err(|e| Error::Format(format!("writing {}: {e}", path.display())))
}

/// Reads a grayscale PGM frame scaled to `[0, 1]`; returns `(height, width, pixels)`.
pub fn read_frame(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    if !path.exists() {
        return Err(Error::Manifest(format!("missing frame file {}", path.display())));
    }
    let img = image::open(path)
        .map_err(|e| Error::Format(format!("reading {}: {e}", path.display())))?
        .into_luma8();
    let (w, h) = img.dimensions();
    let pixels = img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
    Ok((h as usize, w as usize, pixels))
}

/// Loads frames `0..count` of a clip directory.
pub fn read_sequence(clip_id: &str, dir: &Path, count: usize, frame_period_ms: f64) -> Result<FrameSequence> {
    let mut data = Vec::new();
    let mut dims = None;
    for t in 0..count {
        let path = frame_path(dir, t);
        let (h, w, pixels) = read_frame(&path)?;
        match dims {
            None => dims = Some((h, w)),
            Some(d) if d != (h, w) => {
                return Err(Error::Format(format!(
                    "{} is {h}x{w}, earlier frames are {}x{}",
                    path.display(),
                    d.0,
                    d.1
                )))
            }
            _ => {}
        }
        data.extend(pixels);
    }
    let (h, w) = dims.ok_or_else(|| Error::arg(format!("clip {clip_id} has no frames")))?;
    FrameSequence::new(clip_id, Tensor4::from_vec([count, h, w, 1], data)?, frame_period_ms)
}
