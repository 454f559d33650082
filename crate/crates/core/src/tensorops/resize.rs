use super::tensor::Tensor4;
use crate::error::{Error, Result};

#[inline]
fn source_index(i: usize, src: usize, dst: usize) -> usize {
    i * src / dst
}

/// Nearest-neighbour resize: output pixel `(i, j)` copies input pixel
/// `(floor(i·h/th), floor(j·w/tw))`.
pub fn resize_nearest(input: &Tensor4, target_h: usize, target_w: usize) -> Result<Tensor4> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::arg("resize target must be at least 1x1"));
    }
    let c = input.c();
    let mut out = Tensor4::zeros(input.t(), target_h, target_w, c);
    for t in 0..input.t() {
        for i in 0..target_h {
            let sy = source_index(i, input.h(), target_h);
            for j in 0..target_w {
                let sx = source_index(j, input.w(), target_w);
                let s = input.index(t, sy, sx, 0);
                let d = out.index(t, i, j, 0);
                let (src, dst) = (input.data(), out.data_mut());
                dst[d..d + c].copy_from_slice(&src[s..s + c]);
            }
        }
    }
    Ok(out)
}

/// Scatter-adds the upstream gradient back onto the source grid.
pub fn resize_nearest_grad(upstream: &Tensor4, src_h: usize, src_w: usize) -> Result<Tensor4> {
    if src_h == 0 || src_w == 0 {
        return Err(Error::arg("resize source must be at least 1x1"));
    }
    let c = upstream.c();
    let mut d = Tensor4::zeros(upstream.t(), src_h, src_w, c);
    for t in 0..upstream.t() {
        for i in 0..upstream.h() {
            let sy = source_index(i, src_h, upstream.h());
            for j in 0..upstream.w() {
                let sx = source_index(j, src_w, upstream.w());
                for ch in 0..c {
                    let g = upstream.get(t, i, j, ch);
                    let k = d.index(t, sy, sx, ch);
                    d.data_mut()[k] += g;
                }
            }
        }
    }
    Ok(d)
}
