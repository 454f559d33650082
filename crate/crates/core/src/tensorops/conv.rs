//! 2-D convolution and its adjoint, applied independently to every time step.
//!
//! Kernels are stored `[ky][kx][cin][cout]` so the innermost loop runs over
//! contiguous output channels. Same padding follows the usual convention:
//! the output has `ceil(n / stride)` positions and any odd padding goes to
//! the bottom/right edge.

use rand::Rng;

use super::tensor::Tensor4;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub kh: usize,
    pub kw: usize,
    pub cin: usize,
    pub cout: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvKernel {
    pub fn zeros(kh: usize, kw: usize, cin: usize, cout: usize) -> Self {
        Self {
            kh,
            kw,
            cin,
            cout,
            weights: vec![0.0; kh * kw * cin * cout],
            bias: vec![0.0; cout],
        }
    }

    /// Fan-in scaled uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(kh: usize, kw: usize, cin: usize, cout: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (kh * kw * cin) as f64).sqrt();
        let mut k = Self::zeros(kh, kw, cin, cout);
        for w in &mut k.weights {
            *w = rng.gen_range(-bound..bound);
        }
        k
    }

    pub fn from_parts(
        kh: usize,
        kw: usize,
        cin: usize,
        cout: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if weights.len() != kh * kw * cin * cout || bias.len() != cout {
            return Err(Error::shape(format!(
                "kernel {kh}x{kw}x{cin}x{cout} needs {} weights and {cout} biases, got {} and {}",
                kh * kw * cin * cout,
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            kh,
            kw,
            cin,
            cout,
            weights,
            bias,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.kh, self.kw, self.cin, self.cout)
    }

    #[inline]
    pub fn weight_index(&self, ky: usize, kx: usize, ci: usize, co: usize) -> usize {
        ((ky * self.kw + kx) * self.cin + ci) * self.cout + co
    }

    /// The same taps with input and output channels exchanged (zero bias).
    /// Convolving with this kernel is the adjoint of transposed convolution
    /// with `self`.
    pub fn swap_channels(&self) -> ConvKernel {
        let mut out = ConvKernel::zeros(self.kh, self.kw, self.cout, self.cin);
        for ky in 0..self.kh {
            for kx in 0..self.kw {
                for ci in 0..self.cin {
                    for co in 0..self.cout {
                        let v = self.weights[self.weight_index(ky, kx, ci, co)];
                        let j = out.weight_index(ky, kx, co, ci);
                        out.weights[j] = v;
                    }
                }
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &ConvKernel) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

/// Output length and leading pad for one spatial axis.
pub fn conv_geometry(n: usize, k: usize, stride: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Same => {
            let out = n.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(n);
            (out, total / 2)
        }
        Padding::Valid => {
            if n < k {
                (0, 0)
            } else {
                ((n - k) / stride + 1, 0)
            }
        }
    }
}

fn check_conv(input: &Tensor4, kernel: &ConvKernel, stride: usize) -> Result<()> {
    if stride == 0 {
        return Err(Error::arg("convolution stride must be at least 1"));
    }
    if input.c() != kernel.cin {
        return Err(Error::shape(format!(
            "input has {} channels but kernel expects {}",
            input.c(),
            kernel.cin
        )));
    }
    Ok(())
}

/// Shared index walk: calls `f(in_offset, out_offset, weight_offset)` for every
/// (output pixel, tap) pair that lands inside the input.
#[inline]
fn for_each_tap(
    t: usize,
    (ih, iw): (usize, usize),
    (oh, ow): (usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    (pad_y, pad_x): (usize, usize),
    (cin, cout): (usize, usize),
    mut f: impl FnMut(usize, usize, usize),
) {
    for b in 0..t {
        for oy in 0..oh {
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - pad_y as isize;
                if iy < 0 || iy >= ih as isize {
                    continue;
                }
                let iy = iy as usize;
                for ox in 0..ow {
                    let out_off = ((b * oh + oy) * ow + ox) * cout;
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad_x as isize;
                        if ix < 0 || ix >= iw as isize {
                            continue;
                        }
                        let in_off = ((b * ih + iy) * iw + ix as usize) * cin;
                        let w_off = (ky * kw + kx) * cin * cout;
                        f(in_off, out_off, w_off);
                    }
                }
            }
        }
    }
}

/// Cross-correlation of every time step with `kernel`, plus bias.
pub fn conv2d(input: &Tensor4, kernel: &ConvKernel, stride: usize, padding: Padding) -> Result<Tensor4> {
    check_conv(input, kernel, stride)?;
    let (oh, pad_y) = conv_geometry(input.h(), kernel.kh, stride, padding);
    let (ow, pad_x) = conv_geometry(input.w(), kernel.kw, stride, padding);
    let (cin, cout) = (kernel.cin, kernel.cout);
    let mut out = Tensor4::zeros(input.t(), oh, ow, cout);
    for px in out.data_mut().chunks_exact_mut(cout) {
        px.copy_from_slice(&kernel.bias);
    }
    let src = input.data();
    let w = &kernel.weights;
    let dst = out.data_mut();
    for_each_tap(
        input.t(),
        (input.h(), input.w()),
        (oh, ow),
        (kernel.kh, kernel.kw),
        stride,
        (pad_y, pad_x),
        (cin, cout),
        |in_off, out_off, w_off| {
            let o = &mut dst[out_off..out_off + cout];
            for ci in 0..cin {
                let v = src[in_off + ci];
                let row = &w[w_off + ci * cout..w_off + (ci + 1) * cout];
                for (acc, wv) in o.iter_mut().zip(row) {
                    *acc += v * wv;
                }
            }
        },
    );
    Ok(out)
}

/// Gradients of `⟨conv2d(input, kernel), upstream⟩` with respect to the input
/// and to the kernel (weights and bias).
pub fn conv2d_grad(
    input: &Tensor4,
    kernel: &ConvKernel,
    stride: usize,
    padding: Padding,
    upstream: &Tensor4,
) -> Result<(Tensor4, ConvKernel)> {
    check_conv(input, kernel, stride)?;
    let (oh, pad_y) = conv_geometry(input.h(), kernel.kh, stride, padding);
    let (ow, pad_x) = conv_geometry(input.w(), kernel.kw, stride, padding);
    let expected = [input.t(), oh, ow, kernel.cout];
    if upstream.dims() != expected {
        return Err(Error::shape(format!(
            "upstream gradient dims {:?} do not match conv output {expected:?}",
            upstream.dims()
        )));
    }
    let (cin, cout) = (kernel.cin, kernel.cout);
    let mut d_input = Tensor4::zeros_like(input);
    let mut d_kernel = kernel.zeros_like();
    for px in upstream.data().chunks_exact(cout) {
        for (b, g) in d_kernel.bias.iter_mut().zip(px) {
            *b += g;
        }
    }
    let src = input.data();
    let up = upstream.data();
    let w = &kernel.weights;
    let di = d_input.data_mut();
    let dw = &mut d_kernel.weights;
    for_each_tap(
        input.t(),
        (input.h(), input.w()),
        (oh, ow),
        (kernel.kh, kernel.kw),
        stride,
        (pad_y, pad_x),
        (cin, cout),
        |in_off, out_off, w_off| {
            let g = &up[out_off..out_off + cout];
            for ci in 0..cin {
                let row = w_off + ci * cout;
                let v = src[in_off + ci];
                let mut acc = 0.0;
                for co in 0..cout {
                    acc += g[co] * w[row + co];
                    dw[row + co] += v * g[co];
                }
                di[in_off + ci] += acc;
            }
        },
    );
    Ok((d_input, d_kernel))
}

/// Learnable upsampling: the adjoint of a same-padded `conv2d` whose input
/// is `stride` times larger. `kernel.cin` is this layer's input channel count.
pub fn transposed_conv2d(input: &Tensor4, kernel: &ConvKernel, stride: usize) -> Result<Tensor4> {
    check_conv(input, kernel, stride)?;
    let (oh, ow) = (input.h() * stride, input.w() * stride);
    let (_, pad_y) = conv_geometry(oh, kernel.kh, stride, Padding::Same);
    let (_, pad_x) = conv_geometry(ow, kernel.kw, stride, Padding::Same);
    let (cin, cout) = (kernel.cin, kernel.cout);
    let mut out = Tensor4::zeros(input.t(), oh, ow, cout);
    for px in out.data_mut().chunks_exact_mut(cout) {
        px.copy_from_slice(&kernel.bias);
    }
    let src = input.data();
    let w = &kernel.weights;
    let dst = out.data_mut();
    // Roles swap relative to conv2d: the large tensor is the "input" side of
    // the index walk, the small one the "output" side.
    for_each_tap(
        input.t(),
        (oh, ow),
        (input.h(), input.w()),
        (kernel.kh, kernel.kw),
        stride,
        (pad_y, pad_x),
        (cout, cin),
        |big_off, small_off, w_off| {
            let o = &mut dst[big_off..big_off + cout];
            for ci in 0..cin {
                let v = src[small_off + ci];
                let row = &w[w_off + ci * cout..w_off + (ci + 1) * cout];
                for (acc, wv) in o.iter_mut().zip(row) {
                    *acc += v * wv;
                }
            }
        },
    );
    Ok(out)
}

pub fn transposed_conv2d_grad(
    input: &Tensor4,
    kernel: &ConvKernel,
    stride: usize,
    upstream: &Tensor4,
) -> Result<(Tensor4, ConvKernel)> {
    check_conv(input, kernel, stride)?;
    let (oh, ow) = (input.h() * stride, input.w() * stride);
    let expected = [input.t(), oh, ow, kernel.cout];
    if upstream.dims() != expected {
        return Err(Error::shape(format!(
            "upstream gradient dims {:?} do not match transposed conv output {expected:?}",
            upstream.dims()
        )));
    }
    let (_, pad_y) = conv_geometry(oh, kernel.kh, stride, Padding::Same);
    let (_, pad_x) = conv_geometry(ow, kernel.kw, stride, Padding::Same);
    let (cin, cout) = (kernel.cin, kernel.cout);
    let mut d_input = Tensor4::zeros_like(input);
    let mut d_kernel = kernel.zeros_like();
    for px in upstream.data().chunks_exact(cout) {
        for (b, g) in d_kernel.bias.iter_mut().zip(px) {
            *b += g;
        }
    }
    let src = input.data();
    let up = upstream.data();
    let w = &kernel.weights;
    let di = d_input.data_mut();
    let dw = &mut d_kernel.weights;
    for_each_tap(
        input.t(),
        (oh, ow),
        (input.h(), input.w()),
        (kernel.kh, kernel.kw),
        stride,
        (pad_y, pad_x),
        (cout, cin),
        |big_off, small_off, w_off| {
            let g = &up[big_off..big_off + cout];
            for ci in 0..cin {
                let row = w_off + ci * cout;
                let v = src[small_off + ci];
                let mut acc = 0.0;
                for co in 0..cout {
                    acc += g[co] * w[row + co];
                    dw[row + co] += v * g[co];
                }
                di[small_off + ci] += acc;
            }
        },
    );
    Ok((d_input, d_kernel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Six nested loops straight from the definition of cross-correlation.
    fn reference_conv(x: &Tensor4, k: &ConvKernel, stride: usize, padding: Padding) -> Tensor4 {
        let (oh, py) = conv_geometry(x.h(), k.kh, stride, padding);
        let (ow, px) = conv_geometry(x.w(), k.kw, stride, padding);
        let mut out = Tensor4::zeros(x.t(), oh, ow, k.cout);
        for t in 0..x.t() {
            for oy in 0..oh {
                for ox in 0..ow {
                    for co in 0..k.cout {
                        let mut acc = k.bias[co];
                        for ky in 0..k.kh {
                            for kx in 0..k.kw {
                                for ci in 0..k.cin {
                                    let iy = (oy * stride + ky) as isize - py as isize;
                                    let ix = (ox * stride + kx) as isize - px as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < x.h() && (ix as usize) < x.w() {
                                        acc += x.get(t, iy as usize, ix as usize, ci)
                                            * k.weights[k.weight_index(ky, kx, ci, co)];
                                    }
                                }
                            }
                        }
                        out.set(t, oy, ox, co, acc);
                    }
                }
            }
        }
        out
    }

    fn random_kernel(rng: &mut ChaCha8Rng, k: usize, cin: usize, cout: usize) -> ConvKernel {
        let mut kern = ConvKernel::zeros(k, k, cin, cout);
        for w in kern.weights.iter_mut().chain(kern.bias.iter_mut()) {
            *w = rng.gen_range(-1.0..1.0);
        }
        kern
    }

    fn max_rel_err(a: &Tensor4, b: &Tensor4) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-12))
            .fold(0.0, f64::max)
    }

    #[test]
    fn same_padding_chain_reaches_six() {
        let mut side = 90;
        let mut sizes = vec![];
        for _ in 0..4 {
            side = conv_geometry(side, 3, 2, Padding::Same).0;
            sizes.push(side);
        }
        assert_eq!(sizes, vec![45, 23, 12, 6]);
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor4::random([1, 5, 5, 1], -1.0, 1.0, &mut rng);
        let k = ConvKernel::from_parts(1, 1, 1, 1, vec![1.0], vec![0.0]).unwrap();
        assert_eq!(conv2d(&x, &k, 1, Padding::Same).unwrap(), x);
        let up = Tensor4::random([1, 5, 5, 1], -1.0, 1.0, &mut rng);
        let (dx, _) = conv2d_grad(&x, &k, 1, Padding::Same, &up).unwrap();
        assert_eq!(dx, up);
    }

    #[test]
    fn matches_nested_loop_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor4::random([1, 7, 7, 2], -1.0, 1.0, &mut rng);
        let k = random_kernel(&mut rng, 3, 2, 3);
        for padding in [Padding::Same, Padding::Valid] {
            let fast = conv2d(&x, &k, 1, padding).unwrap();
            let slow = reference_conv(&x, &k, 1, padding);
            assert!(max_rel_err(&fast, &slow) < 1e-10);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor4::random([2, 4, 4, 2], -1.0, 1.0, &mut rng);
        let k = random_kernel(&mut rng, 3, 2, 2);
        let up = Tensor4::zeros(2, 2, 2, 2);
        let (dx, dk) = conv2d_grad(&x, &k, 2, Padding::Same, &up).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(dk.weights.iter().chain(&dk.bias).all(|&v| v == 0.0));
    }

    #[test]
    fn errors_on_bad_arguments() {
        let x = Tensor4::zeros(1, 4, 4, 2);
        let k = ConvKernel::zeros(3, 3, 3, 1);
        assert!(matches!(conv2d(&x, &k, 1, Padding::Same), Err(Error::Shape(_))));
        let k = ConvKernel::zeros(3, 3, 2, 1);
        assert!(matches!(conv2d(&x, &k, 0, Padding::Same), Err(Error::Argument(_))));
        let up = Tensor4::zeros(1, 3, 3, 1);
        assert!(matches!(
            conv2d_grad(&x, &k, 1, Padding::Same, &up),
            Err(Error::Shape(_))
        ));
        assert!(matches!(transposed_conv2d(&x, &ConvKernel::zeros(3, 3, 1, 1), 2), Err(Error::Shape(_))));
    }

    #[test]
    fn transposed_doubles_spatial_size() {
        let mut side = 6;
        let mut sizes = vec![];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut x = Tensor4::random([1, 6, 6, 3], -1.0, 1.0, &mut rng);
        for _ in 0..4 {
            let k = random_kernel(&mut rng, 3, 3, 3);
            x = transposed_conv2d(&x, &k, 2).unwrap();
            side *= 2;
            assert_eq!(x.h(), side);
            sizes.push(x.w());
        }
        assert_eq!(sizes, vec![12, 24, 48, 96]);
    }

    #[test]
    fn transposed_of_zero_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut k = random_kernel(&mut rng, 3, 2, 3);
        k.bias.iter_mut().for_each(|b| *b = 0.0);
        let y = transposed_conv2d(&Tensor4::zeros(1, 3, 3, 2), &k, 2).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transposed_is_adjoint_of_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for stride in [1, 2] {
            let mut k = random_kernel(&mut rng, 3, 1, 1);
            k.bias[0] = 0.0;
            let y = Tensor4::random([1, 4, 4, 1], -1.0, 1.0, &mut rng);
            let x = Tensor4::random([1, 4 * stride, 4 * stride, 1], -1.0, 1.0, &mut rng);
            let lhs = conv2d(&x, &k.swap_channels(), stride, Padding::Same)
                .unwrap()
                .dot(&y)
                .unwrap();
            let rhs = x.dot(&transposed_conv2d(&y, &k, stride).unwrap()).unwrap();
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
        }
    }
}
