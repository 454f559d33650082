use rand::Rng;

use super::params::Parameters;
use crate::error::Result;
use crate::tensorops::{
    conv2d, conv2d_grad, layer_norm, layer_norm_grad, relu, relu_grad, transposed_conv2d, transposed_conv2d_grad,
    ConvKernel, LayerNorm, Padding, Tensor4,
};

pub const STRIDE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Stride-2 same-padded convolution.
    Down,
    /// Stride-2 transposed convolution.
    Up,
}

/// Strided conv (or deconv), then ReLU, then layer normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub kernel: ConvKernel,
    pub norm: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct LayerCache {
    input: Tensor4,
    pre: Tensor4,
    act: Tensor4,
}

impl ConvLayer {
    pub fn init<R: Rng + ?Sized>(k: usize, cin: usize, cout: usize, rng: &mut R) -> Self {
        Self {
            kernel: ConvKernel::init(k, k, cin, cout, rng),
            norm: LayerNorm::identity(cout),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            kernel: self.kernel.zeros_like(),
            norm: LayerNorm::zeros(self.norm.channels()),
        }
    }

    pub fn add_assign(&mut self, other: &ConvLayer) {
        self.kernel.add_assign(&other.kernel);
        self.norm.add_assign(&other.norm);
    }

    pub fn forward(&self, dir: Direction, x: &Tensor4) -> Result<(Tensor4, LayerCache)> {
        let pre = match dir {
            Direction::Down => conv2d(x, &self.kernel, STRIDE, Padding::Same)?,
            Direction::Up => transposed_conv2d(x, &self.kernel, STRIDE)?,
        };
        let act = relu(&pre);
        let out = layer_norm(&act, &self.norm.gain, &self.norm.bias)?;
        Ok((
            out,
            LayerCache {
                input: x.clone(),
                pre,
                act,
            },
        ))
    }

    pub fn infer(&self, dir: Direction, x: &Tensor4) -> Result<Tensor4> {
        Ok(self.forward(dir, x)?.0)
    }

    pub fn backward(&self, dir: Direction, cache: &LayerCache, d_out: &Tensor4, grad: &mut ConvLayer) -> Result<Tensor4> {
        let (d_act, d_gain, d_bias) = layer_norm_grad(&cache.act, &self.norm.gain, d_out)?;
        let d_pre = relu_grad(&cache.pre, &d_act)?;
        let (d_in, d_kernel) = match dir {
            Direction::Down => conv2d_grad(&cache.input, &self.kernel, STRIDE, Padding::Same, &d_pre)?,
            Direction::Up => transposed_conv2d_grad(&cache.input, &self.kernel, STRIDE, &d_pre)?,
        };
        grad.kernel.add_assign(&d_kernel);
        grad.norm.add_assign(&LayerNorm {
            gain: d_gain,
            bias: d_bias,
        });
        Ok(d_in)
    }
}

impl Parameters for ConvLayer {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.kernel.visit(f);
        self.norm.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.kernel.visit_mut(f);
        self.norm.visit_mut(f);
    }
}

/// Runs a stack of layers, keeping the caches for backprop.
pub fn stack_forward(layers: &[ConvLayer], dir: Direction, x: &Tensor4) -> Result<(Tensor4, Vec<LayerCache>)> {
    let mut caches = Vec::with_capacity(layers.len());
    let mut h = x.clone();
    for layer in layers {
        let (out, cache) = layer.forward(dir, &h)?;
        caches.push(cache);
        h = out;
    }
    Ok((h, caches))
}

pub fn stack_infer(layers: &[ConvLayer], dir: Direction, x: &Tensor4) -> Result<Tensor4> {
    let mut h = x.clone();
    for layer in layers {
        h = layer.infer(dir, &h)?;
    }
    Ok(h)
}

pub fn stack_backward(
    layers: &[ConvLayer],
    dir: Direction,
    caches: &[LayerCache],
    d_out: &Tensor4,
    grads: &mut [ConvLayer],
) -> Result<Tensor4> {
    let mut d = d_out.clone();
    for ((layer, cache), grad) in layers.iter().zip(caches).zip(grads.iter_mut()).rev() {
        d = layer.backward(dir, cache, &d, grad)?;
    }
    Ok(d)
}
