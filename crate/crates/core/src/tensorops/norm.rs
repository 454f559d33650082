use super::tensor::Tensor4;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-channel gain and bias applied after normalizing each time step over
/// all of its `h · w · c` activations.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerNorm {
    pub fn identity(channels: usize) -> Self {
        Self {
            gain: vec![1.0; channels],
            bias: vec![0.0; channels],
        }
    }

    pub fn zeros(channels: usize) -> Self {
        Self {
            gain: vec![0.0; channels],
            bias: vec![0.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gain.len()
    }

    pub fn add_assign(&mut self, other: &LayerNorm) {
        for (a, b) in self.gain.iter_mut().zip(&other.gain) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

fn check(input: &Tensor4, gain: &[f64], bias: &[f64]) -> Result<()> {
    if gain.len() != input.c() || bias.len() != input.c() {
        return Err(Error::shape(format!(
            "layer norm over {} channels given {} gains and {} biases",
            input.c(),
            gain.len(),
            bias.len()
        )));
    }
    Ok(())
}

fn moments(frame: &[f64]) -> (f64, f64) {
    let n = frame.len() as f64;
    let first = frame[0];
    if frame.iter().all(|&v| v == first) {
        // exact, so a constant frame normalizes to exactly zero
        return (first, 0.0);
    }
    let mean = frame.iter().sum::<f64>() / n;
    let var = frame.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

pub fn layer_norm(input: &Tensor4, gain: &[f64], bias: &[f64]) -> Result<Tensor4> {
    check(input, gain, bias)?;
    let c = input.c();
    let mut out = Tensor4::zeros_like(input);
    for t in 0..input.t() {
        let src = input.frame(t);
        let (mean, var) = moments(src);
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for (i, (o, &x)) in out.frame_mut(t).iter_mut().zip(src).enumerate() {
            let ch = i % c;
            *o = gain[ch] * (x - mean) * inv + bias[ch];
        }
    }
    Ok(out)
}

/// Returns `(d_input, d_gain, d_bias)`.
pub fn layer_norm_grad(
    input: &Tensor4,
    gain: &[f64],
    upstream: &Tensor4,
) -> Result<(Tensor4, Vec<f64>, Vec<f64>)> {
    input.ensure_same_dims(upstream, "layer_norm_grad")?;
    if gain.len() != input.c() {
        return Err(Error::shape("layer norm gain length differs from channel count"));
    }
    let c = input.c();
    let n = input.frame_len() as f64;
    let mut d_input = Tensor4::zeros_like(input);
    let mut d_gain = vec![0.0; c];
    let mut d_bias = vec![0.0; c];
    let mut xhat = vec![0.0; input.frame_len()];
    let mut dxhat = vec![0.0; input.frame_len()];
    for t in 0..input.t() {
        let src = input.frame(t);
        let up = upstream.frame(t);
        let (mean, var) = moments(src);
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let mut sum_d = 0.0;
        let mut sum_dx = 0.0;
        for i in 0..src.len() {
            let ch = i % c;
            xhat[i] = (src[i] - mean) * inv;
            dxhat[i] = up[i] * gain[ch];
            d_gain[ch] += up[i] * xhat[i];
            d_bias[ch] += up[i];
            sum_d += dxhat[i];
            sum_dx += dxhat[i] * xhat[i];
        }
        let (mean_d, mean_dx) = (sum_d / n, sum_dx / n);
        for (i, o) in d_input.frame_mut(t).iter_mut().enumerate() {
            *o = inv * (dxhat[i] - mean_d - xhat[i] * mean_dx);
        }
    }
    Ok((d_input, d_gain, d_bias))
}
