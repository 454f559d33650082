use rand::Rng;

use crate::error::{Error, Result};

/// Dense rank-4 array laid out as `time × height × width × channels`,
/// row-major, channels fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(t: usize, h: usize, w: usize, c: usize) -> Self {
        Self {
            dims: [t, h, w, c],
            data: vec![0.0; t * h * w * c],
        }
    }

    pub fn filled(t: usize, h: usize, w: usize, c: usize, value: f64) -> Self {
        Self {
            dims: [t, h, w, c],
            data: vec![value; t * h * w * c],
        }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(Error::shape(format!(
                "tensor of dims {dims:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    /// Uniform values in `[lo, hi)`.
    pub fn random<R: Rng + ?Sized>(dims: [usize; 4], lo: f64, hi: f64, rng: &mut R) -> Self {
        let n = dims.iter().product();
        let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Self { dims, data }
    }

    pub fn zeros_like(other: &Tensor4) -> Self {
        Self {
            dims: other.dims,
            data: vec![0.0; other.data.len()],
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn t(&self) -> usize {
        self.dims[0]
    }

    pub fn h(&self) -> usize {
        self.dims[1]
    }

    pub fn w(&self) -> usize {
        self.dims[2]
    }

    pub fn c(&self) -> usize {
        self.dims[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Elements in one time step.
    pub fn frame_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    #[inline]
    pub fn index(&self, t: usize, y: usize, x: usize, c: usize) -> usize {
        ((t * self.dims[1] + y) * self.dims[2] + x) * self.dims[3] + c
    }

    #[inline]
    pub fn get(&self, t: usize, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(t, y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, t: usize, y: usize, x: usize, c: usize, v: f64) {
        let i = self.index(t, y, x, c);
        self.data[i] = v;
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        let n = self.frame_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    /// Copy of a single time step as a `1 × h × w × c` tensor.
    pub fn step(&self, t: usize) -> Tensor4 {
        Tensor4 {
            dims: [1, self.dims[1], self.dims[2], self.dims[3]],
            data: self.frame(t).to_vec(),
        }
    }

    /// Stack `1 × h × w × c` (or longer) tensors along time.
    pub fn stack(parts: &[Tensor4]) -> Result<Tensor4> {
        let first = parts
            .first()
            .ok_or_else(|| Error::arg("cannot stack zero tensors"))?;
        let [_, h, w, c] = first.dims;
        let mut t = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.dims[1..] != [h, w, c] {
                return Err(Error::shape(format!(
                    "cannot stack {:?} onto frames of {:?}",
                    p.dims,
                    [h, w, c]
                )));
            }
            t += p.dims[0];
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor4 {
            dims: [t, h, w, c],
            data,
        })
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
        if a.dims[..3] != b.dims[..3] {
            return Err(Error::shape(format!(
                "channel concat needs equal t/h/w, got {:?} and {:?}",
                a.dims, b.dims
            )));
        }
        let (ca, cb) = (a.c(), b.c());
        let mut out = Tensor4::zeros(a.t(), a.h(), a.w(), ca + cb);
        for ((dst, sa), sb) in out
            .data
            .chunks_exact_mut(ca + cb)
            .zip(a.data.chunks_exact(ca))
            .zip(b.data.chunks_exact(cb))
        {
            dst[..ca].copy_from_slice(sa);
            dst[ca..].copy_from_slice(sb);
        }
        Ok(out)
    }

    /// Inverse of [`Tensor4::concat_channels`].
    pub fn split_channels(&self, first: usize) -> Result<(Tensor4, Tensor4)> {
        let c = self.c();
        if first > c {
            return Err(Error::shape(format!("cannot split {c} channels at {first}")));
        }
        let [t, h, w, _] = self.dims;
        let mut a = Tensor4::zeros(t, h, w, first);
        let mut b = Tensor4::zeros(t, h, w, c - first);
        for (p, src) in self.data.chunks_exact(c).enumerate() {
            a.data[p * first..(p + 1) * first].copy_from_slice(&src[..first]);
            b.data[p * (c - first)..(p + 1) * (c - first)].copy_from_slice(&src[first..]);
        }
        Ok((a, b))
    }

    pub fn ensure_same_dims(&self, other: &Tensor4, what: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "{what}: dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Tensor4) -> Result<()> {
        self.ensure_same_dims(other, "add")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor4 {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Inner product over all elements.
    pub fn dot(&self, other: &Tensor4) -> Result<f64> {
        self.ensure_same_dims(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn relu(x: &Tensor4) -> Tensor4 {
    x.map(|v| v.max(0.0))
}

/// Gradient of ReLU given its input and the upstream gradient.
pub fn relu_grad(input: &Tensor4, upstream: &Tensor4) -> Result<Tensor4> {
    input.ensure_same_dims(upstream, "relu_grad")?;
    let data = input
        .data
        .iter()
        .zip(&upstream.data)
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Ok(Tensor4 {
        dims: input.dims,
        data,
    })
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
