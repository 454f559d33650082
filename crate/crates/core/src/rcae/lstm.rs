//! Convolutional LSTM with peephole connections.
//!
//! Per step, with `∗` convolution and `⊙` the Hadamard product:
//!
//! ```text
//! z = tanh(a∗W_az + h₋∗W_hz + b_z)
//! i = σ(a∗W_ai + h₋∗W_hi + W_ci⊙c₋ + b_i)
//! f = σ(a∗W_af + h₋∗W_hf + W_cf⊙c₋ + b_f)
//! c = z⊙i + c₋⊙f
//! o = σ(a∗W_ao + h₋∗W_ho + W_co⊙c + b_o)
//! h = tanh(c)⊙o
//! ```
//!
//! The four input kernels `W_a·` are stored as one kernel with `4·hidden`
//! output channels in gate order z, i, f, o, and likewise the four hidden
//! kernels `W_h·`. The stacked input kernel's bias holds `b_z, b_i, b_f, b_o`;
//! the hidden kernel carries no bias.
//!
//! With dropout, the freshly computed cell state is masked (inverted
//! scaling) before it feeds the output peephole, `tanh`, and the next step.

use rand::Rng;

use super::params::Parameters;
use crate::error::{Error, Result};
use crate::tensorops::{conv2d, conv2d_grad, sigmoid, ConvKernel, Padding, Tensor4};

pub const GATES: usize = 4;
const Z: usize = 0;
const I: usize = 1;
const F: usize = 2;
const O: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLstmCell {
    pub input_kernel: ConvKernel,
    pub hidden_kernel: ConvKernel,
    /// Peephole weights on `c₋` for the input gate, `side·side·hidden`.
    pub peep_i: Vec<f64>,
    pub peep_f: Vec<f64>,
    /// Output-gate peephole, applied to the current cell state.
    pub peep_o: Vec<f64>,
    pub hidden: usize,
    pub side: usize,
}

/// Activations of one step, kept for backprop.
#[derive(Debug, Clone)]
struct StepCache {
    h_prev: Tensor4,
    c_prev: Vec<f64>,
    z: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    /// Cell state after dropout, as seen downstream.
    c: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SequenceCache {
    inputs: Tensor4,
    steps: Vec<StepCache>,
    mask: Option<Tensor4>,
}

/// Hidden and cell state sequences of one forward pass, `T × side × side × hidden`.
#[derive(Debug, Clone)]
pub struct SequenceOutput {
    pub hidden: Tensor4,
    pub cell: Tensor4,
}

impl ConvLstmCell {
    pub fn zeros(cin: usize, hidden: usize, side: usize, k: usize) -> Self {
        let n = side * side * hidden;
        Self {
            input_kernel: ConvKernel::zeros(k, k, cin, GATES * hidden),
            hidden_kernel: ConvKernel::zeros(k, k, hidden, GATES * hidden),
            peep_i: vec![0.0; n],
            peep_f: vec![0.0; n],
            peep_o: vec![0.0; n],
            hidden,
            side,
        }
    }

    /// Fan-in scaled kernels, small peepholes, forget bias 1.
    pub fn init<R: Rng + ?Sized>(cin: usize, hidden: usize, side: usize, k: usize, rng: &mut R) -> Self {
        let mut cell = Self::zeros(cin, hidden, side, k);
        cell.input_kernel = ConvKernel::init(k, k, cin, GATES * hidden, rng);
        cell.hidden_kernel = ConvKernel::init(k, k, hidden, GATES * hidden, rng);
        for p in cell.peep_i.iter_mut().chain(&mut cell.peep_f).chain(&mut cell.peep_o) {
            *p = rng.gen_range(-0.1..0.1);
        }
        for b in &mut cell.input_kernel.bias[F * hidden..(F + 1) * hidden] {
            *b = 1.0;
        }
        cell
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_kernel.cin, self.hidden, self.side, self.input_kernel.kh)
    }

    pub fn input_channels(&self) -> usize {
        self.input_kernel.cin
    }

    pub fn add_assign(&mut self, other: &ConvLstmCell) {
        self.input_kernel.add_assign(&other.input_kernel);
        for (a, b) in self.hidden_kernel.weights.iter_mut().zip(&other.hidden_kernel.weights) {
            *a += b;
        }
        for (dst, src) in [
            (&mut self.peep_i, &other.peep_i),
            (&mut self.peep_f, &other.peep_f),
            (&mut self.peep_o, &other.peep_o),
        ] {
            dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
        }
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        if x.h() != self.side || x.w() != self.side || x.c() != self.input_channels() {
            return Err(Error::shape(format!(
                "recurrent cell expects {s}x{s}x{c} inputs, got {}x{}x{}",
                x.h(),
                x.w(),
                x.c(),
                s = self.side,
                c = self.input_channels()
            )));
        }
        Ok(())
    }

    fn state_len(&self) -> usize {
        self.side * self.side * self.hidden
    }

    /// Gate math for one step given the summed convolution pre-activations.
    fn step_from_pre(&self, pre: &[f64], h_prev: Tensor4, c_prev: &[f64], mask: Option<&[f64]>) -> StepCache {
        let n = self.state_len();
        let hd = self.hidden;
        let mut cache = StepCache {
            h_prev,
            c_prev: c_prev.to_vec(),
            z: vec![0.0; n],
            i: vec![0.0; n],
            f: vec![0.0; n],
            o: vec![0.0; n],
            c: vec![0.0; n],
            tanh_c: vec![0.0; n],
        };
        for p in 0..n {
            let (px, ch) = (p / hd, p % hd);
            let g = |gate: usize| pre[px * GATES * hd + gate * hd + ch];
            let z = g(Z).tanh();
            let i = sigmoid(g(I) + self.peep_i[p] * c_prev[p]);
            let f = sigmoid(g(F) + self.peep_f[p] * c_prev[p]);
            let mut c = z * i + c_prev[p] * f;
            if let Some(m) = mask {
                c *= m[p];
            }
            let o = sigmoid(g(O) + self.peep_o[p] * c);
            let tc = c.tanh();
            cache.z[p] = z;
            cache.i[p] = i;
            cache.f[p] = f;
            cache.o[p] = o;
            cache.c[p] = c;
            cache.tanh_c[p] = tc;
        }
        cache
    }

    /// Single step from explicit previous states: returns `(h, c)`.
    pub fn step(&self, a: &Tensor4, h_prev: &Tensor4, c_prev: &Tensor4) -> Result<(Tensor4, Tensor4)> {
        self.check_input(a)?;
        let state_dims = [1, self.side, self.side, self.hidden];
        if a.t() != 1 || h_prev.dims() != state_dims || c_prev.dims() != state_dims {
            return Err(Error::shape("recurrent step needs one input frame and matching states"));
        }
        let mut pre = conv2d(a, &self.input_kernel, 1, Padding::Same)?;
        pre.add_assign(&conv2d(h_prev, &self.hidden_kernel, 1, Padding::Same)?)?;
        let s = self.step_from_pre(pre.data(), h_prev.clone(), c_prev.data(), None);
        let h: Vec<f64> = s.tanh_c.iter().zip(&s.o).map(|(t, o)| t * o).collect();
        Ok((Tensor4::from_vec(state_dims, h)?, Tensor4::from_vec(state_dims, s.c)?))
    }

    /// Runs the cell over `inputs` (time-major) from zero states.
    /// `mask` holds per-element dropout multipliers for the cell state.
    pub fn forward_seq(&self, inputs: &Tensor4, mask: Option<&Tensor4>) -> Result<(SequenceOutput, SequenceCache)> {
        self.check_input(inputs)?;
        let (t_len, s, hd) = (inputs.t(), self.side, self.hidden);
        if let Some(m) = mask {
            if m.dims() != [t_len, s, s, hd] {
                return Err(Error::shape("dropout mask does not match the recurrent state"));
            }
        }
        let pre_in = conv2d(inputs, &self.input_kernel, 1, Padding::Same)?;
        let mut hidden = Tensor4::zeros(t_len, s, s, hd);
        let mut cell = Tensor4::zeros(t_len, s, s, hd);
        let mut steps = Vec::with_capacity(t_len);
        let mut h_prev = Tensor4::zeros(1, s, s, hd);
        let mut c_prev = vec![0.0; self.state_len()];
        for t in 0..t_len {
            let mut pre = conv2d(&h_prev, &self.hidden_kernel, 1, Padding::Same)?;
            for (p, q) in pre.data_mut().iter_mut().zip(pre_in.frame(t)) {
                *p += q;
            }
            let st = self.step_from_pre(pre.data(), h_prev, &c_prev, mask.map(|m| m.frame(t)));
            let h: Vec<f64> = st.tanh_c.iter().zip(&st.o).map(|(a, b)| a * b).collect();
            hidden.frame_mut(t).copy_from_slice(&h);
            cell.frame_mut(t).copy_from_slice(&st.c);
            c_prev = st.c.clone();
            h_prev = Tensor4::from_vec([1, s, s, hd], h)?;
            steps.push(st);
        }
        Ok((
            SequenceOutput { hidden, cell },
            SequenceCache {
                inputs: inputs.clone(),
                steps,
                mask: mask.cloned(),
            },
        ))
    }

    /// Final hidden state only, for inference.
    pub fn last_hidden(&self, inputs: &Tensor4) -> Result<Tensor4> {
        let (out, _) = self.forward_seq(inputs, None)?;
        Ok(out.hidden.step(inputs.t() - 1))
    }

    /// Backpropagation through time. `d_hidden` is the loss gradient on every
    /// emitted hidden state; returns the gradient on the inputs and adds the
    /// parameter gradients into `grad`.
    pub fn backward_seq(&self, cache: &SequenceCache, d_hidden: &Tensor4, grad: &mut ConvLstmCell) -> Result<Tensor4> {
        let (t_len, s, hd) = (cache.steps.len(), self.side, self.hidden);
        if d_hidden.dims() != [t_len, s, s, hd] {
            return Err(Error::shape("hidden-state gradient does not match the sequence"));
        }
        let n = self.state_len();
        let mut d_pre_all = Tensor4::zeros(t_len, s, s, GATES * hd);
        let mut dh_next = vec![0.0; n];
        let mut dc_next = vec![0.0; n];
        for t in (0..t_len).rev() {
            let st = &cache.steps[t];
            let mask = cache.mask.as_ref().map(|m| m.frame(t));
            let d_pre = d_pre_all.frame_mut(t);
            let mut dc_prev = vec![0.0; n];
            for p in 0..n {
                let (px, ch) = (p / hd, p % hd);
                let dh = d_hidden.frame(t)[p] + dh_next[p];
                let (z, i, f, o, c, tc) = (st.z[p], st.i[p], st.f[p], st.o[p], st.c[p], st.tanh_c[p]);
                let d_o_pre = dh * tc * o * (1.0 - o);
                let mut dc = dc_next[p] + dh * o * (1.0 - tc * tc) + d_o_pre * self.peep_o[p];
                grad.peep_o[p] += d_o_pre * c;
                if let Some(m) = mask {
                    dc *= m[p];
                }
                let cp = st.c_prev[p];
                let d_z_pre = dc * i * (1.0 - z * z);
                let d_i_pre = dc * z * i * (1.0 - i);
                let d_f_pre = dc * cp * f * (1.0 - f);
                dc_prev[p] = dc * f + d_i_pre * self.peep_i[p] + d_f_pre * self.peep_f[p];
                grad.peep_i[p] += d_i_pre * cp;
                grad.peep_f[p] += d_f_pre * cp;
                let base = px * GATES * hd + ch;
                d_pre[base + Z * hd] = d_z_pre;
                d_pre[base + I * hd] = d_i_pre;
                d_pre[base + F * hd] = d_f_pre;
                d_pre[base + O * hd] = d_o_pre;
            }
            let d_pre_t = d_pre_all.step(t);
            let (dh_prev, d_hk) = conv2d_grad(&st.h_prev, &self.hidden_kernel, 1, Padding::Same, &d_pre_t)?;
            for (a, b) in grad.hidden_kernel.weights.iter_mut().zip(&d_hk.weights) {
                *a += b;
            }
            dh_next = dh_prev.into_vec();
            dc_next = dc_prev;
        }
        let (d_inputs, d_ik) = conv2d_grad(&cache.inputs, &self.input_kernel, 1, Padding::Same, &d_pre_all)?;
        grad.input_kernel.add_assign(&d_ik);
        Ok(d_inputs)
    }
}

impl Parameters for ConvLstmCell {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.input_kernel.visit(f);
        f(&self.hidden_kernel.weights);
        f(&self.peep_i);
        f(&self.peep_f);
        f(&self.peep_o);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.input_kernel.visit_mut(f);
        f(&mut self.hidden_kernel.weights);
        f(&mut self.peep_i);
        f(&mut self.peep_f);
        f(&mut self.peep_o);
    }
}

/// Inverted-dropout multipliers: 0 with probability `p`, else `1/(1-p)`.
pub fn dropout_mask<R: Rng + ?Sized>(dims: [usize; 4], p: f64, rng: &mut R) -> Tensor4 {
    let keep = 1.0 - p;
    let n = dims.iter().product();
    let data = (0..n)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { 1.0 / keep })
        .collect();
    Tensor4::from_vec(dims, data).expect("mask length matches dims")
}
