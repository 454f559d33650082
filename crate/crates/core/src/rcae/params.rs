use crate::tensorops::{ConvKernel, LayerNorm};

/// Visits trainable parameter blocks in a fixed declared order. The order
/// defines the flat vector used by the optimizer and the model file.
pub trait Parameters {
    fn visit(&self, f: &mut dyn FnMut(&[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64]));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |b| n += b.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit(&mut |b| out.extend_from_slice(b));
        out
    }

    /// Overwrites parameters from a flat vector of exactly `param_count` values.
    fn load_flat(&mut self, flat: &[f64]) {
        let mut pos = 0;
        self.visit_mut(&mut |b| {
            b.copy_from_slice(&flat[pos..pos + b.len()]);
            pos += b.len();
        });
        debug_assert_eq!(pos, flat.len());
    }

    /// Rounds every parameter to the nearest 32-bit float, the precision
    /// the model file stores.
    fn round_to_f32(&mut self) {
        self.visit_mut(&mut |b| b.iter_mut().for_each(|v| *v = *v as f32 as f64));
    }
}

impl Parameters for ConvKernel {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(&self.weights);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(&mut self.weights);
        f(&mut self.bias);
    }
}

impl Parameters for LayerNorm {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(&self.gain);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(&mut self.gain);
        f(&mut self.bias);
    }
}

impl<T: Parameters> Parameters for [T] {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.iter().for_each(|p| p.visit(f));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.iter_mut().for_each(|p| p.visit_mut(f));
    }
}

impl<T: Parameters> Parameters for Vec<T> {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.as_slice().visit(f)
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.as_mut_slice().visit_mut(f)
    }
}
