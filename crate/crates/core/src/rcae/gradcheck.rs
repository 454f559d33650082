//! Central-difference checks of every hand-written backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensorops::{
    conv2d, conv2d_grad, layer_norm, layer_norm_grad, transposed_conv2d, transposed_conv2d_grad, ConvKernel,
    LayerNorm, Padding, Tensor4,
};

const H: f64 = 1e-6;

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-6 + 1e-4 * analytic.abs().max(numeric.abs())
}

fn check_params<M: Parameters + Clone>(model: &M, analytic: &M, loss: impl Fn(&M) -> f64, samples: usize) {
    let base = model.flatten();
    let grad = analytic.flatten();
    assert_eq!(base.len(), grad.len());
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let picks: Vec<usize> = if base.len() <= samples {
        (0..base.len()).collect()
    } else {
        (0..samples).map(|_| rng.gen_range(0..base.len())).collect()
    };
    let mut probe = model.clone();
    for i in picks {
        let mut p = base.clone();
        p[i] += H;
        probe.load_flat(&p);
        let up = loss(&probe);
        p[i] -= 2.0 * H;
        probe.load_flat(&p);
        let down = loss(&probe);
        let numeric = (up - down) / (2.0 * H);
        assert!(close(grad[i], numeric), "param {i}: analytic {} numeric {numeric}", grad[i]);
    }
}

fn check_input(x: &Tensor4, analytic: &Tensor4, loss: impl Fn(&Tensor4) -> f64) {
    assert_eq!(x.dims(), analytic.dims());
    for i in 0..x.len() {
        let mut p = x.clone();
        p.data_mut()[i] += H;
        let up = loss(&p);
        p.data_mut()[i] -= 2.0 * H;
        let down = loss(&p);
        let numeric = (up - down) / (2.0 * H);
        assert!(
            close(analytic.data()[i], numeric),
            "input {i}: analytic {} numeric {numeric}",
            analytic.data()[i]
        );
    }
}

#[test]
fn conv2d_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (stride, padding) in [(1, Padding::Same), (2, Padding::Same), (2, Padding::Valid)] {
        let x = Tensor4::random([2, 5, 6, 2], -1.0, 1.0, &mut rng);
        let k = ConvKernel::init(3, 3, 2, 3, &mut rng);
        let y = conv2d(&x, &k, stride, padding).unwrap();
        let w = Tensor4::random(y.dims(), -1.0, 1.0, &mut rng);
        let (dx, dk) = conv2d_grad(&x, &k, stride, padding, &w).unwrap();
        check_input(&x, &dx, |x| conv2d(x, &k, stride, padding).unwrap().dot(&w).unwrap());
        check_params(&k, &dk, |k| conv2d(&x, k, stride, padding).unwrap().dot(&w).unwrap(), 200);
    }
}

#[test]
fn transposed_conv2d_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor4::random([2, 3, 3, 2], -1.0, 1.0, &mut rng);
    let k = ConvKernel::init(3, 3, 2, 3, &mut rng);
    let y = transposed_conv2d(&x, &k, 2).unwrap();
    let w = Tensor4::random(y.dims(), -1.0, 1.0, &mut rng);
    let (dx, dk) = transposed_conv2d_grad(&x, &k, 2, &w).unwrap();
    check_input(&x, &dx, |x| transposed_conv2d(x, &k, 2).unwrap().dot(&w).unwrap());
    check_params(&k, &dk, |k| transposed_conv2d(&x, k, 2).unwrap().dot(&w).unwrap(), 200);
}

#[test]
fn layer_norm_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor4::random([2, 3, 3, 2], -1.0, 1.0, &mut rng);
    let norm = LayerNorm {
        gain: vec![1.3, -0.7],
        bias: vec![0.2, 0.1],
    };
    let w = Tensor4::random(x.dims(), -1.0, 1.0, &mut rng);
    let (dx, dg, db) = layer_norm_grad(&x, &norm.gain, &w).unwrap();
    check_input(&x, &dx, |x| layer_norm(x, &norm.gain, &norm.bias).unwrap().dot(&w).unwrap());
    let analytic = LayerNorm { gain: dg, bias: db };
    check_params(&norm, &analytic, |n| layer_norm(&x, &n.gain, &n.bias).unwrap().dot(&w).unwrap(), 10);
}

#[test]
fn conv_layer_gradient_both_directions() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (dir, side) in [(Direction::Down, 6), (Direction::Up, 3)] {
        let layer = ConvLayer::init(3, 2, 3, &mut rng);
        let x = Tensor4::random([2, side, side, 2], -1.0, 1.0, &mut rng);
        let (y, cache) = layer.forward(dir, &x).unwrap();
        let w = Tensor4::random(y.dims(), -1.0, 1.0, &mut rng);
        let mut g = layer.zeros_like();
        let dx = layer.backward(dir, &cache, &w, &mut g).unwrap();
        check_input(&x, &dx, |x| layer.infer(dir, x).unwrap().dot(&w).unwrap());
        check_params(&layer, &g, |l| l.infer(dir, &x).unwrap().dot(&w).unwrap(), 150);
    }
}

#[test]
fn conv_lstm_gradient_with_and_without_dropout() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cell = ConvLstmCell::init(2, 3, 3, 3, &mut rng);
    for p in [&mut cell.peep_i, &mut cell.peep_f, &mut cell.peep_o] {
        p.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
    }
    let x = Tensor4::random([4, 3, 3, 2], -1.0, 1.0, &mut rng);
    let w = Tensor4::random([4, 3, 3, 3], -1.0, 1.0, &mut rng);
    let mask = dropout_mask([4, 3, 3, 3], 0.5, &mut rng);
    for m in [None, Some(&mask)] {
        let loss = |c: &ConvLstmCell, x: &Tensor4| c.forward_seq(x, m).unwrap().0.hidden.dot(&w).unwrap();
        let (_, cache) = cell.forward_seq(&x, m).unwrap();
        let mut g = cell.zeros_like();
        let dx = cell.backward_seq(&cache, &w, &mut g).unwrap();
        check_input(&x, &dx, |x| loss(&cell, x));
        check_params(&cell, &g, |c| loss(c, &x), 300);
    }
}

fn tiny_arch() -> Architecture {
    Architecture {
        block: 12,
        time_steps: 2,
        conv_filters: 4,
        lstm_filters: 4,
        kernel: 3,
        depth: 4,
    }
}

#[test]
fn full_model_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model = RcaeModel::init(&tiny_arch(), &mut rng).unwrap();
    let x = Tensor4::random([2, 12, 12, 1], 0.0, 1.0, &mut rng);
    for mode in [Mode::Eval, Mode::Train { seed: 3 }] {
        let (_, g) = model.loss_and_grad(&x, mode).unwrap();
        let loss = |m: &RcaeModel| {
            let (recon, _) = m.forward(&x, mode).unwrap();
            reconstruction_loss(&x, &recon).unwrap()
        };
        check_params(&model, &g, loss, 400);
    }
}

#[test]
fn conv_autoencoder_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ae = ConvAutoencoder::init(&tiny_arch(), &mut rng).unwrap();
    let x = Tensor4::random([2, 12, 12, 1], 0.0, 1.0, &mut rng);
    let (_, g) = ae.loss_and_grad(&x).unwrap();
    let loss = |m: &ConvAutoencoder| {
        let (recon, _) = m.forward(&x).unwrap();
        reconstruction_loss(&x, &recon).unwrap()
    };
    check_params(&ae, &g, loss, 300);
}
