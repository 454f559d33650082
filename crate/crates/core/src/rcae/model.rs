use rand::Rng;

use super::arch::Architecture;
use super::layers::{stack_backward, stack_forward, stack_infer, ConvLayer, Direction, LayerCache};
use super::lstm::{dropout_mask, ConvLstmCell, SequenceCache};
use super::params::Parameters;
use crate::error::{Error, Result};
use crate::tensorops::{conv2d, conv2d_grad, resize_nearest, resize_nearest_grad, ConvKernel, Padding, Tensor4};

/// Encoder output for one instance: per step, the two encoder recurrent
/// layers' hidden states concatenated along channels.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub steps: Tensor4,
}

impl LatentCode {
    pub fn len(&self) -> usize {
        self.steps.t()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.t() == 0
    }

    /// One step as a `1 × side × side × channels` tensor.
    pub fn step(&self, t: usize) -> Tensor4 {
        self.steps.step(t)
    }

    pub fn last(&self) -> Tensor4 {
        self.steps.step(self.steps.t() - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout on encoder cell states, drawn from the given seed.
    Train { seed: u64 },
    Eval,
}

/// Recurrent convolutional autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub struct RcaeModel {
    pub arch: Architecture,
    pub encoder: Vec<ConvLayer>,
    pub enc_lstm1: ConvLstmCell,
    pub enc_lstm2: ConvLstmCell,
    pub dec_lstm1: ConvLstmCell,
    pub dec_lstm2: ConvLstmCell,
    pub decoder: Vec<ConvLayer>,
    /// Linear map from decoder features to one output channel.
    pub output: ConvKernel,
    /// Drop probability on encoder cell states during training.
    pub dropout: f64,
}

/// Per-frame convolutional autoencoder used for the first training phase.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvAutoencoder {
    pub arch: Architecture,
    pub encoder: Vec<ConvLayer>,
    pub decoder: Vec<ConvLayer>,
    pub output: ConvKernel,
}

pub struct ForwardCache {
    enc: Vec<LayerCache>,
    lstm: [SequenceCache; 4],
    dec: Vec<LayerCache>,
    dec_out: Tensor4,
    resized: Tensor4,
}

pub struct AeCache {
    enc: Vec<LayerCache>,
    dec: Vec<LayerCache>,
    dec_out: Tensor4,
    resized: Tensor4,
}

fn encoder_layers<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Vec<ConvLayer> {
    (0..arch.depth)
        .map(|l| {
            let cin = if l == 0 { 1 } else { arch.conv_filters };
            ConvLayer::init(arch.kernel, cin, arch.conv_filters, rng)
        })
        .collect()
}

fn decoder_layers<R: Rng + ?Sized>(arch: &Architecture, first_cin: usize, rng: &mut R) -> Vec<ConvLayer> {
    (0..arch.depth)
        .map(|l| {
            let cin = if l == 0 { first_cin } else { arch.conv_filters };
            ConvLayer::init(arch.kernel, cin, arch.conv_filters, rng)
        })
        .collect()
}

fn check_input(arch: &Architecture, x: &Tensor4) -> Result<()> {
    if x.h() != arch.block || x.w() != arch.block || x.c() != 1 || x.t() == 0 {
        return Err(Error::shape(format!(
            "expected T x {b} x {b} x 1 input, got {:?}",
            x.dims(),
            b = arch.block
        )));
    }
    Ok(())
}

/// Mean squared error over all elements.
pub fn reconstruction_loss(x: &Tensor4, x_hat: &Tensor4) -> Result<f64> {
    x.ensure_same_dims(x_hat, "reconstruction loss")?;
    let n = x.len() as f64;
    Ok(x.data().iter().zip(x_hat.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

fn loss_gradient(x: &Tensor4, x_hat: &Tensor4) -> Tensor4 {
    let scale = 2.0 / x.len() as f64;
    let data = x_hat.data().iter().zip(x.data()).map(|(p, t)| scale * (p - t)).collect();
    Tensor4::from_vec(x.dims(), data).expect("dims already match")
}

/// Decoder tail shared by both phases: strided deconvs, resize, output conv.
fn decode_tail(
    decoder: &[ConvLayer],
    output: &ConvKernel,
    block: usize,
    features: &Tensor4,
) -> Result<(Tensor4, Vec<LayerCache>, Tensor4, Tensor4)> {
    let (dec_out, dec) = stack_forward(decoder, Direction::Up, features)?;
    let resized = resize_nearest(&dec_out, block, block)?;
    let recon = conv2d(&resized, output, 1, Padding::Same)?;
    Ok((recon, dec, dec_out, resized))
}

#[allow(clippy::too_many_arguments)]
fn decode_tail_backward(
    decoder: &[ConvLayer],
    output: &ConvKernel,
    dec: &[LayerCache],
    dec_out: &Tensor4,
    resized: &Tensor4,
    d_recon: &Tensor4,
    g_decoder: &mut [ConvLayer],
    g_output: &mut ConvKernel,
) -> Result<Tensor4> {
    let (d_resized, d_out_kernel) = conv2d_grad(resized, output, 1, Padding::Same, d_recon)?;
    g_output.add_assign(&d_out_kernel);
    let d_dec_out = resize_nearest_grad(&d_resized, dec_out.h(), dec_out.w())?;
    stack_backward(decoder, Direction::Up, dec, &d_dec_out, g_decoder)
}

impl RcaeModel {
    pub fn init<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let (s, k, hd) = (arch.latent_side(), arch.kernel, arch.lstm_filters);
        let encoder = encoder_layers(arch, rng);
        let enc_lstm1 = ConvLstmCell::init(arch.conv_filters, hd, s, k, rng);
        let enc_lstm2 = ConvLstmCell::init(hd, hd, s, k, rng);
        let dec_lstm1 = ConvLstmCell::init(arch.latent_channels(), hd, s, k, rng);
        let dec_lstm2 = ConvLstmCell::init(hd, hd, s, k, rng);
        let decoder = decoder_layers(arch, hd, rng);
        let output = ConvKernel::init(k, k, arch.conv_filters, 1, rng);
        Ok(Self {
            arch: arch.clone(),
            encoder,
            enc_lstm1,
            enc_lstm2,
            dec_lstm1,
            dec_lstm2,
            decoder,
            output,
            dropout: 0.65,
        })
    }

    /// All-zero model of the same shape, used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            encoder: self.encoder.iter().map(ConvLayer::zeros_like).collect(),
            enc_lstm1: self.enc_lstm1.zeros_like(),
            enc_lstm2: self.enc_lstm2.zeros_like(),
            dec_lstm1: self.dec_lstm1.zeros_like(),
            dec_lstm2: self.dec_lstm2.zeros_like(),
            decoder: self.decoder.iter().map(ConvLayer::zeros_like).collect(),
            output: self.output.zeros_like(),
            dropout: self.dropout,
        }
    }

    /// Second-phase initialization: every layer whose shape matches is
    /// copied from the pretrained convolutional autoencoder; the recurrent
    /// layers (and a first deconv whose input width changed) stay fresh.
    pub fn from_pretrained<R: Rng + ?Sized>(ae: &ConvAutoencoder, rng: &mut R) -> Result<Self> {
        let mut m = Self::init(&ae.arch, rng)?;
        m.encoder = ae.encoder.clone();
        for (dst, src) in m.decoder.iter_mut().zip(&ae.decoder) {
            if dst.kernel.cin == src.kernel.cin {
                *dst = src.clone();
            }
        }
        m.output = ae.output.clone();
        Ok(m)
    }

    pub fn add_assign(&mut self, other: &RcaeModel) {
        for (a, b) in self.encoder.iter_mut().zip(&other.encoder) {
            a.add_assign(b);
        }
        self.enc_lstm1.add_assign(&other.enc_lstm1);
        self.enc_lstm2.add_assign(&other.enc_lstm2);
        self.dec_lstm1.add_assign(&other.dec_lstm1);
        self.dec_lstm2.add_assign(&other.dec_lstm2);
        for (a, b) in self.decoder.iter_mut().zip(&other.decoder) {
            a.add_assign(b);
        }
        self.output.add_assign(&other.output);
    }

    /// Strided conv stack applied to every frame independently.
    pub fn encode_frames(&self, x: &Tensor4) -> Result<Tensor4> {
        check_input(&self.arch, x)?;
        stack_infer(&self.encoder, Direction::Down, x)
    }

    /// Latent code of a window whose conv features are already computed.
    pub fn encode_features(&self, features: &Tensor4) -> Result<LatentCode> {
        let (o1, _) = self.enc_lstm1.forward_seq(features, None)?;
        let (o2, _) = self.enc_lstm2.forward_seq(&o1.hidden, None)?;
        Ok(LatentCode {
            steps: Tensor4::concat_channels(&o1.hidden, &o2.hidden)?,
        })
    }

    fn dropout_masks(&self, t: usize, seed: u64) -> [Tensor4; 2] {
        let s = self.arch.latent_side();
        let dims = [t, s, s, self.arch.lstm_filters];
        let mut rng = crate::seed::rng(seed, &[0xd50]);
        [
            dropout_mask(dims, self.dropout, &mut rng),
            dropout_mask(dims, self.dropout, &mut rng),
        ]
    }

    pub fn encode(&self, x: &Tensor4, mode: Mode) -> Result<LatentCode> {
        match mode {
            Mode::Eval => self.encode_features(&self.encode_frames(x)?),
            Mode::Train { seed } => {
                let a = self.encode_frames(x)?;
                let [m1, m2] = self.dropout_masks(x.t(), seed);
                let (o1, _) = self.enc_lstm1.forward_seq(&a, Some(&m1))?;
                let (o2, _) = self.enc_lstm2.forward_seq(&o1.hidden, Some(&m2))?;
                Ok(LatentCode {
                    steps: Tensor4::concat_channels(&o1.hidden, &o2.hidden)?,
                })
            }
        }
    }

    pub fn decode(&self, latent: &LatentCode) -> Result<Tensor4> {
        let s = self.arch.latent_side();
        let expected = [latent.len(), s, s, self.arch.latent_channels()];
        if latent.steps.dims() != expected || latent.is_empty() {
            return Err(Error::shape(format!(
                "latent dims {:?}, expected {expected:?}",
                latent.steps.dims()
            )));
        }
        let (o3, _) = self.dec_lstm1.forward_seq(&latent.steps, None)?;
        let (o4, _) = self.dec_lstm2.forward_seq(&o3.hidden, None)?;
        Ok(decode_tail(&self.decoder, &self.output, self.arch.block, &o4.hidden)?.0)
    }

    /// Full encode → decode pass keeping every intermediate for backprop.
    pub fn forward(&self, x: &Tensor4, mode: Mode) -> Result<(Tensor4, ForwardCache)> {
        check_input(&self.arch, x)?;
        let (a, enc) = stack_forward(&self.encoder, Direction::Down, x)?;
        let masks = match mode {
            Mode::Train { seed } => Some(self.dropout_masks(x.t(), seed)),
            Mode::Eval => None,
        };
        let (o1, c1) = self.enc_lstm1.forward_seq(&a, masks.as_ref().map(|m| &m[0]))?;
        let (o2, c2) = self.enc_lstm2.forward_seq(&o1.hidden, masks.as_ref().map(|m| &m[1]))?;
        let latent = Tensor4::concat_channels(&o1.hidden, &o2.hidden)?;
        let (o3, c3) = self.dec_lstm1.forward_seq(&latent, None)?;
        let (o4, c4) = self.dec_lstm2.forward_seq(&o3.hidden, None)?;
        let (recon, dec, dec_out, resized) = decode_tail(&self.decoder, &self.output, self.arch.block, &o4.hidden)?;
        Ok((
            recon,
            ForwardCache {
                enc,
                lstm: [c1, c2, c3, c4],
                dec,
                dec_out,
                resized,
            },
        ))
    }

    /// Gradient of a scalar loss whose gradient on the reconstruction is
    /// `d_recon`.
    pub fn backward(&self, cache: &ForwardCache, d_recon: &Tensor4) -> Result<RcaeModel> {
        let mut g = self.zeros_like();
        let d_h4 = decode_tail_backward(
            &self.decoder,
            &self.output,
            &cache.dec,
            &cache.dec_out,
            &cache.resized,
            d_recon,
            &mut g.decoder,
            &mut g.output,
        )?;
        let d_h3 = self.dec_lstm2.backward_seq(&cache.lstm[3], &d_h4, &mut g.dec_lstm2)?;
        let d_latent = self.dec_lstm1.backward_seq(&cache.lstm[2], &d_h3, &mut g.dec_lstm1)?;
        let (mut d_h1, d_h2) = d_latent.split_channels(self.arch.lstm_filters)?;
        let d_h1_from_2 = self.enc_lstm2.backward_seq(&cache.lstm[1], &d_h2, &mut g.enc_lstm2)?;
        d_h1.add_assign(&d_h1_from_2)?;
        let d_a = self.enc_lstm1.backward_seq(&cache.lstm[0], &d_h1, &mut g.enc_lstm1)?;
        stack_backward(&self.encoder, Direction::Down, &cache.enc, &d_a, &mut g.encoder)?;
        Ok(g)
    }

    /// Reconstruction loss of `x` and its parameter gradient.
    pub fn loss_and_grad(&self, x: &Tensor4, mode: Mode) -> Result<(f64, RcaeModel)> {
        let (recon, cache) = self.forward(x, mode)?;
        let loss = reconstruction_loss(x, &recon)?;
        let g = self.backward(&cache, &loss_gradient(x, &recon))?;
        Ok((loss, g))
    }

    pub fn reconstruct(&self, x: &Tensor4) -> Result<Tensor4> {
        Ok(self.forward(x, Mode::Eval)?.0)
    }
}

impl Parameters for RcaeModel {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.encoder.visit(f);
        self.enc_lstm1.visit(f);
        self.enc_lstm2.visit(f);
        self.dec_lstm1.visit(f);
        self.dec_lstm2.visit(f);
        self.decoder.visit(f);
        self.output.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.encoder.visit_mut(f);
        self.enc_lstm1.visit_mut(f);
        self.enc_lstm2.visit_mut(f);
        self.dec_lstm1.visit_mut(f);
        self.dec_lstm2.visit_mut(f);
        self.decoder.visit_mut(f);
        self.output.visit_mut(f);
    }
}

impl ConvAutoencoder {
    pub fn init<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch: arch.clone(),
            encoder: encoder_layers(arch, rng),
            // Conv4 feeds Deconv1 directly in this phase.
            decoder: decoder_layers(arch, arch.conv_filters, rng),
            output: ConvKernel::init(arch.kernel, arch.kernel, arch.conv_filters, 1, rng),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            encoder: self.encoder.iter().map(ConvLayer::zeros_like).collect(),
            decoder: self.decoder.iter().map(ConvLayer::zeros_like).collect(),
            output: self.output.zeros_like(),
        }
    }

    pub fn forward(&self, x: &Tensor4) -> Result<(Tensor4, AeCache)> {
        check_input(&self.arch, x)?;
        let (a, enc) = stack_forward(&self.encoder, Direction::Down, x)?;
        let (recon, dec, dec_out, resized) = decode_tail(&self.decoder, &self.output, self.arch.block, &a)?;
        Ok((
            recon,
            AeCache {
                enc,
                dec,
                dec_out,
                resized,
            },
        ))
    }

    pub fn loss_and_grad(&self, x: &Tensor4) -> Result<(f64, ConvAutoencoder)> {
        let (recon, cache) = self.forward(x)?;
        let loss = reconstruction_loss(x, &recon)?;
        let mut g = self.zeros_like();
        let d_a = decode_tail_backward(
            &self.decoder,
            &self.output,
            &cache.dec,
            &cache.dec_out,
            &cache.resized,
            &loss_gradient(x, &recon),
            &mut g.decoder,
            &mut g.output,
        )?;
        stack_backward(&self.encoder, Direction::Down, &cache.enc, &d_a, &mut g.encoder)?;
        Ok((loss, g))
    }
}

impl Parameters for ConvAutoencoder {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.encoder.visit(f);
        self.decoder.visit(f);
        self.output.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.encoder.visit_mut(f);
        self.decoder.visit_mut(f);
        self.output.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> Architecture {
        Architecture {
            block: 12,
            time_steps: 3,
            conv_filters: 3,
            lstm_filters: 2,
            kernel: 3,
            depth: 4,
        }
    }

    #[test]
    fn full_size_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let arch = Architecture {
            time_steps: 2,
            ..Architecture::paper()
        };
        let m = RcaeModel::init(&arch, &mut rng).unwrap();
        let x = Tensor4::random([2, 90, 90, 1], 0.0, 1.0, &mut rng);
        let a = m.encode_frames(&x).unwrap();
        assert_eq!(a.dims(), [2, 6, 6, 128]);
        let l = m.encode_features(&a).unwrap();
        assert_eq!(l.steps.dims(), [2, 6, 6, 128]);
        assert_eq!(l.step(0).len(), 4608);
    }

    #[test]
    fn decode_shape_and_zero_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let arch = tiny();
        let m = RcaeModel::init(&arch, &mut rng).unwrap();
        let x = Tensor4::random([3, 12, 12, 1], 0.0, 1.0, &mut rng);
        let y = m.decode(&m.encode(&x, Mode::Eval).unwrap()).unwrap();
        assert_eq!(y.dims(), [3, 12, 12, 1]);
        let zero = m.zeros_like();
        let l = LatentCode {
            steps: Tensor4::zeros(3, 1, 1, 4),
        };
        assert!(zero.decode(&l).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_is_deterministic_and_train_mode_varies_with_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = RcaeModel::init(&tiny(), &mut rng).unwrap();
        let x = Tensor4::random([3, 12, 12, 1], 0.0, 1.0, &mut rng);
        assert_eq!(m.encode(&x, Mode::Eval).unwrap(), m.encode(&x, Mode::Eval).unwrap());
        let a = m.encode(&x, Mode::Train { seed: 1 }).unwrap();
        let b = m.encode(&x, Mode::Train { seed: 2 }).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = RcaeModel::init(&tiny(), &mut rng).unwrap();
        assert!(matches!(m.encode(&Tensor4::zeros(3, 10, 12, 1), Mode::Eval), Err(Error::Shape(_))));
        let bad = LatentCode {
            steps: Tensor4::zeros(3, 1, 1, 3),
        };
        assert!(matches!(m.decode(&bad), Err(Error::Shape(_))));
    }

    #[test]
    fn loss_examples() {
        let x = Tensor4::zeros(1, 2, 2, 1);
        assert_eq!(reconstruction_loss(&x, &x).unwrap(), 0.0);
        let ones = Tensor4::filled(1, 2, 2, 1, 1.0);
        assert_eq!(reconstruction_loss(&x, &ones).unwrap(), 1.0);
        assert!(reconstruction_loss(&x, &Tensor4::zeros(1, 2, 3, 1)).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Tensor4::random([2, 3, 3, 1], -1.0, 1.0, &mut rng);
        let b = Tensor4::random([2, 3, 3, 1], -1.0, 1.0, &mut rng);
        let mut acc = 0.0;
        for i in 0..a.len() {
            let d = a.data()[i] - b.data()[i];
            acc += d * d;
        }
        assert!((reconstruction_loss(&a, &b).unwrap() - acc / 18.0).abs() < 1e-12);
    }

    #[test]
    fn pretrained_layers_are_copied() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let arch = tiny();
        let ae = ConvAutoencoder::init(&arch, &mut rng).unwrap();
        let m = RcaeModel::from_pretrained(&ae, &mut rng).unwrap();
        assert_eq!(m.encoder, ae.encoder);
        assert_eq!(m.output, ae.output);
        assert_eq!(m.decoder[1..], ae.decoder[1..]);
    }
}
