//! Conditional GAN: generator, patch discriminator, and the adversarial
//! plus L1 objective.
//!
//! The generator is a skip-less convolutional encoder-decoder. The noise
//! vector `z` enters as one extra input channel at full resolution, so
//! `G(I, z)` is literally a function of both arguments. The discriminator
//! consumes the channel concatenation of a condition image and a candidate
//! image and emits a grid of per-patch logits (three stride-2 levels, a
//! receptive field of about 22 px) rather than a single scalar. The "real"
//! pair for the discriminator is `(I, I)`.

mod train;

pub use train::{smoke_dataset, train_gan, LossReport, TrainConfig};

use thiserror::Error;

use crate::numerics::{
    Activation, Element, NumericsError, Parameter, Rng, Tape, Tensor, Var,
};
use crate::spectral::Image;

#[derive(Debug, Error)]
pub enum GanError {
    #[error("gan: {0}")]
    Architecture(String),
    #[error("dataset must be non-empty")]
    EmptyDataset,
    #[error("non-finite {which} loss at step {step}")]
    NonFiniteLoss { step: usize, which: &'static str },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Number of stride-2 levels in both networks; image extents must be
/// divisible by 2^LEVELS.
pub const LEVELS: usize = 3;

/// One convolution (or transposed convolution) with bias.
#[derive(Debug, Clone)]
pub struct ConvLayer<T: Element> {
    pub w: Parameter<T>,
    pub b: Parameter<T>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Element> ConvLayer<T> {
    fn init(
        name: &str,
        out_ch: usize,
        in_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut Rng,
    ) -> Self {
        let bound = (6.0 / (in_ch * k * k) as f64).sqrt();
        ConvLayer {
            w: Parameter::new(
                format!("{name}.weight"),
                Tensor::rand_uniform(&[out_ch, in_ch, k, k], -bound, bound, rng),
            ),
            b: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[out_ch])),
            stride,
            pad,
        }
    }

    /// Transposed layers share the `[C_in, C_out, k, k]` weight layout of
    /// the adjoint convolution, so `out_ch` here is the second extent.
    fn init_transpose(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut Rng,
    ) -> Self {
        let bound = (6.0 / (in_ch * k * k) as f64).sqrt();
        ConvLayer {
            w: Parameter::new(
                format!("{name}.weight"),
                Tensor::rand_uniform(&[in_ch, out_ch, k, k], -bound, bound, rng),
            ),
            b: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[out_ch])),
            stride,
            pad,
        }
    }
}

/// Tape-bound weight/bias pair.
pub struct ConvVars<T: Element> {
    pub w: Var<T>,
    pub b: Var<T>,
}

fn bind_layers<T: Element>(tape: &Tape<T>, layers: &[ConvLayer<T>]) -> Vec<ConvVars<T>> {
    layers
        .iter()
        .map(|l| ConvVars {
            w: tape.leaf(l.w.value.clone()),
            b: tape.leaf(l.b.value.clone()),
        })
        .collect()
}

fn absorb_layers<T: Element>(tape: &Tape<T>, layers: &mut [ConvLayer<T>], vars: &[ConvVars<T>]) {
    for (l, v) in layers.iter_mut().zip(vars) {
        l.w.accumulate(&tape.grad(&v.w));
        l.b.accumulate(&tape.grad(&v.b));
    }
}

/// Standard-normal noise channel at input resolution; drawn only through
/// the seeded generator.
#[derive(Debug, Clone)]
pub struct LatentNoise<T: Element> {
    pub z: Tensor<T>,
}

impl<T: Element> LatentNoise<T> {
    pub fn sample(h: usize, w: usize, rng: &mut Rng) -> Self {
        LatentNoise {
            z: Tensor::randn(&[1, h, w], rng),
        }
    }
}

/// Skip-less encoder-decoder generator.
#[derive(Debug, Clone)]
pub struct GeneratorParams<T: Element> {
    pub encoder: Vec<ConvLayer<T>>,
    pub decoder: Vec<ConvLayer<T>>,
    pub channels: usize,
}

pub struct GeneratorVars<T: Element> {
    pub encoder: Vec<ConvVars<T>>,
    pub decoder: Vec<ConvVars<T>>,
}

impl<T: Element> GeneratorParams<T> {
    /// Three stride-2 encoder convolutions and three stride-2 transposed
    /// decoder convolutions at the given base width; no skip connections.
    pub fn init(channels: usize, base_width: usize, rng: &mut Rng) -> Self {
        let widths = [base_width, base_width * 2, base_width * 4];
        let mut encoder = Vec::with_capacity(LEVELS);
        let mut in_ch = channels + 1; // image plus the noise channel
        for (i, &out_ch) in widths.iter().enumerate() {
            encoder.push(ConvLayer::init(
                &format!("generator.enc{i}"),
                out_ch,
                in_ch,
                3,
                2,
                1,
                rng,
            ));
            in_ch = out_ch;
        }
        let mut decoder = Vec::with_capacity(LEVELS);
        for i in 0..LEVELS {
            let out_ch = if i + 1 == LEVELS {
                channels
            } else {
                widths[LEVELS - 2 - i]
            };
            decoder.push(ConvLayer::init_transpose(
                &format!("generator.dec{i}"),
                in_ch,
                out_ch,
                2,
                2,
                0,
                rng,
            ));
            in_ch = out_ch;
        }
        GeneratorParams {
            encoder,
            decoder,
            channels,
        }
    }

    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|l| [&l.w, &l.b])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.encoder
            .iter_mut()
            .chain(&mut self.decoder)
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect()
    }

    pub fn bind(&self, tape: &Tape<T>) -> GeneratorVars<T> {
        GeneratorVars {
            encoder: bind_layers(tape, &self.encoder),
            decoder: bind_layers(tape, &self.decoder),
        }
    }

    pub fn absorb_grads(&mut self, tape: &Tape<T>, vars: &GeneratorVars<T>) {
        absorb_layers(tape, &mut self.encoder, &vars.encoder);
        absorb_layers(tape, &mut self.decoder, &vars.decoder);
    }

    fn check_dims(&self, h: usize, w: usize, c: usize) -> Result<(), GanError> {
        let div = 1 << LEVELS;
        if h % div != 0 || w % div != 0 {
            return Err(GanError::Architecture(format!(
                "image dims {h}x{w} must be divisible by {div}"
            )));
        }
        if c != self.channels {
            return Err(GanError::Architecture(format!(
                "generator built for {} channels, input has {c}",
                self.channels
            )));
        }
        Ok(())
    }
}

/// Generator forward pass on an existing tape. `input_planar` is a
/// `[C, H, W]` node, `z` a `[1, H, W]` node; the output lands in `[0, 1]`
/// via a rescaled tanh.
pub fn generator_forward_on<T: Element>(
    input_planar: &Var<T>,
    z: &Var<T>,
    vars: &GeneratorVars<T>,
) -> Result<Var<T>, GanError> {
    let mut h = input_planar.concat_channels(z)?;
    for layer_vars in &vars.encoder {
        h = h
            .conv2d(&layer_vars.w, 2, 1)?
            .add_channel_bias(&layer_vars.b)?
            .activation(Activation::LeakyRelu);
    }
    let last = vars.decoder.len() - 1;
    for (i, layer_vars) in vars.decoder.iter().enumerate() {
        h = h
            .conv2d_transpose(&layer_vars.w, 2, 0)?
            .add_channel_bias(&layer_vars.b)?;
        if i < last {
            h = h.activation(Activation::Relu);
        }
    }
    // tanh in (-1, 1), rescaled to (0, 1).
    Ok(h.activation(Activation::Tanh)
        .scale(T::from_f64(0.5))
        .add_const(T::from_f64(0.5)))
}

/// `G(I, z)` with frozen parameters.
pub fn generator_forward<T: Element>(
    input: &Image,
    z: &LatentNoise<T>,
    params: &GeneratorParams<T>,
) -> Result<Image, GanError> {
    let (h, w, c) = input.dims();
    params.check_dims(h, w, c)?;
    if z.z.shape() != [1, h, w] {
        return Err(GanError::Architecture(format!(
            "noise shape {:?} does not match {h}x{w}",
            z.z.shape()
        )));
    }
    let tape = Tape::new();
    let vars = params.bind(&tape);
    let input_planar = tape.leaf(input.to_planar());
    let zv = tape.leaf(z.z.clone());
    let out = generator_forward_on(&input_planar, &zv, &vars)?;
    Ok(Image::from_planar_clamped(&out.value()))
}

/// Patch discriminator over `(condition, candidate)` pairs.
#[derive(Debug, Clone)]
pub struct DiscriminatorParams<T: Element> {
    pub layers: Vec<ConvLayer<T>>,
    pub channels: usize,
}

pub struct DiscriminatorVars<T: Element> {
    pub layers: Vec<ConvVars<T>>,
}

impl<T: Element> DiscriminatorParams<T> {
    /// Three stride-2 4x4 convolutions ending in a single-channel logit
    /// grid (one logit per ~22 px receptive field).
    pub fn init(channels: usize, base_width: usize, rng: &mut Rng) -> Self {
        let mut layers = Vec::with_capacity(LEVELS);
        let specs = [
            (2 * channels, base_width),
            (base_width, base_width * 2),
            (base_width * 2, 1),
        ];
        for (i, &(in_ch, out_ch)) in specs.iter().enumerate() {
            layers.push(ConvLayer::init(
                &format!("discriminator.conv{i}"),
                out_ch,
                in_ch,
                4,
                2,
                1,
                rng,
            ));
        }
        DiscriminatorParams { layers, channels }
    }

    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect()
    }

    pub fn bind(&self, tape: &Tape<T>) -> DiscriminatorVars<T> {
        DiscriminatorVars {
            layers: bind_layers(tape, &self.layers),
        }
    }

    pub fn absorb_grads(&mut self, tape: &Tape<T>, vars: &DiscriminatorVars<T>) {
        absorb_layers(tape, &mut self.layers, &vars.layers);
    }

    /// Logit-grid spatial extent for an `h x w` input.
    pub fn grid_extent(h: usize, w: usize) -> (usize, usize) {
        (h >> LEVELS, w >> LEVELS)
    }
}

/// Discriminator forward on an existing tape: condition and candidate are
/// `[C, H, W]` nodes; the result is a `[1, H/8, W/8]` logit grid. Patch
/// probabilities are `sigmoid(logit)`.
pub fn discriminator_forward_on<T: Element>(
    condition: &Var<T>,
    candidate: &Var<T>,
    vars: &DiscriminatorVars<T>,
) -> Result<Var<T>, GanError> {
    if condition.shape() != candidate.shape() {
        return Err(GanError::Architecture(format!(
            "condition {:?} and candidate {:?} dims differ",
            condition.shape(),
            candidate.shape()
        )));
    }
    let mut h = condition.concat_channels(candidate)?;
    let last = vars.layers.len() - 1;
    for (i, layer_vars) in vars.layers.iter().enumerate() {
        h = h
            .conv2d(&layer_vars.w, 2, 1)?
            .add_channel_bias(&layer_vars.b)?;
        if i < last {
            h = h.activation(Activation::LeakyRelu);
        }
    }
    Ok(h)
}

/// `D(condition, candidate)` with frozen parameters.
pub fn discriminator_forward<T: Element>(
    condition: &Image,
    candidate: &Image,
    params: &DiscriminatorParams<T>,
) -> Result<Tensor<T>, GanError> {
    let tape = Tape::new();
    let vars = params.bind(&tape);
    let cond = tape.leaf(condition.to_planar());
    let cand = tape.leaf(candidate.to_planar());
    Ok(discriminator_forward_on(&cond, &cand, &vars)?.value())
}

/// Discriminator objective on one pair of logit grids: mean over patches of
/// `bce(real -> 1) + bce(fake -> 0)`.
pub fn loss_d<T: Element>(
    real_logits: &Var<T>,
    fake_logits: &Var<T>,
) -> Result<Var<T>, GanError> {
    if real_logits.shape() != fake_logits.shape() {
        return Err(GanError::Architecture(format!(
            "logit grids {:?} and {:?} differ",
            real_logits.shape(),
            fake_logits.shape()
        )));
    }
    let tape = real_logits.tape();
    let ones = tape.leaf(Tensor::ones(&real_logits.shape()));
    let zeros = tape.leaf(Tensor::zeros(&fake_logits.shape()));
    let real_term = real_logits.loss(&ones, crate::numerics::LossKind::BceLogitsMean)?;
    let fake_term = fake_logits.loss(&zeros, crate::numerics::LossKind::BceLogitsMean)?;
    Ok(real_term.add(&fake_term)?)
}

/// Generator objective: non-saturating adversarial term plus the weighted
/// L1 reconstruction term. Returns `(g_total, g_adv, g_l1)`.
pub fn loss_g<T: Element>(
    fake_logits: &Var<T>,
    generated: &Var<T>,
    input: &Var<T>,
    lambda_l1: f64,
) -> Result<(Var<T>, Var<T>, Var<T>), GanError> {
    let tape = fake_logits.tape();
    let ones = tape.leaf(Tensor::ones(&fake_logits.shape()));
    let g_adv = fake_logits.loss(&ones, crate::numerics::LossKind::BceLogitsMean)?;
    let g_l1 = generated.loss(input, crate::numerics::LossKind::L1Mean)?;
    let g_total = g_adv.add(&g_l1.scale(T::from_f64(lambda_l1)))?;
    Ok((g_total, g_adv, g_l1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{finite_difference_grads, max_relative_error, FD_STEP};
    use crate::numerics::LossKind;

    #[test]
    fn generator_preserves_dims_and_range() {
        let mut rng = Rng::new(91);
        let gen = GeneratorParams::<f32>::init(3, 8, &mut rng);
        for (h, w) in [(16, 16), (32, 16), (64, 64)] {
            let img = Image::random(h, w, 3, &mut rng);
            let z = LatentNoise::sample(h, w, &mut rng);
            let out = generator_forward(&img, &z, &gen).unwrap();
            assert_eq!(out.dims(), (h, w, 3));
            assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let mut rng = Rng::new(92);
        let gen = GeneratorParams::<f32>::init(3, 8, &mut rng);
        let img = Image::random(16, 16, 3, &mut rng);
        let z = LatentNoise::sample(16, 16, &mut rng);
        let a = generator_forward(&img, &z, &gen).unwrap();
        let b = generator_forward(&img, &z, &gen).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generator_rejects_bad_dims() {
        let mut rng = Rng::new(93);
        let gen = GeneratorParams::<f32>::init(3, 8, &mut rng);
        let img = Image::random(12, 12, 3, &mut rng); // not divisible by 8
        let z = LatentNoise::sample(12, 12, &mut rng);
        assert!(generator_forward(&img, &z, &gen).is_err());
    }

    #[test]
    fn discriminator_grid_follows_shape_formula() {
        let mut rng = Rng::new(94);
        let disc = DiscriminatorParams::<f32>::init(3, 8, &mut rng);
        for (h, w) in [(16, 16), (32, 64)] {
            let a = Image::random(h, w, 3, &mut rng);
            let b = Image::random(h, w, 3, &mut rng);
            let grid = discriminator_forward(&a, &b, &disc).unwrap();
            let (gh, gw) = DiscriminatorParams::<f32>::grid_extent(h, w);
            assert_eq!(grid.shape(), &[1, gh, gw]);
        }
    }

    #[test]
    fn zero_weight_discriminator_sits_at_half_probability() {
        let mut rng = Rng::new(95);
        let mut disc = DiscriminatorParams::<f64>::init(3, 8, &mut rng);
        for p in disc.parameters_mut() {
            p.value.fill(0.0);
        }
        let a = Image::random(16, 16, 3, &mut rng);
        let b = Image::random(16, 16, 3, &mut rng);
        let grid = discriminator_forward(&a, &b, &disc).unwrap();
        for &logit in grid.data() {
            assert_eq!(logit, 0.0);
            assert_eq!(crate::numerics::sigmoid(logit), 0.5);
        }
    }

    #[test]
    fn loss_d_fixed_points_and_oracle() {
        let tape = Tape::<f64>::new();
        let zeros = tape.leaf(Tensor::zeros(&[1, 2, 2]));
        let d = loss_d(&zeros, &zeros).unwrap();
        assert!((d.item() - 2.0 * std::f64::consts::LN_2).abs() <= 1e-12);

        // A confident discriminator drives the loss toward zero.
        let strong_real = tape.leaf(Tensor::full(&[1, 2, 2], 30.0));
        let strong_fake = tape.leaf(Tensor::full(&[1, 2, 2], -30.0));
        let d = loss_d(&strong_real, &strong_fake).unwrap();
        assert!(d.item() < 1e-12);

        // Random grids against a scalar-by-scalar oracle sum.
        let mut rng = Rng::new(96);
        let real = Tensor::<f64>::rand_uniform(&[1, 3, 3], -2.0, 2.0, &mut rng);
        let fake = Tensor::<f64>::rand_uniform(&[1, 3, 3], -2.0, 2.0, &mut rng);
        let mut want = 0.0;
        for (&r, &f) in real.data().iter().zip(fake.data()) {
            let bce = |x: f64, t: f64| x.max(0.0) - x * t + (1.0 + (-x.abs()).exp()).ln();
            want += bce(r, 1.0) + bce(f, 0.0);
        }
        want /= 9.0;
        let d = loss_d(&tape.leaf(real), &tape.leaf(fake)).unwrap();
        assert!((d.item() - want).abs() <= 1e-12);
    }

    #[test]
    fn loss_g_fixed_points() {
        let tape = Tape::<f64>::new();
        let img = tape.leaf(Tensor::full(&[3, 4, 4], 0.5));
        let logits = tape.leaf(Tensor::zeros(&[1, 2, 2]));

        // Generated == input: the L1 term vanishes.
        let (_, _, g_l1) = loss_g(&logits, &img, &img, 100.0).unwrap();
        assert_eq!(g_l1.item(), 0.0);

        // lambda = 0: total equals the adversarial term.
        let other = tape.leaf(Tensor::full(&[3, 4, 4], 0.25));
        let (g_total, g_adv, _) = loss_g(&logits, &other, &img, 0.0).unwrap();
        assert_eq!(g_total.item(), g_adv.item());

        // Closed form: zero logits, ones vs zeros, lambda = 10.
        let ones = tape.leaf(Tensor::ones(&[3, 4, 4]));
        let zeros_img = tape.leaf(Tensor::zeros(&[3, 4, 4]));
        let (g_total, _, _) = loss_g(&logits, &ones, &zeros_img, 10.0).unwrap();
        assert!((g_total.item() - (std::f64::consts::LN_2 + 10.0)).abs() <= 1e-12);
    }

    #[test]
    fn sampled_generator_weight_matches_finite_differences() {
        // d L1(G(I, z), I) / d w for one encoder and one decoder weight
        // slice, f64 at 16x16.
        let mut rng = Rng::new(97);
        let gen = GeneratorParams::<f64>::init(1, 4, &mut rng);
        let img = Image::random(16, 16, 1, &mut rng);
        let z = LatentNoise::<f64>::sample(16, 16, &mut rng);

        let inputs = vec![
            gen.encoder[0].w.value.clone(),
            gen.decoder[2].w.value.clone(),
        ];
        let forward = |ins: &[Tensor<f64>]| {
            let mut g = gen.clone();
            g.encoder[0].w.value = ins[0].clone();
            g.decoder[2].w.value = ins[1].clone();
            let tape = Tape::new();
            let vars = g.bind(&tape);
            let input = tape.leaf(img.to_planar());
            let zv = tape.leaf(z.z.clone());
            let out = generator_forward_on(&input, &zv, &vars).unwrap();
            out.loss(&input, LossKind::MseMean).unwrap().item()
        };

        let tape = Tape::new();
        let vars = gen.bind(&tape);
        let input = tape.leaf(img.to_planar());
        let zv = tape.leaf(z.z.clone());
        let out = generator_forward_on(&input, &zv, &vars).unwrap();
        let loss = out.loss(&input, LossKind::MseMean).unwrap();
        tape.backward(&loss).unwrap();
        let analytic = vec![
            tape.grad(&vars.encoder[0].w),
            tape.grad(&vars.decoder[2].w),
        ];

        let numeric = finite_difference_grads(forward, &inputs, FD_STEP);
        let err = max_relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "worst relative error {err}");
    }

    #[test]
    fn discriminator_weight_matches_finite_differences() {
        let mut rng = Rng::new(98);
        let disc = DiscriminatorParams::<f64>::init(1, 4, &mut rng);
        let cond = Image::random(16, 16, 1, &mut rng);
        let cand = Image::random(16, 16, 1, &mut rng);

        let inputs = vec![disc.layers[1].w.value.clone()];
        let forward = |ins: &[Tensor<f64>]| {
            let mut d = disc.clone();
            d.layers[1].w.value = ins[0].clone();
            let tape = Tape::new();
            let vars = d.bind(&tape);
            let c1 = tape.leaf(cond.to_planar());
            let c2 = tape.leaf(cand.to_planar());
            let logits = discriminator_forward_on(&c1, &c2, &vars).unwrap();
            let ones = tape.leaf(Tensor::ones(&logits.shape()));
            logits.loss(&ones, LossKind::BceLogitsMean).unwrap().item()
        };

        let tape = Tape::new();
        let vars = disc.bind(&tape);
        let c1 = tape.leaf(cond.to_planar());
        let c2 = tape.leaf(cand.to_planar());
        let logits = discriminator_forward_on(&c1, &c2, &vars).unwrap();
        let ones = tape.leaf(Tensor::ones(&logits.shape()));
        let loss = logits.loss(&ones, LossKind::BceLogitsMean).unwrap();
        tape.backward(&loss).unwrap();
        let analytic = vec![tape.grad(&vars.layers[1].w)];

        let numeric = finite_difference_grads(forward, &inputs, FD_STEP);
        assert!(max_relative_error(&analytic, &numeric) < 1e-4);
    }
}
