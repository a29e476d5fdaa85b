//! Cross-attention reference synthesis.
//!
//! Both the input image and the GAN-generated image are split into
//! `P x P x C` patches, flattened, and projected into tokens through one
//! shared embedding matrix. Single-head scaled dot-product attention then
//! queries the *input* tokens against the *generated* keys and values, and
//! the attended output is decoded back to pixel space, normalized to zero
//! mean and unit variance over the whole image, and clamped to `[0, 1]`.
//! The clamp-heavy normalization is intentional: it maps sub-mean values to
//! zero, and the reference image carries only the surviving structure.

use std::rc::Rc;

use thiserror::Error;

use crate::numerics::{Element, NumericsError, Parameter, Rng, Tape, Tensor, Var};
use crate::spectral::Image;

#[derive(Debug, Error)]
pub enum AttentionError {
    #[error("attention config: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Patch size, token width, and the variance floor of the output
/// normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionConfig {
    pub patch_size: usize,
    pub d_model: usize,
    pub eps: f64,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            patch_size: 8,
            d_model: 64,
            eps: 1e-5,
        }
    }
}

impl AttentionConfig {
    pub fn new(patch_size: usize, d_model: usize) -> Self {
        AttentionConfig {
            patch_size,
            d_model,
            ..AttentionConfig::default()
        }
    }

    /// Checks the config against concrete image dimensions.
    pub fn validate(&self, h: usize, w: usize) -> Result<(), AttentionError> {
        if self.patch_size == 0 || self.d_model == 0 {
            return Err(AttentionError::Config(
                "patch_size and d_model must be >= 1".into(),
            ));
        }
        if h % self.patch_size != 0 || w % self.patch_size != 0 {
            return Err(AttentionError::Config(format!(
                "patch size {} does not divide image dims {h}x{w}",
                self.patch_size
            )));
        }
        Ok(())
    }

    /// Token count for an `h x w` image.
    pub fn token_count(&self, h: usize, w: usize) -> usize {
        (h / self.patch_size) * (w / self.patch_size)
    }
}

/// The five learnable projections: shared patch embedding, query/key/value,
/// and the pixel decoder.
#[derive(Debug, Clone)]
pub struct AttentionParams<T: Element> {
    pub w_embed: Parameter<T>,
    pub w_query: Parameter<T>,
    pub w_key: Parameter<T>,
    pub w_value: Parameter<T>,
    pub w_decode: Parameter<T>,
}

impl<T: Element> AttentionParams<T> {
    /// Uniform init in +-1/sqrt(fan_in) for each projection.
    pub fn init(config: &AttentionConfig, channels: usize, rng: &mut Rng) -> Self {
        let patch_dim = config.patch_size * config.patch_size * channels;
        let d = config.d_model;
        let mut mat = |name: &str, rows: usize, cols: usize| {
            let bound = 1.0 / (rows as f64).sqrt();
            Parameter::new(name, Tensor::rand_uniform(&[rows, cols], -bound, bound, rng))
        };
        AttentionParams {
            w_embed: mat("attention.w_embed", patch_dim, d),
            w_query: mat("attention.w_query", d, d),
            w_key: mat("attention.w_key", d, d),
            w_value: mat("attention.w_value", d, d),
            w_decode: mat("attention.w_decode", d, patch_dim),
        }
    }

    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        vec![
            &self.w_embed,
            &self.w_query,
            &self.w_key,
            &self.w_value,
            &self.w_decode,
        ]
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![
            &mut self.w_embed,
            &mut self.w_query,
            &mut self.w_key,
            &mut self.w_value,
            &mut self.w_decode,
        ]
    }

    pub fn bind(&self, tape: &Tape<T>) -> AttentionVars<T> {
        AttentionVars {
            w_embed: tape.leaf(self.w_embed.value.clone()),
            w_query: tape.leaf(self.w_query.value.clone()),
            w_key: tape.leaf(self.w_key.value.clone()),
            w_value: tape.leaf(self.w_value.value.clone()),
            w_decode: tape.leaf(self.w_decode.value.clone()),
        }
    }

    /// Adds the tape gradients of the bound leaves into each parameter.
    pub fn absorb_grads(&mut self, tape: &Tape<T>, vars: &AttentionVars<T>) {
        self.w_embed.accumulate(&tape.grad(&vars.w_embed));
        self.w_query.accumulate(&tape.grad(&vars.w_query));
        self.w_key.accumulate(&tape.grad(&vars.w_key));
        self.w_value.accumulate(&tape.grad(&vars.w_value));
        self.w_decode.accumulate(&tape.grad(&vars.w_decode));
    }
}

/// Tape-bound copies of [`AttentionParams`] for one forward pass.
pub struct AttentionVars<T: Element> {
    pub w_embed: Var<T>,
    pub w_query: Var<T>,
    pub w_key: Var<T>,
    pub w_value: Var<T>,
    pub w_decode: Var<T>,
}

/// Token grid with the source dimensions needed to undo patching.
pub struct TokenGrid<T: Element> {
    pub tokens: Var<T>,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub patch: usize,
}

impl<T: Element> TokenGrid<T> {
    pub fn token_count(&self) -> usize {
        (self.h / self.patch) * (self.w / self.patch)
    }
}

/// Index map from a planar `[C, H, W]` buffer to `[N, P*P*C]` patch rows.
/// Row `n` holds patch `(n / (W/P), n % (W/P))` flattened in row-major
/// `(dy, dx, channel)` order.
fn patchify_map(h: usize, w: usize, c: usize, p: usize) -> Vec<usize> {
    let (ph, pw) = (h / p, w / p);
    let mut map = Vec::with_capacity(h * w * c);
    for py in 0..ph {
        for px in 0..pw {
            for dy in 0..p {
                for dx in 0..p {
                    for ch in 0..c {
                        map.push(ch * h * w + (py * p + dy) * w + (px * p + dx));
                    }
                }
            }
        }
    }
    map
}

/// Inverse of [`patchify_map`]: planar index -> patch-row index.
fn unpatchify_map(h: usize, w: usize, c: usize, p: usize) -> Vec<usize> {
    let forward = patchify_map(h, w, c, p);
    let mut inverse = vec![0usize; forward.len()];
    for (patch_idx, &planar_idx) in forward.iter().enumerate() {
        inverse[planar_idx] = patch_idx;
    }
    inverse
}

/// Splits an image into flattened patch rows (`[N, P*P*C]`).
pub fn patchify<T: Element>(img: &Image, p: usize) -> Result<Tensor<T>, AttentionError> {
    let (h, w, c) = img.dims();
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(AttentionError::Config(format!(
            "patch size {p} does not divide image dims {h}x{w}"
        )));
    }
    let planar: Tensor<T> = img.to_planar();
    let map = patchify_map(h, w, c, p);
    let n = (h / p) * (w / p);
    let data = map.iter().map(|&i| planar.data()[i]).collect();
    Ok(Tensor::from_vec(&[n, p * p * c], data).expect("map covers buffer"))
}

/// Reassembles patch rows into an image; exact inverse of [`patchify`].
pub fn unpatchify<T: Element>(
    patches: &Tensor<T>,
    h: usize,
    w: usize,
    c: usize,
    p: usize,
) -> Result<Image, AttentionError> {
    let map = patchify_map(h, w, c, p);
    if patches.numel() != map.len() {
        return Err(AttentionError::Config(format!(
            "patch tensor {:?} does not match {h}x{w}x{c} with P={p}",
            patches.shape()
        )));
    }
    let mut planar = Tensor::<T>::zeros(&[c, h, w]);
    for (patch_idx, &planar_idx) in map.iter().enumerate() {
        planar.data_mut()[planar_idx] = patches.data()[patch_idx];
    }
    Ok(Image::from_planar_clamped(&planar))
}

/// Patchifies a planar `[C, H, W]` node on the tape.
pub fn patchify_on<T: Element>(
    planar: &Var<T>,
    config: &AttentionConfig,
) -> Result<Var<T>, AttentionError> {
    let (c, h, w) = match *planar.shape() {
        [c, h, w] => (c, h, w),
        _ => {
            return Err(AttentionError::Config(format!(
                "patchify_on expects [C, H, W], got {:?}",
                planar.shape()
            )))
        }
    };
    config.validate(h, w)?;
    let p = config.patch_size;
    let n = config.token_count(h, w);
    let map = Rc::new(patchify_map(h, w, c, p));
    Ok(planar.gather(map, &[n, p * p * c]))
}

/// Projects patch rows into tokens through the shared embedding.
pub fn embed<T: Element>(
    patches: &Var<T>,
    w_embed: &Var<T>,
    dims: (usize, usize, usize),
    patch: usize,
) -> Result<TokenGrid<T>, AttentionError> {
    let tokens = patches.matmul(w_embed)?;
    Ok(TokenGrid {
        tokens,
        h: dims.0,
        w: dims.1,
        c: dims.2,
        patch,
    })
}

/// Scaled dot-product cross-attention. Queries come from the input tokens;
/// keys and values come from the generated tokens. Returns the
/// row-stochastic attention matrix and the attended output grid.
pub fn cross_attend<T: Element>(
    input_tokens: &TokenGrid<T>,
    gen_tokens: &TokenGrid<T>,
    vars: &AttentionVars<T>,
) -> Result<(Var<T>, TokenGrid<T>), AttentionError> {
    let d = vars.w_query.shape()[0];
    let q = input_tokens.tokens.matmul(&vars.w_query)?;
    let k = gen_tokens.tokens.matmul(&vars.w_key)?;
    let v = gen_tokens.tokens.matmul(&vars.w_value)?;
    let scale = T::from_f64(1.0 / (d as f64).sqrt());
    let scores = q.matmul(&k.transpose2()?)?.scale(scale);
    let attn = scores.softmax_rows()?;
    let out = attn.matmul(&v)?;
    Ok((
        attn,
        TokenGrid {
            tokens: out,
            h: input_tokens.h,
            w: input_tokens.w,
            c: input_tokens.c,
            patch: input_tokens.patch,
        },
    ))
}

/// Decodes attended tokens back to a planar `[C, H, W]` node: linear
/// decode, un-patchify, zero-mean/unit-variance normalization over the
/// whole image (variance floor `eps`), and a clamp to `[0, 1]`.
pub fn project_to_image<T: Element>(
    attended: &TokenGrid<T>,
    w_decode: &Var<T>,
    eps: f64,
) -> Result<Var<T>, AttentionError> {
    let (h, w, c, p) = (attended.h, attended.w, attended.c, attended.patch);
    let rows = attended.tokens.matmul(w_decode)?;
    let map = Rc::new(unpatchify_map(h, w, c, p));
    let planar = rows.gather(map, &[c, h, w]);
    let mean = planar.mean_all();
    let centered = planar.sub_scalar(&mean)?;
    let var = centered.mul(&centered)?.mean_all();
    let std = var.add_const(T::from_f64(eps)).sqrt();
    let normalized = centered.div_scalar(&std)?;
    Ok(normalized.clamp01())
}

/// Full reference-image composition on an existing tape. `input_planar` and
/// `generated_planar` are `[C, H, W]` nodes; the result is a `[C, H, W]`
/// node in `[0, 1]`.
pub fn make_reference_on<T: Element>(
    input_planar: &Var<T>,
    generated_planar: &Var<T>,
    vars: &AttentionVars<T>,
    config: &AttentionConfig,
) -> Result<Var<T>, AttentionError> {
    let (c, h, w) = match *input_planar.shape() {
        [c, h, w] => (c, h, w),
        _ => {
            return Err(AttentionError::Config(format!(
                "make_reference expects [C, H, W], got {:?}",
                input_planar.shape()
            )))
        }
    };
    if input_planar.shape() != generated_planar.shape() {
        return Err(AttentionError::Config(format!(
            "input {:?} and generated {:?} dims differ",
            input_planar.shape(),
            generated_planar.shape()
        )));
    }
    let p = config.patch_size;
    let input_patches = patchify_on(input_planar, config)?;
    let gen_patches = patchify_on(generated_planar, config)?;
    // One shared embedding for both images.
    let input_tokens = embed(&input_patches, &vars.w_embed, (h, w, c), p)?;
    let gen_tokens = embed(&gen_patches, &vars.w_embed, (h, w, c), p)?;
    let (_, attended) = cross_attend(&input_tokens, &gen_tokens, vars)?;
    project_to_image(&attended, &vars.w_decode, config.eps)
}

/// Builds the reference image `I_R` from the input and generated images
/// with frozen parameters.
pub fn make_reference<T: Element>(
    input: &Image,
    generated: &Image,
    params: &AttentionParams<T>,
    config: &AttentionConfig,
) -> Result<Image, AttentionError> {
    if input.dims() != generated.dims() {
        return Err(AttentionError::Config(format!(
            "input {:?} and generated {:?} dims differ",
            input.dims(),
            generated.dims()
        )));
    }
    config.validate(input.h(), input.w())?;
    let tape = Tape::new();
    let vars = params.bind(&tape);
    let input_planar = tape.leaf(input.to_planar());
    let gen_planar = tape.leaf(generated.to_planar());
    let out = make_reference_on(&input_planar, &gen_planar, &vars, config)?;
    Ok(Image::from_planar_clamped(&out.value()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{finite_difference_grads, max_relative_error, FD_STEP};
    use crate::numerics::LossKind;

    fn toy_config() -> AttentionConfig {
        AttentionConfig {
            patch_size: 4,
            d_model: 8,
            eps: 1e-5,
        }
    }

    #[test]
    fn single_patch_row_is_the_flattened_image() {
        let img = Image::random(4, 4, 3, &mut Rng::new(71));
        let patches: Tensor<f64> = patchify(&img, 4).unwrap();
        assert_eq!(patches.shape(), &[1, 48]);
        for (a, &b) in img.data().iter().zip(patches.data()) {
            assert_eq!(*a as f64, b);
        }
    }

    #[test]
    fn patchify_unpatchify_is_exact_inverse() {
        let img = Image::random(8, 12, 3, &mut Rng::new(72));
        for p in [1, 2, 4] {
            let patches: Tensor<f32> = patchify(&img, p).unwrap();
            let back = unpatchify(&patches, 8, 12, 3, p).unwrap();
            assert_eq!(img, back, "P={p}");
        }
    }

    #[test]
    fn patch_rows_follow_block_order() {
        // 4x4 single-channel image, P=2: row 0 must be the top-left block.
        let data: Vec<f32> = (0..16).map(|i| i as f32 / 16.0).collect();
        let img = Image::new(4, 4, 1, data).unwrap();
        let patches: Tensor<f64> = patchify(&img, 2).unwrap();
        assert_eq!(patches.shape(), &[4, 4]);
        // Hand oracle: pixel (y, x) has value (4y + x)/16.
        let px = |y: usize, x: usize| (4 * y + x) as f32 / 16.0;
        let rows: Vec<Vec<f32>> = vec![
            vec![px(0, 0), px(0, 1), px(1, 0), px(1, 1)], // top-left
            vec![px(0, 2), px(0, 3), px(1, 2), px(1, 3)], // top-right
            vec![px(2, 0), px(2, 1), px(3, 0), px(3, 1)], // bottom-left
            vec![px(2, 2), px(2, 3), px(3, 2), px(3, 3)], // bottom-right
        ];
        for (i, row) in rows.iter().enumerate() {
            for (j, want) in row.iter().enumerate() {
                let got = patches.data()[i * 4 + j];
                assert!((got - *want as f64).abs() < 1e-12, "row {i} col {j}");
            }
        }
    }

    #[test]
    fn non_divisible_patch_size_rejected() {
        let img = Image::zeros(6, 6, 1);
        assert!(patchify::<f64>(&img, 4).is_err());
        assert!(toy_config().validate(6, 6).is_err());
        assert!(toy_config().validate(8, 8).is_ok());
    }

    #[test]
    fn identity_embedding_passes_patches_through() {
        let cfg = AttentionConfig {
            patch_size: 2,
            d_model: 4, // equals P*P*C for C=1
            eps: 1e-5,
        };
        let img = Image::random(4, 4, 1, &mut Rng::new(73));
        let tape = Tape::<f64>::new();
        let planar = tape.leaf(img.to_planar());
        let patches = patchify_on(&planar, &cfg).unwrap();
        let mut eye_data = vec![0.0; 16];
        for i in 0..4 {
            eye_data[i * 4 + i] = 1.0;
        }
        let eye = tape.leaf(Tensor::from_vec(&[4, 4], eye_data).unwrap());
        let grid = embed(&patches, &eye, (4, 4, 1), 2).unwrap();
        assert_eq!(grid.tokens.value(), patches.value());

        let zero = tape.leaf(Tensor::zeros(&[1, 4]));
        let zgrid = embed(&zero, &eye, (2, 2, 1), 2).unwrap();
        assert!(zgrid.tokens.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embedding_matches_matmul_oracle() {
        let mut rng = Rng::new(81);
        let img = Image::random(8, 8, 1, &mut rng);
        let w: Tensor<f64> = Tensor::rand_uniform(&[16, 8], -1.0, 1.0, &mut rng);
        let patches: Tensor<f64> = patchify(&img, 4).unwrap();
        // Triple-loop oracle.
        let mut want = Tensor::<f64>::zeros(&[4, 8]);
        for i in 0..4 {
            for j in 0..8 {
                let mut s = 0.0;
                for k in 0..16 {
                    s += patches.data()[i * 16 + k] * w.data()[k * 8 + j];
                }
                want.data_mut()[i * 8 + j] = s;
            }
        }
        let tape = Tape::new();
        let grid = embed(
            &tape.leaf(patches),
            &tape.leaf(w),
            (8, 8, 1),
            4,
        )
        .unwrap();
        for (g, v) in grid.tokens.value().data().iter().zip(want.data()) {
            assert!((g - v).abs() / v.abs().max(1.0) <= 1e-12);
        }
    }

    #[test]
    fn single_token_attention_is_trivial() {
        let cfg = toy_config();
        let mut rng = Rng::new(74);
        let params = AttentionParams::<f64>::init(&cfg, 1, &mut rng);
        let img = Image::random(4, 4, 1, &mut rng);
        let gen = Image::random(4, 4, 1, &mut rng);
        let tape = Tape::new();
        let vars = params.bind(&tape);
        let ip = patchify_on(&tape.leaf(img.to_planar()), &cfg).unwrap();
        let gp = patchify_on(&tape.leaf(gen.to_planar()), &cfg).unwrap();
        let it = embed(&ip, &vars.w_embed, (4, 4, 1), 4).unwrap();
        let gt = embed(&gp, &vars.w_embed, (4, 4, 1), 4).unwrap();
        let (attn, out) = cross_attend(&it, &gt, &vars).unwrap();
        assert_eq!(attn.value().data(), &[1.0]);
        // O is the value-projected generated token.
        let v = gt.tokens.matmul(&vars.w_value).unwrap();
        assert_eq!(out.tokens.value(), v.value());
    }

    #[test]
    fn identical_generated_tokens_give_uniform_attention() {
        let cfg = toy_config();
        let mut rng = Rng::new(75);
        let params = AttentionParams::<f64>::init(&cfg, 1, &mut rng);
        let img = Image::random(8, 8, 1, &mut rng);
        let gen = Image::filled(8, 8, 1, 0.5).unwrap(); // all patches identical
        let tape = Tape::new();
        let vars = params.bind(&tape);
        let ip = patchify_on(&tape.leaf(img.to_planar()), &cfg).unwrap();
        let gp = patchify_on(&tape.leaf(gen.to_planar()), &cfg).unwrap();
        let it = embed(&ip, &vars.w_embed, (8, 8, 1), 4).unwrap();
        let gt = embed(&gp, &vars.w_embed, (8, 8, 1), 4).unwrap();
        let (attn, _) = cross_attend(&it, &gt, &vars).unwrap();
        let n = 4;
        for &a in attn.value().data() {
            assert!((a - 1.0 / n as f64).abs() <= 1e-9);
        }
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let cfg = toy_config();
        let mut rng = Rng::new(76);
        let params = AttentionParams::<f64>::init(&cfg, 3, &mut rng);
        let img = Image::random(8, 8, 3, &mut rng);
        let gen = Image::random(8, 8, 3, &mut rng);
        let tape = Tape::new();
        let vars = params.bind(&tape);
        let ip = patchify_on(&tape.leaf(img.to_planar()), &cfg).unwrap();
        let gp = patchify_on(&tape.leaf(gen.to_planar()), &cfg).unwrap();
        let it = embed(&ip, &vars.w_embed, (8, 8, 3), 4).unwrap();
        let gt = embed(&gp, &vars.w_embed, (8, 8, 3), 4).unwrap();
        let (attn, _) = cross_attend(&it, &gt, &vars).unwrap();
        let a = attn.value();
        let n = a.shape()[0];
        for i in 0..n {
            let row = &a.data()[i * n..(i + 1) * n];
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-6);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn permuting_keys_and_values_leaves_output_invariant() {
        // Permuting generated tokens permutes A's columns identically and
        // leaves O unchanged.
        let cfg = toy_config();
        let mut rng = Rng::new(77);
        let params = AttentionParams::<f64>::init(&cfg, 1, &mut rng);
        let img = Image::random(8, 8, 1, &mut rng);
        let gen = Image::random(8, 8, 1, &mut rng);

        let run = |perm: &[usize]| {
            let tape = Tape::new();
            let vars = params.bind(&tape);
            let ip = patchify_on(&tape.leaf(img.to_planar()), &cfg).unwrap();
            let gp = patchify_on(&tape.leaf(gen.to_planar()), &cfg).unwrap();
            // Permute generated patch rows before embedding.
            let pdim = 16;
            let map: Vec<usize> = perm
                .iter()
                .flat_map(|&r| (0..pdim).map(move |j| r * pdim + j))
                .collect();
            let gp = gp.gather(Rc::new(map), &[4, pdim]);
            let it = embed(&ip, &vars.w_embed, (8, 8, 1), 4).unwrap();
            let gt = embed(&gp, &vars.w_embed, (8, 8, 1), 4).unwrap();
            let (attn, out) = cross_attend(&it, &gt, &vars).unwrap();
            (attn.value(), out.tokens.value())
        };

        let (a_id, o_id) = run(&[0, 1, 2, 3]);
        let perm = [2usize, 0, 3, 1];
        let (a_pm, o_pm) = run(&perm);
        // Columns permute with the tokens.
        for i in 0..4 {
            for j in 0..4 {
                let want = a_id.data()[i * 4 + perm[j]];
                let got = a_pm.data()[i * 4 + j];
                assert!((want - got).abs() <= 1e-12);
            }
        }
        // The attended output is invariant.
        for (x, y) in o_id.data().iter().zip(o_pm.data()) {
            assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn constant_output_collapses_to_black() {
        // A constant attended grid normalizes to all zeros, which clamp to
        // black; eps keeps the division finite.
        let tape = Tape::<f64>::new();
        let grid = TokenGrid {
            tokens: tape.leaf(Tensor::full(&[4, 8], 0.7)),
            h: 8,
            w: 8,
            c: 1,
            patch: 4,
        };
        let w_d = tape.leaf(Tensor::full(&[8, 16], 0.1));
        let out = project_to_image(&grid, &w_d, 1e-5).unwrap();
        // Centered values are zero up to summation rounding, so every pixel
        // lands at (or clamps to) black.
        assert!(out.value().data().iter().all(|&v| v.abs() <= 1e-9));
    }

    #[test]
    fn projection_output_stays_in_unit_interval_with_unit_moments() {
        let cfg = toy_config();
        let mut rng = Rng::new(78);
        let tape = Tape::<f64>::new();
        let grid = TokenGrid {
            tokens: tape.leaf(Tensor::rand_uniform(&[4, 8], -2.0, 2.0, &mut rng)),
            h: 8,
            w: 8,
            c: 1,
            patch: 4,
        };
        let w_d = tape.leaf(Tensor::rand_uniform(&[8, 16], -0.5, 0.5, &mut rng));
        let out = project_to_image(&grid, &w_d, cfg.eps).unwrap();
        assert!(out
            .value()
            .data()
            .iter()
            .all(|&v| (0.0..=1.0).contains(&v)));

        // Verify the pre-clamp moments directly on the normalized values.
        let rows = grid.tokens.matmul(&w_d).unwrap();
        let planar = rows.gather(Rc::new(unpatchify_map(8, 8, 1, 4)), &[1, 8, 8]);
        let mean = planar.mean_all();
        let centered = planar.sub_scalar(&mean).unwrap();
        let var = centered.mul(&centered).unwrap().mean_all();
        let std = var.add_const(cfg.eps).sqrt();
        let z = centered.div_scalar(&std).unwrap().value();
        let m: f64 = z.data().iter().sum::<f64>() / 64.0;
        let v: f64 = z.data().iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 64.0;
        assert!(m.abs() <= 1e-5, "mean {m}");
        assert!((v - 1.0).abs() <= 1e-4, "var {v}"); // eps shifts variance slightly
    }

    #[test]
    fn reference_image_has_input_dims_and_is_deterministic() {
        let cfg = toy_config();
        let mut rng = Rng::new(79);
        let params = AttentionParams::<f32>::init(&cfg, 3, &mut rng);
        let img = Image::random(8, 12, 3, &mut rng);
        let gen = Image::random(8, 12, 3, &mut rng);
        let a = make_reference(&img, &gen, &params, &cfg).unwrap();
        let b = make_reference(&img, &gen, &params, &cfg).unwrap();
        assert_eq!(a.dims(), (8, 12, 3));
        assert_eq!(a, b);
    }

    #[test]
    fn all_five_projections_get_finite_difference_checked_gradients() {
        // End-to-end f64 check at H=W=8, P=4, d_model=8 through a scalar
        // readout of the reference image.
        let cfg = toy_config();
        let mut rng = Rng::new(80);
        let params = AttentionParams::<f64>::init(&cfg, 1, &mut rng);
        let img = Image::random(8, 8, 1, &mut rng);
        let gen = Image::random(8, 8, 1, &mut rng);
        let readout_w = Tensor::<f64>::rand_uniform(&[1, 8, 8], -1.0, 1.0, &mut rng);
        let target = Tensor::<f64>::rand_uniform(&[1, 8, 8], 0.0, 1.0, &mut rng);

        let inputs: Vec<Tensor<f64>> = params
            .parameters()
            .iter()
            .map(|p| p.value.clone())
            .collect();

        let forward = |ins: &[Tensor<f64>]| -> f64 {
            let tape = Tape::new();
            let vars = AttentionVars {
                w_embed: tape.leaf(ins[0].clone()),
                w_query: tape.leaf(ins[1].clone()),
                w_key: tape.leaf(ins[2].clone()),
                w_value: tape.leaf(ins[3].clone()),
                w_decode: tape.leaf(ins[4].clone()),
            };
            let ip = tape.leaf(img.to_planar());
            let gp = tape.leaf(gen.to_planar());
            let reference = make_reference_on(&ip, &gp, &vars, &cfg).unwrap();
            let weighted = reference.mul(&tape.leaf(readout_w.clone())).unwrap();
            weighted
                .loss(&tape.leaf(target.clone()), LossKind::MseMean)
                .unwrap()
                .item()
        };

        // Analytic gradients through the tape.
        let tape = Tape::new();
        let vars = params.bind(&tape);
        let ip = tape.leaf(img.to_planar());
        let gp = tape.leaf(gen.to_planar());
        let reference = make_reference_on(&ip, &gp, &vars, &cfg).unwrap();
        let weighted = reference.mul(&tape.leaf(readout_w.clone())).unwrap();
        let loss = weighted
            .loss(&tape.leaf(target.clone()), LossKind::MseMean)
            .unwrap();
        tape.backward(&loss).unwrap();
        let analytic = vec![
            tape.grad(&vars.w_embed),
            tape.grad(&vars.w_query),
            tape.grad(&vars.w_key),
            tape.grad(&vars.w_value),
            tape.grad(&vars.w_decode),
        ];
        // No dead parameters.
        for (g, name) in analytic.iter().zip(["w_e", "w_q", "w_k", "w_v", "w_d"]) {
            assert!(g.max_abs() > 0.0, "{name} received no gradient");
        }

        let numeric = finite_difference_grads(forward, &inputs, FD_STEP);
        let err = max_relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "worst relative error {err}");
    }
}
