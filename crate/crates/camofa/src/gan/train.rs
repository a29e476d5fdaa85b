//! Alternating adversarial training.
//!
//! Each step draws one batch, updates the discriminator on `(I, I)` real
//! pairs against detached fakes, then updates the generator through the
//! frozen discriminator. Everything is seeded, so the whole run is a pure
//! function of `(dataset, config)`.

use serde::{Deserialize, Serialize};

use crate::numerics::{AdamConfig, AdamState, Element, Rng, Tape};
use crate::spectral::Image;

use super::{
    discriminator_forward_on, generator_forward, generator_forward_on, loss_d, loss_g,
    DiscriminatorParams, GanError, GeneratorParams, LatentNoise, LEVELS,
};

/// Hyperparameters of one adversarial training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda_l1: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub image_size: usize,
    pub base_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_l1: 100.0,
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 8,
            steps: 200,
            seed: 42,
            image_size: 16,
            base_width: 16,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
        }
    }
}

/// Per-step losses. `g_total` always decomposes as
/// `g_adv_loss + lambda_l1 * g_l1_loss`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub d_loss: f64,
    pub g_adv_loss: f64,
    pub g_l1_loss: f64,
    pub g_total: f64,
}

/// Synthetic smoke-test images: smooth zero-mean textures around mid-gray
/// with per-image energy normalized, so every image is equally hard to
/// reconstruct and per-batch loss noise stays below the learning trend.
pub fn smoke_dataset(count: usize, size: usize, seed: u64) -> Vec<Image> {
    let grid = 4usize;
    let mut rng = Rng::new(seed);
    (0..count)
        .map(|_| {
            let coarse: Vec<f64> = (0..grid * grid * 3).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let mut tex = vec![0.0f64; size * size * 3];
            for y in 0..size {
                for x in 0..size {
                    let fy = y as f64 / size as f64 * (grid - 1) as f64;
                    let fx = x as f64 / size as f64 * (grid - 1) as f64;
                    let (y0, x0) = (fy as usize, fx as usize);
                    let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
                    for c in 0..3 {
                        let g = |yy: usize, xx: usize| {
                            coarse[(yy.min(grid - 1) * grid + xx.min(grid - 1)) * 3 + c]
                        };
                        tex[(y * size + x) * 3 + c] = g(y0, x0) * (1.0 - ty) * (1.0 - tx)
                            + g(y0, x0 + 1) * (1.0 - ty) * tx
                            + g(y0 + 1, x0) * ty * (1.0 - tx)
                            + g(y0 + 1, x0 + 1) * ty * tx;
                    }
                }
            }
            let mean_abs: f64 = tex.iter().map(|v| v.abs()).sum::<f64>() / tex.len() as f64;
            let scale = 0.45 / mean_abs.max(1e-9);
            let data: Vec<f32> = tex
                .iter()
                .map(|&t| (0.5 + (t * scale).clamp(-0.5, 0.5)) as f32)
                .collect();
            Image::new(size, size, 3, data).expect("values clamped into range")
        })
        .collect()
}

/// Epoch-style batch cursor: reshuffles the index pool whenever it runs dry.
struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
}

impl BatchSampler {
    fn new(n: usize) -> Self {
        BatchSampler {
            order: (0..n).collect(),
            cursor: n, // force a shuffle on first draw
        }
    }

    fn draw(&mut self, batch: usize, rng: &mut Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(batch);
        for _ in 0..batch {
            if self.cursor >= self.order.len() {
                rng.shuffle(&mut self.order);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// Runs the full alternating loop and returns the trained parameters plus
/// one [`LossReport`] per step. Aborts with [`GanError::NonFiniteLoss`] the
/// moment any loss stops being finite.
pub fn train_gan<T: Element>(
    dataset: &[Image],
    config: &TrainConfig,
) -> Result<(GeneratorParams<T>, DiscriminatorParams<T>, Vec<LossReport>), GanError> {
    if dataset.is_empty() {
        return Err(GanError::EmptyDataset);
    }
    let (h, w, c) = dataset[0].dims();
    let div = 1 << LEVELS;
    if h % div != 0 || w % div != 0 {
        return Err(GanError::Architecture(format!(
            "image dims {h}x{w} must be divisible by {div}"
        )));
    }
    for img in dataset {
        if img.dims() != (h, w, c) {
            return Err(GanError::Architecture(format!(
                "dataset mixes dims {:?} and {:?}",
                (h, w, c),
                img.dims()
            )));
        }
    }

    let mut rng = Rng::new(config.seed);
    let mut generator = GeneratorParams::<T>::init(c, config.base_width, &mut rng);
    let mut discriminator = DiscriminatorParams::<T>::init(c, config.base_width, &mut rng);
    let mut g_adam = AdamState::new(config.adam(), &generator.parameters());
    let mut d_adam = AdamState::new(config.adam(), &discriminator.parameters());
    let mut sampler = BatchSampler::new(dataset.len());
    let mut reports = Vec::with_capacity(config.steps);

    let inv_batch = T::from_f64(1.0 / config.batch_size as f64);

    for step in 0..config.steps {
        let batch = sampler.draw(config.batch_size, &mut rng);
        let noises: Vec<LatentNoise<T>> = batch
            .iter()
            .map(|_| LatentNoise::sample(h, w, &mut rng))
            .collect();

        // Discriminator step: fakes are produced under the current
        // generator and enter as constants.
        let d_loss_value = {
            let tape = Tape::<T>::new();
            let d_vars = discriminator.bind(&tape);
            let g_vars = generator.bind(&tape);
            let mut total: Option<crate::numerics::Var<T>> = None;
            for (&idx, noise) in batch.iter().zip(&noises) {
                let input = tape.leaf(dataset[idx].to_planar());
                let zv = tape.leaf(noise.z.clone());
                let fake = generator_forward_on(&input, &zv, &g_vars)?.detach();
                let real_logits = discriminator_forward_on(&input, &input, &d_vars)?;
                let fake_logits = discriminator_forward_on(&input, &fake, &d_vars)?;
                let pair_loss = loss_d(&real_logits, &fake_logits)?;
                total = Some(match total {
                    Some(acc) => acc.add(&pair_loss)?,
                    None => pair_loss,
                });
            }
            let loss = total.expect("non-empty batch").scale(inv_batch);
            let value = loss.item().to_f64();
            if !value.is_finite() {
                return Err(GanError::NonFiniteLoss {
                    step,
                    which: "discriminator",
                });
            }
            tape.backward(&loss)?;
            discriminator.absorb_grads(&tape, &d_vars);
            let mut params = discriminator.parameters_mut();
            d_adam.step(&mut params)?;
            for p in discriminator.parameters_mut() {
                p.zero_grad();
            }
            value
        };

        // Generator step through the frozen discriminator.
        let (g_total_value, g_adv_value, g_l1_value) = {
            let tape = Tape::<T>::new();
            let g_vars = generator.bind(&tape);
            let d_vars = discriminator.bind(&tape);
            let mut adv_total: Option<crate::numerics::Var<T>> = None;
            let mut l1_total: Option<crate::numerics::Var<T>> = None;
            for (&idx, noise) in batch.iter().zip(&noises) {
                let input = tape.leaf(dataset[idx].to_planar());
                let zv = tape.leaf(noise.z.clone());
                let fake = generator_forward_on(&input, &zv, &g_vars)?;
                let fake_logits = discriminator_forward_on(&input, &fake, &d_vars)?;
                let (_, g_adv, g_l1) = loss_g(&fake_logits, &fake, &input, config.lambda_l1)?;
                adv_total = Some(match adv_total {
                    Some(acc) => acc.add(&g_adv)?,
                    None => g_adv,
                });
                l1_total = Some(match l1_total {
                    Some(acc) => acc.add(&g_l1)?,
                    None => g_l1,
                });
            }
            let g_adv = adv_total.expect("non-empty batch").scale(inv_batch);
            let g_l1 = l1_total.expect("non-empty batch").scale(inv_batch);
            let g_total = g_adv.add(&g_l1.scale(T::from_f64(config.lambda_l1)))?;
            let values = (
                g_total.item().to_f64(),
                g_adv.item().to_f64(),
                g_l1.item().to_f64(),
            );
            if !values.0.is_finite() {
                return Err(GanError::NonFiniteLoss {
                    step,
                    which: "generator",
                });
            }
            tape.backward(&g_total)?;
            generator.absorb_grads(&tape, &g_vars);
            let mut params = generator.parameters_mut();
            g_adam.step(&mut params)?;
            for p in generator.parameters_mut() {
                p.zero_grad();
            }
            values
        };

        reports.push(LossReport {
            step,
            d_loss: d_loss_value,
            g_adv_loss: g_adv_value,
            g_l1_loss: g_l1_value,
            g_total: g_total_value,
        });
    }

    Ok((generator, discriminator, reports))
}
