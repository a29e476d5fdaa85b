use camofa::gan::{train_gan, TrainConfig};
use camofa::numerics::Rng;
use camofa::spectral::Image;

/// Smooth zero-mean textures with per-image energy normalized, so every
/// image is equally hard to reconstruct and per-batch L1 noise is tiny.
fn smoke_images(n: usize, size: usize, seed: u64) -> Vec<Image> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|_| {
            let coarse: Vec<f64> = (0..4 * 4 * 3).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let mut tex = vec![0.0f64; size * size * 3];
            for y in 0..size {
                for x in 0..size {
                    for c in 0..3 {
                        let fy = y as f64 / size as f64 * 3.0;
                        let fx = x as f64 / size as f64 * 3.0;
                        let (y0, x0) = (fy as usize, fx as usize);
                        let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
                        let g = |yy: usize, xx: usize| coarse[(yy.min(3) * 4 + xx.min(3)) * 3 + c];
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
            Image::new(size, size, 3, data).unwrap()
        })
        .collect()
}

fn main() {
    let data = smoke_images(64, 16, 1);
    for seed in [10u64, 11, 12, 1, 2, 3] {
        let cfg = TrainConfig { steps: 200, seed, base_width: 16, ..TrainConfig::default() };
        let (_, _, reports) = train_gan::<f32>(&data, &cfg).unwrap();
        let avg = |a: usize, b: usize| -> f64 {
            reports[a..b].iter().map(|r| r.g_l1_loss).sum::<f64>() / (b - a) as f64
        };
        println!(
            "seed {seed}: l1[0]={:.5} l1[199]={:.5} win={} | mean[0..20]={:.5} mean[180..200]={:.5}",
            reports[0].g_l1_loss, reports[199].g_l1_loss,
            reports[199].g_l1_loss < reports[0].g_l1_loss,
            avg(0, 20), avg(180, 200)
        );
    }
}
