//! 2D discrete Fourier transforms on f64 planes.
//!
//! Power-of-two extents go through an iterative radix-2 Cooley-Tukey pass;
//! every other extent uses the direct O(N^2) sum. Both are exact DFTs, so
//! mixed-parity sizes are handled uniformly and the fast path can be checked
//! against the direct one. The forward transform is unnormalized; the
//! inverse carries the full 1/(H*W) factor.

use num_complex::Complex64;

/// In-place 2D DFT over a row-major `h x w` plane.
pub(crate) fn dft2(plane: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    debug_assert_eq!(plane.len(), h * w);
    for row in plane.chunks_exact_mut(w) {
        dft1(row, inverse);
    }
    let mut col = vec![Complex64::default(); h];
    for j in 0..w {
        for i in 0..h {
            col[i] = plane[i * w + j];
        }
        dft1(&mut col, inverse);
        for i in 0..h {
            plane[i * w + j] = col[i];
        }
    }
    if inverse {
        let norm = 1.0 / (h * w) as f64;
        for v in plane.iter_mut() {
            *v *= norm;
        }
    }
}

fn dft1(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        radix2(buf, inverse);
    } else {
        direct(buf, inverse);
    }
}

/// Iterative radix-2 Cooley-Tukey with bit-reversal reordering.
fn radix2(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = (i.reverse_bits() >> (usize::BITS - bits)) as usize;
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * std::f64::consts::PI / len as f64;
        let wlen = Complex64::new(ang.cos(), ang.sin());
        for start in (0..n).step_by(len) {
            let mut w = Complex64::new(1.0, 0.0);
            for k in 0..len / 2 {
                let a = buf[start + k];
                let b = buf[start + k + len / 2] * w;
                buf[start + k] = a + b;
                buf[start + k + len / 2] = a - b;
                w *= wlen;
            }
        }
        len <<= 1;
    }
}

/// Direct O(N^2) transform with a precomputed twiddle table.
fn direct(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    let twiddle: Vec<Complex64> = (0..n)
        .map(|j| {
            let ang = sign * 2.0 * std::f64::consts::PI * j as f64 / n as f64;
            Complex64::new(ang.cos(), ang.sin())
        })
        .collect();
    let input = buf.to_vec();
    for (k, out) in buf.iter_mut().enumerate() {
        let mut acc = Complex64::default();
        for (j, &x) in input.iter().enumerate() {
            acc += x * twiddle[(k * j) % n];
        }
        *out = acc;
    }
}

/// Index of raw bin `(u, v)` inside the DC-centered layout.
pub(crate) fn centered_index(u: usize, v: usize, h: usize, w: usize) -> usize {
    ((u + h / 2) % h) * w + (v + w / 2) % w
}

/// Moves a raw-layout plane into the DC-centered layout.
pub(crate) fn to_centered(plane: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); plane.len()];
    for u in 0..h {
        for v in 0..w {
            out[centered_index(u, v, h, w)] = plane[u * w + v];
        }
    }
    out
}

/// Inverse of [`to_centered`].
pub(crate) fn to_raw(plane: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); plane.len()];
    for u in 0..h {
        for v in 0..w {
            out[u * w + v] = plane[centered_index(u, v, h, w)];
        }
    }
    out
}

/// Forward DFT of a real plane, returned in the centered layout.
pub(crate) fn forward_centered(pixels: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let mut plane: Vec<Complex64> = pixels.iter().map(|&p| Complex64::new(p, 0.0)).collect();
    dft2(&mut plane, h, w, false);
    to_centered(&plane, h, w)
}

/// Inverse DFT of a centered-layout plane, normalized by 1/(H*W).
pub(crate) fn inverse_from_centered(bins: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut plane = to_raw(bins, h, w);
    dft2(&mut plane, h, w, true);
    plane
}
