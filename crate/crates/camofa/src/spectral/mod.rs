//! Frequency-domain machinery: transforms, amplitude/phase decomposition,
//! centered binary masks, and the amplitude-swapping operations.
//!
//! All spectral math runs in `f64` regardless of image precision, and all
//! spectra live in the DC-centered layout (raw bin `(0,0)` moved to
//! `(H/2, W/2)`). Clamping to `[0, 1]` happens only when a result crosses
//! back into an [`Image`]; the `*_field` variants expose pre-clamp values
//! for verification.

mod dump;
mod fft;
mod mask;
mod swap;

pub use dump::{dump_spectrum, read_dump, write_dump, SpectrumDump};
pub use mask::{make_mask, FreqMask};
pub use swap::{basic_swap, basic_swap_field, hybrid_swap, hybrid_swap_field, spectral_displacement};

use std::sync::atomic::{AtomicU64, Ordering};

use num_complex::Complex64;
use thiserror::Error;

use crate::numerics::{Element, Rng, Tensor};

/// Largest tolerated imaginary residual before an inverse transform is
/// declared non-Hermitian.
pub const IMAG_TOL: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("{op}: dimensions {lhs:?} and {rhs:?} do not match")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize, usize),
        rhs: (usize, usize, usize),
    },
    #[error("beta = {0} outside the valid range (0, 1]")]
    BetaOutOfRange(f64),
    #[error(
        "inverse transform left an imaginary residual of {max_imag:.3e} (> {IMAG_TOL:.0e}); \
         the spectrum violates Hermitian symmetry"
    )]
    SymmetryViolation { max_imag: f64 },
    #[error("image pixel {value} at index {index} outside [0, 1]")]
    PixelOutOfRange { index: usize, value: f32 },
    #[error("{what} must be non-empty")]
    EmptyExtent { what: &'static str },
    #[error("spectrum dump: expected magic \"CFSP\", found {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("spectrum dump: unsupported version {found} (expected 1)")]
    BadVersion { found: u32 },
    #[error("spectrum dump: truncated payload, expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("spectrum dump: {0}")]
    Io(#[from] std::io::Error),
}

/// `H x W x C` pixel grid with interleaved channels, every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f32>,
}

impl Image {
    /// Validates dimensions, buffer length, and the `[0, 1]` range.
    pub fn new(h: usize, w: usize, c: usize, data: Vec<f32>) -> Result<Self, SpectralError> {
        if h == 0 || w == 0 || c == 0 {
            return Err(SpectralError::EmptyExtent { what: "image" });
        }
        assert_eq!(data.len(), h * w * c, "pixel buffer length");
        for (i, &v) in data.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(SpectralError::PixelOutOfRange { index: i, value: v });
            }
        }
        Ok(Image { h, w, c, data })
    }

    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Image {
            h,
            w,
            c,
            data: vec![0.0; h * w * c],
        }
    }

    pub fn filled(h: usize, w: usize, c: usize, v: f32) -> Result<Self, SpectralError> {
        Image::new(h, w, c, vec![v; h * w * c])
    }

    /// Uniform random pixels in `[0, 1)`.
    pub fn random(h: usize, w: usize, c: usize, rng: &mut Rng) -> Self {
        Image {
            h,
            w,
            c,
            data: (0..h * w * c).map(|_| rng.next_f64() as f32).collect(),
        }
    }

    pub fn h(&self) -> usize {
        self.h
    }
    pub fn w(&self) -> usize {
        self.w
    }
    pub fn channels(&self) -> usize {
        self.c
    }
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, ch: usize) -> f32 {
        self.data[(y * self.w + x) * self.c + ch]
    }

    pub fn set(&mut self, y: usize, x: usize, ch: usize, v: f32) {
        debug_assert!((0.0..=1.0).contains(&v));
        self.data[(y * self.w + x) * self.c + ch] = v;
    }

    /// One channel as an `f64` plane.
    pub fn channel_f64(&self, ch: usize) -> Vec<f64> {
        (0..self.h * self.w)
            .map(|i| self.data[i * self.c + ch] as f64)
            .collect()
    }

    /// Converts to a planar `[C, H, W]` tensor.
    pub fn to_planar<T: Element>(&self) -> Tensor<T> {
        let mut data = Vec::with_capacity(self.data.len());
        for ch in 0..self.c {
            for i in 0..self.h * self.w {
                data.push(T::from_f64(self.data[i * self.c + ch] as f64));
            }
        }
        Tensor::from_vec(&[self.c, self.h, self.w], data).expect("length matches")
    }

    /// Builds an image from a planar `[C, H, W]` tensor, clamping to `[0, 1]`.
    pub fn from_planar_clamped<T: Element>(t: &Tensor<T>) -> Self {
        let (c, h, w) = match *t.shape() {
            [c, h, w] => (c, h, w),
            _ => panic!("from_planar_clamped needs [C, H, W], got {:?}", t.shape()),
        };
        let plane = h * w;
        let mut data = vec![0.0f32; c * plane];
        for ch in 0..c {
            for i in 0..plane {
                let v = t.data()[ch * plane + i].to_f64().clamp(0.0, 1.0);
                data[i * c + ch] = v as f32;
            }
        }
        Image { h, w, c, data }
    }
}

/// Unclamped pixel-domain result of an inverse transform, kept in `f64`
/// together with the largest imaginary residual the inverse produced.
#[derive(Debug, Clone)]
pub struct RealField {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f64>,
    imag_residual: f64,
}

impl RealField {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    /// Largest `|Im|` the inverse transform discarded.
    pub fn imag_residual(&self) -> f64 {
        self.imag_residual
    }
    pub fn channel(&self, ch: usize) -> &[f64] {
        &self.data[ch * self.h * self.w..(ch + 1) * self.h * self.w]
    }

    /// Clamps into an [`Image`]; the only place values leave `f64`.
    pub fn to_image(&self) -> Image {
        let plane = self.h * self.w;
        let mut data = vec![0.0f32; self.data.len()];
        for ch in 0..self.c {
            for i in 0..plane {
                data[i * self.c + ch] = self.data[ch * plane + i].clamp(0.0, 1.0) as f32;
            }
        }
        Image {
            h: self.h,
            w: self.w,
            c: self.c,
            data,
        }
    }
}

/// Per-channel complex frequency grid in the DC-centered layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }

    /// Centered-layout plane of one channel.
    pub fn channel(&self, ch: usize) -> &[Complex64] {
        &self.data[ch * self.h * self.w..(ch + 1) * self.h * self.w]
    }

    pub fn channel_mut(&mut self, ch: usize) -> &mut [Complex64] {
        &mut self.data[ch * self.h * self.w..(ch + 1) * self.h * self.w]
    }

    /// Bin in raw (unshifted) coordinates.
    pub fn raw_bin(&self, ch: usize, u: usize, v: usize) -> Complex64 {
        self.channel(ch)[fft::centered_index(u, v, self.h, self.w)]
    }

    pub fn from_channels(
        h: usize,
        w: usize,
        channels: Vec<Vec<Complex64>>,
    ) -> Result<Self, SpectralError> {
        let c = channels.len();
        if h == 0 || w == 0 || c == 0 {
            return Err(SpectralError::EmptyExtent { what: "spectrum" });
        }
        let mut data = Vec::with_capacity(h * w * c);
        for plane in channels {
            assert_eq!(plane.len(), h * w, "channel plane length");
            data.extend(plane);
        }
        Ok(Spectrum { h, w, c, data })
    }
}

/// Nonnegative magnitude of each spectrum bin, per channel, centered layout.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeMap {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f64>,
}

/// Phase of each spectrum bin in `(-pi, pi]`, per channel, centered layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMap {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f64>,
}

impl AmplitudeMap {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }
    pub fn channel(&self, ch: usize) -> &[f64] {
        &self.data[ch * self.h * self.w..(ch + 1) * self.h * self.w]
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

impl PhaseMap {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }
    pub fn channel(&self, ch: usize) -> &[f64] {
        &self.data[ch * self.h * self.w..(ch + 1) * self.h * self.w]
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

static FFT2_CALLS: AtomicU64 = AtomicU64::new(0);

/// Number of forward transforms performed so far; test instrumentation for
/// verifying that augmentation-free code paths never touch spectral code.
#[doc(hidden)]
pub fn fft2_call_count() -> u64 {
    FFT2_CALLS.load(Ordering::Relaxed)
}

/// Forward 2D DFT of every channel, unnormalized, centered layout.
pub fn fft2(img: &Image) -> Spectrum {
    FFT2_CALLS.fetch_add(1, Ordering::Relaxed);
    let (h, w, c) = img.dims();
    let mut data = Vec::with_capacity(h * w * c);
    for ch in 0..c {
        data.extend(fft::forward_centered(&img.channel_f64(ch), h, w));
    }
    Spectrum { h, w, c, data }
}

/// Forward transform of an unclamped field; used to verify pre-clamp
/// spectra.
pub fn fft2_field(field: &RealField) -> Spectrum {
    FFT2_CALLS.fetch_add(1, Ordering::Relaxed);
    let (h, w, c) = field.dims();
    let mut data = Vec::with_capacity(h * w * c);
    for ch in 0..c {
        data.extend(fft::forward_centered(field.channel(ch), h, w));
    }
    Spectrum { h, w, c, data }
}

/// Inverse transform to an unclamped [`RealField`].
///
/// Fails with [`SpectralError::SymmetryViolation`] when any discarded
/// imaginary part exceeds [`IMAG_TOL`], which signals a non-Hermitian
/// spectrum (for example an asymmetric mask).
pub fn ifft2_field(spec: &Spectrum) -> Result<RealField, SpectralError> {
    let (h, w, c) = spec.dims();
    let mut data = Vec::with_capacity(h * w * c);
    let mut max_imag = 0.0f64;
    for ch in 0..c {
        let plane = fft::inverse_from_centered(spec.channel(ch), h, w);
        for z in &plane {
            max_imag = max_imag.max(z.im.abs());
        }
        data.extend(plane.iter().map(|z| z.re));
    }
    if max_imag > IMAG_TOL {
        return Err(SpectralError::SymmetryViolation { max_imag });
    }
    Ok(RealField {
        h,
        w,
        c,
        data,
        imag_residual: max_imag,
    })
}

/// Inverse transform clamped into an [`Image`]; same error contract as
/// [`ifft2_field`].
pub fn ifft2_real(spec: &Spectrum) -> Result<Image, SpectralError> {
    Ok(ifft2_field(spec)?.to_image())
}

/// Splits a spectrum into amplitude and phase.
pub fn decompose(spec: &Spectrum) -> (AmplitudeMap, PhaseMap) {
    let (h, w, c) = spec.dims();
    let mut amp = Vec::with_capacity(spec.data.len());
    let mut phase = Vec::with_capacity(spec.data.len());
    for z in &spec.data {
        amp.push(z.norm());
        let mut p = z.im.atan2(z.re);
        if p == -std::f64::consts::PI {
            p = std::f64::consts::PI;
        }
        phase.push(p);
    }
    (
        AmplitudeMap {
            h,
            w,
            c,
            data: amp,
        },
        PhaseMap {
            h,
            w,
            c,
            data: phase,
        },
    )
}

/// Rebuilds a spectrum from amplitude and phase; the inverse of
/// [`decompose`] up to floating-point rounding.
pub fn recompose(amp: &AmplitudeMap, phase: &PhaseMap) -> Result<Spectrum, SpectralError> {
    if amp.dims() != phase.dims() {
        return Err(SpectralError::ShapeMismatch {
            op: "recompose",
            lhs: amp.dims(),
            rhs: phase.dims(),
        });
    }
    let (h, w, c) = amp.dims();
    let data = amp
        .data
        .iter()
        .zip(&phase.data)
        .map(|(&a, &p)| Complex64::from_polar(a, p))
        .collect();
    Ok(Spectrum { h, w, c, data })
}
