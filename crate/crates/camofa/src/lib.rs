//! Learnable Fourier-domain image augmentation.
//!
//! The augmentation turns an input image `I` into a transformed image `I*`
//! in three stages:
//!
//! 1. a conditional GAN generates `I_G = G(I, z)` from the input and a
//!    noise channel ([`gan`]),
//! 2. a cross-attention module fuses `I` and `I_G` into a reference image
//!    `I_R` ([`attention`]),
//! 3. an adaptive hybrid amplitude swap composes the low-frequency
//!    amplitude of `I_R` with the high-frequency amplitude of `I`, keeping
//!    the phase of `I` throughout ([`spectral`]).
//!
//! The swap radius `beta` is tuned over a discrete grid by Gaussian-process
//! Bayesian optimization ([`betasearch`]), and [`pipeline`] wires everything
//! into a synthetic-camouflage segmentation experiment that compares a
//! baseline segmenter against an augmented one.
//!
//! Everything runs on a small deterministic tensor library with reverse-mode
//! differentiation ([`numerics`]); there is no GPU or external ML framework.
//!
//! See the crate examples for runnable entry points into each stage, and the
//! `camofa` binary for the batch CLI (`train-gan`, `augment`, `search-beta`,
//! `eval`, `inspect-spectrum`).

pub mod attention;
pub mod betasearch;
pub mod cli;
pub mod gan;
pub mod imgio;
pub mod numerics;
pub mod pipeline;
pub mod spectral;

pub use spectral::Image;
