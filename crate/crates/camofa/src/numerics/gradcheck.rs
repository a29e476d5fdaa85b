//! Central finite differences for verifying backward passes.
//!
//! This module deliberately knows nothing about the tape: it evaluates a
//! caller-supplied forward function twice per input entry, so it can check
//! any differentiable composition from the outside.

use super::tensor::Tensor;

/// Central-difference gradient of `f` with respect to every entry of every
/// input, at the given step size. `f` must be a pure function of `inputs`.
pub fn finite_difference_grads(
    mut f: impl FnMut(&[Tensor<f64>]) -> f64,
    inputs: &[Tensor<f64>],
    step: f64,
) -> Vec<Tensor<f64>> {
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let up = f(&work);
            work[i].data_mut()[j] = orig - step;
            let down = f(&work);
            work[i].data_mut()[j] = orig;
            g.data_mut()[j] = (up - down) / (2.0 * step);
        }
        grads.push(g);
    }
    grads
}

/// Worst relative error between two gradient sets, entrywise
/// `|a - b| / max(|a|, |b|, 1)`.
pub fn max_relative_error(analytic: &[Tensor<f64>], numeric: &[Tensor<f64>]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        assert_eq!(a.shape(), n.shape());
        for (&av, &nv) in a.data().iter().zip(n.data()) {
            let denom = av.abs().max(nv.abs()).max(1.0);
            worst = worst.max((av - nv).abs() / denom);
        }
    }
    worst
}

/// Default step for the finite-difference checks.
pub const FD_STEP: f64 = 1e-5;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_gradient_of_a_quadratic() {
        // f(x) = sum(x^2), df/dx = 2x
        let x = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let grads = finite_difference_grads(
            |ins| ins[0].data().iter().map(|v| v * v).sum(),
            &[x.clone()],
            FD_STEP,
        );
        let expect = x.scale(2.0);
        assert!(max_relative_error(&[expect], &grads) < 1e-8);
    }
}
