//! Central finite-difference gradient checking.
//!
//! The numeric side only ever calls the forward pass, so it stays an
//! independent oracle for the reverse-mode sweep.

use super::Tensor;

/// Central-difference gradient of a scalar-valued forward function with
/// respect to `inputs[which]`.
pub fn numeric_gradient<F>(f: F, inputs: &[Tensor], which: usize, eps: f64) -> Tensor
where
    F: Fn(&[Tensor]) -> f64,
{
    let mut grad = Tensor::zeros(inputs[which].shape());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for i in 0..inputs[which].numel() {
        let orig = inputs[which].data()[i];
        work[which].data_mut()[i] = orig + eps;
        let plus = f(&work);
        work[which].data_mut()[i] = orig - eps;
        let minus = f(&work);
        work[which].data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    grad
}

/// Max elementwise relative error, with a unit floor on the denominator so
/// near-zero gradients compare absolutely.
pub fn max_rel_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
        .fold(0.0, f64::max)
}
