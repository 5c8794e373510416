//! Central finite differences, the reference every analytic gradient is checked against.

use crate::tensor::Tensor;

/// Per-coordinate `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)`.
///
/// NaN values from `f` propagate into the estimate.
pub fn fd_gradient(mut f: impl FnMut(&Tensor) -> f64, point: &Tensor, epsilon: f64) -> Tensor {
    assert!(epsilon > 0.0, "finite-difference step must be positive");
    let mut probe = point.clone();
    let mut grad = Vec::with_capacity(point.numel());
    for i in 0..point.numel() {
        let x = point.data()[i];
        probe.data_mut()[i] = x + epsilon;
        let up = f(&probe);
        probe.data_mut()[i] = x - epsilon;
        let down = f(&probe);
        probe.data_mut()[i] = x;
        grad.push((up - down) / (2.0 * epsilon));
    }
    Tensor::new(point.shape().to_vec(), grad).expect("shape preserved")
}

/// Largest elementwise `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    assert_eq!(a.shape(), b.shape(), "compared tensors must share a shape");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let diff = (x - y).abs();
            if diff == 0.0 {
                0.0
            } else {
                diff / x.abs().max(y.abs()).max(floor)
            }
        })
        .fold(0.0, f64::max)
}
