//! Central finite differences, used as the independent oracle for gradients.

use crate::tensor::{Scalar, Tensor};

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate `i`.
///
/// Slow by design: `2 * numel(x)` evaluations of `f`.
pub fn finite_difference_gradient<T, F>(mut f: F, x: &Tensor<T>, h: f64) -> Tensor<T>
where
    T: Scalar,
    F: FnMut(&Tensor<T>) -> f64,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = T::of(orig.as_f64() + h);
        let up = f(&probe);
        probe.data_mut()[i] = T::of(orig.as_f64() - h);
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = T::of((up - down) / (2.0 * h));
    }
    out
}

/// Relative error `||a - b|| / max(||a||, ||b||)`, with a floor to avoid 0/0.
pub fn relative_error<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum::<f64>()
        .sqrt();
    diff / a.norm().max(b.norm()).max(1e-30)
}
