//! Central finite-difference helpers for validating analytic gradients.

use crate::{Float, Tensor};

/// `|a - b| / max(|a|, |b|, floor)`; the floor keeps near-zero pairs from
/// reporting huge relative errors.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central difference of `f` with respect to element `index` (flat,
/// row-major) of `x`.
pub fn central_difference<T, F>(f: F, x: &Tensor<T>, index: usize, eps: f64) -> f64
where
    T: Float,
    F: Fn(&Tensor<T>) -> f64,
{
    let mut probe = x.clone();
    let base = probe.as_slice().expect("standard layout")[index];
    probe.as_slice_mut().expect("standard layout")[index] = base + T::of(eps);
    let plus = f(&probe);
    probe.as_slice_mut().expect("standard layout")[index] = base - T::of(eps);
    let minus = f(&probe);
    (plus - minus) / (2.0 * eps)
}

#[cfg(test)]
mod tests {
    use ndarray::{ArrayD, IxDyn};

    use super::*;

    #[test]
    fn quadratic_derivative() {
        let x = ArrayD::from_shape_vec(IxDyn(&[2]), vec![3.0f64, -1.0]).unwrap();
        let d = central_difference(|t| t.iter().map(|v| v * v).sum(), &x, 0, 1e-5);
        assert!(relative_error(d, 6.0, 1e-8) < 1e-8);
    }
}
