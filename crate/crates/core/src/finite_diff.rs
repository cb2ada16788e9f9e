//! Central-difference gradient estimates used as an independent oracle for
//! the reverse-mode sweep.

use crate::tensor::Tensor;

/// Floor on the denominator of [`relative_error`]. Entries whose gradient is
/// below this magnitude are compared on an absolute scale of `1e-3`.
pub const RELATIVE_FLOOR: f64 = 1e-3;

/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every element `i`.
pub fn central_difference<F>(f: F, x: &Tensor<f64>, step: f64) -> Tensor<f64>
where
    F: Fn(&Tensor<f64>) -> f64,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - step;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (plus - minus) / (2.0 * step);
    }
    out
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

pub fn max_relative_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let x = Tensor::from_fn(&[4, 2], |i| i as f64 * 0.3 - 1.0);
        let g = central_difference(|t| t.sum(), &x, 1e-5);
        assert!(g.data().iter().all(|v| (v - 1.0).abs() < 1e-10));
    }

    #[test]
    fn square_at_three() {
        let x = Tensor::scalar(3.0);
        let g = central_difference(|t| t.item() * t.item(), &x, 1e-5);
        assert!((g.item() - 6.0).abs() < 1e-8);
    }

    #[test]
    fn floor_applies_to_tiny_values() {
        assert!(relative_error(1e-9, 2e-9) < 1e-5);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
