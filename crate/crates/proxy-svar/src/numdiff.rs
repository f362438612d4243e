//! Central finite differences, used to cross-check the analytic Jacobians.

use nalgebra::{DMatrix, DVector};

/// Central-difference Jacobian of `f` at `x`.
///
/// Step size scales with the magnitude of each coordinate; `h` is the base
/// relative step (1e-6 is a good default for smooth maps).
pub fn central_jacobian<F>(f: F, x: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let fx = f(x);
    let m = fx.len();
    let p = x.len();
    let mut jac = DMatrix::zeros(m, p);
    for j in 0..p {
        let step = h * x[j].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += step;
        xm[j] -= step;
        let fp = f(&xp);
        let fm = f(&xm);
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * step);
        }
    }
    jac
}

/// Relative max-abs gap between two Jacobians, scaled by the larger norm.
pub fn relative_gap(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric.iter())
        .map(|x| x.abs())
        .fold(0.0, f64::max)
        .max(1.0);
    (analytic - numeric).amax() / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_polynomial_derivative() {
        let f = |x: &DVector<f64>| {
            DVector::from_vec(vec![x[0] * x[0] + 3.0 * x[1], x[0] * x[1]])
        };
        let x = DVector::from_vec(vec![2.0, -1.0]);
        let jac = central_jacobian(f, &x, 1e-6);
        let expected = DMatrix::from_row_slice(2, 2, &[4.0, 3.0, -1.0, 2.0]);
        assert!(relative_gap(&expected, &jac) < 1e-9);
    }
}
