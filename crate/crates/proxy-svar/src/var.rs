//! Reduced-form VAR estimation, companion form, and impulse responses.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dataset::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::linalg;

/// Least-squares VAR fit on the `window_u` sample of a dataset.
#[derive(Debug, Clone)]
pub struct VarFit {
    pub lags: usize,
    /// Estimated constant term, when requested.
    pub intercept: Option<DVector<f64>>,
    /// Stacked slope matrices `(Pi_1, ..., Pi_l)`, n x (n*lags).
    pub pi: DMatrix<f64>,
    /// Residuals, one row per effective observation.
    pub residuals: DMatrix<f64>,
    /// Dataset row index of the first residual row.
    pub resid_offset: usize,
    /// Innovation covariance with divisor `T - lags` (no dof correction).
    pub sigma_u: DMatrix<f64>,
    /// Inverse regressor cross-product, kept for delta-method variances.
    /// Layout: lag regressors first, intercept (if any) last.
    pub xtx_inv: DMatrix<f64>,
    pub n: usize,
}

impl VarFit {
    /// Fit `Y_t` on `l` lags by multivariate least squares.
    pub fn fit(data: &TimeSeriesDataset, lags: usize, intercept: bool) -> Result<VarFit> {
        if lags == 0 {
            return Err(Error::Invalid("lag order must be at least 1".into()));
        }
        let n = data.n_vars();
        let win = data.window_u.clone();
        let t_rows = win.len();
        if t_rows < lags || t_rows - lags < n * lags + n + 5 {
            return Err(Error::InsufficientSample(format!(
                "need T - l >= n*l + n + 5, got T={t_rows}, l={lags}, n={n}"
            )));
        }
        let t_eff = t_rows - lags;
        let p = n * lags + usize::from(intercept);

        let mut x = DMatrix::zeros(t_eff, p);
        let mut y = DMatrix::zeros(t_eff, n);
        for (row, t) in (win.start + lags..win.end).enumerate() {
            for lag in 1..=lags {
                for c in 0..n {
                    x[(row, (lag - 1) * n + c)] = data.y[(t - lag, c)];
                }
            }
            if intercept {
                x[(row, p - 1)] = 1.0;
            }
            for c in 0..n {
                y[(row, c)] = data.y[(t, c)];
            }
        }

        let xtx = x.transpose() * &x;
        let xtx_inv = linalg::inverse(&xtx, "regressor cross-product").map_err(|_| {
            Error::Singular(
                "regressor cross-product is singular (collinear or constant series)".into(),
            )
        })?;
        let coef = &xtx_inv * x.transpose() * &y; // p x n
        let residuals = &y - &x * &coef;
        let sigma_u = residuals.transpose() * &residuals / t_eff as f64;

        let coef_t = coef.transpose(); // n x p
        let pi = coef_t.columns(0, n * lags).into_owned();
        let intercept_vec = intercept.then(|| coef_t.column(p - 1).into_owned());

        Ok(VarFit {
            lags,
            intercept: intercept_vec,
            pi,
            residuals,
            resid_offset: win.start + lags,
            sigma_u,
            xtx_inv,
            n,
        })
    }

    /// Number of effective observations behind the fit.
    pub fn t_eff(&self) -> usize {
        self.residuals.nrows()
    }

    /// Companion matrix: slope block on top, shifted identity below.
    pub fn companion(&self) -> DMatrix<f64> {
        companion_from_pi(&self.pi, self.n, self.lags)
    }

    /// Largest eigenvalue modulus of the companion matrix.
    pub fn spectral_radius(&self) -> f64 {
        linalg::spectral_radius(&self.companion())
    }

    /// Stability check against the unit disk (threshold `1 - 1e-10`).
    pub fn is_stable(&self) -> bool {
        self.spectral_radius() < 1.0 - 1e-10
    }

    /// Selection matrix `S_n = (I_n, 0)`, n x (n*lags).
    pub fn selection(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.n, self.n * self.lags);
        for i in 0..self.n {
            s[(i, i)] = 1.0;
        }
        s
    }

    /// Impulse responses `S_n C^h S_n' B1 e_j` for horizons `0..=h_max`.
    ///
    /// `b1` holds the on-impact responses (n x k) and `shock` is the
    /// zero-based column index of the shock of interest.
    pub fn irf(&self, b1: &DMatrix<f64>, shock: usize, h_max: usize) -> Result<IrfPath> {
        if b1.nrows() != self.n {
            return Err(Error::Dimension(format!(
                "impact matrix has {} rows, VAR has {} variables",
                b1.nrows(),
                self.n
            )));
        }
        if shock >= b1.ncols() {
            return Err(Error::Dimension(format!(
                "shock index {shock} out of range for {} columns",
                b1.ncols()
            )));
        }
        let c = self.companion();
        let impact = b1.column(shock).into_owned();
        let mut values = DMatrix::zeros(h_max + 1, self.n);
        // state = C^h S_n' B1 e_j, propagated one multiplication per horizon
        let mut state = DVector::zeros(self.n * self.lags);
        for i in 0..self.n {
            state[i] = impact[i];
        }
        for h in 0..=h_max {
            for i in 0..self.n {
                values[(h, i)] = state[i];
            }
            if h < h_max {
                state = &c * state;
            }
        }
        Ok(IrfPath {
            h_max,
            values,
            shock,
            lower: None,
            upper: None,
            level: None,
        })
    }
}

/// Assemble the companion matrix from stacked slope coefficients.
pub fn companion_from_pi(pi: &DMatrix<f64>, n: usize, lags: usize) -> DMatrix<f64> {
    let dim = n * lags;
    let mut c = DMatrix::zeros(dim, dim);
    c.view_mut((0, 0), (n, dim)).copy_from(pi);
    for i in 0..n * (lags - 1) {
        c[(n + i, i)] = 1.0;
    }
    c
}

/// Impulse response path for one shock, with optional pointwise bands.
#[derive(Debug, Clone, Serialize)]
pub struct IrfPath {
    pub h_max: usize,
    /// `(h_max + 1) x n`; row h holds the responses of all variables.
    #[serde(serialize_with = "crate::var::serialize_matrix")]
    pub values: DMatrix<f64>,
    pub shock: usize,
    #[serde(serialize_with = "crate::var::serialize_opt_matrix")]
    pub lower: Option<DMatrix<f64>>,
    #[serde(serialize_with = "crate::var::serialize_opt_matrix")]
    pub upper: Option<DMatrix<f64>>,
    pub level: Option<f64>,
}

pub(crate) fn serialize_matrix<S>(m: &DMatrix<f64>, ser: S) -> std::result::Result<S::Ok, S::Error>
where
    S: serde::Serializer,
{
    // row-major nested arrays, stable across platforms
    let rows: Vec<Vec<f64>> = (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect();
    rows.serialize(ser)
}

pub(crate) fn serialize_opt_matrix<S>(
    m: &Option<DMatrix<f64>>,
    ser: S,
) -> std::result::Result<S::Ok, S::Error>
where
    S: serde::Serializer,
{
    match m {
        Some(m) => {
            let rows: Vec<Vec<f64>> = (0..m.nrows())
                .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
                .collect();
            ser.serialize_some(&rows)
        }
        None => ser.serialize_none(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp;

    /// Deterministic path with zero innovations; the slope has complex
    /// eigenvalues so the regressor span stays two-dimensional.
    fn spiral_pi() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.6, -0.5, 0.5, 0.6])
    }

    fn recursive_path(pi1: &DMatrix<f64>, t: usize) -> TimeSeriesDataset {
        let n = pi1.nrows();
        let mut y = DMatrix::zeros(t, n);
        for c in 0..n {
            y[(0, c)] = 1.0 + c as f64;
        }
        for t_i in 1..t {
            let prev = y.row(t_i - 1).transpose();
            let cur = pi1 * prev;
            for c in 0..n {
                y[(t_i, c)] = cur[c];
            }
        }
        TimeSeriesDataset::new(y, None, None).unwrap()
    }

    #[test]
    fn zero_residual_identity() {
        let pi1 = spiral_pi();
        let data = recursive_path(&pi1, 40);
        let fit = VarFit::fit(&data, 1, false).unwrap();
        assert!(linalg::max_abs(&(&fit.pi - &pi1)) < 1e-8);
        assert!(linalg::max_abs(&fit.sigma_u) < 1e-16);
    }

    #[test]
    fn white_noise_slopes_vanish() {
        let data = dgp::sample_iid_gaussian(3, 10_000, 7);
        let fit = VarFit::fit(&data, 1, false).unwrap();
        let bound = 4.0 / (10_000f64).sqrt();
        assert!(linalg::max_abs(&fit.pi) < bound, "max |Pi| = {}", linalg::max_abs(&fit.pi));
    }

    #[test]
    fn s8_slope_recovered_on_long_path() {
        let spec = dgp::DgpSpec::s8_strong(50_000);
        let data = dgp::simulate(&spec, 28).unwrap();
        let fit = VarFit::fit(&data, 1, false).unwrap();
        let gap = linalg::max_abs(&(&fit.pi - &dgp::s8_pi1()));
        assert!(gap < 0.02, "slope error {gap}");
    }

    #[test]
    fn companion_one_lag_is_pi() {
        let pi1 = spiral_pi();
        let c = companion_from_pi(&pi1, 2, 1);
        assert_eq!(c, pi1);
    }

    #[test]
    fn companion_zero_two_lags_nilpotent() {
        let pi = DMatrix::zeros(2, 4);
        let c = companion_from_pi(&pi, 2, 2);
        assert!(linalg::spectral_radius(&c) < 1e-12);
    }

    #[test]
    fn s8_spectral_radius() {
        let c = companion_from_pi(&dgp::s8_pi1(), 3, 1);
        let rho = linalg::spectral_radius(&c);
        assert!((rho - 0.86).abs() < 0.005, "spectral radius {rho}");
        assert!(rho < 1.0 - 1e-10);
    }

    #[test]
    fn ols_normal_equations() {
        let data = dgp::sample_iid_gaussian(3, 500, 3);
        let fit = VarFit::fit(&data, 2, true).unwrap();
        // regressor-residual cross moments vanish at the optimum
        let n = 3;
        let t_eff = fit.t_eff();
        let mut cross: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for row in 0..t_eff {
            let t = fit.resid_offset + row;
            for lag in 1..=2usize {
                for c in 0..n {
                    for e in 0..n {
                        cross = cross.max(
                            (data.y[(t - lag, c)] * fit.residuals[(row, e)]).abs() / t_eff as f64,
                        );
                    }
                    scale = scale.max(data.y[(t - lag, c)].abs());
                }
            }
        }
        // intercept: residual means are zero
        for c in 0..n {
            assert!(fit.residuals.column(c).mean().abs() < 1e-10);
        }
        let _ = cross;
        let mut xr = DMatrix::zeros(2 * n + 1, n);
        for row in 0..t_eff {
            let t = fit.resid_offset + row;
            for lag in 1..=2usize {
                for c in 0..n {
                    for e in 0..n {
                        xr[((lag - 1) * n + c, e)] +=
                            data.y[(t - lag, c)] * fit.residuals[(row, e)];
                    }
                }
            }
            for e in 0..n {
                xr[(2 * n, e)] += fit.residuals[(row, e)];
            }
        }
        assert!(linalg::max_abs(&xr) / (t_eff as f64 * scale.max(1.0)) < 1e-8);
    }

    #[test]
    fn irf_impact_and_propagation() {
        let pi1 = spiral_pi();
        let data = recursive_path(&pi1, 60);
        let mut fit = VarFit::fit(&data, 1, false).unwrap();
        let b1 = DMatrix::from_column_slice(2, 1, &[1.0, -2.0]);

        let irf = fit.irf(&b1, 0, 4).unwrap();
        assert_eq!(irf.values[(0, 0)], 1.0);
        assert_eq!(irf.values[(0, 1)], -2.0);

        // closed-form power and recursion agree
        let c = fit.companion();
        let mut pow = DMatrix::identity(2, 2);
        for h in 0..=4usize {
            let expect = &pow * b1.column(0);
            for i in 0..2 {
                assert!((irf.values[(h, i)] - expect[i]).abs() < 1e-10);
            }
            pow = &c * pow;
        }

        // no propagation without dynamics
        fit.pi.fill(0.0);
        let irf0 = fit.irf(&b1, 0, 3).unwrap();
        for h in 1..=3usize {
            for i in 0..2 {
                assert_eq!(irf0.values[(h, i)], 0.0);
            }
        }
    }

    #[test]
    fn s8_irf_horizon_one() {
        // one-step response is Pi1 * B_{.1}
        let pi1 = dgp::s8_pi1();
        let b1 = dgp::s8_b().column(0).into_owned();
        let expect = &pi1 * &b1;
        let expected = [0.1133, 0.0975, 0.0415];
        for i in 0..3 {
            assert!((expect[i] - expected[i]).abs() < 5e-4, "{} vs {}", expect[i], expected[i]);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let pi1 = spiral_pi();
        let data = recursive_path(&pi1, 60);
        let fit = VarFit::fit(&data, 1, false).unwrap();
        let b1 = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        assert!(fit.irf(&b1, 0, 2).is_err());
    }

    #[test]
    fn insufficient_sample_rejected() {
        let pi1 = spiral_pi();
        let data = recursive_path(&pi1, 10);
        assert!(matches!(
            VarFit::fit(&data, 2, false),
            Err(Error::InsufficientSample(_))
        ));
    }
}
