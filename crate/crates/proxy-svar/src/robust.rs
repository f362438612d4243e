//! Weak-instrument-robust confidence sets for impulse responses by grid
//! inversion of a Wald test on the discrepancy between reduced-form
//! response moments and postulated responses, with projection intervals
//! and the highest-p-value point estimate.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::linalg;
use crate::var::companion_from_pi;

/// Reduced-form ingredients of the test inversion:
/// `kappa = (vec(Pi)', vec(Sigma_uz)')'`.
#[derive(Debug, Clone)]
pub struct ReducedFormKappa {
    pub pi: DMatrix<f64>,
    pub sigma_uz: DMatrix<f64>,
    pub n: usize,
    pub lags: usize,
}

impl ReducedFormKappa {
    pub fn new(pi: DMatrix<f64>, sigma_uz: DMatrix<f64>) -> Result<Self> {
        let n = pi.nrows();
        if pi.ncols() % n != 0 {
            return Err(Error::Dimension("slope matrix must be n x (n*lags)".into()));
        }
        if sigma_uz.nrows() != n {
            return Err(Error::Dimension("cross moments must have n rows".into()));
        }
        let lags = pi.ncols() / n;
        Ok(ReducedFormKappa {
            pi,
            sigma_uz,
            n,
            lags,
        })
    }

    pub fn dim(&self) -> usize {
        self.pi.len() + self.sigma_uz.len()
    }

    pub fn r(&self) -> usize {
        self.sigma_uz.ncols()
    }
}

/// Plug-in relevance matrix (transposed): `Phi_p' = B11_0^-1 (I_k, 0) Sigma_uz`.
///
/// Consistent for the true relevance matrix whenever the postulated block
/// `B11_0` holds, regardless of instrument strength.
pub fn plugin_phi_t(sigma_uz: &DMatrix<f64>, b11_0: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = b11_0.nrows();
    if b11_0.ncols() != k {
        return Err(Error::Dimension("B11_0 must be square".into()));
    }
    if sigma_uz.nrows() < k {
        return Err(Error::Dimension("cross moments have fewer rows than k".into()));
    }
    let b_inv = linalg::inverse(b11_0, "B11_0")?;
    Ok(b_inv * sigma_uz.rows(0, k))
}

/// Discrepancy vector whose zero is the null hypothesis that `beta` holds
/// the true horizon-`h` responses of variable `response_var` to the target
/// shocks:
///
/// `S = vec{ e' S_n C^h S_n' Sigma_uz - beta' Phi_p' }`.
pub fn s_statistic(
    kappa: &ReducedFormKappa,
    response_var: usize,
    beta: &DVector<f64>,
    b11_0: &DMatrix<f64>,
    h: usize,
) -> Result<DVector<f64>> {
    let k = b11_0.nrows();
    if beta.len() != k {
        return Err(Error::Dimension(format!(
            "beta has {} entries, expected {k}",
            beta.len()
        )));
    }
    if response_var >= kappa.n {
        return Err(Error::Dimension("response variable out of range".into()));
    }
    let phi_t = plugin_phi_t(&kappa.sigma_uz, b11_0)?;
    let e_row = response_row(kappa, response_var, h);
    let lhs = &e_row * &kappa.sigma_uz; // 1 x r
    let rhs = beta.transpose() * phi_t; // 1 x r
    Ok((lhs - rhs).transpose())
}

/// `e' S_n C^h S_n'` as a 1 x n row.
fn response_row(kappa: &ReducedFormKappa, response_var: usize, h: usize) -> DMatrix<f64> {
    let n = kappa.n;
    let dim = n * kappa.lags;
    let c = companion_from_pi(&kappa.pi, n, kappa.lags);
    let mut state = DMatrix::zeros(1, dim);
    state[(0, response_var)] = 1.0;
    for _ in 0..h {
        state = &state * &c;
    }
    state.columns(0, n).into_owned()
}

/// Analytic Jacobian of [`s_statistic`] in `kappa`.
fn s_jacobian(
    kappa: &ReducedFormKappa,
    response_var: usize,
    beta: &DVector<f64>,
    b11_0: &DMatrix<f64>,
    h: usize,
) -> Result<DMatrix<f64>> {
    let n = kappa.n;
    let l = kappa.lags;
    let r = kappa.r();
    let k = b11_0.nrows();
    let dim_pi = n * n * l;
    let mut jac = DMatrix::zeros(r, dim_pi + n * r);

    // derivative in vec(Pi) through the companion powers
    if h > 0 {
        let c = companion_from_pi(&kappa.pi, n, l);
        let nl = n * l;
        let mut pows: Vec<DMatrix<f64>> = Vec::with_capacity(h);
        pows.push(DMatrix::identity(nl, nl));
        for _ in 1..h {
            pows.push(&c * pows.last().unwrap());
        }
        let mut e = DMatrix::zeros(1, nl);
        e[(0, response_var)] = 1.0;
        let mut sel_t = DMatrix::zeros(nl, n);
        for i in 0..n {
            sel_t[(i, i)] = 1.0;
        }
        let right_base = &sel_t * &kappa.sigma_uz; // nl x r
        for j in 0..h {
            let left = &e * &pows[j]; // 1 x nl
            let right = &pows[h - 1 - j] * &right_base; // nl x r
            // vec(L dC R) = (R' (x) L) vec(dC); map vec(dC) -> vec(dPi)
            for col_pi in 0..n * l {
                for row_pi in 0..n {
                    let idx = col_pi * n + row_pi;
                    for a in 0..r {
                        jac[(a, idx)] += right[(col_pi, a)] * left[(0, row_pi)];
                    }
                }
            }
        }
    }

    // derivative in vec(Sigma_uz): S = vec{(e_row - q') Sigma_uz}
    let e_row = response_row(kappa, response_var, h); // 1 x n
    let b_inv = linalg::inverse(b11_0, "B11_0")?;
    let q = beta.transpose() * b_inv; // 1 x k
    let mut diff = e_row.clone();
    for j in 0..k {
        diff[(0, j)] -= q[(0, j)];
    }
    for a in 0..r {
        for i in 0..n {
            jac[(a, dim_pi + a * n + i)] = diff[(0, i)];
        }
    }
    Ok(jac)
}

/// Wald statistic `T S' V_S^-1 S` for one postulated response vector.
pub fn wald_statistic(
    kappa: &ReducedFormKappa,
    v_kappa: &DMatrix<f64>,
    t: usize,
    response_var: usize,
    beta: &DVector<f64>,
    b11_0: &DMatrix<f64>,
    h: usize,
) -> Result<f64> {
    let s = s_statistic(kappa, response_var, beta, b11_0, h)?;
    let jac = s_jacobian(kappa, response_var, beta, b11_0, h)?;
    let v_s = &jac * v_kappa * jac.transpose();
    let v_s_inv = linalg::inverse(&v_s, "V_S")?;
    Ok(t as f64 * (s.transpose() * v_s_inv * s)[(0, 0)])
}

/// Per-coordinate grid specification.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn values(&self) -> Vec<f64> {
        if self.points <= 1 {
            return vec![self.min];
        }
        let step = (self.max - self.min) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.min + step * i as f64).collect()
    }

    /// Point estimate plus/minus a multiple of its standard error.
    pub fn around(center: f64, se: f64, half_width_se: f64, points: usize) -> GridSpec {
        let half = half_width_se * se.max(1e-12);
        GridSpec {
            min: center - half,
            max: center + half,
            points,
        }
    }
}

/// Inverted confidence set for the responses at one horizon.
#[derive(Debug, Clone)]
pub struct RobustSet {
    pub h: usize,
    pub level: f64,
    pub b11_0: DMatrix<f64>,
    /// Evaluated grid points (each of length k).
    pub grid: Vec<DVector<f64>>,
    pub wald: Vec<f64>,
    pub accepted: Vec<bool>,
    /// Grid points where `V_S` was singular.
    pub skipped: Vec<usize>,
    /// Per-coordinate span of the accepted points, when any.
    pub projection: Vec<Option<(f64, f64)>>,
    /// The accepted (or overall) point with the smallest Wald statistic.
    pub point: DVector<f64>,
    /// p-value at that point.
    pub point_p_value: f64,
    pub is_empty: bool,
}

impl RobustSet {
    /// True when `beta` lies within the per-coordinate projection bounds.
    pub fn projection_contains(&self, beta: &DVector<f64>) -> bool {
        self.projection.iter().enumerate().all(|(i, p)| match p {
            Some((lo, hi)) => beta[i] >= *lo && beta[i] <= *hi,
            None => false,
        })
    }
}

/// Invert the Wald test over a product grid for horizons `0..=h_max`.
///
/// Grid points where `V_S` is singular are skipped and recorded. An empty
/// accepted set is reported as such (with the minimum-Wald point kept as a
/// diagnostic), not treated as an error.
pub fn invert_wald(
    kappa: &ReducedFormKappa,
    v_kappa: &DMatrix<f64>,
    t: usize,
    response_var: usize,
    b11_0: &DMatrix<f64>,
    grids: &[GridSpec],
    h_max: usize,
    level: f64,
) -> Result<Vec<RobustSet>> {
    let k = b11_0.nrows();
    if grids.len() != k {
        return Err(Error::Dimension(format!(
            "{} grid specs for {k} response coordinates",
            grids.len()
        )));
    }
    let axes: Vec<Vec<f64>> = grids.iter().map(|g| g.values()).collect();
    let points = product_grid(&axes);

    let chisq = ChiSquared::new(k as f64).expect("positive dof");
    let crit = chisq.inverse_cdf(level);

    (0..=h_max)
        .map(|h| {
            let evals: Vec<Option<f64>> = points
                .par_iter()
                .map(|beta| {
                    wald_statistic(kappa, v_kappa, t, response_var, beta, b11_0, h).ok()
                })
                .collect();
            let mut wald = Vec::with_capacity(points.len());
            let mut accepted = Vec::with_capacity(points.len());
            let mut skipped = Vec::new();
            let mut best: Option<(usize, f64)> = None;
            for (i, e) in evals.iter().enumerate() {
                match e {
                    Some(v) => {
                        wald.push(*v);
                        accepted.push(*v <= crit);
                        if best.map_or(true, |(_, b)| *v < b) {
                            best = Some((i, *v));
                        }
                    }
                    None => {
                        wald.push(f64::NAN);
                        accepted.push(false);
                        skipped.push(i);
                    }
                }
            }
            let (best_idx, best_wald) = best.ok_or_else(|| {
                Error::Numerical("V_S was singular at every grid point".into())
            })?;
            let any_accepted = accepted.iter().any(|&a| a);
            let projection: Vec<Option<(f64, f64)>> = (0..k)
                .map(|c| {
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    for (i, p) in points.iter().enumerate() {
                        if accepted[i] {
                            lo = lo.min(p[c]);
                            hi = hi.max(p[c]);
                        }
                    }
                    if lo.is_finite() {
                        Some((lo, hi))
                    } else {
                        None
                    }
                })
                .collect();
            Ok(RobustSet {
                h,
                level,
                b11_0: b11_0.clone(),
                grid: points.clone(),
                wald,
                accepted,
                skipped,
                projection,
                point: points[best_idx].clone(),
                point_p_value: 1.0 - chisq.cdf(best_wald),
                is_empty: !any_accepted,
            })
        })
        .collect()
}

fn product_grid(axes: &[Vec<f64>]) -> Vec<DVector<f64>> {
    let k = axes.len();
    let mut points = vec![vec![0.0; k]];
    for (c, axis) in axes.iter().enumerate() {
        let mut next = Vec::with_capacity(points.len() * axis.len());
        for p in &points {
            for &v in axis {
                let mut q = p.clone();
                q[c] = v;
                next.push(q);
            }
        }
        points = next;
    }
    points.into_iter().map(DVector::from_vec).collect()
}

/// One row per `(h, grid point)` with the Wald statistic and the decision.
pub fn write_csv(sets: &[RobustSet], path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    let k = sets.first().map_or(0, |s| s.point.len());
    let mut header = vec!["h".to_string()];
    header.extend((0..k).map(|i| format!("beta{}", i + 1)));
    header.push("wald".into());
    header.push("accepted".into());
    wtr.write_record(&header)?;
    for set in sets {
        for (i, p) in set.grid.iter().enumerate() {
            let mut row = vec![set.h.to_string()];
            row.extend(p.iter().map(|v| format!("{v:.17e}")));
            row.push(format!("{:.17e}", set.wald[i]));
            row.push(if set.accepted[i] { "1".into() } else { "0".to_string() });
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp;
    use crate::numdiff;

    fn population_kappa() -> (ReducedFormKappa, DMatrix<f64>) {
        // population values of the benchmark design with a weak z proxy
        let pi = dgp::s8_pi1();
        let phi = 0.045; // relevance of z for the target shock
        let sigma_uz = DMatrix::from_column_slice(
            3,
            1,
            (dgp::s8_b1() * phi).as_slice(),
        );
        let kappa = ReducedFormKappa::new(pi, sigma_uz).unwrap();
        let v = DMatrix::identity(kappa.dim(), kappa.dim());
        (kappa, v)
    }

    #[test]
    fn plugin_phi_identity_block() {
        let sigma_uz = DMatrix::from_row_slice(3, 1, &[0.5, 0.2, -0.1]);
        let phi_t = plugin_phi_t(&sigma_uz, &DMatrix::identity(1, 1)).unwrap();
        assert_eq!(phi_t[(0, 0)], 0.5);
    }

    #[test]
    fn plugin_phi_scalar_division() {
        let sigma_uz = DMatrix::from_row_slice(3, 1, &[0.5, 0.2, -0.1]);
        let b0 = DMatrix::from_element(1, 1, 0.25);
        let phi_t = plugin_phi_t(&sigma_uz, &b0).unwrap();
        assert!((phi_t[(0, 0)] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn plugin_phi_population_identity() {
        // with Sigma_uz = B1 phi' and the true B11, the plug-in recovers phi
        let (kappa, _) = population_kappa();
        let b0 = DMatrix::from_element(1, 1, 0.196);
        let phi_t = plugin_phi_t(&kappa.sigma_uz, &b0).unwrap();
        assert!((phi_t[(0, 0)] - 0.045).abs() < 1e-12);
    }

    #[test]
    fn s_vanishes_at_implied_responses() {
        let (kappa, _) = population_kappa();
        let b0 = DMatrix::from_element(1, 1, 0.196);
        for h in 0..5 {
            // true response of variable 3 to the target shock
            let irf = response_row(&kappa, 2, h) * dgp::s8_b1();
            let beta = DVector::from_vec(vec![irf[(0, 0)]]);
            let s = s_statistic(&kappa, 2, &beta, &b0, h).unwrap();
            assert!(s.amax() < 1e-12, "h={h}: S = {}", s.amax());
        }
    }

    #[test]
    fn s_reads_off_formula_at_impact() {
        let (kappa, _) = population_kappa();
        let b0 = DMatrix::identity(1, 1);
        let beta = DVector::from_vec(vec![2.0]);
        let s = s_statistic(&kappa, 2, &beta, &b0, 0).unwrap();
        let expect = kappa.sigma_uz[(2, 0)] - 2.0 * kappa.sigma_uz[(0, 0)];
        assert!((s[0] - expect).abs() < 1e-14);
    }

    #[test]
    fn s_jacobian_matches_finite_differences() {
        let (kappa, _) = population_kappa();
        let b0 = DMatrix::from_element(1, 1, 0.196);
        let beta = DVector::from_vec(vec![0.05]);
        for h in [0usize, 1, 3] {
            let jac = s_jacobian(&kappa, 2, &beta, &b0, h).unwrap();
            let x0 = {
                let mut v = DVector::zeros(kappa.dim());
                v.rows_mut(0, 9)
                    .copy_from(&DVector::from_column_slice(kappa.pi.as_slice()));
                v.rows_mut(9, 3)
                    .copy_from(&DVector::from_column_slice(kappa.sigma_uz.as_slice()));
                v
            };
            let fd = numdiff::central_jacobian(
                |v| {
                    let pi = DMatrix::from_column_slice(3, 3, v.rows(0, 9).as_slice());
                    let suz = DMatrix::from_column_slice(3, 1, v.rows(9, 3).as_slice());
                    let kk = ReducedFormKappa::new(pi, suz).unwrap();
                    s_statistic(&kk, 2, &beta, &b0, h).unwrap()
                },
                &x0,
                1e-6,
            );
            let gap = numdiff::relative_gap(&jac, &fd);
            assert!(gap < 1e-5, "h={h}: gap {gap}");
        }
    }

    #[test]
    fn acceptance_region_shrinks_with_level() {
        let (kappa, v) = population_kappa();
        let b0 = DMatrix::from_element(1, 1, 0.196);
        let grid = [GridSpec {
            min: -1.0,
            max: 1.0,
            points: 201,
        }];
        let tight = invert_wald(&kappa, &v, 250, 2, &b0, &grid, 0, 0.5).unwrap();
        let wide = invert_wald(&kappa, &v, 250, 2, &b0, &grid, 0, 0.99).unwrap();
        let n_tight = tight[0].accepted.iter().filter(|&&a| a).count();
        let n_wide = wide[0].accepted.iter().filter(|&&a| a).count();
        assert!(n_tight <= n_wide);
        // the minimum-Wald point sits at the implied response
        let irf = response_row(&kappa, 2, 0) * dgp::s8_b1();
        assert!((tight[0].point[0] - irf[(0, 0)]).abs() < 0.011);
        assert!(!tight[0].is_empty);
        // at the plug-in-consistent point the statistic is an exact zero,
        // so it stays accepted at any positive critical value
        let beta_true = DVector::from_vec(vec![irf[(0, 0)]]);
        let w = wald_statistic(&kappa, &v, 250, 2, &beta_true, &b0, 0).unwrap();
        assert!(w < 1e-18, "wald at truth {w}");
    }

    #[test]
    fn projection_and_point_consistency() {
        let (kappa, v) = population_kappa();
        let b0 = DMatrix::from_element(1, 1, 0.196);
        let grid = [GridSpec {
            min: -0.5,
            max: 0.5,
            points: 101,
        }];
        let sets = invert_wald(&kappa, &v, 250, 2, &b0, &grid, 3, 0.9).unwrap();
        for set in &sets {
            if !set.is_empty {
                assert!(set.projection_contains(&set.point));
            }
        }
    }

    #[test]
    fn csv_export_shape() {
        let (kappa, v) = population_kappa();
        let b0 = DMatrix::from_element(1, 1, 0.196);
        let grid = [GridSpec {
            min: 0.0,
            max: 0.1,
            points: 5,
        }];
        let sets = invert_wald(&kappa, &v, 250, 2, &b0, &grid, 1, 0.9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("robust.csv");
        write_csv(&sets, &path).unwrap();
        let content = std::fs::read_to_string(&path).unwrap();
        assert_eq!(content.lines().count(), 1 + 2 * 5);
    }
}
