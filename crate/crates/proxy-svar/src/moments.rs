//! Reduced-form proxy moments: innovation covariance, proxy cross-moments,
//! their stacked vectors, and the Jacobian linking the two stackings.
//!
//! Stacking contract (fixed across the crate):
//! * `sigma_plus = (vech(Sigma_u)', vec(Sigma_uw)')'` with `Sigma_uw` of
//!   size n x s stacked column by column;
//! * `mu = (vech(Omega_w)', vec(Sigma_wu)')'` with `Sigma_wu = Sigma_uw'`
//!   of size s x n stacked column by column.

use nalgebra::{DMatrix, DVector};

use crate::dataset::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::linalg::{
    self, commutation, duplication, duplication_pinv, unvech, vech, vech_index,
};
use crate::var::VarFit;

/// Which proxy block of the dataset feeds the moment conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProxySide {
    /// Proxies for non-target shocks (`w`, the indirect route).
    W,
    /// Proxies for target shocks (`z`, the direct route).
    Z,
}

/// Sample cross-moments between VAR innovations and proxies.
#[derive(Debug, Clone)]
pub struct ProxyMoments {
    pub n: usize,
    pub s: usize,
    /// Effective observations behind `sigma_u`.
    pub t_u: usize,
    /// Aligned (residual, proxy) pairs behind the cross moments.
    pub t_w: usize,
    pub sigma_u: DMatrix<f64>,
    /// n x s cross-covariance between innovations and proxies.
    pub sigma_uw: DMatrix<f64>,
    /// Proxy second moment, s x s (used by the stacked-system covariance).
    pub sigma_w: DMatrix<f64>,
    /// `Omega_w = Sigma_wu Sigma_u^-1 Sigma_uw`, s x s.
    pub omega_w: DMatrix<f64>,
    /// Covariance of `sqrt(T) sigma_plus_hat`, when estimated.
    pub v_sigma_plus: Option<DMatrix<f64>>,
}

impl ProxyMoments {
    pub fn sigma_wu(&self) -> DMatrix<f64> {
        self.sigma_uw.transpose()
    }

    /// `(vech(Sigma_u)', vec(Sigma_uw)')'`.
    pub fn sigma_plus(&self) -> DVector<f64> {
        stack_sigma_plus(&self.sigma_u, &self.sigma_uw)
    }

    /// `(vech(Omega_w)', vec(Sigma_wu)')'`.
    pub fn mu(&self) -> DVector<f64> {
        let mut out = DVector::zeros(mu_len(self.n, self.s));
        out.rows_mut(0, self.s * (self.s + 1) / 2)
            .copy_from(&vech(&self.omega_w));
        let wu = self.sigma_wu();
        out.rows_mut(self.s * (self.s + 1) / 2, self.n * self.s)
            .copy_from(&DVector::from_column_slice(wu.as_slice()));
        out
    }

    /// `V_mu = J_sigma V_sigma_plus J_sigma'`.
    pub fn v_mu(&self) -> Result<DMatrix<f64>> {
        let v_sp = self.v_sigma_plus.as_ref().ok_or_else(|| {
            Error::Invalid("V_sigma_plus has not been estimated".into())
        })?;
        let j = jacobian_j_sigma(&self.sigma_u, &self.sigma_uw)?;
        Ok(&j * v_sp * j.transpose())
    }
}

pub fn sigma_plus_len(n: usize, s: usize) -> usize {
    n * (n + 1) / 2 + n * s
}

pub fn mu_len(n: usize, s: usize) -> usize {
    s * (s + 1) / 2 + n * s
}

/// Stack `(vech(Sigma_u)', vec(Sigma_uw)')'`.
pub fn stack_sigma_plus(sigma_u: &DMatrix<f64>, sigma_uw: &DMatrix<f64>) -> DVector<f64> {
    let n = sigma_u.nrows();
    let s = sigma_uw.ncols();
    let mut out = DVector::zeros(sigma_plus_len(n, s));
    out.rows_mut(0, n * (n + 1) / 2).copy_from(&vech(sigma_u));
    out.rows_mut(n * (n + 1) / 2, n * s)
        .copy_from(&DVector::from_column_slice(sigma_uw.as_slice()));
    out
}

/// Split a stacked `sigma_plus` back into `(Sigma_u, Sigma_uw)`.
pub fn unstack_sigma_plus(sp: &DVector<f64>, n: usize, s: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let sigma_u = unvech(&sp.rows(0, n * (n + 1) / 2).into_owned(), n);
    let sigma_uw = DMatrix::from_column_slice(
        n,
        s,
        sp.rows(n * (n + 1) / 2, n * s).into_owned().as_slice(),
    );
    (sigma_u, sigma_uw)
}

/// The smooth map `sigma_plus -> mu` whose Jacobian is [`jacobian_j_sigma`].
pub fn mu_from_sigma_plus(sp: &DVector<f64>, n: usize, s: usize) -> Result<DVector<f64>> {
    let (sigma_u, sigma_uw) = unstack_sigma_plus(sp, n, s);
    let sigma_u_inv = linalg::inverse(&sigma_u, "Sigma_u")?;
    let omega = sigma_uw.transpose() * &sigma_u_inv * &sigma_uw;
    let wu = sigma_uw.transpose();
    let mut out = DVector::zeros(mu_len(n, s));
    out.rows_mut(0, s * (s + 1) / 2).copy_from(&vech(&omega));
    out.rows_mut(s * (s + 1) / 2, n * s)
        .copy_from(&DVector::from_column_slice(wu.as_slice()));
    Ok(out)
}

/// Sample moments of VAR innovations and proxies on their windows.
///
/// `sigma_u` comes from the VAR fit (window_u); cross moments average the
/// aligned (residual, proxy) pairs inside the proxy window.
pub fn compute_moments(
    fit: &VarFit,
    data: &TimeSeriesDataset,
    side: ProxySide,
) -> Result<ProxyMoments> {
    let (proxies, window) = match side {
        ProxySide::W => (data.w.as_ref(), data.window_w.clone()),
        ProxySide::Z => (data.z.as_ref(), data.window_z.clone()),
    };
    let proxies = proxies.ok_or_else(|| {
        Error::Invalid(format!(
            "dataset has no {} proxies",
            if side == ProxySide::W { "w" } else { "z" }
        ))
    })?;
    let n = fit.n;
    let s = proxies.ncols();

    let start = window.start.max(fit.resid_offset);
    let end = window.end.min(fit.resid_offset + fit.t_eff());
    if start >= end {
        return Err(Error::InsufficientSample(
            "proxy window does not overlap the residual sample".into(),
        ));
    }
    let t_w = end - start;

    let mut sigma_uw = DMatrix::zeros(n, s);
    let mut sigma_w = DMatrix::zeros(s, s);
    for t in start..end {
        let u = fit.residuals.row(t - fit.resid_offset);
        let w = proxies.row(t);
        for i in 0..n {
            for j in 0..s {
                sigma_uw[(i, j)] += u[i] * w[j];
            }
        }
        for i in 0..s {
            for j in 0..s {
                sigma_w[(i, j)] += w[i] * w[j];
            }
        }
    }
    sigma_uw /= t_w as f64;
    sigma_w /= t_w as f64;

    let sigma_u_inv = linalg::inverse(&fit.sigma_u, "Sigma_u")?;
    let omega_w = sigma_uw.transpose() * &sigma_u_inv * &sigma_uw;

    Ok(ProxyMoments {
        n,
        s,
        t_u: fit.t_eff(),
        t_w,
        sigma_u: fit.sigma_u.clone(),
        sigma_uw,
        sigma_w,
        omega_w,
        v_sigma_plus: None,
    })
}

/// Jacobian of the `sigma_plus -> mu` map, `o x dim(sigma_plus)`.
///
/// With `P = Sigma_wu Sigma_u^-1` and `K` the commutation matrix mapping
/// `vec(Sigma_uw)` to `vec(Sigma_wu)`:
///
/// ```text
/// J = [ -D_s^+ (P (x) P) D_n    2 D_s^+ (P (x) I_s) K ]
///     [ 0                       K                     ]
/// ```
pub fn jacobian_j_sigma(sigma_u: &DMatrix<f64>, sigma_uw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = sigma_u.nrows();
    let s = sigma_uw.ncols();
    let sigma_u_inv = linalg::inverse(sigma_u, "Sigma_u")?;
    let p = sigma_uw.transpose() * sigma_u_inv; // s x n
    let dsp = duplication_pinv(s);
    let dn = duplication(n);
    let k = commutation(n, s);

    let o1 = s * (s + 1) / 2;
    let o2 = n * s;
    let m1 = n * (n + 1) / 2;
    let mut j = DMatrix::zeros(o1 + o2, m1 + o2);

    let top_left = -(&dsp) * p.kronecker(&p) * &dn;
    j.view_mut((0, 0), (o1, m1)).copy_from(&top_left);
    let top_right = 2.0 * &dsp * p.kronecker(&DMatrix::identity(s, s)) * &k;
    j.view_mut((0, m1), (o1, o2)).copy_from(&top_right);
    j.view_mut((o1, m1), (o2, o2)).copy_from(&k);
    Ok(j)
}

/// Number of rows of [`jacobian_j_sigma`] (`o = s(s+1)/2 + ns`).
pub fn j_sigma_rows(n: usize, s: usize) -> usize {
    mu_len(n, s)
}

/// Covariance of `sqrt(T) vech(Sigma_eta_hat)` under conditionally
/// homoskedastic innovations: `2 D^+ (Sigma_eta (x) Sigma_eta) D^+'`.
pub fn v_eta_analytic(sigma_eta: &DMatrix<f64>) -> DMatrix<f64> {
    let q = sigma_eta.nrows();
    let dp = duplication_pinv(q);
    2.0 * &dp * sigma_eta.kronecker(sigma_eta) * dp.transpose()
}

/// Selection matrix mapping `vech(Sigma_eta)` onto `sigma_plus`, where
/// `eta = (u', w')'` stacks innovations and proxies.
pub fn sigma_plus_selection(n: usize, s: usize) -> DMatrix<f64> {
    let q = n + s;
    let mut m = DMatrix::zeros(sigma_plus_len(n, s), q * (q + 1) / 2);
    let mut row = 0;
    for j in 0..n {
        for i in j..n {
            m[(row, vech_index(i, j, q))] = 1.0;
            row += 1;
        }
    }
    for a in 0..s {
        for i in 0..n {
            m[(row, vech_index(n + a, i, q))] = 1.0;
            row += 1;
        }
    }
    m
}

/// Analytic `V_sigma_plus` for the conditionally homoskedastic i.i.d. case.
pub fn v_sigma_plus_analytic(moments: &ProxyMoments) -> DMatrix<f64> {
    let n = moments.n;
    let s = moments.s;
    let q = n + s;
    let mut sigma_eta = DMatrix::zeros(q, q);
    sigma_eta.view_mut((0, 0), (n, n)).copy_from(&moments.sigma_u);
    sigma_eta.view_mut((0, n), (n, s)).copy_from(&moments.sigma_uw);
    sigma_eta
        .view_mut((n, 0), (s, n))
        .copy_from(&moments.sigma_uw.transpose());
    sigma_eta.view_mut((n, n), (s, s)).copy_from(&moments.sigma_w);
    let sel = sigma_plus_selection(n, s);
    &sel * v_eta_analytic(&sigma_eta) * sel.transpose()
}

/// Residuals of the projection of a raw proxy on an intercept, its own lags,
/// and optional pre-aligned covariates.
///
/// Row `t` of `covariates` must hold the information dated `t-1` or earlier
/// that should be partialled out of `raw[t]`. The output has length
/// `raw.len() - own_lags` and mean zero.
pub fn prewhiten_proxy(
    raw: &DVector<f64>,
    own_lags: usize,
    covariates: Option<&DMatrix<f64>>,
) -> Result<DVector<f64>> {
    let t = raw.len();
    if let Some(c) = covariates {
        if c.nrows() != t {
            return Err(Error::Dimension(
                "covariate rows must align with the raw proxy".into(),
            ));
        }
    }
    let k_cov = covariates.map_or(0, |c| c.ncols());
    let p = 1 + own_lags + k_cov;
    let t_eff = t.saturating_sub(own_lags);
    if t_eff < p + 5 {
        return Err(Error::InsufficientSample(format!(
            "prewhitening needs at least {} observations, got {t_eff}",
            p + 5
        )));
    }
    let mut x = DMatrix::zeros(t_eff, p);
    let mut y = DVector::zeros(t_eff);
    for (row, ti) in (own_lags..t).enumerate() {
        x[(row, 0)] = 1.0;
        for lag in 1..=own_lags {
            x[(row, lag)] = raw[ti - lag];
        }
        if let Some(c) = covariates {
            for j in 0..k_cov {
                x[(row, 1 + own_lags + j)] = c[(ti, j)];
            }
        }
        y[row] = raw[ti];
    }
    let xtx = x.transpose() * &x;
    let xtx_inv = linalg::inverse(&xtx, "prewhitening cross-product").map_err(|_| {
        Error::Singular("prewhitening regressors are collinear (constant proxy?)".into())
    })?;
    let beta = &xtx_inv * x.transpose() * &y;
    Ok(&y - &x * beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp;
    use crate::numdiff;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn s8_moments(t: usize, seed: u64) -> (VarFit, ProxyMoments) {
        let data = dgp::simulate(&dgp::DgpSpec::s8_strong(t), seed).unwrap();
        let fit = VarFit::fit(&data, 1, false).unwrap();
        let m = compute_moments(&fit, &data, ProxySide::W).unwrap();
        (fit, m)
    }

    #[test]
    fn orthogonal_proxy_has_zero_cross_moments() {
        // w independent of everything: population Sigma_uw = 0, Omega_w = 0
        let mut data = dgp::sample_iid_gaussian(3, 5_000, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        data.w = Some(DMatrix::from_fn(data.t_rows(), 1, |_, _| {
            StandardNormal.sample(&mut rng)
        }));
        data.window_w = 0..data.t_rows();
        let fit = VarFit::fit(&data, 1, false).unwrap();
        let m = compute_moments(&fit, &data, ProxySide::W).unwrap();
        assert!(linalg::max_abs(&m.sigma_uw) < 4.0 / (5000f64).sqrt());
        assert!(m.omega_w[(0, 0)] < 0.005);
    }

    #[test]
    fn s8_population_cross_moments() {
        // Sigma_uw = B_col3 * lambda = 0.8*(0.19, -0.32, 0.09)'; Omega_w = 0.64
        let (_, m) = s8_moments(50_000, 21);
        let expect = [0.152, -0.256, 0.072];
        for i in 0..3 {
            assert!(
                (m.sigma_uw[(i, 0)] - expect[i]).abs() < 0.01,
                "sigma_uw[{i}] = {}",
                m.sigma_uw[(i, 0)]
            );
        }
        assert!((m.omega_w[(0, 0)] - 0.64).abs() < 0.01);
    }

    #[test]
    fn proxy_equal_to_residual_projection_identity() {
        // w identical to one residual column: Omega_w equals its variance
        let data = dgp::sample_iid_gaussian(3, 2_000, 17);
        let fit = VarFit::fit(&data, 1, false).unwrap();
        let mut w = DMatrix::from_element(data.t_rows(), 1, f64::NAN);
        for r in 0..fit.t_eff() {
            w[(fit.resid_offset + r, 0)] = fit.residuals[(r, 1)];
        }
        let mut data = data;
        data.w = Some(w);
        data.window_w = fit.resid_offset..data.t_rows();
        let m = compute_moments(&fit, &data, ProxySide::W).unwrap();
        let var_u2 = fit.sigma_u[(1, 1)];
        assert!((m.omega_w[(0, 0)] - var_u2).abs() / var_u2 < 1e-8);
    }

    #[test]
    fn mu_recomputable_from_sigma_plus() {
        let (_, m) = s8_moments(2_000, 3);
        let mu = mu_from_sigma_plus(&m.sigma_plus(), m.n, m.s).unwrap();
        assert!((mu - m.mu()).amax() < 1e-10);
    }

    #[test]
    fn j_sigma_zero_cross_moment_structure() {
        // Sigma_wu = 0: upper blocks vanish, lower-right is the commutation
        // (identity for s = 1)
        let sigma_u = DMatrix::identity(3, 3) * 2.0;
        let sigma_uw = DMatrix::zeros(3, 1);
        let j = jacobian_j_sigma(&sigma_u, &sigma_uw).unwrap();
        assert_eq!(j.nrows(), 4);
        assert_eq!(j.ncols(), 9);
        assert!(j.view((0, 0), (1, 9)).amax() < 1e-14);
        let lower_right = j.view((1, 6), (3, 3)).into_owned();
        assert!(linalg::max_abs(&(lower_right - DMatrix::identity(3, 3))) < 1e-14);
    }

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| -> f64 { StandardNormal.sample(rng) });
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn j_sigma_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for s in [1usize, 2] {
            let n = 3;
            let sigma_u = random_spd(n, &mut rng);
            let sigma_uw = DMatrix::from_fn(n, s, |_, _| StandardNormal.sample(&mut rng));
            let j = jacobian_j_sigma(&sigma_u, &sigma_uw).unwrap();
            let sp = stack_sigma_plus(&sigma_u, &sigma_uw);
            let fd = numdiff::central_jacobian(
                |v| mu_from_sigma_plus(v, n, s).unwrap(),
                &sp,
                1e-6,
            );
            let gap = numdiff::relative_gap(&j, &fd);
            assert!(gap < 1e-5, "s={s}: relative gap {gap}");
        }
    }

    #[test]
    fn j_sigma_row_count_s1() {
        let sigma_u = DMatrix::identity(3, 3);
        let sigma_uw = DMatrix::from_column_slice(3, 1, &[0.1, 0.2, 0.3]);
        let j = jacobian_j_sigma(&sigma_u, &sigma_uw).unwrap();
        assert_eq!(j.nrows(), 1 + 3);
    }

    #[test]
    fn j_sigma_full_row_rank_on_strong_design() {
        let (_, m) = s8_moments(20_000, 31);
        let j = jacobian_j_sigma(&m.sigma_u, &m.sigma_uw).unwrap();
        let smin = linalg::min_singular_value(&j);
        assert!(smin > 0.01, "smallest singular value {smin}");
    }

    #[test]
    fn v_mu_is_psd() {
        let (_, mut m) = s8_moments(2_000, 12);
        m.v_sigma_plus = Some(v_sigma_plus_analytic(&m));
        let v_mu = m.v_mu().unwrap();
        let eig = ((&v_mu + v_mu.transpose()) * 0.5).symmetric_eigen();
        assert!(eig.eigenvalues.min() > -1e-10);
    }

    #[test]
    fn prewhiten_white_noise_preserves_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let raw = DVector::from_fn(10_000, |_, _| StandardNormal.sample(&mut rng));
        let out = prewhiten_proxy(&raw, 4, None).unwrap();
        let aligned = raw.rows(4, raw.len() - 4).into_owned();
        let corr = {
            let ma = aligned.mean();
            let mb = out.mean();
            let mut num = 0.0;
            let mut va = 0.0;
            let mut vb = 0.0;
            for i in 0..out.len() {
                num += (aligned[i] - ma) * (out[i] - mb);
                va += (aligned[i] - ma).powi(2);
                vb += (out[i] - mb).powi(2);
            }
            num / (va * vb).sqrt()
        };
        assert!(corr > 0.95, "corr = {corr}");
        assert!(out.mean().abs() < 1e-10);
    }

    #[test]
    fn prewhiten_deterministic_ar1_gives_zero() {
        let mut raw = DVector::zeros(200);
        raw[0] = 1.0;
        for t in 1..200 {
            raw[t] = 0.9 * raw[t - 1];
        }
        let out = prewhiten_proxy(&raw, 1, None).unwrap();
        assert!(out.amax() < 1e-10);
    }

    #[test]
    fn prewhiten_constant_series_errors() {
        let raw = DVector::from_element(100, 2.5);
        assert!(matches!(
            prewhiten_proxy(&raw, 2, None),
            Err(Error::Singular(_))
        ));
    }
}
