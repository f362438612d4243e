//! Indirect minimum-distance estimation of the target rows of `A = B^-1`
//! from the variance and proxy moment conditions, with rank diagnostics,
//! a dual parameterization in the impact columns, and delta-method bands
//! for impulse responses.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::{self, commutation, duplication, duplication_pinv, vech};
use crate::moments::{self, ProxyMoments};
use crate::optim::{self, GnOptions, Weight};
use crate::restrictions::{RestrictionSet, Target};
use crate::var::{IrfPath, VarFit};

/// Number of moment conditions for `k` target shocks and `s` proxies.
pub fn moment_count(k: usize, s: usize) -> usize {
    k * (k + 1) / 2 + k * s
}

/// Distance `g = (vech(A1 Su A1' - I)', vec(A1 Suw)')'`.
pub fn distance_g(
    sigma_u: &DMatrix<f64>,
    sigma_uw: &DMatrix<f64>,
    alpha: &DVector<f64>,
    restr: &RestrictionSet,
) -> Result<DVector<f64>> {
    let a1 = restr.realize(alpha)?;
    let k = a1.nrows();
    let s = sigma_uw.ncols();
    let var_block = &a1 * sigma_u * a1.transpose() - DMatrix::identity(k, k);
    let cross_block = &a1 * sigma_uw;
    let mut g = DVector::zeros(moment_count(k, s));
    g.rows_mut(0, k * (k + 1) / 2).copy_from(&vech(&var_block));
    g.rows_mut(k * (k + 1) / 2, k * s)
        .copy_from(&DVector::from_column_slice(cross_block.as_slice()));
    Ok(g)
}

/// Same distance evaluated on a stacked `sigma_plus` vector.
pub fn distance_g_stacked(
    sigma_plus: &DVector<f64>,
    n: usize,
    s: usize,
    alpha: &DVector<f64>,
    restr: &RestrictionSet,
) -> Result<DVector<f64>> {
    let (sigma_u, sigma_uw) = moments::unstack_sigma_plus(sigma_plus, n, s);
    distance_g(&sigma_u, &sigma_uw, alpha, restr)
}

/// Analytic Jacobian of [`distance_g`] in the free parameters:
/// `(2 D_k^+ (A1 Su (x) I_k) ; Swu (x) I_k) S`.
pub fn jacobian_g_alpha(
    sigma_u: &DMatrix<f64>,
    sigma_uw: &DMatrix<f64>,
    alpha: &DVector<f64>,
    restr: &RestrictionSet,
) -> Result<DMatrix<f64>> {
    let a1 = restr.realize(alpha)?;
    let k = a1.nrows();
    let s = sigma_uw.ncols();
    let dkp = duplication_pinv(k);
    let upper = 2.0 * &dkp * (&a1 * sigma_u).kronecker(&DMatrix::identity(k, k));
    let lower = sigma_uw.transpose().kronecker(&DMatrix::identity(k, k));
    let m = moment_count(k, s);
    let mut jac = DMatrix::zeros(m, a1.nrows() * a1.ncols());
    jac.view_mut((0, 0), (k * (k + 1) / 2, k * a1.ncols()))
        .copy_from(&upper);
    jac.view_mut((k * (k + 1) / 2, 0), (k * s, k * a1.ncols()))
        .copy_from(&lower);
    Ok(jac * &restr.s_mat)
}

/// Analytic Jacobian of [`distance_g`] in `sigma_plus`:
/// block-diagonal `(D_k^+ (A1 (x) A1) D_n, I_s (x) A1)`.
///
/// Full row rank whenever `A1` has rank k; does not depend on the moments.
pub fn jacobian_g_sigma(a1: &DMatrix<f64>, s: usize) -> DMatrix<f64> {
    let k = a1.nrows();
    let n = a1.ncols();
    let dkp = duplication_pinv(k);
    let dn = duplication(n);
    let upper = &dkp * a1.kronecker(a1) * &dn;
    let lower = DMatrix::identity(s, s).kronecker(a1);
    let m = moment_count(k, s);
    let cols = moments::sigma_plus_len(n, s);
    let mut jac = DMatrix::zeros(m, cols);
    jac.view_mut((0, 0), (k * (k + 1) / 2, n * (n + 1) / 2))
        .copy_from(&upper);
    jac.view_mut((k * (k + 1) / 2, n * (n + 1) / 2), (k * s, n * s))
        .copy_from(&lower);
    jac
}

/// How the second-step weight is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MdWeighting {
    /// One step with the identity weight. Under exact identification the
    /// minimizer does not depend on the weight, so this skips the
    /// covariance estimation entirely.
    Identity,
    /// Classical two-step: identity-weight solution first, then
    /// `V_gg = G_sigma V_sigma_plus G_sigma'` evaluated there.
    TwoStep,
}

#[derive(Debug, Clone)]
pub struct MdOptions {
    pub weighting: MdWeighting,
    pub gn: GnOptions,
    /// Replace the sample cross moments with a structure-constrained
    /// estimate (for instance one implied by a first-stage strength fit).
    pub sigma_uw_override: Option<DMatrix<f64>>,
}

impl Default for MdOptions {
    fn default() -> Self {
        MdOptions {
            weighting: MdWeighting::TwoStep,
            gn: GnOptions::default(),
            sigma_uw_override: None,
        }
    }
}

/// Threshold on the smallest singular value of the Jacobian below which the
/// rank condition is reported as failed.
pub const RANK_TOL: f64 = 1e-6;

/// Result of the indirect minimum-distance estimation.
#[derive(Debug, Clone)]
pub struct MdFit {
    /// Free structural parameters.
    pub alpha: DVector<f64>,
    /// Target rows of `A = B^-1`, k x n.
    pub a1: DMatrix<f64>,
    /// Implied impact columns `B1 = Su A1'`, n x k.
    pub b1: DMatrix<f64>,
    /// Finite-sample covariance of `alpha` (asymptotic covariance over T),
    /// with the two-step weight held at the preliminary estimate.
    pub v_alpha: Option<DMatrix<f64>>,
    /// Same, with the weight re-evaluated at the final estimate.
    pub v_alpha_reweighted: Option<DMatrix<f64>>,
    /// Minimized weighted distance.
    pub q_min: f64,
    /// Jacobian of the distance in the free parameters, at the optimum.
    pub g_alpha: DMatrix<f64>,
    /// Rank condition diagnostic: smallest singular value of `g_alpha`.
    pub min_singular_value: f64,
    pub rank_ok: bool,
    pub weighting: String,
    pub converged: bool,
    /// Sample size used for covariance scaling.
    pub t: usize,
}

fn order_condition(k: usize, s: usize, a: usize) -> Result<()> {
    let m = moment_count(k, s);
    if a > m {
        let hint = if k > 1 {
            format!(
                " (with k={k} target shocks at least {} additional restrictions are required)",
                k * (k - 1) / 2
            )
        } else {
            String::new()
        };
        return Err(Error::Identification(format!(
            "order condition fails: {a} free parameters exceed {m} moment conditions{hint}"
        )));
    }
    Ok(())
}

/// Cholesky-based starting point: the first k rows of `chol(Su)^-1`
/// satisfy the variance moment exactly; project onto the restriction.
fn initial_alpha(sigma_u: &DMatrix<f64>, restr: &RestrictionSet) -> Result<DVector<f64>> {
    let l = linalg::cholesky_lower(sigma_u, "Sigma_u")?;
    let l_inv = l
        .try_inverse()
        .ok_or_else(|| Error::Singular("Cholesky factor not invertible".into()))?;
    let k = restr.rows;
    let candidate = l_inv.rows(0, k).into_owned();
    restr.project(&candidate)
}

/// Flip rows of the estimate so the diagonal of the leading k x k block of
/// `B1` is nonnegative, when the restriction space admits the flip.
fn normalize_sign(
    alpha: &DVector<f64>,
    sigma_u: &DMatrix<f64>,
    restr: &RestrictionSet,
) -> Result<DVector<f64>> {
    let mut a1 = restr.realize(alpha)?;
    let k = a1.nrows();
    let mut changed = false;
    for j in 0..k {
        let b1 = sigma_u * a1.transpose();
        if b1[(j, j)] < 0.0 {
            let mut flipped = a1.clone();
            for c in 0..a1.ncols() {
                flipped[(j, c)] = -flipped[(j, c)];
            }
            let proj = restr.project(&flipped)?;
            let realized = restr.realize(&proj)?;
            if linalg::max_abs(&(&realized - &flipped)) < 1e-8 * (1.0 + linalg::max_abs(&flipped)) {
                a1 = flipped;
                changed = true;
            }
        }
    }
    if changed {
        restr.project(&a1)
    } else {
        Ok(alpha.clone())
    }
}

/// Indirect-MD estimator of the target rows `A1`.
///
/// Two-step by default: an identity-weight pass pins the preliminary
/// estimate, the optimal weight `V_gg^-1` is formed there, and the final
/// pass minimizes the weighted distance. Requires `moments.v_sigma_plus`
/// for the two-step weight and the covariance report.
pub fn md_estimate(
    moments: &ProxyMoments,
    restr: &RestrictionSet,
    options: &MdOptions,
) -> Result<MdFit> {
    if restr.target != Target::A1 {
        return Err(Error::Invalid("restriction set must target the A1 rows".into()));
    }
    if restr.cols != moments.n {
        return Err(Error::Dimension(format!(
            "restriction pattern has {} columns, VAR has {} variables",
            restr.cols, moments.n
        )));
    }
    let k = restr.rows;
    let s = moments.s;
    order_condition(k, s, restr.n_free())?;

    let sigma_u = moments.sigma_u.clone();
    let sigma_uw = options
        .sigma_uw_override
        .clone()
        .unwrap_or_else(|| moments.sigma_uw.clone());

    let residual = |x: &DVector<f64>| {
        distance_g(&sigma_u, &sigma_uw, x, restr).expect("distance dimensions checked")
    };
    let jac = |x: &DVector<f64>| {
        jacobian_g_alpha(&sigma_u, &sigma_uw, x, restr).expect("jacobian dimensions checked")
    };

    let alpha0 = initial_alpha(&sigma_u, restr)?;
    let step1 = optim::minimize(&residual, &jac, &Weight::Identity, &alpha0, &options.gn)?;

    let (solution, weight_desc, v_gg_bar) = match options.weighting {
        MdWeighting::Identity => (step1, "identity".to_string(), None),
        MdWeighting::TwoStep => {
            let v_sp = moments.v_sigma_plus.as_ref().ok_or_else(|| {
                Error::Invalid("two-step weighting requires V_sigma_plus on the moments".into())
            })?;
            let a1_bar = restr.realize(&step1.x)?;
            let g_sigma = jacobian_g_sigma(&a1_bar, s);
            let v_gg = &g_sigma * v_sp * g_sigma.transpose();
            let weight = Weight::from_covariance(&v_gg, "V_gg")?;
            let step2 = optim::minimize(&residual, &jac, &weight, &step1.x, &options.gn)?;
            (
                step2,
                "two-step (V_gg at the first-step estimate)".to_string(),
                Some(v_gg),
            )
        }
    };
    if !solution.converged {
        return Err(Error::NonConvergence(format!(
            "gradient norm {:.3e} after {} iterations and {} restarts",
            solution.grad_norm, solution.iterations, solution.restarts_used
        )));
    }

    let alpha = normalize_sign(&solution.x, &sigma_u, restr)?;
    let a1 = restr.realize(&alpha)?;
    let b1 = &sigma_u * a1.transpose();
    let g_alpha = jacobian_g_alpha(&sigma_u, &sigma_uw, &alpha, restr)?;
    let smin = linalg::min_singular_value(&g_alpha);
    let smax = g_alpha.clone().svd(false, false).singular_values.max();
    let rank_ok = smin > RANK_TOL * smax.max(1.0);

    let t = moments.t_w;
    // under a failed rank condition the information matrix is singular;
    // the point estimate is still returned, without a covariance
    let v_alpha = match (&v_gg_bar, moments.v_sigma_plus.as_ref()) {
        (Some(v_gg), _) => asymptotic_v_alpha(&g_alpha, v_gg, t).ok(),
        (None, Some(v_sp)) => {
            let g_sigma = jacobian_g_sigma(&a1, s);
            let v_gg = &g_sigma * v_sp * g_sigma.transpose();
            asymptotic_v_alpha(&g_alpha, &v_gg, t).ok()
        }
        _ => None,
    };
    let v_alpha_reweighted = moments.v_sigma_plus.as_ref().map(|v_sp| {
        let g_sigma = jacobian_g_sigma(&a1, s);
        let v_gg = &g_sigma * v_sp * g_sigma.transpose();
        asymptotic_v_alpha(&g_alpha, &v_gg, t)
    });
    let v_alpha_reweighted = match v_alpha_reweighted {
        Some(Ok(v)) => Some(v),
        Some(Err(_)) | None => None,
    };

    Ok(MdFit {
        alpha,
        a1,
        b1,
        v_alpha,
        v_alpha_reweighted,
        q_min: solution.q_min,
        g_alpha,
        min_singular_value: smin,
        rank_ok,
        weighting: weight_desc,
        converged: solution.converged,
        t,
    })
}

fn asymptotic_v_alpha(
    g_alpha: &DMatrix<f64>,
    v_gg: &DMatrix<f64>,
    t: usize,
) -> Result<DMatrix<f64>> {
    let v_gg_inv = linalg::inverse(v_gg, "V_gg")?;
    let info = g_alpha.transpose() * v_gg_inv * g_alpha;
    Ok(linalg::inverse(&info, "G'V^-1G")? / t as f64)
}

/// Distance of the dual parameterization in the impact columns:
/// `(vech(B1' Su^-1 B1 - I)', vec(B1' Ouw)')'` with `Ouw = Su^-1 Suw`.
pub fn distance_g_b_form(
    sigma_u: &DMatrix<f64>,
    sigma_uw: &DMatrix<f64>,
    beta1: &DVector<f64>,
    restr: &RestrictionSet,
) -> Result<DVector<f64>> {
    let b1 = restr.realize(beta1)?;
    let k = b1.ncols();
    let s = sigma_uw.ncols();
    let sigma_u_inv = linalg::inverse(sigma_u, "Sigma_u")?;
    let omega_uw = &sigma_u_inv * sigma_uw;
    let var_block = b1.transpose() * &sigma_u_inv * &b1 - DMatrix::identity(k, k);
    let cross_block = b1.transpose() * omega_uw;
    let mut g = DVector::zeros(moment_count(k, s));
    g.rows_mut(0, k * (k + 1) / 2).copy_from(&vech(&var_block));
    g.rows_mut(k * (k + 1) / 2, k * s)
        .copy_from(&DVector::from_column_slice(cross_block.as_slice()));
    Ok(g)
}

fn jacobian_g_beta(
    sigma_u: &DMatrix<f64>,
    sigma_uw: &DMatrix<f64>,
    beta1: &DVector<f64>,
    restr: &RestrictionSet,
) -> Result<DMatrix<f64>> {
    let b1 = restr.realize(beta1)?;
    let n = b1.nrows();
    let k = b1.ncols();
    let s = sigma_uw.ncols();
    let sigma_u_inv = linalg::inverse(sigma_u, "Sigma_u")?;
    let omega_uw = &sigma_u_inv * sigma_uw;
    let dkp = duplication_pinv(k);
    let knk = commutation(n, k);
    let upper =
        2.0 * &dkp * (b1.transpose() * &sigma_u_inv).kronecker(&DMatrix::identity(k, k)) * &knk;
    let lower = omega_uw.transpose().kronecker(&DMatrix::identity(k, k)) * &knk;
    let m = moment_count(k, s);
    let mut jac = DMatrix::zeros(m, n * k);
    jac.view_mut((0, 0), (k * (k + 1) / 2, n * k)).copy_from(&upper);
    jac.view_mut((k * (k + 1) / 2, 0), (k * s, n * k))
        .copy_from(&lower);
    Ok(jac * &restr.s_mat)
}

/// Jacobian of the dual-form distance in `(vech(Su)', vec(Ouw)')'`.
fn jacobian_g_omega(b1: &DMatrix<f64>, sigma_u: &DMatrix<f64>, s: usize) -> Result<DMatrix<f64>> {
    let n = b1.nrows();
    let k = b1.ncols();
    let sigma_u_inv = linalg::inverse(sigma_u, "Sigma_u")?;
    let bsi = b1.transpose() * &sigma_u_inv; // k x n
    let dkp = duplication_pinv(k);
    let dn = duplication(n);
    let upper_left = -(&dkp) * bsi.kronecker(&bsi) * &dn;
    let lower_right = DMatrix::identity(s, s).kronecker(&b1.transpose());
    let m = moment_count(k, s);
    let cols = n * (n + 1) / 2 + n * s;
    let mut jac = DMatrix::zeros(m, cols);
    jac.view_mut((0, 0), (k * (k + 1) / 2, n * (n + 1) / 2))
        .copy_from(&upper_left);
    jac.view_mut((k * (k + 1) / 2, n * (n + 1) / 2), (k * s, n * s))
        .copy_from(&lower_right);
    Ok(jac)
}

/// Jacobian of the map `sigma_plus -> omega_plus = (vech(Su)', vec(Su^-1 Suw)')'`.
fn jacobian_omega_plus(sigma_u: &DMatrix<f64>, sigma_uw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = sigma_u.nrows();
    let s = sigma_uw.ncols();
    let sigma_u_inv = linalg::inverse(sigma_u, "Sigma_u")?;
    let dn = duplication(n);
    let m1 = n * (n + 1) / 2;
    let mut jac = DMatrix::zeros(m1 + n * s, m1 + n * s);
    jac.view_mut((0, 0), (m1, m1))
        .copy_from(&DMatrix::identity(m1, m1));
    let lower_left =
        -(sigma_uw.transpose() * &sigma_u_inv).kronecker(&sigma_u_inv) * &dn;
    jac.view_mut((m1, 0), (n * s, m1)).copy_from(&lower_left);
    let lower_right = DMatrix::identity(s, s).kronecker(&sigma_u_inv);
    jac.view_mut((m1, m1), (n * s, n * s)).copy_from(&lower_right);
    Ok(jac)
}

/// Dual-form MD estimator: restrictions are placed on the impact columns
/// `B1` and the implied `A1 = B1' Su^-1` is returned alongside.
pub fn md_estimate_b_form(
    moments: &ProxyMoments,
    restr: &RestrictionSet,
    options: &MdOptions,
) -> Result<MdFit> {
    if restr.target != Target::B1 {
        return Err(Error::Invalid("restriction set must target the B1 columns".into()));
    }
    if restr.rows != moments.n {
        return Err(Error::Dimension(format!(
            "restriction pattern has {} rows, VAR has {} variables",
            restr.rows, moments.n
        )));
    }
    let k = restr.cols;
    let s = moments.s;
    order_condition(k, s, restr.n_free())?;

    let sigma_u = moments.sigma_u.clone();
    let sigma_uw = options
        .sigma_uw_override
        .clone()
        .unwrap_or_else(|| moments.sigma_uw.clone());

    let residual = |x: &DVector<f64>| {
        distance_g_b_form(&sigma_u, &sigma_uw, x, restr).expect("distance checked")
    };
    let jac =
        |x: &DVector<f64>| jacobian_g_beta(&sigma_u, &sigma_uw, x, restr).expect("jacobian checked");

    // start from the Cholesky candidate mapped to the B side: B1 = Su A1'
    let l = linalg::cholesky_lower(&sigma_u, "Sigma_u")?;
    let l_inv = l
        .try_inverse()
        .ok_or_else(|| Error::Singular("Cholesky factor not invertible".into()))?;
    let b1_candidate = &sigma_u * l_inv.rows(0, k).transpose();
    let beta0 = restr.project(&b1_candidate)?;

    let step1 = optim::minimize(&residual, &jac, &Weight::Identity, &beta0, &options.gn)?;
    let (solution, weight_desc, v_gg_bar) = match options.weighting {
        MdWeighting::Identity => (step1, "identity".to_string(), None),
        MdWeighting::TwoStep => {
            let v_sp = moments.v_sigma_plus.as_ref().ok_or_else(|| {
                Error::Invalid("two-step weighting requires V_sigma_plus on the moments".into())
            })?;
            let b1_bar = restr.realize(&step1.x)?;
            let j_omega = jacobian_omega_plus(&sigma_u, &sigma_uw)?;
            let v_omega = &j_omega * v_sp * j_omega.transpose();
            let g_omega = jacobian_g_omega(&b1_bar, &sigma_u, s)?;
            let v_gg = &g_omega * v_omega * g_omega.transpose();
            let weight = Weight::from_covariance(&v_gg, "V_gg")?;
            let step2 = optim::minimize(&residual, &jac, &weight, &step1.x, &options.gn)?;
            (
                step2,
                "two-step (dual form, V_gg at the first-step estimate)".to_string(),
                Some(v_gg),
            )
        }
    };
    if !solution.converged {
        return Err(Error::NonConvergence(format!(
            "gradient norm {:.3e} after {} iterations",
            solution.grad_norm, solution.iterations
        )));
    }

    // sign normalization on the diagonal of the top k x k block of B1
    let mut beta = solution.x.clone();
    let mut b1 = restr.realize(&beta)?;
    for j in 0..k {
        if b1[(j, j)] < 0.0 {
            let mut flipped = b1.clone();
            for r in 0..b1.nrows() {
                flipped[(r, j)] = -flipped[(r, j)];
            }
            let proj = restr.project(&flipped)?;
            let realized = restr.realize(&proj)?;
            if linalg::max_abs(&(&realized - &flipped)) < 1e-8 * (1.0 + linalg::max_abs(&flipped)) {
                b1 = flipped;
                beta = proj;
            }
        }
    }

    let sigma_u_inv = linalg::inverse(&sigma_u, "Sigma_u")?;
    let a1 = b1.transpose() * &sigma_u_inv;
    let g_beta = jacobian_g_beta(&sigma_u, &sigma_uw, &beta, restr)?;
    let smin = linalg::min_singular_value(&g_beta);
    let smax = g_beta.clone().svd(false, false).singular_values.max();
    let rank_ok = smin > RANK_TOL * smax.max(1.0);
    let t = moments.t_w;
    let v_alpha = v_gg_bar
        .as_ref()
        .and_then(|v_gg| asymptotic_v_alpha(&g_beta, v_gg, t).ok());

    Ok(MdFit {
        alpha: beta,
        a1,
        b1,
        v_alpha: v_alpha.clone(),
        v_alpha_reweighted: v_alpha,
        q_min: solution.q_min,
        g_alpha: g_beta,
        min_singular_value: smin,
        rank_ok,
        weighting: weight_desc,
        converged: solution.converged,
        t,
    })
}

/// IV estimator of `Psi = -A11^-1 A12` from the regression of the target
/// innovations on the non-target innovations, instrumented by the proxies.
///
/// Serves as a benchmark: with triangular `A11`, the MD estimate implies
/// the same matrix asymptotically.
pub fn iv_estimate_psi(
    u1: &DMatrix<f64>,
    u2: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let t = u1.nrows();
    if u2.nrows() != t || w.nrows() != t {
        return Err(Error::Dimension("residual and proxy rows must align".into()));
    }
    if w.ncols() != u2.ncols() {
        return Err(Error::Invalid(format!(
            "IV step needs as many instruments as regressors (got {} and {})",
            w.ncols(),
            u2.ncols()
        )));
    }
    let wu2 = w.transpose() * u2 / t as f64;
    let wu1 = w.transpose() * u1 / t as f64;
    // scale-relative first-stage check: the cross moment must not be tiny
    // against the marginal scales of instruments and regressors
    let scale_w = (w.norm_squared() / t as f64).sqrt();
    let scale_u2 = (u2.norm_squared() / t as f64).sqrt();
    let smin = linalg::min_singular_value(&wu2);
    if smin <= 1e-6 * scale_w * scale_u2 {
        return Err(Error::Singular(
            "instrument-regressor cross moment is near singular (weak proxies)".into(),
        ));
    }
    let wu2_inv = linalg::inverse(&wu2, "instrument-regressor cross moment").map_err(|_| {
        Error::Singular(
            "instrument-regressor cross moment is near singular (weak proxies)".into(),
        )
    })?;
    Ok((wu2_inv * wu1).transpose())
}

/// How the sampling noise of the innovation moments enters the bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaPropagation {
    /// Treat the response as a function of `(Pi, alpha)` only, with a
    /// block-diagonal joint covariance.
    AlphaOnly,
    /// Propagate the full `sigma_plus` noise through both the structural
    /// estimate and the impact map `B1 = Su A1'`.
    Full,
}

/// Pointwise delta-method confidence bands for the responses to one target
/// shock.
pub fn delta_method_irf_ci(
    md: &MdFit,
    var_fit: &VarFit,
    moments: &ProxyMoments,
    restr: &RestrictionSet,
    shock: usize,
    h_max: usize,
    level: f64,
    propagation: SigmaPropagation,
) -> Result<IrfPath> {
    if !md.rank_ok {
        return Err(Error::Identification(
            "rank condition failed upstream; delta-method bands are unavailable".into(),
        ));
    }
    let v_alpha = md.v_alpha.as_ref().ok_or_else(|| {
        Error::Invalid("delta-method bands require the structural covariance".into())
    })?;
    let n = var_fit.n;
    let lags = var_fit.lags;
    let k = md.a1.nrows();
    let mut irf = var_fit.irf(&md.b1, shock, h_max)?;

    // covariance of vec(Pi_hat): (lag block of (X'X)^-1) (x) Sigma_u
    let xtx_lag = var_fit.xtx_inv.view((0, 0), (n * lags, n * lags)).into_owned();
    let v_pi = xtx_lag.kronecker(&var_fit.sigma_u);

    let c = var_fit.companion();
    let sel = var_fit.selection();
    // powers of the companion, reused across horizons
    let mut c_pows: Vec<DMatrix<f64>> = Vec::with_capacity(h_max + 1);
    c_pows.push(DMatrix::identity(n * lags, n * lags));
    for _ in 1..=h_max {
        c_pows.push(&c * c_pows.last().unwrap());
    }
    let b_tilde = sel.transpose() * md.b1.column(shock);

    // selection picking A1' e_j out of vec(A1)
    let mut p_j = DMatrix::zeros(n, k * n);
    for i in 0..n {
        p_j[(i, i * k + shock)] = 1.0;
    }

    // optional full propagation pieces
    let full = if propagation == SigmaPropagation::Full {
        let v_sp = moments.v_sigma_plus.as_ref().ok_or_else(|| {
            Error::Invalid("full propagation requires V_sigma_plus".into())
        })?;
        let g_sigma = jacobian_g_sigma(&md.a1, moments.s);
        let v_gg = &g_sigma * v_sp * g_sigma.transpose();
        let w = linalg::inverse(&v_gg, "V_gg")?;
        let info = md.g_alpha.transpose() * &w * &md.g_alpha;
        let info_inv = linalg::inverse(&info, "G'V^-1G")?;
        // d alpha / d sigma_plus at the optimum
        let dalpha = -info_inv * md.g_alpha.transpose() * &w * &g_sigma;
        Some((v_sp.clone() / moments.t_w as f64, dalpha))
    } else {
        None
    };

    let norm = Normal::new(0.0, 1.0).expect("standard normal");
    let z = norm.inverse_cdf(1.0 - (1.0 - level) / 2.0);

    let mut lower = DMatrix::zeros(h_max + 1, n);
    let mut upper = DMatrix::zeros(h_max + 1, n);
    let dn = duplication(n);

    for h in 0..=h_max {
        // J_pi: derivative of the response in vec(Pi)
        let mut j_pi = DMatrix::zeros(n, n * n * lags);
        for i in 0..h {
            let m_i = &sel * &c_pows[i]; // n x nl
            let v_i = &c_pows[h - 1 - i] * &b_tilde; // nl
            for cc in 0..n * lags {
                for r in 0..n {
                    let col = cc * n + r;
                    for row in 0..n {
                        j_pi[(row, col)] += v_i[cc] * m_i[(row, r)];
                    }
                }
            }
        }
        let f_h = &sel * &c_pows[h] * sel.transpose(); // n x n
        let j_alpha = &f_h * &moments.sigma_u * &p_j * &restr.s_mat; // n x a

        let mut cov = &j_pi * &v_pi * j_pi.transpose();
        match &full {
            None => {
                cov += &j_alpha * v_alpha * j_alpha.transpose();
            }
            Some((v_sp_t, dalpha)) => {
                // direct dependence of the response on vech(Sigma_u)
                let q = md.a1.transpose() * DVector::from_fn(k, |i, _| {
                    if i == shock {
                        1.0
                    } else {
                        0.0
                    }
                });
                let d_sigma = q.transpose().kronecker(&f_h) * &dn; // n x n(n+1)/2
                let mut j_tot = &j_alpha * dalpha; // n x dim(sigma_plus)
                j_tot
                    .view_mut((0, 0), (n, n * (n + 1) / 2))
                    .iter_mut()
                    .zip(d_sigma.iter())
                    .for_each(|(a, b)| *a += b);
                cov += &j_tot * v_sp_t * j_tot.transpose();
            }
        }

        for i in 0..n {
            let var = cov[(i, i)];
            if !var.is_finite() || var < 0.0 {
                return Err(Error::Numerical(format!(
                    "non-finite band variance at horizon {h}"
                )));
            }
            let half = z * var.sqrt();
            lower[(h, i)] = irf.values[(h, i)] - half;
            upper[(h, i)] = irf.values[(h, i)] + half;
        }
    }

    irf.lower = Some(lower);
    irf.upper = Some(upper);
    irf.level = Some(level);
    Ok(irf)
}
