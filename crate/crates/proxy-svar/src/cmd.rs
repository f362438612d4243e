//! Minimum-distance estimation of the proxy-strength parameters
//! `theta = (beta2', lambda')'` from the moment conditions
//! `Omega_w = Lambda Lambda'` and `Sigma_wu = Lambda B2'`.
//!
//! The same machinery serves proxies for the target shocks: pass the
//! moments computed on the `z` block and read `B2` as the impact columns
//! and `Lambda` as the relevance matrix of that block.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, commutation, duplication_pinv, vech};
use crate::moments::{mu_len, ProxyMoments};
use crate::optim::{self, GnOptions, Weight};
use crate::restrictions::{RestrictionSet, Target};

/// Restriction patterns for the impact block (n x s) and the relevance
/// matrix (s x s); `theta` stacks the free impact parameters first.
#[derive(Debug, Clone)]
pub struct CmdRestrictions {
    pub b2: RestrictionSet,
    pub lambda: RestrictionSet,
}

impl CmdRestrictions {
    /// Fully free parameterization (exactly identified only when s = 1).
    pub fn unrestricted(n: usize, s: usize) -> CmdRestrictions {
        CmdRestrictions {
            b2: RestrictionSet::all_free(n, s, Target::B2),
            lambda: RestrictionSet::all_free(s, s, Target::Lambda),
        }
    }

    pub fn n(&self) -> usize {
        self.b2.rows
    }

    pub fn s(&self) -> usize {
        self.lambda.rows
    }

    pub fn n_free(&self) -> usize {
        self.b2.n_free() + self.lambda.n_free()
    }

    pub fn n_beta2(&self) -> usize {
        self.b2.n_free()
    }

    fn validate(&self) -> Result<()> {
        if self.lambda.rows != self.lambda.cols {
            return Err(Error::Dimension("relevance matrix must be square".into()));
        }
        if self.b2.cols != self.lambda.rows {
            return Err(Error::Dimension(
                "impact block and relevance matrix disagree on the proxy count".into(),
            ));
        }
        Ok(())
    }

    /// Materialize `(B2, Lambda)` for a stacked parameter vector.
    pub fn realize(&self, theta: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if theta.len() != self.n_free() {
            return Err(Error::Dimension(format!(
                "theta has length {}, expected {}",
                theta.len(),
                self.n_free()
            )));
        }
        let beta2 = theta.rows(0, self.b2.n_free()).into_owned();
        let lam = theta.rows(self.b2.n_free(), self.lambda.n_free()).into_owned();
        Ok((self.b2.realize(&beta2)?, self.lambda.realize(&lam)?))
    }

    fn project(&self, b2: &DMatrix<f64>, lambda: &DMatrix<f64>) -> Result<DVector<f64>> {
        let pb = self.b2.project(b2)?;
        let pl = self.lambda.project(lambda)?;
        let mut theta = DVector::zeros(self.n_free());
        theta.rows_mut(0, pb.len()).copy_from(&pb);
        theta.rows_mut(pb.len(), pl.len()).copy_from(&pl);
        Ok(theta)
    }
}

/// The moment map `f(theta) = (vech(Lambda Lambda')', vec(Lambda B2')')'`.
pub fn f_theta(theta: &DVector<f64>, restr: &CmdRestrictions) -> Result<DVector<f64>> {
    let (b2, lambda) = restr.realize(theta)?;
    let s = restr.s();
    let n = restr.n();
    let gram = &lambda * lambda.transpose();
    let cross = &lambda * b2.transpose(); // s x n
    let mut f = DVector::zeros(mu_len(n, s));
    f.rows_mut(0, s * (s + 1) / 2).copy_from(&vech(&gram));
    f.rows_mut(s * (s + 1) / 2, n * s)
        .copy_from(&DVector::from_column_slice(cross.as_slice()));
    Ok(f)
}

/// Analytic Jacobian of [`f_theta`], `o x q_theta`:
///
/// ```text
/// [ 0                      2 D_s^+ (Lambda (x) I_s) S_L ]
/// [ (I_n (x) Lambda) K S_B (B2 (x) I_s) S_L             ]
/// ```
pub fn jacobian_j_theta(theta: &DVector<f64>, restr: &CmdRestrictions) -> Result<DMatrix<f64>> {
    let (b2, lambda) = restr.realize(theta)?;
    let s = restr.s();
    let n = restr.n();
    let o1 = s * (s + 1) / 2;
    let o2 = n * s;
    let dsp = duplication_pinv(s);
    let k_ns = commutation(n, s);

    let d_gram_lambda = 2.0 * &dsp * lambda.kronecker(&DMatrix::identity(s, s));
    let d_cross_b2 = DMatrix::identity(n, n).kronecker(&lambda) * &k_ns;
    let d_cross_lambda = b2.kronecker(&DMatrix::identity(s, s));

    let qb = restr.b2.n_free();
    let ql = restr.lambda.n_free();
    let mut jac = DMatrix::zeros(o1 + o2, qb + ql);
    jac.view_mut((0, qb), (o1, ql))
        .copy_from(&(&d_gram_lambda * &restr.lambda.s_mat));
    jac.view_mut((o1, 0), (o2, qb))
        .copy_from(&(&d_cross_b2 * &restr.b2.s_mat));
    jac.view_mut((o1, qb), (o2, ql))
        .copy_from(&(&d_cross_lambda * &restr.lambda.s_mat));
    Ok(jac)
}

/// Weighting of the CMD objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmdWeighting {
    /// `V_mu^-1`, the classical choice (requires `V_sigma_plus`).
    VMu,
    /// Identity weight; equivalent under exact identification, where the
    /// minimizer solves the moment system regardless of the weight.
    Identity,
}

#[derive(Debug, Clone)]
pub struct CmdOptions {
    pub weighting: CmdWeighting,
    pub gn: GnOptions,
}

impl Default for CmdOptions {
    fn default() -> Self {
        CmdOptions {
            weighting: CmdWeighting::VMu,
            gn: GnOptions::default(),
        }
    }
}

/// Estimated strength parameters with their inference pieces.
#[derive(Debug, Clone)]
pub struct ThetaFit {
    pub theta: DVector<f64>,
    /// Realized impact block, n x s.
    pub b2: DMatrix<f64>,
    /// Realized relevance matrix, s x s.
    pub lambda: DMatrix<f64>,
    /// Asymptotic covariance `(J' V_mu^-1 J)^-1` (not divided by T); absent
    /// when the Jacobian is numerically rank deficient.
    pub v_theta: Option<DMatrix<f64>>,
    pub j_theta: DMatrix<f64>,
    pub q_min: f64,
    /// Standardized deviation from a supplied true value (testing mode).
    pub gamma: Option<DVector<f64>>,
    pub t: usize,
    pub converged: bool,
}

impl ThetaFit {
    pub fn n_beta2(&self) -> usize {
        self.b2.nrows() * self.b2.ncols()
    }
}

fn order_condition(restr: &CmdRestrictions) -> Result<()> {
    let o = mu_len(restr.n(), restr.s());
    let q = restr.n_free();
    if q > o {
        let s = restr.s();
        return Err(Error::Identification(format!(
            "order condition fails: {q} strength parameters exceed {o} moments \
             (at least {} restrictions are required when s = {s})",
            s * (s - 1) / 2
        )));
    }
    Ok(())
}

/// Starting point that solves the moment system exactly when it can:
/// `Lambda0 = chol(Omega_w)`, `B2_0 = Sigma_uw Lambda0^-T`.
fn initial_theta(moments: &ProxyMoments, restr: &CmdRestrictions) -> Result<DVector<f64>> {
    let s = restr.s();
    let ridge = DMatrix::identity(s, s) * 1e-12;
    let lambda0 = linalg::cholesky_lower(&(&moments.omega_w + ridge), "Omega_w")
        .unwrap_or_else(|_| DMatrix::identity(s, s) * 1e-6);
    let b2_0 = lambda0
        .transpose()
        .try_inverse()
        .map(|li| &moments.sigma_uw * li)
        .unwrap_or_else(|| DMatrix::zeros(restr.n(), s));
    restr.project(&b2_0, &lambda0)
}

/// Sign normalization of the strength estimator: nonnegative diagonal of
/// `Lambda` through joint column flips of `(Lambda, B2)`, applied only when
/// the restriction space admits the flip. Part of the estimator itself, so
/// bootstrap replications go through the same map.
pub fn normalize_theta_sign(theta: &DVector<f64>, restr: &CmdRestrictions) -> Result<DVector<f64>> {
    let (mut b2, mut lambda) = restr.realize(theta)?;
    let s = restr.s();
    let mut changed = false;
    for j in 0..s {
        if lambda[(j, j)] < 0.0 {
            let mut lam_f = lambda.clone();
            let mut b2_f = b2.clone();
            for r in 0..s {
                lam_f[(r, j)] = -lam_f[(r, j)];
            }
            for r in 0..restr.n() {
                b2_f[(r, j)] = -b2_f[(r, j)];
            }
            let proj = restr.project(&b2_f, &lam_f)?;
            let (b2_r, lam_r) = restr.realize(&proj)?;
            let gap = linalg::max_abs(&(&b2_r - &b2_f)).max(linalg::max_abs(&(&lam_r - &lam_f)));
            if gap < 1e-8 * (1.0 + linalg::max_abs(&lam_f)) {
                b2 = b2_f;
                lambda = lam_f;
                changed = true;
            }
        }
    }
    if changed {
        restr.project(&b2, &lambda)
    } else {
        Ok(theta.clone())
    }
}

/// Core minimization shared with the bootstrap: fit `theta` to a given
/// moment vector under a fixed weight.
pub(crate) fn cmd_minimize(
    mu: &DVector<f64>,
    weight: &Weight,
    restr: &CmdRestrictions,
    init: &DVector<f64>,
    gn: &GnOptions,
) -> Result<optim::GnSolution> {
    let residual = |x: &DVector<f64>| mu - f_theta(x, restr).expect("dimensions checked");
    let jacobian = |x: &DVector<f64>| -jacobian_j_theta(x, restr).expect("dimensions checked");
    optim::minimize(&residual, &jacobian, weight, init, gn)
}

/// Classical minimum-distance estimator of the strength parameters.
pub fn cmd_estimate(
    moments: &ProxyMoments,
    restr: &CmdRestrictions,
    options: &CmdOptions,
    theta_true: Option<&DVector<f64>>,
) -> Result<ThetaFit> {
    restr.validate()?;
    if restr.n() != moments.n || restr.s() != moments.s {
        return Err(Error::Dimension(
            "restriction dimensions do not match the moments".into(),
        ));
    }
    order_condition(restr)?;

    let mu = moments.mu();
    let weight = match options.weighting {
        CmdWeighting::Identity => Weight::Identity,
        CmdWeighting::VMu => {
            let v_mu = moments.v_mu()?;
            Weight::from_covariance(&v_mu, "V_mu")
                .map_err(|e| Error::Singular(format!("V_mu is singular: {e}")))?
        }
    };

    let init = initial_theta(moments, restr)?;
    let sol = cmd_minimize(&mu, &weight, restr, &init, &options.gn)?;
    if !sol.converged {
        return Err(Error::NonConvergence(format!(
            "CMD gradient norm {:.3e} after {} iterations",
            sol.grad_norm, sol.iterations
        )));
    }

    let theta = normalize_theta_sign(&sol.x, restr)?;
    let (b2, lambda) = restr.realize(&theta)?;

    let j_theta = jacobian_j_theta(&theta, restr)?;
    let v_theta = match options.weighting {
        CmdWeighting::VMu => {
            let v_mu = moments.v_mu()?;
            linalg::inverse(&v_mu, "V_mu")
                .ok()
                .and_then(|v_mu_inv| {
                    let info = j_theta.transpose() * v_mu_inv * &j_theta;
                    linalg::inverse(&info, "J'V^-1J").ok()
                })
        }
        CmdWeighting::Identity => None,
    };

    let t = moments.t_w;
    let gamma = match (theta_true, &v_theta) {
        (Some(theta0), Some(v)) => {
            let half = linalg::sym_inv_sqrt(v, "V_theta")?;
            Some(half * (&theta - theta0) * (t as f64).sqrt())
        }
        _ => None,
    };

    Ok(ThetaFit {
        theta,
        b2,
        lambda,
        v_theta,
        j_theta,
        q_min: sol.q_min,
        gamma,
        t,
        converged: sol.converged,
    })
}
