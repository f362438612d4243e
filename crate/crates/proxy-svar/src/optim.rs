//! Trust-region Gauss-Newton for weighted nonlinear least squares
//! `min_x r(x)' W r(x)`, with seeded random restarts on non-convergence.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;

/// Weighting of the residual quadratic form.
#[derive(Debug, Clone)]
pub enum Weight {
    Identity,
    /// Lower Cholesky factor `L` of the residual covariance `V`; the
    /// quadratic form is `r' V^-1 r = |L^-1 r|^2`.
    CovCholesky(DMatrix<f64>),
}

impl Weight {
    /// Build from a covariance matrix (factored once up front).
    pub fn from_covariance(v: &DMatrix<f64>, what: &str) -> Result<Weight> {
        Ok(Weight::CovCholesky(linalg::cholesky_lower(v, what)?))
    }

    fn whiten_vec(&self, r: &DVector<f64>) -> DVector<f64> {
        match self {
            Weight::Identity => r.clone(),
            Weight::CovCholesky(l) => l.solve_lower_triangular(r).expect("factor is triangular"),
        }
    }

    fn whiten_mat(&self, j: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Weight::Identity => j.clone(),
            Weight::CovCholesky(l) => l.solve_lower_triangular(j).expect("factor is triangular"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GnOptions {
    pub grad_tol: f64,
    pub max_iters: usize,
    pub restarts: usize,
    pub restart_seed: u64,
    /// Scale of the Gaussian perturbation applied on restart.
    pub restart_scale: f64,
}

impl Default for GnOptions {
    fn default() -> Self {
        GnOptions {
            grad_tol: 1e-9,
            max_iters: 500,
            restarts: 5,
            restart_seed: 0,
            restart_scale: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GnSolution {
    pub x: DVector<f64>,
    pub q_min: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restarts_used: usize,
}

/// Minimize `r(x)' W r(x)` by a dogleg trust-region Gauss-Newton iteration.
///
/// Returns the best point found; `converged` is false when no start reached
/// the gradient tolerance.
pub fn minimize<R, J>(
    residual: R,
    jacobian: J,
    weight: &Weight,
    x0: &DVector<f64>,
    opts: &GnOptions,
) -> Result<GnSolution>
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let mut best: Option<GnSolution> = None;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.restart_seed);
    for attempt in 0..=opts.restarts {
        let start = if attempt == 0 {
            x0.clone()
        } else {
            let noise = DVector::from_fn(x0.len(), |_, _| {
                let e: f64 = StandardNormal.sample(&mut rng);
                e * opts.restart_scale
            });
            x0 + noise.component_mul(&x0.map(|v| v.abs().max(1.0)))
        };
        let sol = run_single(&residual, &jacobian, weight, &start, opts, attempt)?;
        let better = match &best {
            None => true,
            Some(b) => {
                (sol.converged && !b.converged)
                    || (sol.converged == b.converged && sol.q_min < b.q_min)
            }
        };
        if better {
            best = Some(sol);
        }
        if best.as_ref().is_some_and(|b| b.converged) {
            break;
        }
    }
    best.ok_or_else(|| Error::NonConvergence("no optimizer attempt produced a result".into()))
}

fn run_single<R, J>(
    residual: &R,
    jacobian: &J,
    weight: &Weight,
    x0: &DVector<f64>,
    opts: &GnOptions,
    attempt: usize,
) -> Result<GnSolution>
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let p = x0.len();
    let mut x = x0.clone();
    let mut r = weight.whiten_vec(&residual(&x));
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("non-finite residual at start point".into()));
    }
    let mut q = r.norm_squared();
    let mut radius = 1.0f64.max(x.norm());

    for iter in 0..opts.max_iters {
        let j = weight.whiten_mat(&jacobian(&x));
        let grad = 2.0 * j.transpose() * &r;
        let grad_norm = grad.amax();
        if grad_norm <= opts.grad_tol * (1.0 + q) {
            // a vanishing gradient with a degenerate Jacobian and a large
            // residual is a saddle, not a minimum; report non-convergence
            // so the restart logic kicks in
            let degenerate = q > opts.grad_tol.sqrt()
                && crate::linalg::min_singular_value(&j) <= 1e-12 * (1.0 + q.sqrt());
            return Ok(GnSolution {
                x,
                q_min: q,
                grad_norm,
                iterations: iter,
                converged: !degenerate,
                restarts_used: attempt,
            });
        }

        let jtj = j.transpose() * &j;
        let jtr = j.transpose() * &r;
        let step = dogleg_step(&jtj, &jtr, radius, p);
        if step.norm() < 1e-15 * (1.0 + x.norm()) {
            // step collapsed; treat as converged if the gradient is small
            return Ok(GnSolution {
                x,
                q_min: q,
                grad_norm,
                iterations: iter,
                converged: grad_norm <= opts.grad_tol.sqrt(),
                restarts_used: attempt,
            });
        }

        let x_new = &x + &step;
        let r_new = weight.whiten_vec(&residual(&x_new));
        let q_new = if r_new.iter().all(|v| v.is_finite()) {
            r_new.norm_squared()
        } else {
            f64::INFINITY
        };
        // model decrease of the quadratic approximation
        let model_new = (&r + &j * &step).norm_squared();
        let predicted = q - model_new;
        let actual = q - q_new;
        let rho = if predicted > 0.0 { actual / predicted } else { -1.0 };

        if rho > 1e-4 {
            x = x_new;
            r = r_new;
            q = q_new;
        }
        if rho > 0.75 && step.norm() > 0.8 * radius {
            radius *= 2.0;
        } else if rho < 0.25 {
            radius = (step.norm() * 0.25).max(1e-12);
        }
    }

    let j = weight.whiten_mat(&jacobian(&x));
    let grad_norm = (2.0 * j.transpose() * &r).amax();
    Ok(GnSolution {
        x,
        q_min: q,
        grad_norm,
        iterations: opts.max_iters,
        converged: grad_norm <= opts.grad_tol * (1.0 + q),
        restarts_used: attempt,
    })
}

/// Dogleg step for `min |J d + r|^2` subject to `|d| <= radius`.
fn dogleg_step(jtj: &DMatrix<f64>, jtr: &DVector<f64>, radius: f64, p: usize) -> DVector<f64> {
    // Gauss-Newton point, with a ridge fallback when J'J is near singular
    let gn = jtj
        .clone()
        .cholesky()
        .map(|c| c.solve(&(-jtr)))
        .unwrap_or_else(|| {
            let ridge = jtj + DMatrix::identity(p, p) * (1e-10 + jtj.diagonal().amax() * 1e-10);
            ridge
                .cholesky()
                .map(|c| c.solve(&(-jtr)))
                .unwrap_or_else(|| -jtr.clone())
        });
    if gn.norm() <= radius {
        return gn;
    }
    // steepest-descent (Cauchy) point
    let g = jtr.clone(); // gradient / 2
    let gbg = (jtj * &g).dot(&g);
    let sd = if gbg > 0.0 {
        -&g * (g.norm_squared() / gbg)
    } else {
        -&g * (radius / g.norm().max(1e-300))
    };
    if sd.norm() >= radius {
        return -&g * (radius / g.norm().max(1e-300));
    }
    // interpolate between the Cauchy and Gauss-Newton points
    let d = &gn - &sd;
    let a = d.norm_squared();
    let b = 2.0 * sd.dot(&d);
    let c = sd.norm_squared() - radius * radius;
    let disc = (b * b - 4.0 * a * c).max(0.0);
    let tau = (-b + disc.sqrt()) / (2.0 * a);
    &sd + d * tau.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_linear_least_squares_exactly() {
        // r(x) = A x - b with A square nonsingular: optimum at A^-1 b
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.5, 3.0]);
        let b = DVector::from_vec(vec![1.0, -2.0]);
        let sol = minimize(
            |x| &a * x - &b,
            |_| a.clone(),
            &Weight::Identity,
            &DVector::zeros(2),
            &GnOptions::default(),
        )
        .unwrap();
        let expect = a.lu().solve(&b).unwrap();
        assert!(sol.converged);
        assert!((sol.x - expect).amax() < 1e-8);
        assert!(sol.q_min < 1e-16);
    }

    #[test]
    fn rosenbrock_residual_form() {
        // classic curved valley in residual form
        let res = |x: &DVector<f64>| {
            DVector::from_vec(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]])
        };
        let jac = |x: &DVector<f64>| {
            DMatrix::from_row_slice(2, 2, &[-20.0 * x[0], 10.0, -1.0, 0.0])
        };
        let sol = minimize(
            res,
            jac,
            &Weight::Identity,
            &DVector::from_vec(vec![-1.2, 1.0]),
            &GnOptions::default(),
        )
        .unwrap();
        assert!(sol.converged, "grad norm {}", sol.grad_norm);
        assert!((sol.x[0] - 1.0).abs() < 1e-6);
        assert!((sol.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn weighted_form_matches_closed_form() {
        // overdetermined linear problem with a non-trivial weight
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 0.0]);
        let v = DMatrix::from_row_slice(3, 3, &[4.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.25]);
        let w = v.clone().try_inverse().unwrap();
        let weight = Weight::from_covariance(&v, "V").unwrap();
        let sol = minimize(
            |x| &a * x - &b,
            |_| a.clone(),
            &weight,
            &DVector::zeros(2),
            &GnOptions::default(),
        )
        .unwrap();
        let closed = (a.transpose() * &w * &a)
            .lu()
            .solve(&(a.transpose() * &w * &b))
            .unwrap();
        assert!((sol.x - closed).amax() < 1e-8);
    }

    #[test]
    fn restarts_recover_from_bad_start() {
        // residual with a spurious stationary point at the origin
        let res = |x: &DVector<f64>| DVector::from_vec(vec![x[0] * x[0] - 4.0]);
        let jac = |x: &DVector<f64>| DMatrix::from_row_slice(1, 1, &[2.0 * x[0]]);
        let opts = GnOptions {
            restart_seed: 3,
            ..GnOptions::default()
        };
        let sol = minimize(res, jac, &Weight::Identity, &DVector::zeros(1), &opts).unwrap();
        assert!(sol.converged);
        assert!((sol.x[0].abs() - 2.0).abs() < 1e-6);
    }
}
