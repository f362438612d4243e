//! Normality diagnostics applied to bootstrap replications: the
//! Doornik-Hansen omnibus test, the Lilliefors variant of the
//! Kolmogorov-Smirnov test, and the EDF-based pointwise statistic.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Empirical distribution function of the draws at `x`.
pub fn bootstrap_edf(draws: &[f64], x: f64) -> f64 {
    if draws.is_empty() {
        return 0.0;
    }
    draws.iter().filter(|&&d| d <= x).count() as f64 / draws.len() as f64
}

/// Variance used to studentize the EDF gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdfVariance {
    /// `F_N (1 - F_N)` from the draws themselves.
    Empirical,
    /// `Phi(x)(1 - Phi(x))`, the value under the null.
    Theoretical,
}

/// Pointwise normalized EDF statistic
/// `tau = sqrt(N) (F_N(x) - Phi(x)) / sqrt(U(x))`.
pub fn tau_statistic(draws: &[f64], x: f64, variance: EdfVariance) -> Result<f64> {
    let n = draws.len();
    if n < 10 {
        return Err(Error::InsufficientSample(
            "the EDF statistic needs at least 10 draws".into(),
        ));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let f_n = bootstrap_edf(draws, x);
    let f_g = normal.cdf(x);
    let u = match variance {
        EdfVariance::Empirical => f_n * (1.0 - f_n),
        EdfVariance::Theoretical => f_g * (1.0 - f_g),
    };
    if u <= 0.0 {
        return Err(Error::Numerical(format!(
            "degenerate EDF variance at x = {x}"
        )));
    }
    Ok((n as f64).sqrt() * (f_n - f_g) / u.sqrt())
}

/// Outcome of a normality test.
#[derive(Debug, Clone, Copy)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
}

fn moments_b1_b2(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let sqrt_b1 = m3 / m2.powf(1.5);
    let b2 = m4 / (m2 * m2);
    (sqrt_b1, b2)
}

/// D'Agostino transform of the sample skewness to approximate normality.
fn skewness_z(sqrt_b1: f64, n: f64) -> f64 {
    let beta2 = 3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0)
        / ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
    let omega2 = -1.0 + (2.0 * (beta2 - 1.0)).sqrt();
    let delta = 1.0 / (0.5 * omega2.ln()).sqrt();
    let y = sqrt_b1 * ((omega2 - 1.0) * (n + 1.0) * (n + 3.0) / (12.0 * (n - 2.0))).sqrt();
    delta * (y + (y * y + 1.0).sqrt()).ln()
}

/// Gamma/Wilson-Hilferty transform of the sample kurtosis, conditional on
/// the skewness.
fn kurtosis_z(b1: f64, b2: f64, n: f64) -> f64 {
    let d = (n - 3.0) * (n + 1.0) * (n * n + 15.0 * n - 4.0);
    let a = (n - 2.0) * (n + 5.0) * (n + 7.0) * (n * n + 27.0 * n - 70.0) / (6.0 * d);
    let c = (n - 7.0) * (n + 5.0) * (n + 7.0) * (n * n + 2.0 * n - 5.0) / (6.0 * d);
    let k = (n + 5.0) * (n + 7.0) * (n * n * n + 37.0 * n * n + 11.0 * n - 313.0) / (12.0 * d);
    let alpha = a + b1 * c;
    let chi = (b2 - 1.0 - b1) * 2.0 * k;
    ((chi / (2.0 * alpha)).powf(1.0 / 3.0) - 1.0 + 1.0 / (9.0 * alpha)) * (9.0 * alpha).sqrt()
}

/// Doornik-Hansen omnibus normality test on an `N x d` ensemble.
///
/// The draws are orthonormalized through the symmetric inverse square root
/// of their correlation matrix; transformed skewness and kurtosis are summed
/// into a statistic that is chi-square with `2d` degrees of freedom under
/// the null.
pub fn dh_test(draws: &DMatrix<f64>) -> Result<TestOutcome> {
    let n = draws.nrows();
    let d = draws.ncols();
    if d == 0 {
        return Err(Error::Invalid("empty ensemble".into()));
    }
    if n <= d + 2 {
        return Err(Error::InsufficientSample(format!(
            "Doornik-Hansen needs more than d + 2 = {} draws, got {n}",
            d + 2
        )));
    }
    let nf = n as f64;
    let mean = DVector::from_fn(d, |j, _| draws.column(j).sum() / nf);
    // moment-based covariance (divisor n)
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..n {
        let c = draws.row(i).transpose() - &mean;
        cov += &c * c.transpose();
    }
    cov /= nf;
    let sds: Vec<f64> = (0..d).map(|j| cov[(j, j)].sqrt()).collect();
    if sds.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Singular("ensemble has a constant coordinate".into()));
    }
    let mut corr = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            corr[(i, j)] = cov[(i, j)] / (sds[i] * sds[j]);
        }
    }
    let eig = corr.clone().symmetric_eigen();
    if eig.eigenvalues.min() <= 1e-12 {
        return Err(Error::Singular("ensemble covariance is singular".into()));
    }
    let mut inv_sqrt = eig.eigenvalues.clone();
    for e in inv_sqrt.iter_mut() {
        *e = 1.0 / e.sqrt();
    }
    let h = &eig.eigenvectors;
    let corr_inv_half = h * DMatrix::from_diagonal(&inv_sqrt) * h.transpose();

    // standardized, decorrelated coordinates
    let mut y = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            y[(i, j)] = (draws[(i, j)] - mean[j]) / sds[j];
        }
    }
    let y = y * corr_inv_half;

    let mut statistic = 0.0;
    for j in 0..d {
        let col: Vec<f64> = (0..n).map(|i| y[(i, j)]).collect();
        let (sqrt_b1, b2) = moments_b1_b2(&col);
        let z1 = skewness_z(sqrt_b1, nf);
        let z2 = kurtosis_z(sqrt_b1 * sqrt_b1, b2, nf);
        statistic += z1 * z1 + z2 * z2;
    }
    if !statistic.is_finite() {
        return Err(Error::Numerical("non-finite omnibus statistic".into()));
    }
    let chisq = ChiSquared::new(2.0 * d as f64).expect("positive dof");
    let p_value = 1.0 - chisq.cdf(statistic);
    Ok(TestOutcome { statistic, p_value })
}

/// Lilliefors normality test: Kolmogorov-Smirnov distance between the EDF
/// of the studentized draws and the standard normal distribution, with the
/// Dallal-Wilkinson / Stephens p-value approximation.
pub fn lilliefors_test(draws: &[f64]) -> Result<TestOutcome> {
    let n = draws.len();
    if n < 5 {
        return Err(Error::InsufficientSample(format!(
            "Lilliefors needs at least 5 draws, got {n}"
        )));
    }
    let nf = n as f64;
    let mean = draws.iter().sum::<f64>() / nf;
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if !(var > 0.0) {
        return Err(Error::Singular("draws have zero variance".into()));
    }
    let sd = var.sqrt();
    let mut sorted: Vec<f64> = draws.iter().map(|x| (x - mean) / sd).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut d_stat: f64 = 0.0;
    for (i, z) in sorted.iter().enumerate() {
        let cdf = normal.cdf(*z);
        let d_plus = (i + 1) as f64 / nf - cdf;
        let d_minus = cdf - i as f64 / nf;
        d_stat = d_stat.max(d_plus).max(d_minus);
    }

    // p-value approximation as in Dallal & Wilkinson (1986), switching to
    // the Stephens polynomial form when it exceeds 0.1
    let (kd, nd) = if n <= 100 {
        (d_stat, nf)
    } else {
        (d_stat * (nf / 100.0).powf(0.49), 100.0)
    };
    let mut p = (-7.01256 * kd * kd * (nd + 2.78019)
        + 2.99587 * kd * (nd + 2.78019).sqrt()
        - 0.122119
        + 0.974598 / nd.sqrt()
        + 1.67997 / nd)
        .exp();
    if p > 0.1 {
        let kk = (nf.sqrt() - 0.01 + 0.85 / nf.sqrt()) * d_stat;
        p = if kk <= 0.302 {
            1.0
        } else if kk <= 0.5 {
            2.76773 - 19.828315 * kk + 80.709644 * kk * kk - 138.55152 * kk.powi(3)
                + 81.218052 * kk.powi(4)
        } else if kk <= 0.9 {
            -4.901232 + 40.662806 * kk - 97.490286 * kk * kk + 94.029866 * kk.powi(3)
                - 32.355711 * kk.powi(4)
        } else if kk <= 1.31 {
            6.198765 - 19.558097 * kk + 23.186922 * kk * kk - 12.234627 * kk.powi(3)
                + 2.423045 * kk.powi(4)
        } else {
            0.0
        };
    }
    Ok(TestOutcome {
        statistic: d_stat,
        p_value: p.clamp(0.0, 1.0),
    })
}
