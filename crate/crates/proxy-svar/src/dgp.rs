//! Simulation design for the Monte Carlo experiments: a three-variable
//! SVAR(1) with one instrumented non-target shock, plus optional weak
//! proxies for the target shock.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::linalg;

/// Slope matrix of the benchmark simulation design (spectral radius 0.86).
pub fn s8_pi1() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        3,
        3,
        &[0.67, -0.12, 0.42, 0.03, 0.43, 0.08, 0.14, 0.02, 0.58],
    )
}

/// On-impact matrix of the benchmark design.
pub fn s8_b() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        3,
        3,
        &[0.196, 0.0, 0.19, 0.210, 0.16, -0.32, 0.017, 0.0, 0.09],
    )
}

/// Impact column of the target shock implied by [`s8_b`].
pub fn s8_b1() -> DVector<f64> {
    DVector::from_vec(vec![0.196, 0.210, 0.017])
}

/// Target row of `A = B^-1` implied by [`s8_b`], `(6.246, 0, -13.185)`.
pub fn s8_a1() -> DVector<f64> {
    DVector::from_vec(vec![6.246, 0.0, -13.185])
}

/// Innovation law for the primitive draws.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub enum Innovations {
    Iid,
    /// Per-coordinate GARCH(1,1): `var_t = rho0 + rho1 x_{t-1}^2 + rho2 var_{t-1}`.
    Garch { rho0: f64, rho1: f64, rho2: f64 },
}

impl Innovations {
    /// GARCH with the benchmark coefficients (0.05, 0.93) and unit
    /// unconditional variance.
    pub fn benchmark_garch() -> Self {
        Innovations::Garch {
            rho0: 0.02,
            rho1: 0.05,
            rho2: 0.93,
        }
    }
}

/// Strength of the proxy-shock link.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub enum ProxyStrength {
    /// Fixed relevance coefficient, independent of the sample size.
    Strong { lambda: f64 },
    /// Local-to-zero link `lambda_T = c / sqrt(T)`, with `c` calibrated so
    /// that the proxy-shock correlation equals `corr` at sample size `t_ref`.
    LocalToZero { corr: f64, t_ref: usize },
}

impl ProxyStrength {
    /// Relevance coefficient at sample size `t` given measurement noise `sigma`.
    pub fn lambda_at(&self, t: usize, sigma: f64) -> f64 {
        match *self {
            ProxyStrength::Strong { lambda } => lambda,
            ProxyStrength::LocalToZero { corr, t_ref } => {
                let lambda_ref = corr * sigma / (1.0 - corr * corr).sqrt();
                lambda_ref * (t_ref as f64 / t as f64).sqrt()
            }
        }
    }
}

/// Proxy equation `w = lambda * shock + sigma * noise`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ProxyEquation {
    pub strength: ProxyStrength,
    pub sigma: f64,
    /// Index of the structural shock the proxy loads on.
    pub shock: usize,
}

/// Full simulation specification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpSpec {
    /// Effective sample length; the generated dataset carries one extra
    /// leading row per lag so that a VAR fit leaves exactly `t` residuals.
    pub t: usize,
    #[serde(with = "matrix_serde")]
    pub pi1: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub b: DMatrix<f64>,
    /// Proxy for a non-target shock (the indirect route), if any.
    pub w: Option<ProxyEquation>,
    /// Proxy for the target shock (the direct route), if any.
    pub z: Option<ProxyEquation>,
    pub innovations: Innovations,
    pub burn_in: usize,
}

/// Measurement-noise scale of the benchmark proxy; with `lambda = 0.8` the
/// implied proxy-shock correlation is `0.8 / sqrt(0.64 + 1.21) = 0.588`.
pub const S8_SIGMA_W: f64 = 1.1;

impl DgpSpec {
    /// Strong-proxy benchmark scenario.
    pub fn s8_strong(t: usize) -> DgpSpec {
        DgpSpec {
            t,
            pi1: s8_pi1(),
            b: s8_b(),
            w: Some(ProxyEquation {
                strength: ProxyStrength::Strong { lambda: 0.8 },
                sigma: S8_SIGMA_W,
                shock: 2,
            }),
            z: None,
            innovations: Innovations::Iid,
            burn_in: 200,
        }
    }

    /// Local-to-zero proxy with correlation 0.25 at `T = 250`.
    pub fn s8_moderately_weak(t: usize) -> DgpSpec {
        let mut spec = DgpSpec::s8_strong(t);
        spec.w = Some(ProxyEquation {
            strength: ProxyStrength::LocalToZero {
                corr: 0.25,
                t_ref: 250,
            },
            sigma: S8_SIGMA_W,
            shock: 2,
        });
        spec
    }

    /// Local-to-zero proxy with correlation 0.05 at `T = 250`.
    pub fn s8_weak(t: usize) -> DgpSpec {
        let mut spec = DgpSpec::s8_strong(t);
        spec.w = Some(ProxyEquation {
            strength: ProxyStrength::LocalToZero {
                corr: 0.05,
                t_ref: 250,
            },
            sigma: S8_SIGMA_W,
            shock: 2,
        });
        spec
    }

    pub fn with_garch(mut self) -> DgpSpec {
        self.innovations = Innovations::benchmark_garch();
        self
    }

    /// Add a weak proxy for the target shock (correlation 0.045 at `T = 250`).
    pub fn with_weak_z(mut self) -> DgpSpec {
        self.z = Some(ProxyEquation {
            strength: ProxyStrength::LocalToZero {
                corr: 0.045,
                t_ref: 250,
            },
            sigma: 1.0,
            shock: 0,
        });
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.pi1.nrows();
        if self.pi1.ncols() != n || self.b.nrows() != n || self.b.ncols() != n {
            return Err(Error::Dimension("pi1 and b must be square of equal size".into()));
        }
        if linalg::spectral_radius(&self.pi1) >= 1.0 {
            return Err(Error::Invalid("slope matrix is not stable".into()));
        }
        if let Innovations::Garch { rho0, rho1, rho2 } = self.innovations {
            if rho0 <= 0.0 || rho1 < 0.0 || rho2 < 0.0 || rho1 + rho2 >= 1.0 {
                return Err(Error::Invalid("GARCH coefficients must be stationary".into()));
            }
        }
        for (eq, label) in [(&self.w, "w"), (&self.z, "z")] {
            if let Some(eq) = eq {
                if eq.shock >= n {
                    return Err(Error::Invalid(format!("{label} shock index out of range")));
                }
                if eq.sigma <= 0.0 {
                    return Err(Error::Invalid(format!("{label} noise scale must be positive")));
                }
                if let ProxyStrength::LocalToZero { corr, .. } = eq.strength {
                    if !(corr.abs() < 1.0) {
                        return Err(Error::Invalid("target correlation must lie in (-1, 1)".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Measurement-noise scale that yields a given proxy-shock correlation for a
/// fixed relevance coefficient: inverts `corr = lambda / sqrt(lambda^2 + sigma^2)`.
pub fn sigma_for_corr(lambda: f64, corr: f64) -> f64 {
    lambda * (1.0 - corr * corr).sqrt() / corr
}

struct GarchState {
    var: Vec<f64>,
    last_sq: Vec<f64>,
}

/// Simulate one path of the design.
///
/// Draw order per period is fixed (structural shocks, then w noise, then z
/// noise), so a path is a pure function of `(spec, seed)`.
pub fn simulate(spec: &DgpSpec, seed: u64) -> Result<TimeSeriesDataset> {
    spec.validate()?;
    let n = spec.pi1.nrows();
    let n_draws = n + usize::from(spec.w.is_some()) + usize::from(spec.z.is_some());
    let keep = spec.t + 1; // one presample row for the VAR(1) fit
    let steps = spec.burn_in + keep;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut garch = match spec.innovations {
        Innovations::Iid => None,
        Innovations::Garch { rho0, rho1, rho2 } => {
            let uncond = rho0 / (1.0 - rho1 - rho2);
            Some(GarchState {
                var: vec![uncond; n_draws],
                last_sq: vec![0.0; n_draws],
            })
        }
    };

    let lambda_w = spec.w.map(|eq| eq.strength.lambda_at(spec.t, eq.sigma));
    let lambda_z = spec.z.map(|eq| eq.strength.lambda_at(spec.t, eq.sigma));

    let mut y = DMatrix::zeros(keep, n);
    let mut w = spec.w.map(|_| DMatrix::zeros(keep, 1));
    let mut z = spec.z.map(|_| DMatrix::zeros(keep, 1));

    let mut state = DVector::zeros(n);
    let mut draws = vec![0.0f64; n_draws];
    for step in 0..steps {
        for (i, d) in draws.iter_mut().enumerate() {
            let raw: f64 = StandardNormal.sample(&mut rng);
            *d = match &mut garch {
                None => raw,
                Some(g) => {
                    if step > 0 {
                        let Innovations::Garch { rho0, rho1, rho2 } = spec.innovations else {
                            unreachable!()
                        };
                        g.var[i] = rho0 + rho1 * g.last_sq[i] + rho2 * g.var[i];
                    }
                    let x = g.var[i].sqrt() * raw;
                    g.last_sq[i] = x * x;
                    x
                }
            };
        }
        let eps = DVector::from_fn(n, |i, _| draws[i]);
        let u = &spec.b * &eps;
        state = &spec.pi1 * state + u;
        if step >= spec.burn_in {
            let row = step - spec.burn_in;
            for c in 0..n {
                y[(row, c)] = state[c];
            }
            let mut offset = n;
            if let (Some(eq), Some(wm)) = (spec.w, w.as_mut()) {
                wm[(row, 0)] = lambda_w.unwrap() * eps[eq.shock] + eq.sigma * draws[offset];
            }
            if spec.w.is_some() {
                offset += 1;
            }
            if let (Some(eq), Some(zm)) = (spec.z, z.as_mut()) {
                zm[(row, 0)] = lambda_z.unwrap() * eps[eq.shock] + eq.sigma * draws[offset];
            }
        }
    }

    TimeSeriesDataset::new(y, w, z)
}

/// Pure white-noise dataset, used as a degenerate fixture in tests.
pub fn sample_iid_gaussian(n: usize, t: usize, seed: u64) -> TimeSeriesDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = DMatrix::from_fn(t, n, |_, _| StandardNormal.sample(&mut rng));
    TimeSeriesDataset::new(y, None, None).unwrap()
}

mod matrix_serde {
    use nalgebra::DMatrix;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, ser: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.nrows())
            .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
            .collect();
        serde::Serialize::serialize(&rows, ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(de)?;
        let nr = rows.len();
        if nr == 0 {
            return Err(D::Error::custom("empty matrix"));
        }
        let nc = rows[0].len();
        if rows.iter().any(|r| r.len() != nc) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        let mut m = DMatrix::zeros(nr, nc);
        for (r, row) in rows.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                m[(r, c)] = *v;
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut cab = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for i in 0..a.len() {
            cab += (a[i] - ma) * (b[i] - mb);
            va += (a[i] - ma).powi(2);
            vb += (b[i] - mb).powi(2);
        }
        cab / (va * vb).sqrt()
    }

    #[test]
    fn strong_proxy_correlation_is_0588() {
        // regenerate the instrumented shock from the path to measure the
        // proxy-shock correlation directly
        let spec = DgpSpec::s8_strong(100_000);
        let data = simulate(&spec, 42).unwrap();
        let b_inv = s8_b().try_inverse().unwrap();
        let mut shocks = Vec::with_capacity(data.t_rows() - 1);
        let mut w = Vec::with_capacity(data.t_rows() - 1);
        for t in 1..data.t_rows() {
            let u = data.y.row(t).transpose() - s8_pi1() * data.y.row(t - 1).transpose();
            let eps = &b_inv * u;
            shocks.push(eps[2]);
            w.push(data.w.as_ref().unwrap()[(t, 0)]);
        }
        let corr = sample_corr(&w, &shocks);
        assert!((corr - 0.588).abs() < 0.01, "corr = {corr}");
    }

    #[test]
    fn moderately_weak_correlation_decays() {
        // c calibrated at T=250 for corr 0.25 implies corr ~= 0.13 at T=1000
        let eq = DgpSpec::s8_moderately_weak(1_000).w.unwrap();
        let lambda = eq.strength.lambda_at(1_000, eq.sigma);
        let corr = lambda / (lambda * lambda + eq.sigma * eq.sigma).sqrt();
        assert!((corr - 0.13).abs() < 0.005, "corr = {corr}");
    }

    #[test]
    fn garch_has_fat_tails() {
        let spec = DgpSpec::s8_strong(100_000).with_garch();
        let data = simulate(&spec, 9).unwrap();
        // kurtosis of the instrumented shock recovered from the path
        let b_inv = s8_b().try_inverse().unwrap();
        let mut xs = Vec::new();
        for t in 1..data.t_rows() {
            let u = data.y.row(t).transpose() - s8_pi1() * data.y.row(t - 1).transpose();
            xs.push((&b_inv * u)[2]);
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        let kurt = m4 / (m2 * m2);
        assert!(kurt > 3.1, "kurtosis = {kurt}");
    }

    #[test]
    fn sigma_for_corr_roundtrip() {
        let sigma = sigma_for_corr(0.8, 0.588);
        let corr = 0.8 / (0.64f64 + sigma * sigma).sqrt();
        assert!((corr - 0.588).abs() < 1e-12);
        assert!((sigma - 1.1).abs() < 0.005);
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = DgpSpec::s8_strong(500).with_weak_z();
        let a = simulate(&spec, 123).unwrap();
        let b = simulate(&spec, 123).unwrap();
        assert_eq!(a.y, b.y);
        assert_eq!(a.w.unwrap(), b.w.unwrap());
        assert_eq!(a.z.unwrap(), b.z.unwrap());
    }
}
