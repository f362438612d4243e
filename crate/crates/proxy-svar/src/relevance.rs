//! The bootstrap pre-test of instrument relevance: bootstrap replications
//! of the strength estimator are screened with a normality test. Gaussian
//! replications are consistent with strong proxies; rejection signals
//! local-to-zero (weak) proxies.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cmd::{self, CmdOptions, CmdRestrictions, CmdWeighting};
use crate::dataset::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::mbb::{self, BootstrapEnsemble};
use crate::moments::{self, ProxySide};
use crate::normality::{self, EdfVariance};
use crate::optim::GnOptions;
use crate::var::VarFit;

/// Which replication vector feeds the normality test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarthetaChoice {
    /// Full strength vector `theta* = (beta2*', lambda*')'`.
    Theta,
    /// Standardized deviations `sqrt(T) V_theta^-1/2 (theta* - theta_hat)`.
    Gamma,
    /// Impact-block coordinates only (the default).
    Beta2,
    /// Relevance-matrix coordinates only.
    Lambda,
    /// A single coordinate of `theta*`.
    Coordinate(usize),
}

/// Normality test family applied to the replications.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceTest {
    DoornikHansen,
    Lilliefors,
    /// Pointwise EDF statistics on a fixed grid, Bonferroni-combined;
    /// requires a scalar replication choice.
    TauGrid,
}

/// Default evaluation grid of the pointwise EDF statistic.
pub const TAU_GRID: [f64; 5] = [-1.5, -0.5, 0.0, 0.5, 1.5];

/// How `V_sigma_plus` (and through it the CMD weight) is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceEstimator {
    /// Covariance of bootstrap replications of the moments (the default).
    MbbReplications { n_cov: usize },
    /// Closed form under conditionally homoskedastic i.i.d. innovations.
    AnalyticIid,
    /// Skip covariance estimation and weight the CMD step by the identity;
    /// valid as a shortcut under exact identification, where the minimizer
    /// does not depend on the weight.
    Identity,
}

impl Default for CovarianceEstimator {
    fn default() -> Self {
        CovarianceEstimator::MbbReplications { n_cov: 500 }
    }
}

#[derive(Debug, Clone)]
pub struct RelevanceConfig {
    pub side: ProxySide,
    pub lags: usize,
    pub intercept: bool,
    /// Strength restrictions; defaults to the unrestricted pattern (valid
    /// when s = 1).
    pub restrictions: Option<CmdRestrictions>,
    pub vartheta: VarthetaChoice,
    pub test: RelevanceTest,
    pub level: f64,
    /// Number of bootstrap replications; defaults to `floor(sqrt(T))`.
    pub n_override: Option<usize>,
    pub block_length_override: Option<usize>,
    pub covariance: CovarianceEstimator,
    pub seed: u64,
    pub gn: GnOptions,
}

impl Default for RelevanceConfig {
    fn default() -> Self {
        RelevanceConfig {
            side: ProxySide::W,
            lags: 1,
            intercept: false,
            restrictions: None,
            vartheta: VarthetaChoice::Beta2,
            test: RelevanceTest::DoornikHansen,
            level: 0.05,
            n_override: None,
            block_length_override: None,
            covariance: CovarianceEstimator::default(),
            seed: 0,
        gn: GnOptions::default(),
        }
    }
}

/// Outcome of the pre-test, serializable as the JSON result document.
#[derive(Debug, Clone, Serialize)]
pub struct RelevanceTestResult {
    pub test: String,
    pub vartheta: String,
    /// Number of bootstrap replications used.
    pub n: usize,
    pub block_length: usize,
    /// Effective sample length behind the bootstrap.
    pub t: usize,
    pub statistics: Vec<f64>,
    pub p_values: Vec<f64>,
    /// Combined p-value (Bonferroni across coordinates or grid points when
    /// the test produces several).
    pub p_value: f64,
    pub level: f64,
    /// True when the null of relevant (strong) proxies is rejected.
    pub reject: bool,
    pub decision: String,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub n_nonconverged: usize,
}

/// Seed streams derived from the user seed.
fn cov_seed(seed: u64) -> u64 {
    mbb::draw_seed(seed, 0xC0C0)
}
fn test_seed(seed: u64) -> u64 {
    mbb::draw_seed(seed, 0x7E57)
}

/// Estimate `V_sigma_plus` for a fitted system.
pub fn estimate_v_sigma_plus(
    fit: &VarFit,
    data: &TimeSeriesDataset,
    side: ProxySide,
    estimator: CovarianceEstimator,
    block_len: usize,
    seed: u64,
) -> Result<Option<DMatrix<f64>>> {
    match estimator {
        CovarianceEstimator::Identity => Ok(None),
        CovarianceEstimator::AnalyticIid => {
            let m = moments::compute_moments(fit, data, side)?;
            Ok(Some(moments::v_sigma_plus_analytic(&m)))
        }
        CovarianceEstimator::MbbReplications { n_cov } => {
            let ens = mbb::bootstrap_var_proxy(fit, data, side, block_len, n_cov, cov_seed(seed))?;
            let m = moments::compute_moments(fit, data, side)?;
            let sp_ens = ens.sigma_plus_ensemble(m.sigma_plus());
            Ok(Some(sp_ens.scaled_covariance()?))
        }
    }
}

fn select_columns(
    ens: &BootstrapEnsemble,
    gamma: Option<&BootstrapEnsemble>,
    choice: VarthetaChoice,
    n_beta2: usize,
) -> Result<(DMatrix<f64>, String)> {
    let full = ens.to_matrix();
    let q = full.ncols();
    match choice {
        VarthetaChoice::Theta => Ok((full, "theta".into())),
        VarthetaChoice::Beta2 => Ok((full.columns(0, n_beta2).into_owned(), "beta2".into())),
        VarthetaChoice::Lambda => Ok((
            full.columns(n_beta2, q - n_beta2).into_owned(),
            "lambda".into(),
        )),
        VarthetaChoice::Coordinate(i) => {
            if i >= q {
                return Err(Error::Invalid(format!(
                    "coordinate {i} out of range for {q} strength parameters"
                )));
            }
            Ok((full.columns(i, 1).into_owned(), format!("theta[{i}]")))
        }
        VarthetaChoice::Gamma => {
            let g = gamma.ok_or_else(|| {
                Error::Invalid(
                    "standardized replications need V_theta; use a covariance estimator".into(),
                )
            })?;
            Ok((g.to_matrix(), "gamma".into()))
        }
    }
}

/// Run the full pre-test pipeline: VAR fit, moments, strength estimation,
/// bootstrap replications, and the chosen normality test. The null
/// hypothesis is that the proxies are relevant (strong); rejection signals
/// weak proxies.
pub fn relevance_pretest(
    data: &TimeSeriesDataset,
    config: &RelevanceConfig,
) -> Result<RelevanceTestResult> {
    let fit = VarFit::fit(data, config.lags, config.intercept).map_err(|e| e.at_stage("var_fit"))?;
    let mut m =
        moments::compute_moments(&fit, data, config.side).map_err(|e| e.at_stage("moments"))?;

    let t = m.t_w;
    let block_len = config
        .block_length_override
        .unwrap_or_else(|| mbb::block_length(t));
    let n_draws = config
        .n_override
        .unwrap_or_else(|| (t as f64).sqrt().floor() as usize);
    if n_draws < 5 {
        return Err(Error::InsufficientSample(format!(
            "{n_draws} bootstrap replications are too few for a normality test"
        )));
    }

    m.v_sigma_plus =
        estimate_v_sigma_plus(&fit, data, config.side, config.covariance, block_len, config.seed)
            .map_err(|e| e.at_stage("covariance"))?;

    let restr = match &config.restrictions {
        Some(r) => r.clone(),
        None => CmdRestrictions::unrestricted(m.n, m.s),
    };
    let cmd_options = CmdOptions {
        weighting: if m.v_sigma_plus.is_some() {
            CmdWeighting::VMu
        } else {
            CmdWeighting::Identity
        },
        gn: config.gn,
    };
    let theta_fit =
        cmd::cmd_estimate(&m, &restr, &cmd_options, None).map_err(|e| e.at_stage("cmd"))?;

    let ens = mbb::bootstrap_var_proxy(
        &fit,
        data,
        config.side,
        block_len,
        n_draws,
        test_seed(config.seed),
    )
    .map_err(|e| e.at_stage("bootstrap"))?;
    let v_mu = if m.v_sigma_plus.is_some() {
        m.v_mu().map_err(|e| e.at_stage("covariance"))?
    } else {
        DMatrix::identity(moments::mu_len(m.n, m.s), moments::mu_len(m.n, m.s))
    };
    let theta_ens = mbb::bootstrap_theta(
        &ens,
        &theta_fit.theta,
        &v_mu,
        theta_fit.v_theta.as_ref(),
        &restr,
        &config.gn,
        m.v_sigma_plus.is_none(),
    )
    .map_err(|e| e.at_stage("bootstrap"))?;

    let (matrix, vartheta_label) = select_columns(
        &theta_ens.theta,
        theta_ens.gamma.as_ref(),
        config.vartheta,
        restr.n_beta2(),
    )?;

    let (test_label, statistics, p_values, combined) = match config.test {
        RelevanceTest::DoornikHansen => {
            let out = normality::dh_test(&matrix).map_err(|e| e.at_stage("normality_test"))?;
            (
                "doornik_hansen".to_string(),
                vec![out.statistic],
                vec![out.p_value],
                out.p_value,
            )
        }
        RelevanceTest::Lilliefors => {
            let d = matrix.ncols();
            let mut stats = Vec::with_capacity(d);
            let mut ps = Vec::with_capacity(d);
            for j in 0..d {
                let col: Vec<f64> = (0..matrix.nrows()).map(|i| matrix[(i, j)]).collect();
                let out =
                    normality::lilliefors_test(&col).map_err(|e| e.at_stage("normality_test"))?;
                stats.push(out.statistic);
                ps.push(out.p_value);
            }
            let combined = ps
                .iter()
                .fold(f64::INFINITY, |acc, &p| acc.min(p * d as f64))
                .min(1.0);
            ("lilliefors".to_string(), stats, ps, combined)
        }
        RelevanceTest::TauGrid => {
            if matrix.ncols() != 1 {
                return Err(Error::Invalid(
                    "the pointwise EDF test needs a scalar replication choice".into(),
                ));
            }
            // the EDF statistic compares against the standard normal, so it
            // applies to the standardized replications of one coordinate
            let col: Vec<f64> = (0..matrix.nrows()).map(|i| matrix[(i, 0)]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let sd = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
                / (col.len() as f64 - 1.0))
                .sqrt();
            if !(sd > 0.0) {
                return Err(Error::Singular("replications have zero variance".into()));
            }
            let std_col: Vec<f64> = col.iter().map(|x| (x - mean) / sd).collect();
            let normal = Normal::new(0.0, 1.0).expect("standard normal");
            let mut stats = Vec::new();
            let mut ps = Vec::new();
            for &x in TAU_GRID.iter() {
                let tau = normality::tau_statistic(&std_col, x, EdfVariance::Theoretical)
                    .map_err(|e| e.at_stage("normality_test"))?;
                stats.push(tau);
                ps.push(2.0 * (1.0 - normal.cdf(tau.abs())));
            }
            let combined = ps
                .iter()
                .fold(f64::INFINITY, |acc, &p| acc.min(p * TAU_GRID.len() as f64))
                .min(1.0);
            ("tau_grid".to_string(), stats, ps, combined)
        }
    };

    let reject = combined < config.level;
    Ok(RelevanceTestResult {
        test: test_label,
        vartheta: vartheta_label,
        n: n_draws,
        block_length: block_len,
        t,
        statistics,
        p_values,
        p_value: combined,
        level: config.level,
        reject,
        decision: if reject { "weak".into() } else { "relevant".into() },
        seed: config.seed,
        seeds: theta_ens.theta.seeds.clone(),
        n_nonconverged: theta_ens.nonconverged.len(),
    })
}

/// The `floor(sqrt(T))` rule for the replication count.
pub fn default_n_draws(t: usize) -> usize {
    (t as f64).sqrt().floor() as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp;

    #[test]
    fn replication_rule_reference_points() {
        assert_eq!(default_n_draws(381), 19);
        assert_eq!(default_n_draws(176), 13);
        assert_eq!(default_n_draws(88), 9);
        assert_eq!(default_n_draws(250), 15);
    }

    #[test]
    fn strong_sample_usually_accepts() {
        let data = dgp::simulate(&dgp::DgpSpec::s8_strong(250), 7).unwrap();
        let config = RelevanceConfig {
            covariance: CovarianceEstimator::Identity,
            seed: 7,
            ..RelevanceConfig::default()
        };
        let res = relevance_pretest(&data, &config).unwrap();
        assert_eq!(res.n, 15);
        assert_eq!(res.block_length, 20);
        assert_eq!(res.t, 250);
        assert!(res.p_value >= 0.0 && res.p_value <= 1.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let data = dgp::simulate(&dgp::DgpSpec::s8_weak(250), 11).unwrap();
        let config = RelevanceConfig {
            covariance: CovarianceEstimator::Identity,
            seed: 42,
            ..RelevanceConfig::default()
        };
        let a = relevance_pretest(&data, &config).unwrap();
        let b = relevance_pretest(&data, &config).unwrap();
        assert_eq!(a.statistics, b.statistics);
        assert_eq!(a.p_values, b.p_values);
    }

    #[test]
    fn tau_grid_requires_scalar() {
        let data = dgp::simulate(&dgp::DgpSpec::s8_strong(250), 3).unwrap();
        let config = RelevanceConfig {
            covariance: CovarianceEstimator::Identity,
            test: RelevanceTest::TauGrid,
            vartheta: VarthetaChoice::Beta2,
            seed: 3,
            ..RelevanceConfig::default()
        };
        assert!(relevance_pretest(&data, &config).is_err());
        let config = RelevanceConfig {
            covariance: CovarianceEstimator::Identity,
            test: RelevanceTest::TauGrid,
            vartheta: VarthetaChoice::Coordinate(0),
            n_override: Some(30),
            seed: 3,
            ..RelevanceConfig::default()
        };
        let res = relevance_pretest(&data, &config).unwrap();
        assert_eq!(res.statistics.len(), TAU_GRID.len());
    }

    #[test]
    fn json_document_shape() {
        let data = dgp::simulate(&dgp::DgpSpec::s8_strong(250), 5).unwrap();
        let config = RelevanceConfig {
            covariance: CovarianceEstimator::Identity,
            seed: 5,
            ..RelevanceConfig::default()
        };
        let res = relevance_pretest(&data, &config).unwrap();
        let doc = serde_json::to_value(&res).unwrap();
        for key in ["test", "vartheta", "n", "statistics", "p_value", "decision", "seeds"] {
            assert!(doc.get(key).is_some(), "missing key {key}");
        }
    }
}
