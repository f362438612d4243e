//! Seeded, parallel Monte Carlo runners: rejection frequencies of the
//! bootstrap relevance pre-test across proxy-strength scenarios, and
//! coverage of impulse-response confidence intervals across methods.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::cmd::{self, CmdOptions, CmdRestrictions, CmdWeighting};
use crate::dataset::TimeSeriesDataset;
use crate::dgp::{self, DgpSpec};
use crate::error::{Error, Result};
use crate::mbb;
use crate::md::{self, MdOptions, SigmaPropagation};
use crate::moments::{self, ProxySide};
use crate::normality;
use crate::optim::GnOptions;
use crate::relevance::{self, CovarianceEstimator};
use crate::restrictions::{Entry, RestrictionSet, Target};
use crate::robust::{self, ReducedFormKappa};
use crate::var::VarFit;

/// Per-rep seed stream: scenario index then replication index.
pub fn rep_seed(master_seed: u64, scenario: u64, rep: u64) -> u64 {
    mbb::draw_seed(mbb::draw_seed(master_seed, scenario.wrapping_add(0x5CE0)), rep)
}

/// One scenario row of the rejection-frequency experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Table1Scenario {
    pub name: String,
    pub spec: DgpSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Table1Config {
    pub scenarios: Vec<Table1Scenario>,
    /// Monte Carlo replications per scenario.
    pub reps: usize,
    pub level: f64,
    pub master_seed: u64,
    /// Override of the bootstrap replication count (default `sqrt(T)` rule).
    pub n_override: Option<usize>,
    pub block_length_override: Option<usize>,
    /// The benchmark design is exactly identified, so the identity weight
    /// reproduces the weighted estimator draw by draw without the
    /// covariance estimation cost.
    pub covariance: CovarianceEstimator,
}

impl Table1Config {
    /// The full three-panel layout: strong / moderately weak / weak, each
    /// under i.i.d. and GARCH innovations, at both sample sizes.
    pub fn benchmark(reps: usize, master_seed: u64) -> Table1Config {
        let mut scenarios = Vec::new();
        for (label, strength) in [
            ("strong", 0usize),
            ("moderately_weak", 1),
            ("weak", 2),
        ] {
            for t in [250usize, 1000] {
                for garch in [false, true] {
                    let mut spec = match strength {
                        0 => DgpSpec::s8_strong(t),
                        1 => DgpSpec::s8_moderately_weak(t),
                        _ => DgpSpec::s8_weak(t),
                    };
                    if garch {
                        spec = spec.with_garch();
                    }
                    scenarios.push(Table1Scenario {
                        name: format!(
                            "{label}_{}_T{t}",
                            if garch { "garch" } else { "iid" }
                        ),
                        spec,
                    });
                }
            }
        }
        Table1Config {
            scenarios,
            reps,
            level: 0.05,
            master_seed,
            n_override: None,
            block_length_override: None,
            covariance: CovarianceEstimator::Identity,
        }
    }
}

/// Rejection frequencies for one scenario.
#[derive(Debug, Clone, Serialize)]
pub struct Table1Row {
    pub scenario: String,
    pub t: usize,
    pub n: usize,
    pub reps: usize,
    pub failures: usize,
    /// Omnibus test on the impact-block replications.
    pub dh_beta2: f64,
    /// Univariate test per strength coordinate.
    pub ks_theta: Vec<f64>,
    /// Binomial standard error of the omnibus rate.
    pub dh_se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Table1Report {
    pub rows: Vec<Table1Row>,
    pub level: f64,
    pub master_seed: u64,
}

struct PretestDraws {
    theta_matrix: DMatrix<f64>,
    n_beta2: usize,
}

/// Shared per-rep pipeline: simulate nothing; fit, moments, strength
/// estimate, and the bootstrap replication matrix of `theta*`.
fn pretest_draws(
    data: &TimeSeriesDataset,
    lags: usize,
    n_override: Option<usize>,
    block_override: Option<usize>,
    covariance: CovarianceEstimator,
    seed: u64,
    gn: &GnOptions,
) -> Result<PretestDraws> {
    let fit = VarFit::fit(data, lags, false)?;
    let mut m = moments::compute_moments(&fit, data, ProxySide::W)?;
    let t = m.t_w;
    let block_len = block_override.unwrap_or_else(|| mbb::block_length(t));
    let n_draws = n_override.unwrap_or_else(|| relevance::default_n_draws(t));
    m.v_sigma_plus =
        relevance::estimate_v_sigma_plus(&fit, data, ProxySide::W, covariance, block_len, seed)?;
    let restr = CmdRestrictions::unrestricted(m.n, m.s);
    let cmd_options = CmdOptions {
        weighting: if m.v_sigma_plus.is_some() {
            CmdWeighting::VMu
        } else {
            CmdWeighting::Identity
        },
        gn: *gn,
    };
    let theta_fit = cmd::cmd_estimate(&m, &restr, &cmd_options, None)?;
    let ens = mbb::bootstrap_var_proxy(
        &fit,
        data,
        ProxySide::W,
        block_len,
        n_draws,
        mbb::draw_seed(seed, 0x7E57),
    )?;
    let v_mu = if m.v_sigma_plus.is_some() {
        m.v_mu()?
    } else {
        DMatrix::identity(moments::mu_len(m.n, m.s), moments::mu_len(m.n, m.s))
    };
    let theta_ens = mbb::bootstrap_theta(
        &ens,
        &theta_fit.theta,
        &v_mu,
        theta_fit.v_theta.as_ref(),
        &restr,
        gn,
        m.v_sigma_plus.is_none(),
    )?;
    Ok(PretestDraws {
        theta_matrix: theta_ens.theta.to_matrix(),
        n_beta2: restr.n_beta2(),
    })
}

/// Run the rejection-frequency experiment.
pub fn run_table1(config: &Table1Config) -> Result<Table1Report> {
    if config.reps == 0 {
        return Err(Error::Config("replication count must be positive".into()));
    }
    let gn = GnOptions::default();
    let mut rows = Vec::with_capacity(config.scenarios.len());
    for (si, scenario) in config.scenarios.iter().enumerate() {
        scenario.spec.validate()?;
        let q_theta = scenario.spec.pi1.nrows() + 1;
        let outcomes: Vec<Option<(bool, Vec<bool>)>> = (0..config.reps)
            .into_par_iter()
            .map(|rep| {
                let seed = rep_seed(config.master_seed, si as u64, rep as u64);
                let run = || -> Result<(bool, Vec<bool>)> {
                    let data = dgp::simulate(&scenario.spec, seed)?;
                    let draws = pretest_draws(
                        &data,
                        1,
                        config.n_override,
                        config.block_length_override,
                        config.covariance,
                        seed,
                        &gn,
                    )?;
                    let beta2 = draws
                        .theta_matrix
                        .columns(0, draws.n_beta2)
                        .into_owned();
                    let dh = normality::dh_test(&beta2)?;
                    let mut ks = Vec::with_capacity(draws.theta_matrix.ncols());
                    for j in 0..draws.theta_matrix.ncols() {
                        let col: Vec<f64> = (0..draws.theta_matrix.nrows())
                            .map(|i| draws.theta_matrix[(i, j)])
                            .collect();
                        ks.push(normality::lilliefors_test(&col)?.p_value < config.level);
                    }
                    Ok((dh.p_value < config.level, ks))
                };
                run().ok()
            })
            .collect();

        let mut failures = 0usize;
        let mut dh_rej = 0usize;
        let mut ks_rej = vec![0usize; q_theta];
        let mut ok = 0usize;
        for o in &outcomes {
            match o {
                None => failures += 1,
                Some((dh, ks)) => {
                    ok += 1;
                    if *dh {
                        dh_rej += 1;
                    }
                    for (j, r) in ks.iter().enumerate() {
                        if *r {
                            ks_rej[j] += 1;
                        }
                    }
                }
            }
        }
        if ok == 0 {
            return Err(Error::Numerical(format!(
                "every replication of scenario '{}' failed",
                scenario.name
            )));
        }
        let dh_rate = dh_rej as f64 / ok as f64;
        rows.push(Table1Row {
            scenario: scenario.name.clone(),
            t: scenario.spec.t,
            n: config
                .n_override
                .unwrap_or_else(|| relevance::default_n_draws(scenario.spec.t)),
            reps: ok,
            failures,
            dh_beta2: dh_rate,
            ks_theta: ks_rej.iter().map(|&r| r as f64 / ok as f64).collect(),
            dh_se: (dh_rate * (1.0 - dh_rate) / ok as f64).sqrt(),
        });
    }
    Ok(Table1Report {
        rows,
        level: config.level,
        master_seed: config.master_seed,
    })
}

/// Write the rejection table with one scenario per row.
pub fn table1_to_csv(report: &Table1Report, path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    let q = report.rows.first().map_or(0, |r| r.ks_theta.len());
    let mut header = vec![
        "scenario".to_string(),
        "T".into(),
        "N".into(),
        "reps".into(),
        "failures".into(),
        "dh_beta2".into(),
        "dh_se".into(),
    ];
    header.extend((0..q).map(|j| format!("ks_theta{}", j + 1)));
    wtr.write_record(&header)?;
    for row in &report.rows {
        let mut rec = vec![
            row.scenario.clone(),
            row.t.to_string(),
            row.n.to_string(),
            row.reps.to_string(),
            row.failures.to_string(),
            format!("{:.6}", row.dh_beta2),
            format!("{:.6}", row.dh_se),
        ];
        rec.extend(row.ks_theta.iter().map(|v| format!("{v:.6}")));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Interval-construction methods compared in the coverage experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageMethod {
    /// Indirect-MD point estimate with delta-method bands.
    IndirectMdDelta,
    /// Indirect-MD point estimate with Hall percentile bootstrap bands.
    IndirectMdHall,
    /// Direct plug-in estimate treating the target proxy as strong.
    PluginDirect,
    /// Weak-instrument-robust test inversion.
    RobustInversion,
}

impl CoverageMethod {
    pub fn label(&self) -> &'static str {
        match self {
            CoverageMethod::IndirectMdDelta => "indirect_md_delta",
            CoverageMethod::IndirectMdHall => "indirect_md_hall",
            CoverageMethod::PluginDirect => "plugin_direct",
            CoverageMethod::RobustInversion => "robust_inversion",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub spec: DgpSpec,
    pub reps: usize,
    pub level: f64,
    pub h_max: usize,
    /// Zero-based index of the response variable tracked.
    pub response_var: usize,
    pub methods: Vec<CoverageMethod>,
    pub master_seed: u64,
    /// Run the relevance pre-test per replication and report conditional
    /// coverage columns.
    pub with_pretest: bool,
    /// Bootstrap draws behind the Hall bands.
    pub n_hall: usize,
    /// Bootstrap draws behind the robust-inversion covariance.
    pub n_cov: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageRow {
    pub method: String,
    pub h: usize,
    pub covered: usize,
    pub applicable: usize,
    /// Coverage among replications where the pre-test accepted relevance.
    pub accept_covered: usize,
    pub accept_n: usize,
    /// Coverage among replications where the pre-test rejected.
    pub reject_covered: usize,
    pub reject_n: usize,
}

impl CoverageRow {
    pub fn rate(&self) -> f64 {
        self.covered as f64 / self.applicable.max(1) as f64
    }

    pub fn accept_rate(&self) -> f64 {
        self.accept_covered as f64 / self.accept_n.max(1) as f64
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageTable {
    pub rows: Vec<CoverageRow>,
    pub reps: usize,
    pub failures: usize,
    pub pretest_rejections: usize,
    pub level: f64,
    pub master_seed: u64,
}

impl CoverageTable {
    pub fn row(&self, method: CoverageMethod, h: usize) -> Option<&CoverageRow> {
        self.rows
            .iter()
            .find(|r| r.method == method.label() && r.h == h)
    }
}

struct RepCoverage {
    per_method: Vec<Option<Vec<bool>>>,
    pretest_reject: Option<bool>,
}

/// True responses of the tracked variable to the target shock.
pub fn true_responses(spec: &DgpSpec, response_var: usize, h_max: usize) -> Vec<f64> {
    let b1 = spec.b.column(0).into_owned();
    let mut out = Vec::with_capacity(h_max + 1);
    let mut state = b1.clone();
    for _ in 0..=h_max {
        out.push(state[response_var]);
        state = &spec.pi1 * state;
    }
    out
}

fn mc_a1_restriction(n: usize) -> RestrictionSet {
    // the benchmark maintains a zero on the non-instrumented non-target
    // coefficient of the target row
    let mut entries = Vec::with_capacity(n);
    entries.push(Entry::free("a11"));
    for j in 1..n {
        if j == n - 1 {
            entries.push(Entry::free(&format!("a1{}", j + 1)));
        } else {
            entries.push(Entry::Fixed(0.0));
        }
    }
    RestrictionSet::from_pattern(1, n, &entries, Target::A1).unwrap()
}

fn run_coverage_rep(config: &CoverageConfig, seed: u64, truth: &[f64]) -> Result<RepCoverage> {
    let spec = &config.spec;
    let data = dgp::simulate(spec, seed)?;
    let fit = VarFit::fit(&data, 1, false)?;
    let n = fit.n;
    let h_max = config.h_max;
    let gn = GnOptions::default();

    let needs_w = config.methods.iter().any(|m| {
        matches!(
            m,
            CoverageMethod::IndirectMdDelta | CoverageMethod::IndirectMdHall
        )
    }) || config.with_pretest;

    let mut m_w = None;
    if needs_w {
        let mut m = moments::compute_moments(&fit, &data, ProxySide::W)?;
        m.v_sigma_plus = Some(moments::v_sigma_plus_analytic(&m));
        m_w = Some(m);
    }

    let mut pretest_reject = None;
    if config.with_pretest {
        let m = m_w.as_ref().expect("w moments prepared");
        let t = m.t_w;
        let block_len = mbb::block_length(t);
        let n_draws = relevance::default_n_draws(t);
        let restr = CmdRestrictions::unrestricted(m.n, m.s);
        let theta_fit = cmd::cmd_estimate(
            m,
            &restr,
            &CmdOptions {
                weighting: CmdWeighting::Identity,
                gn,
            },
            None,
        )?;
        let ens = mbb::bootstrap_var_proxy(
            &fit,
            &data,
            ProxySide::W,
            block_len,
            n_draws,
            mbb::draw_seed(seed, 0x7E57),
        )?;
        let o = moments::mu_len(m.n, m.s);
        let theta_ens = mbb::bootstrap_theta(
            &ens,
            &theta_fit.theta,
            &DMatrix::identity(o, o),
            None,
            &restr,
            &gn,
            true,
        )?;
        let beta2 = theta_ens
            .theta
            .to_matrix()
            .columns(0, restr.n_beta2())
            .into_owned();
        pretest_reject = Some(normality::dh_test(&beta2)?.p_value < 0.05);
    }

    let mut md_fit = None;
    let a1_restr = mc_a1_restriction(n);
    if config
        .methods
        .iter()
        .any(|m| matches!(m, CoverageMethod::IndirectMdDelta | CoverageMethod::IndirectMdHall))
    {
        let m = m_w.as_ref().expect("w moments prepared");
        md_fit = Some(md::md_estimate(m, &a1_restr, &MdOptions::default())?);
    }

    let mut per_method = Vec::with_capacity(config.methods.len());
    for method in &config.methods {
        let covers: Option<Vec<bool>> = match method {
            CoverageMethod::IndirectMdDelta => {
                let m = m_w.as_ref().expect("w moments prepared");
                let fit_md = md_fit.as_ref().expect("md fit prepared");
                md::delta_method_irf_ci(
                    fit_md,
                    &fit,
                    m,
                    &a1_restr,
                    0,
                    h_max,
                    config.level,
                    SigmaPropagation::Full,
                )
                .ok()
                .map(|irf| {
                    (0..=h_max)
                        .map(|h| {
                            truth[h] >= irf.lower.as_ref().unwrap()[(h, config.response_var)]
                                && truth[h]
                                    <= irf.upper.as_ref().unwrap()[(h, config.response_var)]
                        })
                        .collect()
                })
            }
            CoverageMethod::IndirectMdHall => {
                let m = m_w.as_ref().expect("w moments prepared");
                let fit_md = md_fit.as_ref().expect("md fit prepared");
                hall_bands_cover(
                    &fit,
                    &data,
                    m,
                    fit_md,
                    &a1_restr,
                    config,
                    seed,
                    truth,
                    &gn,
                )
                .ok()
            }
            CoverageMethod::PluginDirect => {
                plugin_direct_cover(&fit, &data, config, truth, &gn).ok()
            }
            CoverageMethod::RobustInversion => {
                robust_inversion_cover(&fit, &data, spec, config, seed, truth).ok()
            }
        };
        per_method.push(covers);
    }

    Ok(RepCoverage {
        per_method,
        pretest_reject,
    })
}

#[allow(clippy::too_many_arguments)]
fn hall_bands_cover(
    fit: &VarFit,
    data: &TimeSeriesDataset,
    m: &moments::ProxyMoments,
    fit_md: &md::MdFit,
    a1_restr: &RestrictionSet,
    config: &CoverageConfig,
    seed: u64,
    truth: &[f64],
    gn: &GnOptions,
) -> Result<Vec<bool>> {
    let block_len = mbb::block_length(m.t_w);
    let ens = mbb::bootstrap_var_proxy(
        fit,
        data,
        ProxySide::W,
        block_len,
        config.n_hall,
        mbb::draw_seed(seed, 0xA117),
    )?;
    let md_opts = MdOptions {
        weighting: md::MdWeighting::Identity,
        gn: *gn,
        sigma_uw_override: None,
    };
    let paths: Vec<DMatrix<f64>> = ens
        .draws
        .par_iter()
        .map(|draw| -> Result<DMatrix<f64>> {
            let mut dm = m.clone();
            dm.sigma_u = draw.sigma_u.clone();
            dm.sigma_uw = draw.sigma_uw.clone();
            dm.omega_w = draw.sigma_uw.transpose()
                * crate::linalg::inverse(&draw.sigma_u, "Sigma_u*")?
                * &draw.sigma_uw;
            dm.v_sigma_plus = None;
            let fit_star = md::md_estimate(&dm, a1_restr, &md_opts)?;
            let mut values = DMatrix::zeros(config.h_max + 1, 1);
            let mut state = fit_star.b1.column(0).into_owned();
            for h in 0..=config.h_max {
                values[(h, 0)] = state[config.response_var];
                state = &draw.pi * state;
            }
            Ok(values)
        })
        .collect::<Result<Vec<_>>>()?;

    let point = fit.irf(&fit_md.b1, 0, config.h_max)?;
    let point_path = crate::var::IrfPath {
        h_max: config.h_max,
        values: DMatrix::from_fn(config.h_max + 1, 1, |h, _| {
            point.values[(h, config.response_var)]
        }),
        shock: 0,
        lower: None,
        upper: None,
        level: None,
    };
    let banded = mbb::hall_percentile_ci(&point_path, &paths, config.level)?;
    Ok((0..=config.h_max)
        .map(|h| {
            truth[h] >= banded.lower.as_ref().unwrap()[(h, 0)]
                && truth[h] <= banded.upper.as_ref().unwrap()[(h, 0)]
        })
        .collect())
}

/// Direct plug-in bands: the strength machinery applied to the target
/// proxies, treated as strong.
fn plugin_direct_cover(
    fit: &VarFit,
    data: &TimeSeriesDataset,
    config: &CoverageConfig,
    truth: &[f64],
    gn: &GnOptions,
) -> Result<Vec<bool>> {
    let mut m = moments::compute_moments(fit, data, ProxySide::Z)?;
    m.v_sigma_plus = Some(moments::v_sigma_plus_analytic(&m));
    let restr = CmdRestrictions::unrestricted(m.n, m.s);
    let theta_fit = cmd::cmd_estimate(
        &m,
        &restr,
        &CmdOptions {
            weighting: CmdWeighting::VMu,
            gn: *gn,
        },
        None,
    )?;
    let v_theta = theta_fit
        .v_theta
        .as_ref()
        .ok_or_else(|| Error::Singular("strength covariance unavailable".into()))?;
    let b1_hat = theta_fit.b2.clone(); // impact column of the target shock
    let n = fit.n;
    let lags = fit.lags;
    let t = m.t_w as f64;

    let c = fit.companion();
    let sel = fit.selection();
    let mut c_pows = Vec::with_capacity(config.h_max + 1);
    c_pows.push(DMatrix::identity(n * lags, n * lags));
    for _ in 1..=config.h_max {
        c_pows.push(&c * c_pows.last().unwrap());
    }
    let xtx_lag = fit.xtx_inv.view((0, 0), (n * lags, n * lags)).into_owned();
    let v_pi = xtx_lag.kronecker(&fit.sigma_u);
    let b_tilde = sel.transpose() * b1_hat.column(0);

    let z = statrs::distribution::Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(1.0 - (1.0 - config.level) / 2.0);

    let mut covers = Vec::with_capacity(config.h_max + 1);
    for h in 0..=config.h_max {
        let mut j_pi = DMatrix::zeros(n, n * n * lags);
        for i in 0..h {
            let m_i = &sel * &c_pows[i];
            let v_i = &c_pows[h - 1 - i] * &b_tilde;
            for cc in 0..n * lags {
                for r in 0..n {
                    let col = cc * n + r;
                    for row in 0..n {
                        j_pi[(row, col)] += v_i[cc] * m_i[(row, r)];
                    }
                }
            }
        }
        let f_h = &sel * &c_pows[h] * sel.transpose();
        // beta2 occupies the leading block of theta
        let mut j_theta = DMatrix::zeros(n, theta_fit.theta.len());
        for r in 0..n {
            for ccol in 0..n {
                j_theta[(r, ccol)] = f_h[(r, ccol)];
            }
        }
        let cov = &j_pi * &v_pi * j_pi.transpose() + &j_theta * (v_theta / t) * j_theta.transpose();
        let point = (f_h * &b1_hat)[(config.response_var, 0)];
        let half = z * cov[(config.response_var, config.response_var)].max(0.0).sqrt();
        covers.push(truth[h] >= point - half && truth[h] <= point + half);
    }
    Ok(covers)
}

/// Robust inversion coverage: accept/reject the true response directly.
fn robust_inversion_cover(
    fit: &VarFit,
    data: &TimeSeriesDataset,
    spec: &DgpSpec,
    config: &CoverageConfig,
    seed: u64,
    truth: &[f64],
) -> Result<Vec<bool>> {
    let m = moments::compute_moments(fit, data, ProxySide::Z)?;
    let block_len = mbb::block_length(m.t_w);
    let ens = mbb::bootstrap_var_proxy(
        fit,
        data,
        ProxySide::Z,
        block_len,
        config.n_cov,
        mbb::draw_seed(seed, 0xC0C0),
    )?;
    let kappa = ReducedFormKappa::new(fit.pi.clone(), m.sigma_uw.clone())?;
    let kappa_point = kappa_vector(&kappa);
    let v_kappa = ens.kappa_ensemble(kappa_point).scaled_covariance()?;
    let b11_0 = DMatrix::from_element(1, 1, spec.b[(0, 0)]);
    let chisq = ChiSquared::new(1.0).expect("positive dof");
    let crit = chisq.inverse_cdf(config.level);
    let mut covers = Vec::with_capacity(config.h_max + 1);
    for h in 0..=config.h_max {
        let beta = DVector::from_vec(vec![truth[h]]);
        let w = robust::wald_statistic(
            &kappa,
            &v_kappa,
            m.t_w,
            config.response_var,
            &beta,
            &b11_0,
            h,
        )?;
        covers.push(w <= crit);
    }
    Ok(covers)
}

fn kappa_vector(kappa: &ReducedFormKappa) -> DVector<f64> {
    let np = kappa.pi.len();
    let ns = kappa.sigma_uz.len();
    let mut out = DVector::zeros(np + ns);
    out.rows_mut(0, np)
        .copy_from(&DVector::from_column_slice(kappa.pi.as_slice()));
    out.rows_mut(np, ns)
        .copy_from(&DVector::from_column_slice(kappa.sigma_uz.as_slice()));
    out
}

/// Run the coverage experiment.
pub fn run_coverage(config: &CoverageConfig) -> Result<CoverageTable> {
    if config.reps == 0 {
        return Err(Error::Config("replication count must be positive".into()));
    }
    config.spec.validate()?;
    let truth = true_responses(&config.spec, config.response_var, config.h_max);

    let outcomes: Vec<Result<RepCoverage>> = (0..config.reps)
        .into_par_iter()
        .map(|rep| {
            let seed = rep_seed(config.master_seed, 0xC0FE, rep as u64);
            run_coverage_rep(config, seed, &truth)
        })
        .collect();

    let mut rows: Vec<CoverageRow> = Vec::new();
    for method in &config.methods {
        for h in 0..=config.h_max {
            rows.push(CoverageRow {
                method: method.label().to_string(),
                h,
                covered: 0,
                applicable: 0,
                accept_covered: 0,
                accept_n: 0,
                reject_covered: 0,
                reject_n: 0,
            });
        }
    }
    let mut failures = 0usize;
    let mut pretest_rejections = 0usize;
    for outcome in &outcomes {
        match outcome {
            Err(_) => failures += 1,
            Ok(rep) => {
                if rep.pretest_reject == Some(true) {
                    pretest_rejections += 1;
                }
                for (mi, covers) in rep.per_method.iter().enumerate() {
                    let Some(covers) = covers else { continue };
                    for h in 0..=config.h_max {
                        let row = &mut rows[mi * (config.h_max + 1) + h];
                        row.applicable += 1;
                        let c = covers[h];
                        if c {
                            row.covered += 1;
                        }
                        match rep.pretest_reject {
                            Some(false) => {
                                row.accept_n += 1;
                                if c {
                                    row.accept_covered += 1;
                                }
                            }
                            Some(true) => {
                                row.reject_n += 1;
                                if c {
                                    row.reject_covered += 1;
                                }
                            }
                            None => {}
                        }
                    }
                }
            }
        }
    }

    Ok(CoverageTable {
        rows,
        reps: config.reps,
        failures,
        pretest_rejections,
        level: config.level,
        master_seed: config.master_seed,
    })
}

/// One row per `(method, horizon)`.
pub fn coverage_to_csv(table: &CoverageTable, path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record([
        "method",
        "h",
        "coverage",
        "covered",
        "applicable",
        "accept_coverage",
        "accept_n",
        "reject_coverage",
        "reject_n",
    ])?;
    for row in &table.rows {
        wtr.write_record([
            row.method.clone(),
            row.h.to_string(),
            format!("{:.6}", row.rate()),
            row.covered.to_string(),
            row.applicable.to_string(),
            format!(
                "{:.6}",
                row.accept_covered as f64 / row.accept_n.max(1) as f64
            ),
            row.accept_n.to_string(),
            format!(
                "{:.6}",
                row.reject_covered as f64 / row.reject_n.max(1) as f64
            ),
            row.reject_n.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
