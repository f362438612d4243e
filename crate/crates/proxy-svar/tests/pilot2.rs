use nalgebra::DMatrix;
use proxy_svar::dgp::{self, DgpSpec};
use proxy_svar::experiments::rep_seed;
use proxy_svar::md::{self, MdOptions, SigmaPropagation};
use proxy_svar::moments::{self, ProxySide};
use proxy_svar::restrictions::{Entry, RestrictionSet, Target};
use proxy_svar::var::VarFit;
use rayon::prelude::*;

#[test]
#[ignore]
fn delta_propagation_compare() {
    let spec = DgpSpec::s8_strong(250);
    let truth = proxy_svar::experiments::true_responses(&spec, 2, 12);
    let restr = RestrictionSet::from_pattern(
        1, 3,
        &[Entry::free("a"), Entry::Fixed(0.0), Entry::free("c")],
        Target::A1,
    ).unwrap();
    for propagation in [SigmaPropagation::AlphaOnly, SigmaPropagation::Full] {
        let m_reps = 600usize;
        let results: Vec<Option<Vec<bool>>> = (0..m_reps).into_par_iter().map(|rep| {
            let seed = rep_seed(21, 9, rep as u64);
            let run = || -> proxy_svar::Result<Vec<bool>> {
                let data = dgp::simulate(&spec, seed)?;
                let fit = VarFit::fit(&data, 1, false)?;
                let mut m = moments::compute_moments(&fit, &data, ProxySide::W)?;
                m.v_sigma_plus = Some(moments::v_sigma_plus_analytic(&m));
                let f = md::md_estimate(&m, &restr, &MdOptions::default())?;
                let irf = md::delta_method_irf_ci(&f, &fit, &m, &restr, 0, 12, 0.90, propagation)?;
                Ok((0..=12).map(|h| {
                    truth[h] >= irf.lower.as_ref().unwrap()[(h, 2)]
                        && truth[h] <= irf.upper.as_ref().unwrap()[(h, 2)]
                }).collect())
            };
            run().ok()
        }).collect();
        let mut cov = vec![0usize; 13];
        let mut n = 0usize;
        for r in results.iter().flatten() {
            n += 1;
            for h in 0..13 { if r[h] { cov[h] += 1; } }
        }
        let line: Vec<String> = cov.iter().map(|&c| format!("{:.3}", c as f64 / n as f64)).collect();
        println!("{propagation:?} (n={n}): {line:?}");
    }
    let _ = DMatrix::<f64>::zeros(1, 1);
}
