use nalgebra::DMatrix;
use proxy_svar::{cmd, dgp, mbb, moments, normality, var};

#[test]
#[ignore]
fn weak_draw_shape() {
    // one weak sample; a large bootstrap ensemble; moments of the draws
    let spec = dgp::DgpSpec::s8_weak(250);
    for seed in [1u64, 2, 3] {
        let data = dgp::simulate(&spec, seed).unwrap();
        let fit = var::VarFit::fit(&data, 1, false).unwrap();
        let m = moments::compute_moments(&fit, &data, moments::ProxySide::W).unwrap();
        let restr = cmd::CmdRestrictions::unrestricted(3, 1);
        let opts = cmd::CmdOptions { weighting: cmd::CmdWeighting::Identity, gn: Default::default() };
        let tf = cmd::cmd_estimate(&m, &restr, &opts, None).unwrap();
        let ens = mbb::bootstrap_var_proxy(&fit, &data, moments::ProxySide::W, 20, 5000, seed * 100).unwrap();
        let o = moments::mu_len(3, 1);
        let te = mbb::bootstrap_theta(&ens, &tf.theta, &DMatrix::identity(o, o), None, &restr, &Default::default(), true).unwrap();
        let mat = te.theta.to_matrix();
        print!("seed {seed}: theta_hat = [{:.3} {:.3} {:.3} {:.3}] ", tf.theta[0], tf.theta[1], tf.theta[2], tf.theta[3]);
        for j in 0..4 {
            let col: Vec<f64> = (0..mat.nrows()).map(|i| mat[(i, j)]).collect();
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let m2 = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let m3 = col.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
            let m4 = col.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
            print!(" c{j}: sk={:.2} ku={:.2}", m3 / m2.powf(1.5), m4 / (m2 * m2));
        }
        // DH on N=15 chunks
        let mut rej = 0;
        let chunks = 300;
        for c in 0..chunks {
            let sub = DMatrix::from_fn(15, 3, |i, j| mat[(c * 15 + i, j)]);
            if normality::dh_test(&sub).unwrap().p_value < 0.05 { rej += 1; }
        }
        println!("  chunk-DH rejection {:.2}", rej as f64 / chunks as f64);
    }
}
