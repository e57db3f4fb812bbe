use mibed::reference::*;
use mibed::toy::*;
use mibed::util::{rng_from, mean_se, log_mean_exp, log_sum_exp};

fn main() {
    let noise = NoiseKind::GaussGamma{gamma: GammaConvention::ShapeScale};
    let d_pe: Vec<f64> = { let mut v = vec![-2.0;5]; v.extend(vec![2.0;5]); v };
    let mut rng = rng_from(42, &[7]);
    let samples = noise_sum_samples(noise, 50_000, &mut rng);
    let kde = fit_noise_kde(&samples).unwrap();

    // PE independent inner draws at paper sizes (N=2000, K=500)
    for (label, include_self, n, k) in [("PE indep N2000 K500", false, 2000usize, 500usize),
                                         ("PE self  N2000 K500", true, 2000, 500),
                                         ("PE indep N2000 K2000", false, 2000, 2000)] {
        let mut terms = Vec::new();
        for i in 0..n {
            let mut rng = rng_from(11, &[1, i as u64, include_self as u64, k as u64]);
            let th = sample_theta(3.0, &mut rng);
            let nz = sample_noise(noise, 10, &mut rng);
            let y = sample_path_toy(ToyModel::Linear, &th, &d_pe, &nz);
            let num = toy_loglik(&y, &th, ToyModel::Linear, &d_pe, &kde);
            let mut inner: Vec<f64> = (0..k).map(|_| {
                let tk = sample_theta(3.0, &mut rng);
                toy_loglik(&y, &tk, ToyModel::Linear, &d_pe, &kde)
            }).collect();
            if include_self { inner[0] = num; }
            terms.push(num - log_mean_exp(&inner));
        }
        let (m, se) = mean_se(&terms);
        println!("{label}: {m:.4} +- {se:.4}  [paper 3.55 +- 0.04]");
    }

    // MDPE at paper sizes (N=2000 per stratum, K=500), independent
    let models = [ToyModel::Linear, ToyModel::Log, ToyModel::Sqrt];
    let d_md: Vec<f64> = { let mut v = vec![-2.0;3]; v.extend(vec![0.0;4]); v.extend(vec![2.0;4]); v };
    for include_self in [false, true] {
        let mut value = 0.0; let mut var = 0.0;
        for (mi, &mt) in models.iter().enumerate() {
            let mut terms = Vec::new();
            for i in 0..700 {
                let mut rng = rng_from(13, &[5+mi as u64, i as u64, include_self as u64]);
                let th = sample_theta(3.0, &mut rng);
                let nz = sample_noise(noise, 10, &mut rng);
                let y = sample_path_toy(mt, &th, &d_md[..10], &nz);
                let num = toy_loglik(&y, &th, mt, &d_md[..10], &kde);
                let lpm: Vec<f64> = models.iter().enumerate().map(|(mj, &m)| {
                    let mut inner: Vec<f64> = (0..500).map(|_| {
                        let tk = sample_theta(3.0, &mut rng);
                        toy_loglik(&y, &tk, m, &d_md[..10], &kde)
                    }).collect();
                    if include_self && mj == mi { inner[0] = num; }
                    log_mean_exp(&inner)
                }).collect();
                let marg = log_sum_exp(&lpm.iter().map(|l| l + (1.0f64/3.0).ln()).collect::<Vec<_>>());
                terms.push(num - marg);
            }
            let (m, se) = mean_se(&terms);
            value += m / 3.0; var += (se/3.0)*(se/3.0);
        }
        println!("MDPE self={include_self}: {value:.4} +- {:.4}  [paper 3.97 +- 0.02]", var.sqrt());
    }
}
