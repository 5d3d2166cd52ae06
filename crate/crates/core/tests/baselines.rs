use esncast::baselines::{fit_arfima, forecast_arfima, frac_diff_coeffs, state_space_forecast, ArfimaConfig};
use esncast::forecasting::iterative_forecast;
use esncast::reservoir::HyperParams;
use esncast::scoring::mse;
use esncast::stats::median;
use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// ARFIMA(1, d, 0) by filtering AR(1) noise through the truncated `(1 − B)^{−d}` expansion.
fn simulate_arfima(n: usize, phi: f64, d: f64, seed: u64) -> Vec<f64> {
    let burn = 3000;
    let total = n + burn;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = vec![0.0; total];
    for t in 0..total {
        let prev = if t > 0 { u[t - 1] } else { 0.0 };
        u[t] = phi * prev + rng.sample::<f64, _>(StandardNormal);
    }
    let psi = frac_diff_coeffs(-d, total);
    let x: Vec<f64> = (0..total).map(|t| (0..=t).map(|k| psi[k] * u[t - k]).sum()).collect();
    x[burn..].to_vec()
}

#[test]
fn simulated_arfima_parameters_are_recovered() {
    let x = simulate_arfima(2000, 0.5, 0.3, 17);
    let cfg = ArfimaConfig { max_p: 1, max_q: 0, ..Default::default() };
    let m = fit_arfima(&x, &cfg).unwrap();
    assert_eq!(m.p, 1);
    assert!((m.phi[0] - 0.5).abs() <= 0.1, "phi {}", m.phi[0]);
    assert!((m.d - 0.3).abs() <= 0.1, "d {}", m.d);
}

#[test]
fn predictive_sd_grows_with_lead() {
    let x = simulate_arfima(600, 0.5, 0.2, 3);
    let m = fit_arfima(&x, &ArfimaConfig::default()).unwrap();
    let f = forecast_arfima(&m, &x, 15);
    assert!((f.sd[0] - m.sigma2.sqrt()).abs() < 1e-12);
    for w in f.sd.windows(2) {
        assert!(w[1] >= w[0] - 1e-12);
    }
}

#[test]
fn selection_is_deterministic() {
    let x = simulate_arfima(400, 0.3, 0.1, 5);
    let a = fit_arfima(&x, &ArfimaConfig::default()).unwrap();
    let b = fit_arfima(&x, &ArfimaConfig::default()).unwrap();
    assert_eq!(a, b);
}

fn var1(n: usize, n_l: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array2::zeros((n, n_l));
    let mut y = vec![0.0; n_l];
    for t in 0..n {
        let prev = y.clone();
        for l in 0..n_l {
            y[l] = 0.7 * prev[l] + 0.2 * prev[(l + 1) % n_l] + rng.sample::<f64, _>(StandardNormal);
            out[[t, l]] = y[l];
        }
    }
    out
}

#[test]
fn linear_data_favours_the_linear_reduction() {
    let hp = HyperParams { n_h: 40, ..Default::default() };
    let (mut ss, mut esn) = (Vec::new(), Vec::new());
    for r in 0..10 {
        let d = var1(510, 4, r);
        let train = d.slice(s![..500, ..]);
        let truth = d.slice(s![500.., ..]);
        let a = state_space_forecast(train, &hp, 10, 30, r).unwrap();
        let b = iterative_forecast(train, &hp, 10, 30, r).unwrap();
        ss.extend(mse(a.mean.view(), truth).unwrap().per_element.iter().copied());
        esn.extend(mse(b.mean.view(), truth).unwrap().per_element.iter().copied());
    }
    let (a, b) = (median(&ss), median(&esn));
    assert!(a <= 1.1 * b, "state-space {a} vs esn {b}");
}
