use esncast::dependence::empirical_correlation;
use esncast::lorenz96::{derivative, initial_condition, integrate, rk4_step, simulate, Lorenz96Config};
use esncast::stats::median;
use ndarray::Array1;
use proptest::prelude::*;

fn on_attractor() -> Vec<f64> {
    let cfg = Lorenz96Config::<f64>::default();
    let mut y = initial_condition(&cfg, 0);
    for _ in 0..cfg.spinup {
        rk4_step(&mut y, cfg.forcing, cfg.dt);
    }
    y
}

fn rk4_one_time_unit(y0: &[f64], dt: f64) -> Vec<f64> {
    let mut y = y0.to_vec();
    for _ in 0..(1.0 / dt).round() as usize {
        rk4_step(&mut y, 4.5, dt);
    }
    y
}

fn euler_one_time_unit(y0: &[f64], steps: usize) -> Vec<f64> {
    let h = 1.0 / steps as f64;
    let mut y = Array1::from(y0.to_vec());
    for _ in 0..steps {
        let d = derivative(y.view(), 4.5);
        y.scaled_add(h, &d);
    }
    y.to_vec()
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn halving_the_step_barely_moves_the_trajectory() {
    let y0 = on_attractor();
    let d = sup(&rk4_one_time_unit(&y0, 0.01), &rk4_one_time_unit(&y0, 0.005));
    assert!(d < 1e-5, "{d}");
}

#[test]
fn fine_euler_converges_to_rk4() {
    let y0 = on_attractor();
    let rk = rk4_one_time_unit(&y0, 0.01);
    let e1 = euler_one_time_unit(&y0, 100_000);
    let e2 = euler_one_time_unit(&y0, 200_000);
    let (d1, d2) = (sup(&rk, &e1), sup(&rk, &e2));
    // first-order convergence: halving the Euler step halves the gap
    assert!((d1 / d2 - 2.0).abs() < 0.05, "{d1} {d2}");
    let extrapolated: Vec<f64> = e1.iter().zip(&e2).map(|(a, b)| 2.0 * b - a).collect();
    let d = sup(&rk, &extrapolated);
    assert!(d < 1e-4, "{d}");
}

#[test]
fn recorded_series_has_moderate_cross_correlation() {
    let cfg = Lorenz96Config::<f64>::default();
    let d = simulate(&cfg, 1000, 1).unwrap().remove(0);
    let c = empirical_correlation(d.view()).unwrap();
    let n = d.ncols();
    let mut off = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                off.push(c.matrix()[[i, j]].abs());
            }
        }
    }
    let m = median(&off);
    assert!((0.32..=0.52).contains(&m), "median |corr| {m}");
}

#[test]
fn fixed_point_survives_integration() {
    let cfg = Lorenz96Config::<f64> { spinup: 50, ..Default::default() };
    let y0 = vec![cfg.forcing; cfg.n_l];
    let d = integrate(&cfg, &y0, 20).unwrap();
    assert!(d.iter().all(|v| (v - cfg.forcing).abs() <= 1e-12 * 2000.0));
}

proptest! {
    #[test]
    fn derivative_commutes_with_rotation(y in prop::collection::vec(-10.0f64..10.0, 4..30), k in 0usize..30, f in 0.0f64..10.0) {
        let n = y.len();
        let k = k % n;
        let rotated: Vec<f64> = (0..n).map(|i| y[(i + k) % n]).collect();
        let d = derivative(Array1::from(y.clone()).view(), f);
        let dr = derivative(Array1::from(rotated).view(), f);
        for i in 0..n {
            prop_assert!((dr[i] - d[(i + k) % n]).abs() <= 1e-12 * d[(i + k) % n].abs().max(1.0));
        }
    }

    #[test]
    fn fixed_point_preserved_per_step(f in -10.0f64..10.0, n in 4usize..50, dt in 1e-4f64..0.05) {
        let mut y = vec![f; n];
        rk4_step(&mut y, f, dt);
        prop_assert!(y.iter().all(|v| (v - f).abs() <= 1e-12));
    }
}
