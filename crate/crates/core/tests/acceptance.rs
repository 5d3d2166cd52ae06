//! Acceptance report: one PASS/FAIL line per criterion. Failing criteria are
//! reported, not asserted, so the run always exits 0.
//!
//! `ESNCAST_QUICK=1` shrinks ensembles for a fast smoke run.

use std::time::Instant;

use esncast::benchmark::{calibration_study, compare_methods, coverage_table, render_coverage, render_methods, LorenzBenchmark, SpatialBenchmark, LEVELS};
use esncast::baselines::frac_diff_coeffs;
use esncast::forecasting::iterative_forecast;
use esncast::lorenz96::{derivative, initial_condition, rk4_step, Lorenz96Config};
use esncast::reservoir::{fit_readout, HyperParams};
use esncast::scoring::crps;
use esncast::spatial::{nonstationary_correlation, spatial_correlation_matrix, KrigingSystem, SpatialModel};
use esncast::stats::median;
use nalgebra::{DMatrix, DVector};
use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::gamma;

struct Report {
    passed: usize,
    total: usize,
}

impl Report {
    fn line(&mut self, id: &str, ok: bool, detail: String) {
        self.total += 1;
        if ok {
            self.passed += 1;
        }
        println!("[{}] criterion {id}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn oracles() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut notes = Vec::new();
    let mut all = true;

    let mut ridge: f64 = 0.0;
    for _ in 0..20 {
        let h = gaussian(80, 15, &mut rng);
        let y = gaussian(80, 4, &mut rng);
        let b = fit_readout(h.view(), y.view(), 0.001).unwrap();
        let hm = DMatrix::from_row_iterator(80, 15, h.iter().copied());
        let ym = DMatrix::from_row_iterator(80, 4, y.iter().copied());
        let dense = (hm.transpose() * &hm + DMatrix::identity(15, 15) * 0.001).lu().solve(&(hm.transpose() * ym)).unwrap();
        let num: f64 = (0..15).flat_map(|i| (0..4).map(move |j| (i, j))).map(|(i, j)| (b.b[[i, j]] - dense[(i, j)]).powi(2)).sum();
        ridge = ridge.max((num / dense.norm_squared()).sqrt());
    }
    all &= ridge <= 1e-8;
    notes.push(format!("ridge rel {ridge:.1e}"));

    let mut crps_gap: f64 = 0.0;
    for _ in 0..50 {
        let m: Vec<f64> = (0..rng.random_range(1..60)).map(|_| rng.random_range(-20.0..20.0)).collect();
        let y: f64 = rng.random_range(-25.0..25.0);
        let k = m.len() as f64;
        let a: f64 = m.iter().map(|x| (x - y).abs()).sum::<f64>() / k;
        let b: f64 = m.iter().flat_map(|x| m.iter().map(move |z| (x - z).abs())).sum::<f64>() / (2.0 * k * k);
        crps_gap = crps_gap.max((crps(&m, y).unwrap() - (a - b)).abs());
    }
    all &= crps_gap <= 1e-12;
    notes.push(format!("CRPS {crps_gap:.1e}"));

    // literal check: RK4 at dt = 0.01 against Euler at dt / 1000 over one time unit
    let cfg = Lorenz96Config::<f64>::default();
    let mut y0 = initial_condition(&cfg, 0);
    for _ in 0..cfg.spinup {
        rk4_step(&mut y0, cfg.forcing, cfg.dt);
    }
    let mut rk = y0.clone();
    for _ in 0..100 {
        rk4_step(&mut rk, cfg.forcing, 0.01);
    }
    let euler = |steps: usize| {
        let h = 1.0 / steps as f64;
        let mut y = Array1::from(y0.clone());
        for _ in 0..steps {
            let d = derivative(y.view(), cfg.forcing);
            y.scaled_add(h, &d);
        }
        y.to_vec()
    };
    let (e1, e2) = (euler(100_000), euler(200_000));
    let euler_gap = sup(&rk, &e1);
    let rich: Vec<f64> = e1.iter().zip(&e2).map(|(a, b)| 2.0 * b - a).collect();
    all &= euler_gap <= 1e-4;
    notes.push(format!("RK4 vs Euler(dt/1000) {euler_gap:.1e} [Euler order ratio {:.2}, Richardson {:.1e}]", euler_gap / sup(&rk, &e2), sup(&rk, &rich)));

    let st: Vec<[f64; 2]> = (0..12).map(|_| [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)]).collect();
    let model = SpatialModel::isotropic(vec![[2.0, 3.0], [8.0, 7.0]], &[1.5, 4.0], 9.0, 0.1).unwrap();
    let sys = KrigingSystem::new(&model, &st).unwrap();
    let c = spatial_correlation_matrix(&model, &st).unwrap();
    let dm = DMatrix::from_fn(12, 12, |i, j| c.matrix()[[i, j]]);
    let mut krig: f64 = 0.0;
    for _ in 0..20 {
        let p = [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)];
        let (w, _) = sys.weights(&p);
        let rhs = DVector::from_fn(12, |i, _| nonstationary_correlation(&st[i], &p, &model));
        let sol = dm.clone().lu().solve(&rhs).unwrap();
        krig = krig.max((0..12).map(|i| (w[i] - sol[i]).abs()).fold(0.0, f64::max));
    }
    all &= krig <= 1e-10;
    notes.push(format!("kriging {krig:.1e}"));

    let mut fd: f64 = 0.0;
    for d in [-0.45, -0.2, 0.1, 0.3, 0.45] {
        for (k, v) in frac_diff_coeffs(d, 30).into_iter().enumerate() {
            let oracle = gamma(k as f64 - d) / (gamma(k as f64 + 1.0) * gamma(-d));
            fd = fd.max((v - oracle).abs());
        }
    }
    all &= fd <= 1e-12;
    notes.push(format!("frac-diff {fd:.1e}"));
    (all, notes.join(", "))
}

fn main() {
    let quick = std::env::var("ESNCAST_QUICK").is_ok_and(|v| v == "1");
    let mut cfg = LorenzBenchmark::default();
    if quick {
        cfg.n_ens = 40;
        cfg.validation_ens = 20;
        println!("quick mode: {} members, {} for validation", cfg.n_ens, cfg.validation_ens);
    }
    let mut report = Report { passed: 0, total: 0 };
    let start = Instant::now();

    let data = cfg.simulate().expect("simulation");
    let validation = cfg.select_alpha(&data).expect("validation");
    let alpha_hat = validation.best_params().alpha;
    let methods = compare_methods(&cfg, &data, alpha_hat).expect("comparison");
    let forecast_time = start.elapsed();
    println!("alpha_hat = {alpha_hat} (validation MSE by alpha: {:?})", cfg.alpha_grid.iter().zip(&validation.scores).map(|(a, s)| format!("{a}: {s:.3}")).collect::<Vec<_>>());
    print!("{}", render_methods(&methods));
    let med: Vec<f64> = methods.iter().map(|m| m.mse_summary().median).collect();
    let ordered = med[0] < med[3] && med[3] < med[2] && med[2] < med[1];
    let band = (0.8..=2.0).contains(&med[0]);
    let fast = forecast_time.as_secs_f64() <= 1800.0;
    report.line(
        "1",
        ordered && band && fast,
        format!(
            "median MSE ESN(alpha_hat) {:.3}, ARFIMA {:.3}, state-space {:.3}, ESN(alpha=1) {:.3}; ordering {}, band [0.8, 2.0] {}, runtime {:.0} s {}",
            med[0],
            med[3],
            med[2],
            med[1],
            if ordered { "holds" } else { "violated" },
            if band { "ok" } else { "missed" },
            forecast_time.as_secs_f64(),
            if fast { "ok" } else { "over 30 min" },
        ),
    );

    let studies = calibration_study(&cfg, &data, alpha_hat).expect("calibration study");
    let table = coverage_table(&studies);
    print!("{}", render_coverage(&table));
    let cal = &table[1].1;
    let raw = &table[0].1;
    let tol = [3.0, 4.0, 5.0];
    let within = (0..3).all(|k| (cal[k].median - 100.0 * LEVELS[k]).abs() <= tol[k]);
    let raw_low = raw[0].median < 85.0;
    report.line(
        "2",
        within && raw_low,
        format!(
            "calibrated coverage {:.1}/{:.1}/{:.1} (tolerance 3/4/5), uncalibrated 95% {:.1} (< 85 needed)",
            cal[0].median, cal[1].median, cal[2].median, raw[0].median
        ),
    );

    let ks_wins = studies.iter().filter(|s| s.ks_calibrated < s.ks_uncalibrated).count();
    report.line(
        "3",
        ks_wins >= 9,
        format!(
            "KS calibrated < uncalibrated on {ks_wins}/{} realizations (median {:.3} vs {:.3})",
            studies.len(),
            median(&studies.iter().map(|s| s.ks_calibrated).collect::<Vec<_>>()),
            median(&studies.iter().map(|s| s.ks_uncalibrated).collect::<Vec<_>>())
        ),
    );

    let monotone = studies.iter().filter(|s| s.path.windows(2).all(|w| w[1].nonzero <= w[0].nonzero)).count();
    let max_gap = studies.iter().map(|s| s.path_zero_gap).fold(0.0, f64::max);
    let path0: Vec<String> = studies[0].path.iter().map(|p| format!("{:.3}", p.nonzero)).collect();
    report.line(
        "4",
        monotone == studies.len() && max_gap <= 1e-6,
        format!("nonzero proportion non-increasing on {monotone}/{} realizations, max |C(0) - C_hat| {max_gap:.1e}; realization 0 path {path0:?}", studies.len()),
    );

    let mut pair_wins = 0;
    let mut grand_wins = 0;
    let mut no_pairs = 0;
    let mut neighbour_wins = 0;
    for s in &studies {
        if (0..3).all(|k| (s.neighbour_dependent[k] - LEVELS[k]).abs() <= (s.neighbour_independent[k] - LEVELS[k]).abs()) {
            neighbour_wins += 1;
        }
        if s.mild_pairs.is_empty() {
            no_pairs += 1;
        } else if (0..3).all(|k| (s.difference_dependent[k] - LEVELS[k]).abs() <= (s.difference_independent[k] - LEVELS[k]).abs()) {
            pair_wins += 1;
        }
        if (0..3).all(|k| (s.grand_mean_dependent[k] - LEVELS[k]).abs() < (s.grand_mean_independent[k] - LEVELS[k]).abs()) {
            grand_wins += 1;
        }
    }
    report.line(
        "5",
        pair_wins >= 7 && grand_wins >= 7,
        format!(
            "mild pairs: dependent at least as close at all levels on {pair_wins}/{} ({no_pairs} without mild pairs); grand mean closer on {grand_wins}/{}; medians dep {:?} vs indep {:?} (grand mean); all neighbour pairs: dependent at least as close on {neighbour_wins}/{}",
            studies.len(),
            studies.len(),
            [table[6].1[0].median, table[6].1[1].median, table[6].1[2].median],
            [table[7].1[0].median, table[7].1[1].median, table[7].1[2].median],
            studies.len(),
        ),
    );

    let sp = SpatialBenchmark::default().run().expect("spatial benchmark");
    let shrunk95 = 100.0 * sp.shrunk[0];
    let indep95 = 100.0 * sp.independent[0];
    report.line(
        "6",
        (shrunk95 - 95.0).abs() <= 5.0 && (indep95 - 95.0).abs() > 15.0,
        format!(
            "synthetic two-regime field: shrunk (delta_c = {}) grand-mean 95% coverage {:.1}, independence {:.1}; fitted ranges {:?}",
            sp.delta_c,
            shrunk95,
            indep95,
            sp.fitted.ranges().iter().map(|r| (r * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    );

    let (ok, detail) = oracles();
    report.line("7", ok, detail);

    let sigma_monotone = studies.iter().all(|s| s.sigma_tilde.rows().into_iter().all(|r| r.windows(2).into_iter().all(|w| w[1] >= w[0])));
    let min_eig = studies
        .iter()
        .flat_map(|s| std::iter::once(s.c_hat_min_eigenvalue).chain(s.path.iter().map(|p| p.min_eigenvalue)))
        .chain(std::iter::once(sp.shrunk_min_eigenvalue))
        .fold(f64::INFINITY, f64::min);
    let hp = HyperParams::<f64> { n_h: 30, ..Default::default() };
    let train = data[0].slice(s![..300, ..]);
    let a = iterative_forecast(train, &hp, 10, 16, 9).unwrap();
    let b = iterative_forecast(train, &hp, 10, 16, 9).unwrap();
    let reproducible = a.members == b.members;
    let mut fixed = vec![4.5; 40];
    for _ in 0..5000 {
        rk4_step(&mut fixed, 4.5, 0.01);
    }
    let fixed_ok = fixed.iter().all(|&v| v == 4.5);
    report.line(
        "8",
        sigma_monotone && min_eig >= -1e-10 && reproducible && fixed_ok,
        format!(
            "sigma_tilde monotone {sigma_monotone}, min eigenvalue over all dependence models {min_eig:.1e}, ensembles bit-reproducible {reproducible}, fixed point preserved {fixed_ok}; proptest suites: cargo test -p esncast --test <module>"
        ),
    );

    println!("{}/{} criteria pass; total {:.0} s", report.passed, report.total, start.elapsed().as_secs_f64());
}
