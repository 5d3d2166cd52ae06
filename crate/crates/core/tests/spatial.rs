use esncast::dependence::{empirical_correlation, grand_mean_coverage, DependenceModel};
use esncast::linalg::min_eigenvalue;
use esncast::spatial::{
    default_bandwidth, fit_local_ranges, nonstationary_correlation, select_delta, shrink, spatial_correlation_matrix, LocalFitConfig,
    Point, SpatialModel,
};
use nalgebra::DMatrix;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn stations(n: usize, seed: u64) -> Vec<Point<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect()
}

fn draw(c: &Array2<f64>, n: usize, seed: u64) -> Array2<f64> {
    let p = c.nrows();
    let m = DMatrix::from_row_iterator(p, p, c.iter().copied());
    let l = m.cholesky().expect("positive definite").l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array2::zeros((n, p));
    for r in 0..n {
        let z = DMatrix::from_fn(p, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &l * z;
        for k in 0..p {
            out[[r, k]] = x[(k, 0)];
        }
    }
    out
}

fn exponential(st: &[Point<f64>], phi: f64) -> Array2<f64> {
    Array2::from_shape_fn((st.len(), st.len()), |(i, j)| {
        let d = ((st[i][0] - st[j][0]).powi(2) + (st[i][1] - st[j][1]).powi(2)).sqrt();
        (-d / phi).exp()
    })
}

#[test]
fn single_knot_recovers_stationary_range_and_zero_nugget() {
    let st = stations(30, 1);
    let x = draw(&exponential(&st, 0.3), 200, 2);
    let knots = vec![[0.5, 0.5]];
    let bw = default_bandwidth(&knots, &st);
    let m = fit_local_ranges(&st, x.view(), &knots, bw, &LocalFitConfig::default()).unwrap();
    let phi = m.ranges()[0];
    assert!((phi - 0.3).abs() <= 0.25 * 0.3, "phi {phi}");
    assert!(m.nugget < 0.05, "nugget {}", m.nugget);
}

#[test]
fn two_regimes_are_ordered() {
    let st = stations(40, 3);
    let knots = vec![[0.25, 0.5], [0.75, 0.5]];
    let bw = default_bandwidth(&knots, &st);
    let truth = SpatialModel::isotropic(knots.clone(), &[0.08, 0.5], bw, 0.0).unwrap();
    let c = spatial_correlation_matrix(&truth, &st).unwrap();
    let x = draw(c.matrix(), 300, 4);
    let m = fit_local_ranges(&st, x.view(), &knots, bw, &LocalFitConfig::default()).unwrap();
    let r = m.ranges();
    assert!(r[0] < r[1], "{r:?}");
}

/// Direct evaluation of the closed form for isotropic kernels.
fn hand_correlation(s: Point<f64>, t: Point<f64>, knots: &[Point<f64>], phi: &[f64], lambda: f64, nugget: f64) -> f64 {
    let w = |p: Point<f64>| -> Vec<f64> {
        let raw: Vec<f64> =
            knots.iter().map(|b| (-((p[0] - b[0]).powi(2) + (p[1] - b[1]).powi(2)) / (2.0 * lambda)).exp()).collect();
        let tot: f64 = raw.iter().sum();
        raw.iter().map(|v| v / tot).collect()
    };
    let a = w(s).iter().zip(phi).map(|(w, p)| w * p * p).sum::<f64>();
    let b = w(t).iter().zip(phi).map(|(w, p)| w * p * p).sum::<f64>();
    let avg = (a + b) / 2.0;
    // determinants of scalar multiples of the 2×2 identity
    let pref = (a * a).powf(0.25) * (b * b).powf(0.25) / (avg * avg).sqrt();
    let d2 = (s[0] - t[0]).powi(2) + (s[1] - t[1]).powi(2);
    (1.0 - nugget) * pref * (-(d2 / avg).sqrt()).exp()
}

#[test]
fn two_knot_correlation_matches_hand_evaluation() {
    let knots = vec![[0.0, 0.0], [1.0, 0.0]];
    let phi = [0.2, 0.7];
    let m = SpatialModel::isotropic(knots.clone(), &phi, 0.25, 0.1).unwrap();
    for (s, t) in [([0.1, 0.2], [0.9, -0.1]), ([0.5, 0.5], [0.4, 0.45]), ([-0.3, 0.0], [1.4, 0.3])] {
        let a = nonstationary_correlation(&s, &t, &m);
        let b = hand_correlation(s, t, &knots, &phi, 0.25, 0.1);
        assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
    }
}

#[test]
fn shrinkage_selection_on_noisy_empirical_correlation() {
    let st = stations(25, 7);
    let knots = vec![[0.25, 0.5], [0.75, 0.5]];
    let bw = default_bandwidth(&knots, &st);
    let truth = SpatialModel::isotropic(knots, &[0.2, 0.4], bw, 0.05).unwrap();
    let c_true = spatial_correlation_matrix(&truth, &st).unwrap();
    // a short training sample makes the empirical estimate noisy
    let c_hat = empirical_correlation(draw(c_true.matrix(), 30, 8).view()).unwrap();
    let test = draw(c_true.matrix(), 400, 9);
    let levels = [0.6, 0.8, 0.95];
    let delta = select_delta(&c_true, &c_hat, test.view(), &levels).unwrap();
    assert!(delta < 0.5, "delta {delta}");
    let shrunk = shrink(&c_true, &c_hat, delta).unwrap();
    let indep = DependenceModel::identity(st.len());
    for lv in levels {
        let dep = (grand_mean_coverage(test.view(), &shrunk, lv).unwrap() - lv).abs();
        let ind = (grand_mean_coverage(test.view(), &indep, lv).unwrap() - lv).abs();
        assert!(dep < ind, "level {lv}: {dep} vs {ind}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn spatial_and_shrunk_matrices_stay_psd(seed in 0u64..1000, p0 in 0.05f64..1.0, p1 in 0.05f64..1.0, nugget in 0.0f64..0.9, delta in 0.0f64..1.0) {
        let st = stations(15, seed);
        let knots = vec![[0.2, 0.3], [0.8, 0.7]];
        let m = SpatialModel::isotropic(knots, &[p0, p1], 0.1, nugget).unwrap();
        let c = spatial_correlation_matrix(&m, &st).unwrap();
        prop_assert!(min_eigenvalue(c.matrix().view()) >= -1e-10);
        let c_hat = empirical_correlation(draw(c.matrix(), 40, seed + 1).view()).unwrap();
        let s = shrink(&c, &c_hat, delta).unwrap();
        prop_assert!(min_eigenvalue(s.matrix().view()) >= -1e-10);
        prop_assert!(s.matrix().diag().iter().all(|&v| (v - 1.0).abs() <= 1e-12));
    }
}
