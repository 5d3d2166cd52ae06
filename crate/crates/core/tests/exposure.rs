use esncast::dependence::{DependenceModel, Provenance};
use esncast::exposure::{district_means, exposure_series, District, DistrictSet};
use esncast::spatial::Point;
use esncast::stats::normal_cdf;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn square(id: &str, x0: f64, y0: f64, side: f64, pop: f64) -> District {
    let ring = vec![[x0, y0], [x0 + side, y0], [x0 + side, y0 + side], [x0, y0 + side]];
    District { id: id.into(), polygons: vec![vec![ring]], population: pop }
}

fn triangle(id: &str, a: Point<f64>, b: Point<f64>, c: Point<f64>) -> District {
    District { id: id.into(), polygons: vec![vec![vec![a, b, c]]], population: 1.0 }
}

fn inside_convex(poly: &[Point<f64>], p: &Point<f64>) -> bool {
    let n = poly.len();
    let signs: Vec<f64> = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
        })
        .collect();
    signs.iter().all(|&s| s > 0.0) || signs.iter().all(|&s| s < 0.0)
}

#[test]
fn district_means_match_brute_force_on_convex_polygons() {
    let ds = DistrictSet::new(vec![
        triangle("a", [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]),
        triangle("b", [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]),
        square("c", 1.2, 0.0, 0.8, 1.0),
    ])
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pts: Vec<Point<f64>> = (0..400).map(|_| [rng.random_range(0.0..2.0), rng.random_range(0.0..1.0)]).collect();
    let values = Array2::from_shape_fn((3, pts.len()), |_| rng.random_range(-5.0..5.0));
    let got = district_means(values.view(), &pts, &ds).unwrap();
    for (d, dist) in ds.districts.iter().enumerate() {
        let poly = &dist.polygons[0][0];
        for t in 0..3 {
            let inside: Vec<f64> = pts.iter().enumerate().filter(|(_, p)| inside_convex(poly, p)).map(|(k, _)| values[[t, k]]).collect();
            let expect = inside.iter().sum::<f64>() / inside.len() as f64;
            assert!((got[[t, d]] - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn one_point_per_district_returns_that_point() {
    let ds = DistrictSet::new(vec![square("a", 0.0, 0.0, 1.0, 1.0), square("b", 1.0, 0.0, 1.0, 1.0)]).unwrap();
    let pts = vec![[0.5, 0.5], [1.5, 0.5]];
    let values = Array2::from_shape_vec((1, 2), vec![3.0, -2.0]).unwrap();
    let got = district_means(values.view(), &pts, &ds).unwrap();
    assert_eq!(got.row(0).to_vec(), vec![3.0, -2.0]);
}

#[test]
fn monte_carlo_exceedance_matches_normal_cdf() {
    let mu = [2.4, 2.5, 2.6];
    let sd = [0.2, 0.1, 0.3];
    let c = ndarray::array![[1.0, 0.5, 0.2], [0.5, 1.0, 0.3], [0.2, 0.3, 1.0]];
    let corr: DependenceModel<f64> = DependenceModel::new(c, Provenance::Spatial).unwrap();
    let mean = Array2::from_shape_vec((1, 3), mu.to_vec()).unwrap();
    let sds = Array2::from_shape_vec((1, 3), sd.to_vec()).unwrap();
    let n = 20_000;
    let out = exposure_series(mean.view(), sds.view(), &corr, &[100.0, 200.0, 300.0], 12.1, n, 0.95, 7).unwrap();
    let mut expected_count = 0.0;
    for d in 0..3 {
        let p = 1.0 - normal_cdf((12.1f64.ln() - mu[d]) / sd[d]);
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((out.exceedance[[0, d]] - p).abs() <= 3.0 * se, "district {d}: {} vs {p}", out.exceedance[[0, d]]);
        expected_count += p * [100.0, 200.0, 300.0][d];
    }
    assert!((out.mean_exposed[0] - expected_count).abs() < 5.0);
}

#[test]
fn tiny_spread_thresholds_exponentiated_means() {
    let mu = [12.0f64.ln(), 12.5f64.ln(), 30.0f64.ln(), 1.0];
    let mean = Array2::from_shape_vec((1, 4), mu.to_vec()).unwrap();
    let sds = Array2::from_elem((1, 4), 1e-9);
    let pops = [10.0, 20.0, 40.0, 80.0];
    let out = exposure_series(mean.view(), sds.view(), &DependenceModel::identity(4), &pops, 12.1, 200, 0.9, 0).unwrap();
    let direct: f64 = mu.iter().zip(pops).filter(|(m, _)| m.exp() > 12.1).map(|(_, p)| p).sum();
    assert_eq!(out.mean_exposed[0], direct);
    assert_eq!((out.lo[0], out.hi[0]), (60, 60));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exposure_is_monotone_in_threshold_and_bounded(seed in 0u64..1000, shift in 0.01f64..2.0, rho in 0.0f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nd = 5;
        let mean = Array2::from_shape_fn((3, nd), |_| rng.random_range(1.5..3.5));
        let sds = Array2::from_shape_fn((3, nd), |_| rng.random_range(0.05..0.6));
        let pops: Vec<f64> = (0..nd).map(|_| rng.random_range(0..5000) as f64).collect();
        let total: f64 = pops.iter().sum();
        let c = Array2::from_shape_fn((nd, nd), |(i, j)| if i == j { 1.0 } else { rho });
        let corr: DependenceModel<f64> = DependenceModel::new(c, Provenance::Spatial).unwrap();
        let hi_t = 12.1f64;
        let lo_t = (hi_t.ln() - shift).exp();
        let a = exposure_series(mean.view(), sds.view(), &corr, &pops, hi_t, 500, 0.95, seed).unwrap();
        let b = exposure_series(mean.view(), sds.view(), &corr, &pops, lo_t, 500, 0.95, seed).unwrap();
        for t in 0..3 {
            prop_assert!(b.mean_exposed[t] >= a.mean_exposed[t]);
            prop_assert!(b.lo[t] >= a.lo[t] && b.hi[t] >= a.hi[t]);
            prop_assert!(a.lo[t] <= a.hi[t] && (a.hi[t] as f64) <= total);
        }
    }
}
