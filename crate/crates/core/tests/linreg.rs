use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use sibgxe::genoscore::standardize;
use sibgxe::linreg::{incremental_r2, ols, oriv, Clustering, DesignMatrix, FitOptions, OrivInput, VcovKind};
use sibgxe::rng::substream;

fn dummy_ols(x: &DMatrix<f64>, f1: &[usize], f2: Option<&[usize]>, y: &[f64]) -> Vec<f64> {
    let n = x.nrows();
    let g1 = f1.iter().max().unwrap() + 1;
    let g2 = f2.map_or(0, |f| f.iter().max().unwrap() + 1);
    let k = x.ncols();
    let cols = k + g1 + g2.saturating_sub(1);
    let mut full = DMatrix::zeros(n, cols);
    for i in 0..n {
        for j in 0..k {
            full[(i, j)] = x[(i, j)];
        }
        full[(i, k + f1[i])] = 1.0;
        if let Some(f2) = f2 {
            if f2[i] > 0 {
                full[(i, k + g1 + f2[i] - 1)] = 1.0;
            }
        }
    }
    // minimum-norm least squares via SVD; the slope block is identified
    let svd = full.clone().svd(true, true);
    let beta = svd.solve(&DVector::from_column_slice(y), 1e-12).unwrap();
    beta.iter().take(k).copied().collect()
}

fn arb_instance() -> impl Strategy<Value = (u64, usize, usize, usize, bool)> {
    (any::<u64>(), 20usize..120, 2usize..12, 2usize..6, any::<bool>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn absorption_matches_dummy_variables((seed, n, g1, g2, two_way) in arb_instance()) {
        let mut rng = substream(seed, "absorb-prop", 0);
        // every level appears at least twice so no rows are singletons
        let f1: Vec<usize> = (0..n).map(|i| if i < 2 * g1 { i % g1 } else { rng.random_range(0..g1) }).collect();
        let f2: Vec<usize> = (0..n).map(|i| if i < 2 * g2 { (i / 2) % g2 } else { rng.random_range(0..g2) }).collect();
        let x = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<f64> = (0..n).map(|i| 2.0 * x[(i, 0)] - x[(i, 1)] + f1[i] as f64 + rng.sample::<f64, _>(StandardNormal)).collect();
        let mut d = DesignMatrix::new(vec!["a".into(), "b".into()], x.clone()).unwrap().with_fixed_effects(f1.clone()).unwrap();
        if two_way {
            d = d.with_fixed_effects(f2.clone()).unwrap();
        }
        let fit = ols(&d, &y, FitOptions::default()).unwrap();
        let oracle = dummy_ols(&x, &f1, two_way.then_some(f2.as_slice()), &y);
        for (b, o) in fit.coefficients.iter().zip(&oracle) {
            prop_assert!((b - o).abs() < 1e-8, "{} vs {}", b, o);
        }
        prop_assert_eq!(fit.n_obs + fit.n_dropped_singletons, n);
    }

    #[test]
    fn clustered_vcov_is_symmetric_psd(seed in any::<u64>(), n in 15usize..80, g in 2usize..10) {
        let mut rng = substream(seed, "psd-prop", 0);
        let x = DMatrix::from_fn(n, 3, |_, j| if j == 0 { 1.0 } else { rng.sample::<f64, _>(StandardNormal) });
        let y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let clusters: Vec<usize> = (0..n).map(|i| i % g).collect();
        let d = DesignMatrix::new(vec!["c".into(), "a".into(), "b".into()], x).unwrap().with_clusters(clusters).unwrap();
        let fit = ols(&d, &y, FitOptions::clustered(0)).unwrap();
        let v = &fit.vcov;
        prop_assert!((v - v.transpose()).amax() <= 1e-12 * v.amax());
        let eig = SymmetricEigen::new(v.clone()).eigenvalues;
        prop_assert!(eig.iter().all(|&e| e >= -1e-10 * v.amax()));
    }
}

#[test]
fn singleton_families_are_dropped_and_counted() {
    let fam = vec![0, 0, 1, 2, 2, 2, 3];
    let x: Vec<f64> = vec![1.0, 2.0, 3.0, 1.5, 0.5, 2.5, 4.0];
    let y: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
    let d = DesignMatrix::from_columns(vec![("x".into(), x)], 7).unwrap().with_fixed_effects(fam).unwrap();
    let fit = ols(&d, &y, FitOptions::default()).unwrap();
    assert_eq!(fit.n_dropped_singletons, 2);
    assert_eq!(fit.n_obs, 5);
    assert!((fit.coefficients[0] - 3.0).abs() < 1e-12);
}

#[test]
fn one_observation_per_cluster_equals_hc1() {
    let mut rng = substream(5, "hc1", 0);
    let n = 40;
    let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.sample::<f64, _>(StandardNormal) });
    let y: Vec<f64> = (0..n).map(|i| x[(i, 1)] * (1.0 + rng.sample::<f64, _>(StandardNormal))).collect();
    let d = DesignMatrix::new(vec!["c".into(), "x".into()], x).unwrap().with_clusters((0..n).collect()).unwrap();
    let hc1 = ols(&d, &y, FitOptions::default()).unwrap();
    let cl = ols(&d, &y, FitOptions::clustered(0)).unwrap();
    assert_eq!(hc1.vcov_kind, VcovKind::Hc1);
    assert_eq!(cl.vcov_kind, VcovKind::OneWay);
    assert!((&hc1.vcov - &cl.vcov).amax() < 1e-12 * hc1.vcov.amax());
}

#[test]
fn incremental_r2_identities() {
    let mut rng = substream(9, "r2", 0);
    let n = 200;
    let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let y: Vec<f64> = x.iter().map(|v| v + rng.sample::<f64, _>(StandardNormal)).collect();
    let base = DesignMatrix::from_columns(vec![("const".into(), vec![1.0; n]), ("x".into(), x.clone())], n).unwrap();
    let f0 = ols(&base, &y, FitOptions::default()).unwrap();
    // a regressor orthogonal to the base residuals cannot lower the residual sum of squares
    let e: Vec<f64> = (0..n).map(|i| y[i] - f0.coefficients[0] - f0.coefficients[1] * x[i]).collect();
    let mut z: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { 1.0 } else { -0.5 }).collect();
    let proj = z.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>() / e.iter().map(|v| v * v).sum::<f64>();
    for (zi, ei) in z.iter_mut().zip(&e) {
        *zi -= proj * ei;
    }
    let bigger =
        DesignMatrix::from_columns(vec![("const".into(), vec![1.0; n]), ("x".into(), x), ("z".into(), z)], n).unwrap();
    let f1 = ols(&bigger, &y, FitOptions::default()).unwrap();
    assert_eq!(incremental_r2(&f0, &f0).unwrap(), 0.0);
    assert!(incremental_r2(&f0, &f1).unwrap().abs() < 1e-10);
    assert!(incremental_r2(&f1, &f0).is_err());
}

fn measurement_sample(n: usize, lambda: f64, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = substream(seed, "oriv-consistency", 0);
    let err_sd = ((1.0 - lambda) / lambda).sqrt();
    let mut y = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for _ in 0..n {
        let g: f64 = rng.sample(StandardNormal);
        y.push(1.0 + 0.5 * g + rng.sample::<f64, _>(StandardNormal));
        a.push(g + err_sd * rng.sample::<f64, _>(StandardNormal));
        b.push(g + err_sd * rng.sample::<f64, _>(StandardNormal));
    }
    let (ma, mb) = (a.iter().sum::<f64>() / n as f64, b.iter().sum::<f64>() / n as f64);
    (y, a.iter().map(|v| v - ma).collect(), b.iter().map(|v| v - mb).collect())
}

#[test]
fn oriv_is_consistent_and_ols_attenuates() {
    let n = 500_000;
    let lambda = 0.6;
    let (y, a, b) = measurement_sample(n, lambda, 1);
    let families: Vec<usize> = (0..n).collect();
    let input = OrivInput {
        y: &y,
        score_a: &a,
        score_b: &b,
        moderator: None,
        controls: &[],
        family_ids: &families,
        within_family: false,
        score_name: "pgs",
        moderator_name: "firstborn",
    };
    let iv = oriv(&input, FitOptions { clustering: Clustering::One(0), ..Default::default() }).unwrap();
    let slope = iv.fit.coef("pgs").unwrap();
    assert!((slope - 0.5).abs() / 0.5 < 0.02, "ORIV slope {slope}");
    let d = DesignMatrix::from_columns(vec![("const".into(), vec![1.0; n]), ("pgs".into(), a)], n).unwrap();
    let o = ols(&d, &y, FitOptions::default()).unwrap();
    let ols_slope = o.coef("pgs").unwrap();
    assert!((ols_slope - lambda * 0.5).abs() < 0.01, "OLS slope {ols_slope}");
}

#[test]
fn standardization_absorbs_score_scale() {
    let n = 2000;
    let (y, a, b) = measurement_sample(n, 0.7, 2);
    let families: Vec<usize> = (0..n).map(|i| i / 2).collect();
    let moderator: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
    let all: Vec<usize> = (0..n).collect();
    let fit_with = |c: f64| {
        let sa = standardize(&a.iter().map(|v| c * v).collect::<Vec<_>>(), &all).unwrap();
        let sb = standardize(&b.iter().map(|v| c * v).collect::<Vec<_>>(), &all).unwrap();
        let input = OrivInput {
            y: &y,
            score_a: &sa,
            score_b: &sb,
            moderator: Some(&moderator),
            controls: &[],
            family_ids: &families,
            within_family: true,
            score_name: "pgs",
            moderator_name: "firstborn",
        };
        oriv(&input, FitOptions::default()).unwrap().fit.coefficients
    };
    let base = fit_with(1.0);
    let scaled = fit_with(37.5);
    for (p, q) in base.iter().zip(&scaled) {
        assert!((p - q).abs() < 1e-10, "{p} vs {q}");
    }
}
