use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::absorb::absorb;
use super::qr::LeastSquares;
use super::{encode_labels, n_levels, Clustering, CollinearPolicy, DesignMatrix, FitOptions, FitResult, VcovKind};
use crate::error::{Error, Result};

/// `bread * (sum_g s_g s_g') * bread` with `s_g = X_g' u_g`, no small-sample factor.
pub fn cluster_sandwich(x: &DMatrix<f64>, u: &[f64], bread: &DMatrix<f64>, clusters: &[usize]) -> DMatrix<f64> {
    let k = x.ncols();
    let g = n_levels(clusters);
    let mut scores = DMatrix::<f64>::zeros(g, k);
    for j in 0..k {
        let col = x.column(j);
        for (i, &c) in clusters.iter().enumerate() {
            scores[(c, j)] += col[i] * u[i];
        }
    }
    let meat = scores.transpose() * &scores;
    bread * meat * bread
}

fn hc_sandwich(x: &DMatrix<f64>, u: &[f64], bread: &DMatrix<f64>) -> DMatrix<f64> {
    let mut xu = x.clone();
    for j in 0..x.ncols() {
        for (i, ui) in u.iter().enumerate() {
            xu[(i, j)] *= ui;
        }
    }
    let meat = xu.transpose() * &xu;
    bread * meat * bread
}

pub(crate) struct Vcov {
    pub matrix: DMatrix<f64>,
    pub kind: VcovKind,
    pub n_clusters: Option<usize>,
    pub notices: Vec<String>,
}

fn one_way(x: &DMatrix<f64>, u: &[f64], bread: &DMatrix<f64>, clusters: &[usize], k: usize) -> Result<(DMatrix<f64>, usize)> {
    let codes = encode_labels(clusters);
    let g = n_levels(&codes);
    if g < 2 {
        return Err(Error::Clustering(format!("{g} cluster(s); at least 2 are required")));
    }
    let n = u.len() as f64;
    let factor = (g as f64 / (g as f64 - 1.0)) * ((n - 1.0) / (n - k as f64));
    Ok((cluster_sandwich(x, u, bread, &codes) * factor, g))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Covariance for coefficients of `x` given residuals `u`. `x` is the
/// regressor matrix entering the score (fitted endogenous columns for 2SLS).
pub(crate) fn covariance(
    x: &DMatrix<f64>,
    u: &[f64],
    bread: &DMatrix<f64>,
    cluster_ids: &[Vec<usize>],
    clustering: Clustering,
    fe_dof: usize,
) -> Result<Vcov> {
    let n = u.len();
    let k = x.ncols();
    let mut notices = Vec::new();
    match clustering {
        Clustering::None => {
            let dof = n.checked_sub(k + fe_dof).ok_or_else(|| {
                Error::Identification(format!("{n} observations for {k} coefficients and {fe_dof} absorbed effects"))
            })?;
            if dof == 0 {
                notices.push("exactly identified fit; standard errors are undefined".into());
                let matrix = DMatrix::from_element(k, k, f64::NAN);
                return Ok(Vcov { matrix, kind: VcovKind::Hc1, n_clusters: None, notices });
            }
            let factor = n as f64 / dof as f64;
            Ok(Vcov { matrix: symmetrize(hc_sandwich(x, u, bread) * factor), kind: VcovKind::Hc1, n_clusters: None, notices })
        }
        Clustering::One(d) => {
            let ids = cluster_ids
                .get(d)
                .ok_or_else(|| Error::Clustering(format!("no clustering dimension {d}")))?;
            let (m, g) = one_way(x, u, bread, ids, k)?;
            Ok(Vcov { matrix: symmetrize(m), kind: VcovKind::OneWay, n_clusters: Some(g), notices })
        }
        Clustering::Two => {
            if cluster_ids.len() < 2 {
                return Err(Error::Clustering("two-way clustering needs two cluster dimensions".into()));
            }
            let (v1, g1) = one_way(x, u, bread, &cluster_ids[0], k)?;
            let (v2, g2) = one_way(x, u, bread, &cluster_ids[1], k)?;
            let pairs: Vec<(usize, usize)> = cluster_ids[0].iter().copied().zip(cluster_ids[1].iter().copied()).collect();
            let inter = encode_labels(&pairs);
            let v12 = if n_levels(&inter) >= 2 {
                one_way(x, u, bread, &inter, k)?.0
            } else {
                DMatrix::zeros(k, k)
            };
            let v = symmetrize(v1.clone() + v2 - v12);
            let eig = SymmetricEigen::new(v.clone()).eigenvalues;
            let max_abs = eig.iter().fold(0.0f64, |m, e| m.max(e.abs()));
            let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
            if min < -1e-10 * max_abs.max(f64::MIN_POSITIVE) {
                notices.push(format!(
                    "two-way covariance not positive semidefinite (min eigenvalue {min:e}); using one-way clustering on the first dimension"
                ));
                return Ok(Vcov { matrix: symmetrize(v1), kind: VcovKind::OneWay, n_clusters: Some(g1), notices });
            }
            Ok(Vcov { matrix: v, kind: VcovKind::TwoWay, n_clusters: Some(g1.min(g2)), notices })
        }
    }
}

fn centered_ss(y: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    y.iter().map(|v| (v - mean).powi(2)).sum()
}

pub(crate) fn r_squared(y_raw: &[f64], y_within: &[f64], ssr: f64, fe_absorbed: bool) -> (f64, f64) {
    let tss = centered_ss(y_raw);
    let r2 = 1.0 - ssr / tss;
    let within = if fe_absorbed {
        1.0 - ssr / y_within.iter().map(|v| v * v).sum::<f64>()
    } else {
        r2
    };
    (r2, within)
}

/// Least squares with HC1 or cluster-robust covariance. Fixed effects listed
/// in `design.fe_groups` are absorbed first.
pub fn ols(design: &DesignMatrix, y: &[f64], opts: FitOptions) -> Result<FitResult> {
    if y.len() != design.n_rows() {
        return Err(Error::Dimension(format!("outcome has {} rows, design {}", y.len(), design.n_rows())));
    }
    if let Some(v) = y.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite outcome value {v}")));
    }
    let fe_absorbed = !design.fe_groups.is_empty();
    let (x, y_w, y_raw, clusters, fe_dof, n_dropped, mut notices) = if fe_absorbed {
        let a = absorb(design, y)?;
        let notices = a
            .collinear_with_fe
            .iter()
            .map(|c| format!("column `{c}` is collinear with the fixed effects"))
            .collect();
        (a.design.values, a.y, a.y_raw, a.design.cluster_ids, a.fe_dof, a.n_dropped_singletons, notices)
    } else {
        let yv = DVector::from_column_slice(y);
        (design.values.clone(), yv.clone(), yv, design.cluster_ids.clone(), 0, 0, Vec::new())
    };
    let ls = LeastSquares::new(&x);
    let dropped: Vec<String> = ls.dropped.iter().map(|&j| design.column_names[j].clone()).collect();
    if ls.rank() == 0 || (!dropped.is_empty() && opts.collinear == CollinearPolicy::Error) {
        return Err(Error::Collinearity { columns: dropped });
    }
    for c in &dropped {
        notices.push(format!("dropped collinear column `{c}`"));
    }
    let beta = ls.solve(y_w.as_slice());
    let xk = x.select_columns(&ls.kept);
    let resid = &y_w - &xk * &beta;
    let n = resid.len();
    let bread = ls.bread();
    let vcov = covariance(&xk, resid.as_slice(), &bread, &clusters, opts.clustering, fe_dof)?;
    notices.extend(vcov.notices);
    let ssr = resid.norm_squared();
    let (r2, within_r2) = r_squared(y_raw.as_slice(), y_w.as_slice(), ssr, fe_absorbed);
    Ok(FitResult {
        terms: ls.kept.iter().map(|&j| design.column_names[j].clone()).collect(),
        coefficients: beta.iter().copied().collect(),
        vcov: vcov.matrix,
        vcov_kind: vcov.kind,
        n_obs: n,
        n_dropped_singletons: n_dropped,
        n_clusters: vcov.n_clusters,
        r2,
        within_r2,
        residual_dof: n.saturating_sub(ls.rank() + fe_dof),
        fe_absorbed,
        dropped_columns: dropped,
        notices,
    })
}

/// Gain in explained variance from the larger of two nested fits
/// (within-group R² when fixed effects were absorbed).
pub fn incremental_r2(fit_without: &FitResult, fit_with: &FitResult) -> Result<f64> {
    if fit_without.n_obs != fit_with.n_obs {
        return Err(Error::Nesting(format!(
            "different samples ({} vs {} observations)",
            fit_without.n_obs, fit_with.n_obs
        )));
    }
    if fit_without.fe_absorbed != fit_with.fe_absorbed {
        return Err(Error::Nesting("only one of the fits absorbs fixed effects".into()));
    }
    if let Some(t) = fit_without.terms.iter().find(|t| !fit_with.terms.contains(t)) {
        return Err(Error::Nesting(format!("term `{t}` missing from the larger fit")));
    }
    Ok(if fit_with.fe_absorbed {
        fit_with.within_r2 - fit_without.within_r2
    } else {
        fit_with.r2 - fit_without.r2
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(cols: Vec<(&str, Vec<f64>)>) -> DesignMatrix {
        let n = cols[0].1.len();
        DesignMatrix::from_columns(cols.into_iter().map(|(n, c)| (n.to_string(), c)).collect(), n).unwrap()
    }

    #[test]
    fn exact_line() {
        let d = design(vec![("const", vec![1.0; 3]), ("x", vec![0.0, 1.0, 2.0])]);
        let fit = ols(&d, &[1.0, 3.0, 5.0], FitOptions::default()).unwrap();
        assert!((fit.coef("const").unwrap() - 1.0).abs() < 1e-14);
        assert!((fit.coef("x").unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn outcome_equal_to_regressor() {
        let x = vec![0.3, -1.0, 2.0, 0.5, 1.1];
        let d = design(vec![("const", vec![1.0; 5]), ("x", x.clone())]);
        let fit = ols(&d, &x, FitOptions::default()).unwrap();
        assert!((fit.coef("x").unwrap() - 1.0).abs() < 1e-12);
        assert!(fit.coef("const").unwrap().abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn collinearity_errors_or_drops() {
        let d = design(vec![
            ("const", vec![1.0; 4]),
            ("x", vec![1.0, 2.0, 3.0, 5.0]),
            ("x2", vec![2.0, 4.0, 6.0, 10.0]),
        ]);
        let y = [1.0, 2.0, 2.5, 4.0];
        match ols(&d, &y, FitOptions::default()) {
            Err(Error::Collinearity { columns }) => assert_eq!(columns, vec!["x2".to_string()]),
            other => panic!("expected collinearity error, got {other:?}"),
        }
        let fit = ols(&d, &y, FitOptions::default().dropping()).unwrap();
        assert_eq!(fit.dropped_columns, vec!["x2".to_string()]);
        assert_eq!(fit.terms, vec!["const".to_string(), "x".to_string()]);
    }

    #[test]
    fn one_cluster_is_rejected() {
        let d = design(vec![("const", vec![1.0; 4]), ("x", vec![1.0, 2.0, 3.0, 5.0])])
            .with_clusters(vec![0; 4])
            .unwrap();
        assert!(matches!(
            ols(&d, &[1.0, 2.0, 2.0, 4.0], FitOptions::clustered(0)),
            Err(Error::Clustering(_))
        ));
    }

    #[test]
    fn singleton_clusters_reduce_to_hc1_up_to_factor() {
        let x: Vec<f64> = (0..9).map(|i| (i as f64 * 1.3).sin()).collect();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| 2.0 * v + (i as f64).cos()).collect();
        let d = design(vec![("const", vec![1.0; 9]), ("x", x)]).with_clusters((0..9).collect()).unwrap();
        let hc1 = ols(&d, &y, FitOptions::default()).unwrap();
        let cl = ols(&d, &y, FitOptions::clustered(0)).unwrap();
        let (n, k) = (9.0, 2.0);
        // clustered: G/(G-1) (N-1)/(N-K) = N/(N-K) when G = N
        let ratio = (n / (n - 1.0) * (n - 1.0) / (n - k)) / (n / (n - k));
        assert!((&cl.vcov - &hc1.vcov * ratio).abs().max() < 1e-14);
    }

    #[test]
    fn incremental_r2_of_identical_fits_is_zero() {
        let d = design(vec![("const", vec![1.0; 4]), ("x", vec![1.0, 2.0, 3.0, 5.0])]);
        let fit = ols(&d, &[1.0, 2.0, 2.0, 4.0], FitOptions::default()).unwrap();
        assert_eq!(incremental_r2(&fit, &fit).unwrap(), 0.0);
    }

    #[test]
    fn incremental_r2_rejects_non_nested() {
        let y = [1.0, 2.0, 2.0, 4.0];
        let a = ols(&design(vec![("const", vec![1.0; 4]), ("x", vec![1.0, 2.0, 3.0, 5.0])]), &y, FitOptions::default()).unwrap();
        let b = ols(&design(vec![("const", vec![1.0; 4]), ("z", vec![0.0, 1.0, 0.0, 1.0])]), &y, FitOptions::default()).unwrap();
        assert!(matches!(incremental_r2(&a, &b), Err(Error::Nesting(_))));
    }

    #[test]
    fn orthogonal_addition_adds_no_r2() {
        // z is orthogonal to y and to the baseline columns
        let y = vec![1.0, -1.0, 1.0, -1.0];
        let z = vec![1.0, 1.0, -1.0, -1.0];
        let base = design(vec![("const", vec![1.0; 4])]);
        let full = design(vec![("const", vec![1.0; 4]), ("z", z)]);
        let a = ols(&base, &y, FitOptions::default()).unwrap();
        let b = ols(&full, &y, FitOptions::default()).unwrap();
        assert!(incremental_r2(&a, &b).unwrap().abs() < 1e-10);
    }
}
