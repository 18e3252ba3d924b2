//! Two-stage least squares, the stacked ORIV estimator and the
//! Cragg–Donald minimum-eigenvalue statistic.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use super::absorb::Demeaner;
use super::ols::{covariance, r_squared};
use super::qr::LeastSquares;
use super::{Clustering, CollinearPolicy, DesignMatrix, FitOptions, FitResult};
use crate::error::{Error, Result};

/// Rule-of-thumb threshold below which instruments are reported as weak.
pub const WEAK_INSTRUMENT_THRESHOLD: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct IvFitResult {
    pub fit: FitResult,
    /// Cragg–Donald statistic of the first stage.
    pub first_stage_f: f64,
    pub n_endogenous: usize,
    pub n_instruments: usize,
    pub weak_instruments: bool,
}

/// Exogenous regressors carry the cluster and fixed-effect metadata; the
/// metadata of the other two blocks is ignored.
#[derive(Debug, Clone)]
pub struct IvSpec {
    pub exogenous: DesignMatrix,
    pub endogenous: DesignMatrix,
    pub instruments: DesignMatrix,
}

/// Inputs to the Cragg–Donald statistic, already demeaned for any absorbed
/// fixed effects.
#[derive(Debug, Clone)]
pub struct FirstStage {
    pub endogenous: DMatrix<f64>,
    pub exogenous: DMatrix<f64>,
    pub instruments: DMatrix<f64>,
    /// Degrees of freedom used up by absorbed fixed effects.
    pub absorbed_dof: usize,
}

fn residualize_columns(ls: Option<&LeastSquares>, m: &DMatrix<f64>) -> DMatrix<f64> {
    match ls {
        None => m.clone(),
        Some(ls) => {
            let mut out = m.clone();
            for j in 0..m.ncols() {
                let col: Vec<f64> = m.column(j).iter().copied().collect();
                out.column_mut(j).copy_from(&ls.residualize(&col));
            }
            out
        }
    }
}

/// Minimum eigenvalue of the first-stage concentration matrix,
/// `Sigma_VV^{-1/2} X' M_W Z (Z' M_W Z)^{-1} Z' M_W X Sigma_VV^{-1/2} / L`.
/// With one endogenous regressor and one instrument this is the first-stage F.
pub fn cragg_donald(fs: &FirstStage) -> Result<f64> {
    let n = fs.endogenous.nrows();
    let k = fs.endogenous.ncols();
    let l = fs.instruments.ncols();
    if fs.exogenous.nrows() != n || fs.instruments.nrows() != n {
        return Err(Error::Dimension("first-stage blocks differ in row count".into()));
    }
    if l < k || k == 0 {
        return Err(Error::Identification(format!("{l} instruments for {k} endogenous regressors")));
    }
    let w_ls = (fs.exogenous.ncols() > 0).then(|| LeastSquares::new(&fs.exogenous));
    let kw = w_ls.as_ref().map_or(0, |ls| ls.rank());
    let x = residualize_columns(w_ls.as_ref(), &fs.endogenous);
    let z = residualize_columns(w_ls.as_ref(), &fs.instruments);
    let z_ls = LeastSquares::new(&z);
    if z_ls.rank() < l {
        return Err(Error::Diagnostic("instruments are collinear given the exogenous regressors".into()));
    }
    let mut fitted = DMatrix::zeros(n, k);
    for j in 0..k {
        let col: Vec<f64> = x.column(j).iter().copied().collect();
        fitted.column_mut(j).copy_from(&z_ls.project(&col));
    }
    let resid = &x - &fitted;
    let dof = n
        .checked_sub(kw + l + fs.absorbed_dof)
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::Diagnostic("no residual degrees of freedom in the first stage".into()))?;
    let sigma = resid.transpose() * &resid / dof as f64;
    let concentration = fitted.transpose() * &fitted / l as f64;
    let chol = Cholesky::new(sigma)
        .ok_or_else(|| Error::Diagnostic("first-stage residual covariance is singular".into()))?;
    let l_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::Diagnostic("first-stage residual covariance is singular".into()))?;
    let c = &l_inv * concentration * l_inv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c).eigenvalues;
    Ok(eig.iter().copied().fold(f64::INFINITY, f64::min))
}

fn check_rows(name: &str, m: &DesignMatrix, n: usize) -> Result<()> {
    if m.n_rows() != n {
        return Err(Error::Dimension(format!("{name} block has {} rows, expected {n}", m.n_rows())));
    }
    Ok(())
}

fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n = blocks.iter().map(|b| b.nrows()).next().unwrap_or(0);
    let k: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, k);
    let mut at = 0;
    for b in blocks {
        out.columns_mut(at, b.ncols()).copy_from(*b);
        at += b.ncols();
    }
    out
}

/// Standard 2SLS. Endogenous columns are projected on the exogenous
/// regressors and the excluded instruments; sandwich residuals use the
/// original endogenous columns.
pub fn tsls(y: &[f64], spec: &IvSpec, opts: FitOptions) -> Result<IvFitResult> {
    let n = y.len();
    check_rows("exogenous", &spec.exogenous, n)?;
    check_rows("endogenous", &spec.endogenous, n)?;
    check_rows("instrument", &spec.instruments, n)?;
    let k_e = spec.endogenous.n_cols();
    let l = spec.instruments.n_cols();
    if k_e == 0 {
        return Err(Error::Identification("no endogenous regressors".into()));
    }
    if l < k_e {
        return Err(Error::Identification(format!(
            "order condition fails: {l} instruments for {k_e} endogenous regressors"
        )));
    }
    if let Some(v) = y.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite outcome value {v}")));
    }

    let fe_absorbed = !spec.exogenous.fe_groups.is_empty();
    let mut notices = Vec::new();
    let (y_w, y_raw, w, xe, z, clusters, fe_dof, n_dropped) = if fe_absorbed {
        let dm = Demeaner::new(&spec.exogenous.fe_groups, n)?;
        let mut w = dm.demean_matrix(&spec.exogenous.values)?;
        let tol = dm.zero_tolerance();
        for j in 0..w.ncols() {
            let before: f64 = dm.kept_rows.iter().map(|&i| spec.exogenous.values[(i, j)].powi(2)).sum::<f64>().sqrt();
            if w.column(j).norm() <= tol * before {
                w.column_mut(j).fill(0.0);
                notices.push(format!("column `{}` is collinear with the fixed effects", spec.exogenous.column_names[j]));
            }
        }
        let y_raw = dm.subset(y);
        let y_w = dm.demean(&y_raw)?;
        let clusters = spec.exogenous.cluster_ids.iter().map(|c| dm.subset(c)).collect();
        (
            DVector::from_vec(y_w),
            y_raw,
            w,
            dm.demean_matrix(&spec.endogenous.values)?,
            dm.demean_matrix(&spec.instruments.values)?,
            clusters,
            dm.dof,
            dm.n_dropped_singletons,
        )
    } else {
        (
            DVector::from_column_slice(y),
            y.to_vec(),
            spec.exogenous.values.clone(),
            spec.endogenous.values.clone(),
            spec.instruments.values.clone(),
            spec.exogenous.cluster_ids.clone(),
            0,
            0,
        )
    };
    let n_kept = y_w.len();

    // exogenous block: drop or reject dependent columns
    let w_ls = LeastSquares::new(&w);
    let dropped: Vec<String> = w_ls.dropped.iter().map(|&j| spec.exogenous.column_names[j].clone()).collect();
    if !dropped.is_empty() && opts.collinear == CollinearPolicy::Error {
        return Err(Error::Collinearity { columns: dropped });
    }
    for c in &dropped {
        notices.push(format!("dropped collinear column `{c}`"));
    }
    let w = w.select_columns(&w_ls.kept);
    let exog_names: Vec<String> = w_ls.kept.iter().map(|&j| spec.exogenous.column_names[j].clone()).collect();

    // first stage
    let zfull = hstack(&[&w, &z]);
    let z_ls = LeastSquares::new(&zfull);
    if z_ls.rank() < w.ncols() + l {
        return Err(Error::WeakInstrument("instruments are rank deficient given the exogenous regressors".into()));
    }
    let mut xhat = DMatrix::zeros(n_kept, k_e);
    for j in 0..k_e {
        let col: Vec<f64> = xe.column(j).iter().copied().collect();
        xhat.column_mut(j).copy_from(&z_ls.project(&col));
    }

    // second stage on [fitted endogenous | exogenous]
    let x2 = hstack(&[&xhat, &w]);
    let ls2 = LeastSquares::new(&x2);
    if ls2.rank() < x2.ncols() {
        return Err(Error::WeakInstrument("first-stage fitted values are collinear".into()));
    }
    let beta = ls2.solve(y_w.as_slice());
    let x_orig = hstack(&[&xe, &w]);
    let resid = &y_w - &x_orig * &beta;
    let bread = ls2.bread();
    let vcov = covariance(&x2, resid.as_slice(), &bread, &clusters, opts.clustering, fe_dof)?;
    notices.extend(vcov.notices);
    let (r2, within_r2) = r_squared(&y_raw, y_w.as_slice(), resid.norm_squared(), fe_absorbed);

    let first_stage_f = cragg_donald(&FirstStage {
        endogenous: xe.clone(),
        exogenous: w.clone(),
        instruments: z.clone(),
        absorbed_dof: fe_dof,
    })?;

    let mut terms = spec.endogenous.column_names.clone();
    terms.extend(exog_names);
    Ok(IvFitResult {
        fit: FitResult {
            terms,
            coefficients: beta.iter().copied().collect(),
            vcov: vcov.matrix,
            vcov_kind: vcov.kind,
            n_obs: n_kept,
            n_dropped_singletons: n_dropped,
            n_clusters: vcov.n_clusters,
            r2,
            within_r2,
            residual_dof: n_kept.saturating_sub(x2.ncols() + fe_dof),
            fe_absorbed,
            dropped_columns: dropped,
            notices,
        },
        first_stage_f,
        n_endogenous: k_e,
        n_instruments: l,
        weak_instruments: first_stage_f < WEAK_INSTRUMENT_THRESHOLD,
    })
}

/// Inputs for the stacked ORIV estimator.
#[derive(Debug, Clone)]
pub struct OrivInput<'a> {
    pub y: &'a [f64],
    pub score_a: &'a [f64],
    pub score_b: &'a [f64],
    /// Optional binary moderator (e.g. firstborn) interacted with the score.
    pub moderator: Option<&'a [f64]>,
    pub controls: &'a [(String, Vec<f64>)],
    /// Dense family codes.
    pub family_ids: &'a [usize],
    /// Family-by-stack fixed effects when true, stack intercepts otherwise.
    pub within_family: bool,
    pub score_name: &'a str,
    pub moderator_name: &'a str,
}

pub const STANDARDIZATION_TOLERANCE: f64 = 1e-6;

/// ORIV: stack the data twice; in stack 1 score A is the regressor and
/// score B its instrument, in stack 2 the roles swap. The interaction
/// `score_k * moderator` is instrumented by `score_other * moderator`.
/// Covariance is clustered two-way on family and individual unless
/// `opts.clustering` names a single dimension (0 = family, 1 = individual).
pub fn oriv(input: &OrivInput<'_>, opts: FitOptions) -> Result<IvFitResult> {
    let n = input.y.len();
    for (name, len) in [
        ("score_a", input.score_a.len()),
        ("score_b", input.score_b.len()),
        ("family_ids", input.family_ids.len()),
    ] {
        if len != n {
            return Err(Error::Dimension(format!("{name} has {len} rows, outcome {n}")));
        }
    }
    if let Some(m) = input.moderator {
        if m.len() != n {
            return Err(Error::Dimension("moderator length differs from outcome".into()));
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(input.score_a), mean(input.score_b));
    if (ma - mb).abs() > STANDARDIZATION_TOLERANCE {
        return Err(Error::Standardization(format!("score means differ: {ma} vs {mb}")));
    }

    let mut notices = Vec::new();
    let moderator = match input.moderator {
        Some(m) => {
            let mm = mean(m);
            if m.iter().all(|v| (v - mm).abs() == 0.0) {
                notices.push(format!(
                    "moderator `{}` has no variation; interaction with `{}` dropped as collinear",
                    input.moderator_name, input.score_name
                ));
                None
            } else {
                Some(m)
            }
        }
        None => None,
    };

    let rows = 2 * n;
    let interaction_name = format!("{}_x_{}", input.moderator_name, input.score_name);
    let mut endog_cols: Vec<(String, Vec<f64>)> = vec![(input.score_name.to_string(), Vec::with_capacity(rows))];
    let mut instr_cols: Vec<(String, Vec<f64>)> = vec![(format!("{}_other", input.score_name), Vec::with_capacity(rows))];
    if moderator.is_some() {
        endog_cols.push((interaction_name.clone(), Vec::with_capacity(rows)));
        instr_cols.push((format!("{interaction_name}_other"), Vec::with_capacity(rows)));
    }
    for (own, other) in [(input.score_a, input.score_b), (input.score_b, input.score_a)] {
        endog_cols[0].1.extend_from_slice(own);
        instr_cols[0].1.extend_from_slice(other);
        if let Some(m) = moderator {
            endog_cols[1].1.extend(own.iter().zip(m).map(|(s, e)| s * e));
            instr_cols[1].1.extend(other.iter().zip(m).map(|(s, e)| s * e));
        }
    }
    let mut exog_cols: Vec<(String, Vec<f64>)> = Vec::new();
    if let Some(m) = moderator {
        exog_cols.push((input.moderator_name.to_string(), m.iter().chain(m).copied().collect()));
    }
    for (name, c) in input.controls {
        if c.len() != n {
            return Err(Error::Dimension(format!("control `{name}` has {} rows, expected {n}", c.len())));
        }
        exog_cols.push((name.clone(), c.iter().chain(c).copied().collect()));
    }
    if !input.within_family {
        exog_cols.push(("const".into(), vec![1.0; rows]));
        exog_cols.push(("stack2".into(), (0..rows).map(|i| (i >= n) as u8 as f64).collect()));
    }
    let families: Vec<usize> = input.family_ids.iter().chain(input.family_ids).copied().collect();
    let individuals: Vec<usize> = (0..n).chain(0..n).collect();
    let mut exog = DesignMatrix::from_columns(exog_cols, rows)?
        .with_clusters(families.clone())?
        .with_clusters(individuals)?;
    if input.within_family {
        let fe: Vec<usize> = families.iter().enumerate().map(|(i, &f)| 2 * f + (i >= n) as usize).collect();
        exog = exog.with_fixed_effects(fe)?;
    }
    let spec = IvSpec {
        exogenous: exog,
        endogenous: DesignMatrix::from_columns(endog_cols, rows)?,
        instruments: DesignMatrix::from_columns(instr_cols, rows)?,
    };
    let y: Vec<f64> = input.y.iter().chain(input.y).copied().collect();
    let clustering = match opts.clustering {
        Clustering::None => Clustering::Two,
        c => c,
    };
    let mut res = tsls(&y, &spec, FitOptions { clustering, ..opts })?;
    notices.append(&mut res.fit.notices);
    res.fit.notices = notices;
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linreg::ols;

    fn cols(v: Vec<(&str, Vec<f64>)>) -> DesignMatrix {
        let n = v[0].1.len();
        DesignMatrix::from_columns(v.into_iter().map(|(a, b)| (a.to_string(), b)).collect(), n).unwrap()
    }

    #[test]
    fn instrument_equal_to_regressor_reproduces_ols() {
        let x: Vec<f64> = (0..20).map(|i| ((i * 37) % 11) as f64 * 0.3).collect();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| 1.0 + 0.5 * v + ((i * 13) % 7) as f64 * 0.1).collect();
        let spec = IvSpec {
            exogenous: cols(vec![("const", vec![1.0; 20])]),
            endogenous: cols(vec![("x", x.clone())]),
            instruments: cols(vec![("z", x.clone())]),
        };
        let iv = tsls(&y, &spec, FitOptions::default()).unwrap();
        let o = ols(&cols(vec![("x", x), ("const", vec![1.0; 20])]), &y, FitOptions::default()).unwrap();
        assert!((iv.fit.coef("x").unwrap() - o.coef("x").unwrap()).abs() < 1e-12);
        assert!((&iv.fit.vcov - &o.vcov).abs().max() < 1e-12);
    }

    #[test]
    fn under_identified_is_rejected() {
        let spec = IvSpec {
            exogenous: cols(vec![("const", vec![1.0; 4])]),
            endogenous: cols(vec![("x1", vec![1.0, 2.0, 3.0, 4.0]), ("x2", vec![0.0, 1.0, 0.0, 1.0])]),
            instruments: cols(vec![("z", vec![1.0, 0.0, 2.0, 1.0])]),
        };
        assert!(matches!(tsls(&[1.0; 4], &spec, FitOptions::default()), Err(Error::Identification(_))));
    }

    #[test]
    fn instrument_collinear_with_exogenous_is_degenerate() {
        let spec = IvSpec {
            exogenous: cols(vec![("const", vec![1.0; 4])]),
            endogenous: cols(vec![("x", vec![1.0, 2.0, 3.0, 4.0])]),
            instruments: cols(vec![("z", vec![2.0; 4])]),
        };
        assert!(matches!(tsls(&[1.0, 2.0, 2.0, 3.0], &spec, FitOptions::default()), Err(Error::WeakInstrument(_))));
    }

    #[test]
    fn oriv_rejects_inconsistent_centering() {
        let a = [-1.0, 0.0, 1.0, 0.0];
        let b = [0.0, 1.0, 2.0, 1.0];
        let input = OrivInput {
            y: &[1.0, 2.0, 3.0, 2.0],
            score_a: &a,
            score_b: &b,
            moderator: None,
            controls: &[],
            family_ids: &[0, 0, 1, 1],
            within_family: false,
            score_name: "pgs",
            moderator_name: "firstborn",
        };
        assert!(matches!(oriv(&input, FitOptions::default()), Err(Error::Standardization(_))));
    }
}
