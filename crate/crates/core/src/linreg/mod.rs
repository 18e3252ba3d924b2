//! Estimation engine: fixed-effect absorption, OLS with cluster-robust
//! covariance, two-stage least squares, stacked ORIV and instrument-strength
//! diagnostics.

mod absorb;
mod iv;
mod ols;
mod qr;

use std::collections::HashMap;
use std::hash::Hash;

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub use absorb::{absorb, Absorbed, Demeaner, ABSORB_MAX_SWEEPS, ABSORB_TOLERANCE};
pub use iv::{cragg_donald, oriv, tsls, FirstStage, IvFitResult, IvSpec, OrivInput, WEAK_INSTRUMENT_THRESHOLD};
pub use ols::{cluster_sandwich, incremental_r2, ols};
pub use qr::{LeastSquares, RANK_TOLERANCE};

/// Dense-code arbitrary labels in order of first appearance.
pub fn encode_labels<T: Hash + Eq + Clone>(labels: &[T]) -> Vec<usize> {
    let mut seen: HashMap<T, usize> = HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = seen.len();
            *seen.entry(l.clone()).or_insert(next)
        })
        .collect()
}

pub(crate) fn n_levels(codes: &[usize]) -> usize {
    codes.iter().copied().max().map_or(0, |m| m + 1)
}

/// Regressor matrix plus the row-level metadata needed for absorption and
/// clustering. Codes in `cluster_ids` and `fe_groups` are dense `0..G`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub column_names: Vec<String>,
    pub values: DMatrix<f64>,
    pub cluster_ids: Vec<Vec<usize>>,
    pub fe_groups: Vec<Vec<usize>>,
}

impl DesignMatrix {
    pub fn new(column_names: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if column_names.len() != values.ncols() {
            return Err(Error::Dimension(format!(
                "{} column names for {} columns",
                column_names.len(),
                values.ncols()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let col = pos / values.nrows().max(1);
            return Err(Error::Domain(format!("non-finite value in column `{}`", column_names[col])));
        }
        Ok(Self { column_names, values, cluster_ids: Vec::new(), fe_groups: Vec::new() })
    }

    /// Build from named columns of equal length.
    pub fn from_columns(columns: Vec<(String, Vec<f64>)>, n_rows: usize) -> Result<Self> {
        let mut values = DMatrix::zeros(n_rows, columns.len());
        let mut names = Vec::with_capacity(columns.len());
        for (j, (name, col)) in columns.into_iter().enumerate() {
            if col.len() != n_rows {
                return Err(Error::Dimension(format!("column `{name}` has {} rows, expected {n_rows}", col.len())));
            }
            values.column_mut(j).copy_from_slice(&col);
            names.push(name);
        }
        Self::new(names, values)
    }

    pub fn with_clusters(mut self, codes: Vec<usize>) -> Result<Self> {
        if codes.len() != self.n_rows() {
            return Err(Error::Dimension("cluster vector length differs from row count".into()));
        }
        if self.cluster_ids.len() >= 2 {
            return Err(Error::Clustering("at most two clustering dimensions are supported".into()));
        }
        self.cluster_ids.push(codes);
        Ok(self)
    }

    pub fn with_fixed_effects(mut self, codes: Vec<usize>) -> Result<Self> {
        if codes.len() != self.n_rows() {
            return Err(Error::Dimension("fixed-effect vector length differs from row count".into()));
        }
        self.fe_groups.push(codes);
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.column_names.iter().position(|c| c == name)?;
        Some(self.values.column(j).iter().copied().collect())
    }
}

/// Which covariance estimator to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Clustering {
    /// HC1 heteroskedasticity-robust.
    #[default]
    None,
    /// One-way clustering on `cluster_ids[d]`.
    One(usize),
    /// Two-way clustering on `cluster_ids[0]` and `cluster_ids[1]`.
    Two,
}

/// How rank-deficient designs are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CollinearPolicy {
    #[default]
    Error,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FitOptions {
    pub clustering: Clustering,
    pub collinear: CollinearPolicy,
}

impl FitOptions {
    pub fn clustered(dim: usize) -> Self {
        Self { clustering: Clustering::One(dim), ..Default::default() }
    }

    pub fn dropping(mut self) -> Self {
        self.collinear = CollinearPolicy::Drop;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VcovKind {
    Hc1,
    OneWay,
    TwoWay,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub terms: Vec<String>,
    pub coefficients: Vec<f64>,
    pub vcov: DMatrix<f64>,
    pub vcov_kind: VcovKind,
    pub n_obs: usize,
    pub n_dropped_singletons: usize,
    /// Smallest cluster count across clustering dimensions, when clustered.
    pub n_clusters: Option<usize>,
    pub r2: f64,
    pub within_r2: f64,
    pub residual_dof: usize,
    /// Whether fixed effects were absorbed (`within_r2` is then the
    /// explained share of within-group variation).
    pub fe_absorbed: bool,
    pub dropped_columns: Vec<String>,
    pub notices: Vec<String>,
}

impl FitResult {
    fn index(&self, term: &str) -> Option<usize> {
        self.terms.iter().position(|t| t == term)
    }

    pub fn coef(&self, term: &str) -> Option<f64> {
        self.index(term).map(|i| self.coefficients[i])
    }

    pub fn std_error(&self, term: &str) -> Option<f64> {
        self.index(term).map(|i| self.variance_sqrt(i))
    }

    // NaN variances (exactly identified fits) stay NaN
    fn variance_sqrt(&self, i: usize) -> f64 {
        let v = self.vcov[(i, i)];
        if v.is_nan() { v } else { v.max(0.0).sqrt() }
    }

    pub fn t_stat(&self, term: &str) -> Option<f64> {
        Some(self.coef(term)? / self.std_error(term)?)
    }

    /// Degrees of freedom for t reference distributions: `G - 1` when
    /// clustered, residual degrees of freedom otherwise.
    pub fn inference_dof(&self) -> usize {
        self.n_clusters.map_or(self.residual_dof, |g| g.saturating_sub(1)).max(1)
    }

    pub fn p_value(&self, term: &str) -> Option<f64> {
        let t = self.t_stat(term)?;
        Some(two_sided_p(t, self.inference_dof()))
    }

    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.terms.len()).map(|i| self.variance_sqrt(i)).collect()
    }
}

pub(crate) fn two_sided_p(t: f64, dof: usize) -> f64 {
    if !t.is_finite() {
        return if t.is_nan() { f64::NAN } else { 0.0 };
    }
    let dist = StudentsT::new(0.0, 1.0, dof as f64).expect("positive dof");
    2.0 * (1.0 - dist.cdf(t.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_are_coded_by_first_appearance() {
        assert_eq!(encode_labels(&["b", "a", "b", "c"]), vec![0, 1, 0, 2]);
    }

    #[test]
    fn design_rejects_non_finite() {
        let m = DMatrix::from_row_slice(2, 1, &[1.0, f64::NAN]);
        assert!(DesignMatrix::new(vec!["x".into()], m).is_err());
    }
}
