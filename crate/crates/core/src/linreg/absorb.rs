//! Fixed-effect absorption by within-group demeaning.
//!
//! One dimension is demeaned exactly in a single pass. Several dimensions use
//! alternating projections until a full sweep changes no entry by more than
//! `ABSORB_TOLERANCE` relative to the column's largest magnitude.

use nalgebra::{DMatrix, DVector};

use super::{n_levels, DesignMatrix};
use crate::error::{Error, Result};

pub const ABSORB_TOLERANCE: f64 = 1e-8;
pub const ABSORB_MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Clone)]
pub struct Demeaner {
    groups: Vec<Vec<usize>>,
    counts: Vec<Vec<f64>>,
    pub kept_rows: Vec<usize>,
    pub n_input_rows: usize,
    pub n_dropped_singletons: usize,
    /// Degrees of freedom absorbed by the fixed effects.
    pub dof: usize,
    pub tolerance: f64,
    pub max_sweeps: usize,
}

fn recode(codes: &[usize]) -> Vec<usize> {
    super::encode_labels(codes)
}

/// Number of connected components in the bipartite graph linking levels of
/// two fixed-effect dimensions.
fn bipartite_components(a: &[usize], b: &[usize]) -> usize {
    let na = n_levels(a);
    let nb = n_levels(b);
    let mut parent: Vec<usize> = (0..na + nb).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (&i, &j) in a.iter().zip(b) {
        let ri = find(&mut parent, i);
        let rj = find(&mut parent, na + j);
        if ri != rj {
            parent[ri] = rj;
        }
    }
    (0..na + nb).filter(|&x| find(&mut parent, x) == x).count()
}

impl Demeaner {
    pub fn new(fe_groups: &[Vec<usize>], n_rows: usize) -> Result<Self> {
        if fe_groups.is_empty() {
            return Err(Error::InvalidParams("absorption needs at least one fixed-effect dimension".into()));
        }
        if let Some(g) = fe_groups.iter().find(|g| g.len() != n_rows) {
            return Err(Error::Dimension(format!("fixed-effect vector has {} rows, expected {n_rows}", g.len())));
        }
        let mut keep = vec![true; n_rows];
        loop {
            let mut changed = false;
            for g in fe_groups {
                let mut counts = vec![0usize; n_levels(g)];
                for (i, &c) in g.iter().enumerate() {
                    if keep[i] {
                        counts[c] += 1;
                    }
                }
                for (i, &c) in g.iter().enumerate() {
                    if keep[i] && counts[c] == 1 {
                        keep[i] = false;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let kept_rows: Vec<usize> = (0..n_rows).filter(|&i| keep[i]).collect();
        if kept_rows.is_empty() {
            return Err(Error::EmptySample("every row belongs to a singleton fixed-effect group".into()));
        }
        let groups: Vec<Vec<usize>> = fe_groups
            .iter()
            .map(|g| recode(&kept_rows.iter().map(|&i| g[i]).collect::<Vec<_>>()))
            .collect();
        let counts = groups
            .iter()
            .map(|g| {
                let mut c = vec![0.0; n_levels(g)];
                for &k in g {
                    c[k] += 1.0;
                }
                c
            })
            .collect();
        let dof = match groups.len() {
            1 => n_levels(&groups[0]),
            2 => n_levels(&groups[0]) + n_levels(&groups[1]) - bipartite_components(&groups[0], &groups[1]),
            d => groups.iter().map(|g| n_levels(g)).sum::<usize>() - (d - 1),
        };
        Ok(Self {
            groups,
            counts,
            n_input_rows: n_rows,
            n_dropped_singletons: n_rows - kept_rows.len(),
            kept_rows,
            dof,
            tolerance: ABSORB_TOLERANCE,
            max_sweeps: ABSORB_MAX_SWEEPS,
        })
    }

    pub fn n_kept(&self) -> usize {
        self.kept_rows.len()
    }

    pub fn n_dims(&self) -> usize {
        self.groups.len()
    }

    /// Restrict a full-length vector to the kept rows.
    pub fn subset<T: Copy>(&self, v: &[T]) -> Vec<T> {
        self.kept_rows.iter().map(|&i| v[i]).collect()
    }

    fn subtract_means(&self, dim: usize, x: &mut [f64], sums: &mut Vec<f64>) {
        let g = &self.groups[dim];
        let counts = &self.counts[dim];
        sums.clear();
        sums.resize(counts.len(), 0.0);
        for (v, &k) in x.iter().zip(g) {
            sums[k] += v;
        }
        for (s, c) in sums.iter_mut().zip(counts) {
            *s /= c;
        }
        for (v, &k) in x.iter_mut().zip(g) {
            *v -= sums[k];
        }
    }

    /// Demean a column already restricted to the kept rows.
    pub fn demean(&self, column: &[f64]) -> Result<Vec<f64>> {
        let mut x = column.to_vec();
        let mut sums = Vec::new();
        if self.groups.len() == 1 {
            self.subtract_means(0, &mut x, &mut sums);
            return Ok(x);
        }
        let scale = column.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return Ok(x);
        }
        let mut prev = x.clone();
        let mut change = f64::INFINITY;
        for _ in 0..self.max_sweeps {
            for d in 0..self.groups.len() {
                self.subtract_means(d, &mut x, &mut sums);
            }
            change = x.iter().zip(&prev).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale;
            if change < self.tolerance {
                return Ok(x);
            }
            prev.copy_from_slice(&x);
        }
        Err(Error::Convergence { what: "fixed-effect absorption".into(), residual: change })
    }

    /// Demean every column of a full-length matrix (rows not yet subset).
    pub fn demean_matrix(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.n_kept();
        let mut out = DMatrix::zeros(n, m.ncols());
        for j in 0..m.ncols() {
            let col: Vec<f64> = self.kept_rows.iter().map(|&i| m[(i, j)]).collect();
            let d = self.demean(&col)?;
            out.column_mut(j).copy_from_slice(&d);
        }
        Ok(out)
    }

    /// Tolerance for declaring a demeaned column identically zero.
    pub(crate) fn zero_tolerance(&self) -> f64 {
        if self.groups.len() == 1 {
            1e-10
        } else {
            1e-7
        }
    }
}

/// Result of absorbing the fixed effects of a design.
#[derive(Debug, Clone)]
pub struct Absorbed {
    /// Demeaned design restricted to kept rows; cluster ids are subset too.
    pub design: DesignMatrix,
    pub y: DVector<f64>,
    /// Outcome restricted to the kept rows, before demeaning.
    pub y_raw: DVector<f64>,
    pub kept_rows: Vec<usize>,
    pub n_dropped_singletons: usize,
    /// Columns that vary only across groups; they are set to exactly zero.
    pub collinear_with_fe: Vec<String>,
    pub fe_dof: usize,
}

pub fn absorb(design: &DesignMatrix, y: &[f64]) -> Result<Absorbed> {
    if y.len() != design.n_rows() {
        return Err(Error::Dimension(format!("outcome has {} rows, design {}", y.len(), design.n_rows())));
    }
    let dm = Demeaner::new(&design.fe_groups, design.n_rows())?;
    let mut values = dm.demean_matrix(&design.values)?;
    let mut collinear = Vec::new();
    let tol = dm.zero_tolerance();
    for j in 0..values.ncols() {
        let before: f64 = dm.kept_rows.iter().map(|&i| design.values[(i, j)].powi(2)).sum::<f64>().sqrt();
        let after = values.column(j).norm();
        if after <= tol * before || before == 0.0 {
            values.column_mut(j).fill(0.0);
            collinear.push(design.column_names[j].clone());
        }
    }
    let y_raw = dm.subset(y);
    let y_dm = dm.demean(&y_raw)?;
    let cluster_ids = design.cluster_ids.iter().map(|c| dm.subset(c)).collect();
    let fe_groups = design.fe_groups.iter().map(|g| dm.subset(g)).collect();
    Ok(Absorbed {
        design: DesignMatrix { column_names: design.column_names.clone(), values, cluster_ids, fe_groups },
        y: DVector::from_vec(y_dm),
        y_raw: DVector::from_vec(y_raw),
        kept_rows: dm.kept_rows.clone(),
        n_dropped_singletons: dm.n_dropped_singletons,
        collinear_with_fe: collinear,
        fe_dof: dm.dof,
    })
}
