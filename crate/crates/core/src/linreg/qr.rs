//! Householder QR that pivots numerically dependent columns to the end.
//!
//! Columns are processed in their original order; a column whose remaining
//! norm after projecting out the kept columns is below
//! `RANK_TOLERANCE * max column norm` is marked dependent and skipped, so the
//! later member of a collinear set is the one dropped.

use nalgebra::{DMatrix, DVector};

pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LeastSquares {
    n_rows: usize,
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
    /// Householder vectors; reflection `k` acts on rows `k..`.
    reflectors: Vec<(DVector<f64>, f64)>,
    r: DMatrix<f64>,
}

impl LeastSquares {
    pub fn new(x: &DMatrix<f64>) -> Self {
        let (n, k) = x.shape();
        let mut a = x.clone();
        let max_norm = (0..k).map(|j| x.column(j).norm()).fold(0.0f64, f64::max);
        let threshold = RANK_TOLERANCE * max_norm;
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        let mut reflectors: Vec<(DVector<f64>, f64)> = Vec::new();
        let mut r_cols: Vec<Vec<f64>> = Vec::new();
        for j in 0..k {
            let rank = kept.len();
            if rank >= n {
                dropped.push(j);
                continue;
            }
            let tail_norm = a.view((rank, j), (n - rank, 1)).norm();
            if tail_norm <= threshold || tail_norm == 0.0 {
                dropped.push(j);
                continue;
            }
            let head = a[(rank, j)];
            let alpha = if head >= 0.0 { -tail_norm } else { tail_norm };
            let mut v: DVector<f64> = a.view((rank, j), (n - rank, 1)).column(0).into_owned();
            v[0] -= alpha;
            let beta = 2.0 / v.norm_squared();
            for c in (j + 1)..k {
                let mut col = a.view_mut((rank, c), (n - rank, 1));
                let mut col = col.column_mut(0);
                let s = beta * v.dot(&col);
                col.axpy(-s, &v, 1.0);
            }
            let mut rc: Vec<f64> = (0..rank).map(|i| a[(i, j)]).collect();
            rc.push(alpha);
            r_cols.push(rc);
            reflectors.push((v, beta));
            kept.push(j);
        }
        let rank = kept.len();
        let mut r = DMatrix::zeros(rank, rank);
        for (c, col) in r_cols.iter().enumerate() {
            for (i, &val) in col.iter().enumerate() {
                r[(i, c)] = val;
            }
        }
        Self { n_rows: n, kept, dropped, reflectors, r }
    }

    pub fn rank(&self) -> usize {
        self.kept.len()
    }

    fn apply_qt(&self, y: &mut DVector<f64>) {
        for (k, (v, beta)) in self.reflectors.iter().enumerate() {
            let mut tail = y.rows_mut(k, self.n_rows - k);
            let s = beta * v.dot(&tail);
            tail.axpy(-s, v, 1.0);
        }
    }

    fn apply_q(&self, y: &mut DVector<f64>) {
        for (k, (v, beta)) in self.reflectors.iter().enumerate().rev() {
            let mut tail = y.rows_mut(k, self.n_rows - k);
            let s = beta * v.dot(&tail);
            tail.axpy(-s, v, 1.0);
        }
    }

    /// Coefficients on the kept columns.
    pub fn solve(&self, y: &[f64]) -> DVector<f64> {
        let mut qty = DVector::from_column_slice(y);
        self.apply_qt(&mut qty);
        let rank = self.rank();
        let rhs = qty.rows(0, rank).into_owned();
        self.r.solve_upper_triangular(&rhs).expect("R has a non-zero diagonal by construction")
    }

    /// Orthogonal projection of `y` onto the span of the kept columns.
    pub fn project(&self, y: &[f64]) -> DVector<f64> {
        let mut v = DVector::from_column_slice(y);
        self.apply_qt(&mut v);
        for i in self.rank()..self.n_rows {
            v[i] = 0.0;
        }
        self.apply_q(&mut v);
        v
    }

    /// `y` minus its projection.
    pub fn residualize(&self, y: &[f64]) -> DVector<f64> {
        let p = self.project(y);
        DVector::from_column_slice(y) - p
    }

    /// `(X_K' X_K)^{-1}` for the kept columns.
    pub fn bread(&self) -> DMatrix<f64> {
        let rank = self.rank();
        let r_inv = self
            .r
            .solve_upper_triangular(&DMatrix::identity(rank, rank))
            .expect("R has a non-zero diagonal by construction");
        &r_inv * r_inv.transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_exact_line() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let ls = LeastSquares::new(&x);
        let b = ls.solve(&[1.0, 3.0, 5.0]);
        assert!((b[0] - 1.0).abs() < 1e-14 && (b[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn later_duplicate_is_dropped() {
        let x = DMatrix::from_row_slice(4, 3, &[1.0, 1.0, 2.0, 1.0, 2.0, 4.0, 1.0, 3.0, 6.0, 1.0, 5.0, 10.0]);
        let ls = LeastSquares::new(&x);
        assert_eq!(ls.kept, vec![0, 1]);
        assert_eq!(ls.dropped, vec![2]);
    }

    #[test]
    fn bread_matches_normal_equations() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.3, 1.0, -1.2, 1.0, 2.5, 1.0, 0.7]);
        let ls = LeastSquares::new(&x);
        let direct = (x.transpose() * &x).try_inverse().unwrap();
        assert!((ls.bread() - direct).abs().max() < 1e-12);
    }
}
