//! Top-k principal components by subspace iteration with Rayleigh–Ritz
//! rotation on the standardized genotype covariance.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use super::Genotypes;
use crate::error::{Error, Result};
use crate::rng::substream;

pub const PCA_TOLERANCE: f64 = 1e-9;
pub const PCA_MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Pcs {
    /// Individuals by components.
    pub scores: DMatrix<f64>,
    /// SNP loadings (unit-norm columns).
    pub loadings: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    pub iterations: usize,
}

/// Columns centered and scaled to unit sample variance; constant columns
/// become zero.
pub fn standardized_matrix(genotypes: &Genotypes) -> DMatrix<f64> {
    let (n, j) = (genotypes.n_individuals(), genotypes.n_snps());
    let mut x = DMatrix::zeros(n, j);
    for c in 0..j {
        let col = genotypes.column(c);
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0).max(1.0);
        let sd = var.sqrt();
        if sd > 0.0 {
            for (i, v) in col.iter().enumerate() {
                x[(i, c)] = (v - mean) / sd;
            }
        }
    }
    x
}

pub fn compute_pcs(genotypes: &Genotypes, k: usize) -> Result<Pcs> {
    let x = standardized_matrix(genotypes);
    pcs_of_matrix(&x, k)
}

pub(crate) fn pcs_of_matrix(x: &DMatrix<f64>, k: usize) -> Result<Pcs> {
    let (n, j) = x.shape();
    if k < 1 || k > n.min(j) {
        return Err(Error::Dimension(format!("cannot extract {k} components from a {n} x {j} matrix")));
    }
    let denom = (n as f64 - 1.0).max(1.0);
    let trace = x.norm_squared() / denom;
    if !(trace > 0.0) {
        return Err(Error::DegenerateScore("genotype matrix has no variation".into()));
    }
    let p = (k + 5).min(j);
    let mut rng = substream(0, "pca-start", 0);
    let mut v = DMatrix::from_fn(j, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    v = v.qr().q();
    let mut prev = vec![f64::INFINITY; k];
    let mut change = f64::INFINITY;
    for it in 1..=PCA_MAX_ITERATIONS {
        let w = x.transpose() * (x * &v) / denom;
        let q = w.qr().q();
        let xq = x * &q;
        let b = xq.transpose() * &xq / denom;
        let eig = SymmetricEigen::new((&b + b.transpose()) * 0.5);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]));
        let rot = eig.eigenvectors.select_columns(&order);
        v = &q * rot;
        let vals: Vec<f64> = order.iter().take(k).map(|&i| eig.eigenvalues[i]).collect();
        let scale = vals[0].abs().max(f64::MIN_POSITIVE);
        change = vals.iter().zip(&prev).map(|(a, b)| (a - b).abs() / scale).fold(0.0, f64::max);
        prev = vals;
        if change < PCA_TOLERANCE {
            let mut loadings = v.columns(0, k).into_owned();
            for c in 0..k {
                let col = loadings.column(c);
                let (imax, _) = col.iter().enumerate().fold((0, 0.0f64), |best, (i, val)| {
                    if val.abs() > best.1 { (i, val.abs()) } else { best }
                });
                if loadings[(imax, c)] < 0.0 {
                    loadings.column_mut(c).neg_mut();
                }
            }
            let scores = x * &loadings;
            return Ok(Pcs {
                scores,
                loadings,
                explained_variance_ratio: prev.iter().map(|e| e / trace).collect(),
                eigenvalues: prev,
                iterations: it,
            });
        }
    }
    Err(Error::Convergence { what: "principal component extraction".into(), residual: change })
}
