use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Genotypes;
use crate::error::{Error, Result};
use crate::linreg::{two_sided_p, DesignMatrix, LeastSquares};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    Full,
    SplitA,
    SplitB,
    External,
}

/// Per-SNP association weights from a discovery scan.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub snp_ids: Vec<String>,
    pub weights: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub source: WeightSource,
    /// Discovery sample size (0 when unknown, e.g. external weights).
    pub n_samples: usize,
    /// SNPs without variation in the discovery sample; their weight is 0.
    pub monomorphic: Vec<String>,
}

impl WeightSet {
    pub fn new(snp_ids: Vec<String>, weights: Vec<f64>, standard_errors: Vec<f64>, source: WeightSource) -> Result<Self> {
        if snp_ids.len() != weights.len() || snp_ids.len() != standard_errors.len() {
            return Err(Error::Dimension("weight set lists differ in length".into()));
        }
        if weights.iter().chain(&standard_errors).any(|v| !v.is_finite()) {
            return Err(Error::Domain("weights and standard errors must be finite".into()));
        }
        Ok(Self { snp_ids, weights, standard_errors, source, n_samples: 0, monomorphic: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.snp_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snp_ids.is_empty()
    }

    /// Two-sided p-values from a t distribution with `n_samples - 2` dof.
    /// Monomorphic SNPs get p = 1.
    pub fn p_values(&self) -> Vec<f64> {
        let dof = self.n_samples.saturating_sub(2).max(1);
        self.weights
            .iter()
            .zip(&self.standard_errors)
            .map(|(w, se)| if *se > 0.0 { two_sided_p(w / se, dof) } else { 1.0 })
            .collect()
    }
}

/// `y` minus its least-squares projection on `[1 | covariates]`.
pub fn residualize(y: &[f64], covariates: &DesignMatrix) -> Result<Vec<f64>> {
    let n = y.len();
    if covariates.n_rows() != n {
        return Err(Error::Dimension(format!("{} outcome rows, {} covariate rows", n, covariates.n_rows())));
    }
    let mut x = DMatrix::from_element(n, covariates.n_cols() + 1, 1.0);
    x.columns_mut(1, covariates.n_cols()).copy_from(&covariates.values);
    let ls = LeastSquares::new(&x);
    if !ls.dropped.is_empty() {
        let columns = ls
            .dropped
            .iter()
            .map(|&j| if j == 0 { "const".to_string() } else { covariates.column_names[j - 1].clone() })
            .collect();
        return Err(Error::Collinearity { columns });
    }
    Ok(ls.residualize(y).iter().copied().collect())
}

fn scan_rows(genotypes: &Genotypes, rows: &[usize], y: &[f64], source: WeightSource) -> WeightSet {
    let n = rows.len() as f64;
    let y_mean = rows.iter().map(|&i| y[i]).sum::<f64>() / n;
    let syy: f64 = rows.iter().map(|&i| (y[i] - y_mean).powi(2)).sum();
    let stats: Vec<(f64, f64, bool)> = (0..genotypes.n_snps())
        .into_par_iter()
        .map(|j| {
            let x_mean = rows.iter().map(|&i| genotypes.get(i, j) as f64).sum::<f64>() / n;
            let (mut sxx, mut sxy) = (0.0, 0.0);
            for &i in rows {
                let dx = genotypes.get(i, j) as f64 - x_mean;
                sxx += dx * dx;
                sxy += dx * (y[i] - y_mean);
            }
            if sxx == 0.0 {
                return (0.0, 0.0, true);
            }
            let beta = sxy / sxx;
            let ssr = (syy - beta * sxy).max(0.0);
            let se = if n > 2.0 { (ssr / (n - 2.0) / sxx).sqrt() } else { 0.0 };
            (beta, se, false)
        })
        .collect();
    let monomorphic = stats
        .iter()
        .zip(genotypes.snp_ids())
        .filter(|((_, _, m), _)| *m)
        .map(|(_, id)| id.clone())
        .collect();
    WeightSet {
        snp_ids: genotypes.snp_ids().to_vec(),
        weights: stats.iter().map(|s| s.0).collect(),
        standard_errors: stats.iter().map(|s| s.1).collect(),
        source,
        n_samples: rows.len(),
        monomorphic,
    }
}

/// Per-SNP simple regression (with intercept) of `y_resid` on each column.
pub fn run_scan(genotypes: &Genotypes, y_resid: &[f64]) -> Result<WeightSet> {
    if genotypes.n_individuals() != y_resid.len() {
        return Err(Error::Dimension(format!(
            "{} genotyped individuals, {} phenotypes",
            genotypes.n_individuals(),
            y_resid.len()
        )));
    }
    if y_resid.len() < 2 {
        return Err(Error::SampleSize("association scan needs at least 2 individuals".into()));
    }
    let rows: Vec<usize> = (0..y_resid.len()).collect();
    Ok(scan_rows(genotypes, &rows, y_resid, WeightSource::Full))
}

/// Weights from two random, equal halves of the discovery sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitScan {
    pub a: WeightSet,
    pub b: WeightSet,
    pub half_a: Vec<usize>,
    pub half_b: Vec<usize>,
}

pub fn split_scan(genotypes: &Genotypes, y_resid: &[f64], seed: u64) -> Result<SplitScan> {
    let n = y_resid.len();
    if genotypes.n_individuals() != n {
        return Err(Error::Dimension(format!("{} genotyped individuals, {n} phenotypes", genotypes.n_individuals())));
    }
    if n < 4 {
        return Err(Error::SampleSize(format!("split scan needs at least 4 individuals, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, "split-scan", 0));
    let mut half_a = order[..n.div_ceil(2)].to_vec();
    let mut half_b = order[n.div_ceil(2)..].to_vec();
    half_a.sort_unstable();
    half_b.sort_unstable();
    Ok(SplitScan {
        a: scan_rows(genotypes, &half_a, y_resid, WeightSource::SplitA),
        b: scan_rows(genotypes, &half_b, y_resid, WeightSource::SplitB),
        half_a,
        half_b,
    })
}

/// Polygenic score `sum_j w_j x_ij`, summed in genotype column order.
pub fn score(genotypes: &Genotypes, weights: &WeightSet) -> Result<Vec<f64>> {
    use std::collections::HashMap;
    let by_id: HashMap<&str, f64> = weights.snp_ids.iter().map(String::as_str).zip(weights.weights.iter().copied()).collect();
    let geno_ids: std::collections::HashSet<&str> = genotypes.snp_ids().iter().map(String::as_str).collect();
    let only_in_weights: Vec<String> = weights.snp_ids.iter().filter(|s| !geno_ids.contains(s.as_str())).cloned().collect();
    let only_in_genotypes: Vec<String> =
        genotypes.snp_ids().iter().filter(|s| !by_id.contains_key(s.as_str())).cloned().collect();
    if !only_in_weights.is_empty() || !only_in_genotypes.is_empty() {
        return Err(Error::Alignment { only_in_weights, only_in_genotypes });
    }
    let aligned: Vec<f64> = genotypes.snp_ids().iter().map(|s| by_id[s.as_str()]).collect();
    Ok((0..genotypes.n_individuals())
        .into_par_iter()
        .map(|i| genotypes.row(i).iter().zip(&aligned).fold(0.0, |acc, (&x, w)| acc + x as f64 * w))
        .collect())
}

fn reference_moments(scores: &[f64], reference: &[usize]) -> Result<(f64, f64)> {
    if reference.len() < 2 {
        return Err(Error::DegenerateScore("standardization reference needs at least 2 members".into()));
    }
    if let Some(&i) = reference.iter().find(|&&i| i >= scores.len()) {
        return Err(Error::Dimension(format!("reference index {i} out of range")));
    }
    let n = reference.len() as f64;
    let mean = reference.iter().map(|&i| scores[i]).sum::<f64>() / n;
    let var = reference.iter().map(|&i| (scores[i] - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var))
}

/// Subtract the reference mean and divide by the reference standard
/// deviation (denominator n - 1).
pub fn standardize(scores: &[f64], reference: &[usize]) -> Result<Vec<f64>> {
    let (mean, var) = reference_moments(scores, reference)?;
    if !(var > 0.0) {
        return Err(Error::DegenerateScore("score has zero variance in the reference sample".into()));
    }
    let sd = var.sqrt();
    Ok(scores.iter().map(|s| (s - mean) / sd).collect())
}

/// Subtract the reference mean only.
pub fn center(scores: &[f64], reference: &[usize]) -> Result<Vec<f64>> {
    let (mean, _) = reference_moments(scores, reference)?;
    Ok(scores.iter().map(|s| s - mean).collect())
}

/// Latent-score decomposition `score = latent + error` with uncorrelated
/// error; `reliability = latent_variance / score_variance`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementModel {
    pub reliability: f64,
    pub score_variance: f64,
    pub error_variance: f64,
    pub latent_variance: f64,
}

impl MeasurementModel {
    pub fn from_variances(latent_variance: f64, error_variance: f64) -> Result<Self> {
        if !(latent_variance > 0.0) || !(error_variance >= 0.0) {
            return Err(Error::Domain("latent variance must be positive and error variance non-negative".into()));
        }
        let score_variance = latent_variance + error_variance;
        Ok(Self { reliability: latent_variance / score_variance, score_variance, error_variance, latent_variance })
    }

    pub fn from_reliability(reliability: f64, score_variance: f64) -> Result<Self> {
        if !(reliability > 0.0 && reliability <= 1.0) || !(score_variance > 0.0) {
            return Err(Error::Domain(format!("reliability {reliability} must lie in (0, 1]")));
        }
        let latent_variance = reliability * score_variance;
        Ok(Self { reliability, score_variance, error_variance: score_variance - latent_variance, latent_variance })
    }

    /// Moment estimate from two measurements with independent errors:
    /// `Cov(a, b)` estimates the latent variance, `(Var a + Var b) / 2` the
    /// score variance.
    pub fn from_split_scores(a: &[f64], b: &[f64]) -> Result<Self> {
        if a.len() != b.len() || a.len() < 2 {
            return Err(Error::Dimension("split scores must have equal length of at least 2".into()));
        }
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0);
        let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / (n - 1.0);
        let vb = b.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / (n - 1.0);
        let score_variance = 0.5 * (va + vb);
        Self::from_variances(cov, score_variance - cov)
    }
}

/// Noisy measurement of `true_score` with the given reliability.
///
/// The error is a random linear combination of the individual's genotypes,
/// `sum_j e_j x_ij` with `e_j ~ N(0, 1)`, centered and scaled so that its
/// sample variance equals `(1 - reliability) / reliability` times the sample
/// variance of `true_score`. Like estimation error in GWAS weights, it is
/// shared between siblings in proportion to their genetic similarity, so the
/// within-family reliability matches the population one in expectation.
pub fn inject_reliability(genotypes: &Genotypes, true_score: &[f64], reliability: f64, seed: u64, tag: &str) -> Result<Vec<f64>> {
    if !(reliability > 0.0 && reliability <= 1.0) {
        return Err(Error::Domain(format!("reliability {reliability} must lie in (0, 1]")));
    }
    let n = genotypes.n_individuals();
    if true_score.len() != n || n < 2 {
        return Err(Error::Dimension("true score length must match genotypes (at least 2 rows)".into()));
    }
    if reliability == 1.0 {
        return Ok(true_score.to_vec());
    }
    let mut rng = substream(seed, tag, 0);
    let e: Vec<f64> = (0..genotypes.n_snps()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let noise: Vec<f64> = (0..n)
        .map(|i| genotypes.row(i).iter().zip(&e).fold(0.0, |acc, (&x, w)| acc + x as f64 * w))
        .collect();
    let all: Vec<usize> = (0..n).collect();
    let (_, var_true) = reference_moments(true_score, &all)?;
    let (noise_mean, var_noise) = reference_moments(&noise, &all)?;
    if !(var_noise > 0.0) {
        return Err(Error::DegenerateScore("genotypes carry no variation for noise injection".into()));
    }
    let scale = ((1.0 - reliability) / reliability * var_true / var_noise).sqrt();
    Ok(true_score.iter().zip(&noise).map(|(g, v)| g + scale * (v - noise_mean)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geno(rows: &[&[u8]]) -> Genotypes {
        let j = rows[0].len();
        Genotypes::new(
            (0..rows.len()).map(|i| format!("i{i}")).collect(),
            (0..j).map(|k| format!("s{k}")).collect(),
            rows.iter().flat_map(|r| r.iter().copied()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn hand_computed_score() {
        let g = geno(&[&[2, 1]]);
        let w = WeightSet::new(vec!["s0".into(), "s1".into()], vec![0.5, -0.2], vec![0.1, 0.1], WeightSource::External).unwrap();
        let s = score(&g, &w).unwrap();
        assert!((s[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn score_aligns_by_id_and_reports_mismatch() {
        let g = geno(&[&[2, 1]]);
        let w = WeightSet::new(vec!["s1".into(), "s0".into()], vec![-0.2, 0.5], vec![0.1, 0.1], WeightSource::External).unwrap();
        assert!((score(&g, &w).unwrap()[0] - 0.8).abs() < 1e-15);
        let bad = WeightSet::new(vec!["s1".into(), "s9".into()], vec![1.0, 1.0], vec![0.1, 0.1], WeightSource::External).unwrap();
        match score(&g, &bad) {
            Err(Error::Alignment { only_in_weights, only_in_genotypes }) => {
                assert_eq!(only_in_weights, vec!["s9".to_string()]);
                assert_eq!(only_in_genotypes, vec!["s0".to_string()]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_weights_give_zero_scores() {
        let g = geno(&[&[2, 1], &[0, 1]]);
        let w = WeightSet::new(vec!["s0".into(), "s1".into()], vec![0.0, 0.0], vec![0.0, 0.0], WeightSource::External).unwrap();
        assert_eq!(score(&g, &w).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn standardize_examples() {
        let all = [0, 1, 2];
        assert_eq!(standardize(&[1.0, 2.0, 3.0], &all).unwrap(), vec![-1.0, 0.0, 1.0]);
        let z = standardize(&[-1.0, 0.0, 1.0], &all).unwrap();
        assert!(z.iter().zip([-1.0, 0.0, 1.0]).all(|(a, b)| (a - b).abs() < 1e-10));
        assert!(matches!(standardize(&[2.0, 2.0, 2.0], &all), Err(Error::DegenerateScore(_))));
        assert!(standardize(&[2.0, 1.0], &[0]).is_err());
    }

    #[test]
    fn residualize_examples() {
        let n = 6;
        let c: Vec<f64> = vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let cov = DesignMatrix::from_columns(vec![("c".into(), c.clone())], n).unwrap();
        // orthogonal, mean zero
        let y = vec![1.0, 1.0, -1.0, -1.0, 0.0, 0.0];
        let r = residualize(&y, &cov).unwrap();
        assert!(r.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-10));
        // exact linear function
        let y2: Vec<f64> = c.iter().map(|v| 3.0 + 2.0 * v).collect();
        assert!(residualize(&y2, &cov).unwrap().iter().all(|v| v.abs() < 1e-10));
        // constant only
        let empty = DesignMatrix::new(vec![], DMatrix::zeros(3, 0)).unwrap();
        let r = residualize(&[1.0, 2.0, 6.0], &empty).unwrap();
        assert!(r.iter().zip([-2.0, -1.0, 3.0]).all(|(a, b)| (a - b).abs() < 1e-12));
        // rank deficiency names the column
        let dup = DesignMatrix::from_columns(vec![("c".into(), c.clone()), ("c2".into(), c)], n).unwrap();
        match residualize(&y, &dup) {
            Err(Error::Collinearity { columns }) => assert_eq!(columns, vec!["c2".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_phenotype_gives_zero_weights() {
        let g = geno(&[&[0, 1], &[1, 2], &[2, 0], &[1, 1]]);
        let w = run_scan(&g, &[0.0; 4]).unwrap();
        assert!(w.weights.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn monomorphic_snp_is_flagged() {
        let g = geno(&[&[1, 0], &[1, 2], &[1, 1], &[1, 0]]);
        let w = run_scan(&g, &[0.1, 1.2, 0.4, -0.3]).unwrap();
        assert_eq!(w.monomorphic, vec!["s0".to_string()]);
        assert_eq!(w.weights[0], 0.0);
    }

    #[test]
    fn split_halves_and_audit() {
        let rows: Vec<Vec<u8>> = (0..10).map(|i| vec![(i % 3) as u8, ((i + 1) % 3) as u8]).collect();
        let refs: Vec<&[u8]> = rows.iter().map(|r| r.as_slice()).collect();
        let g = geno(&refs);
        let y: Vec<f64> = (0..10).map(|i| i as f64 * 0.7 - 2.0).collect();
        let s = split_scan(&g, &y, 5).unwrap();
        assert_eq!((s.half_a.len(), s.half_b.len()), (5, 5));
        assert_eq!(split_scan(&g, &y, 5).unwrap(), s);
        // swapping the halves swaps the weight sets
        let b_direct = scan_rows(&g, &s.half_b, &y, WeightSource::SplitB);
        assert_eq!(b_direct, s.b);
        assert!(split_scan(&geno(&[&[1], &[0], &[2]]), &[1.0, 2.0, 3.0], 1).is_err());
    }

    #[test]
    fn measurement_model_identities() {
        let m = MeasurementModel::from_variances(0.7, 0.3).unwrap();
        assert!((m.reliability - 0.7).abs() < 1e-15);
        assert!((m.score_variance - m.latent_variance - m.error_variance).abs() < 1e-15);
        let r = MeasurementModel::from_reliability(0.7, 2.0).unwrap();
        assert!((r.latent_variance - 1.4).abs() < 1e-15 && (r.error_variance - 0.6).abs() < 1e-12);
    }
}
