//! Association scans, polygenic scores, principal components and pairwise
//! relatedness classification.

mod pca;
mod relatedness;
mod scan;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use pca::{compute_pcs, Pcs, PCA_MAX_ITERATIONS, PCA_TOLERANCE};
pub use relatedness::{classify_relatedness, RelatednessClass};
pub use scan::{
    inject_reliability, residualize, run_scan, score, split_scan, standardize, center, MeasurementModel, SplitScan,
    WeightSet, WeightSource,
};

/// Minor-allele-frequency filter applied to ingested genotypes.
pub const MAF_THRESHOLD: f64 = 0.001;

/// Allele-count matrix, individuals by SNPs, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Genotypes {
    individual_ids: Vec<String>,
    snp_ids: Vec<String>,
    data: Vec<u8>,
}

impl Genotypes {
    pub fn new(individual_ids: Vec<String>, snp_ids: Vec<String>, data: Vec<u8>) -> Result<Self> {
        if data.len() != individual_ids.len() * snp_ids.len() {
            return Err(Error::Dimension(format!(
                "{} genotype cells for {} individuals x {} SNPs",
                data.len(),
                individual_ids.len(),
                snp_ids.len()
            )));
        }
        if let Some(pos) = data.iter().position(|&c| c > 2) {
            return Err(Error::Domain(format!(
                "allele count {} for individual {} at {}",
                data[pos],
                individual_ids[pos / snp_ids.len()],
                snp_ids[pos % snp_ids.len()]
            )));
        }
        Ok(Self { individual_ids, snp_ids, data })
    }

    pub fn n_individuals(&self) -> usize {
        self.individual_ids.len()
    }

    pub fn n_snps(&self) -> usize {
        self.snp_ids.len()
    }

    pub fn individual_ids(&self) -> &[String] {
        &self.individual_ids
    }

    pub fn snp_ids(&self) -> &[String] {
        &self.snp_ids
    }

    pub fn row(&self, i: usize) -> &[u8] {
        let j = self.n_snps();
        &self.data[i * j..(i + 1) * j]
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.data[i * self.n_snps() + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_individuals()).map(|i| self.get(i, j) as f64).collect()
    }

    pub fn subset_rows(&self, rows: &[usize]) -> Genotypes {
        let mut data = Vec::with_capacity(rows.len() * self.n_snps());
        for &i in rows {
            data.extend_from_slice(self.row(i));
        }
        Genotypes {
            individual_ids: rows.iter().map(|&i| self.individual_ids[i].clone()).collect(),
            snp_ids: self.snp_ids.clone(),
            data,
        }
    }

    pub fn subset_snps(&self, cols: &[usize]) -> Genotypes {
        let mut data = Vec::with_capacity(self.n_individuals() * cols.len());
        for i in 0..self.n_individuals() {
            let row = self.row(i);
            data.extend(cols.iter().map(|&j| row[j]));
        }
        Genotypes {
            individual_ids: self.individual_ids.clone(),
            snp_ids: cols.iter().map(|&j| self.snp_ids[j].clone()).collect(),
            data,
        }
    }

    /// Effect-allele frequency per SNP.
    pub fn allele_freqs(&self) -> Vec<f64> {
        let n = self.n_individuals() as f64;
        let mut sums = vec![0u64; self.n_snps()];
        for i in 0..self.n_individuals() {
            for (s, &c) in sums.iter_mut().zip(self.row(i)) {
                *s += c as u64;
            }
        }
        sums.into_iter().map(|s| s as f64 / (2.0 * n)).collect()
    }

    /// Drop SNPs whose minor-allele frequency is below `threshold`; returns
    /// the filtered matrix and the ids of dropped SNPs.
    pub fn maf_filter(&self, threshold: f64) -> (Genotypes, Vec<String>) {
        let freqs = self.allele_freqs();
        let (keep, drop): (Vec<usize>, Vec<usize>) =
            (0..self.n_snps()).partition(|&j| freqs[j].min(1.0 - freqs[j]) >= threshold && freqs[j].min(1.0 - freqs[j]) > 0.0);
        (self.subset_snps(&keep), drop.into_iter().map(|j| self.snp_ids[j].clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maf_filter_drops_monomorphic() {
        let g = Genotypes::new(
            vec!["a".into(), "b".into()],
            vec!["s1".into(), "s2".into()],
            vec![0, 1, 0, 2],
        )
        .unwrap();
        let (f, dropped) = g.maf_filter(MAF_THRESHOLD);
        assert_eq!(dropped, vec!["s1".to_string()]);
        assert_eq!(f.snp_ids(), &["s2".to_string()]);
        assert_eq!(f.column(0), vec![1.0, 2.0]);
    }

    #[test]
    fn rejects_invalid_counts() {
        assert!(Genotypes::new(vec!["a".into()], vec!["s".into()], vec![3]).is_err());
        assert!(Genotypes::new(vec!["a".into()], vec!["s".into()], vec![]).is_err());
    }
}
