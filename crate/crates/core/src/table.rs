//! Column-oriented analysis table: the cohort CSV schema in memory.

use crate::cohortsim::Cohort;
use crate::error::{Error, Result};
use crate::linreg::encode_labels;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnalysisTable {
    pub individual_id: Vec<String>,
    pub family_id: Vec<String>,
    /// Reporting birth order, censored at 5.
    pub birth_order: Vec<u32>,
    pub firstborn: Vec<bool>,
    pub lastborn: Vec<bool>,
    pub sex: Vec<u8>,
    pub birth_year: Vec<i32>,
    pub birth_month: Vec<u8>,
    pub educ_years: Vec<f64>,
    pub pgs: Option<Vec<f64>>,
    pub pgs_a: Option<Vec<f64>>,
    pub pgs_b: Option<Vec<f64>>,
    /// Principal components, one vector per component.
    pub pcs: Vec<Vec<f64>>,
    pub theta_true: Option<Vec<f64>>,
    /// Additional numeric columns (e.g. auxiliary outcomes); NaN marks missing.
    pub extra: Vec<(String, Vec<f64>)>,
}

impl AnalysisTable {
    pub fn from_cohort(cohort: &Cohort) -> Self {
        let mut t = AnalysisTable::default();
        let n_pcs = cohort.individuals().next().map_or(0, |i| i.pcs.len());
        t.pcs = vec![Vec::new(); n_pcs];
        let mut theta = Vec::new();
        for ind in cohort.individuals() {
            t.individual_id.push(ind.individual_id.clone());
            t.family_id.push(ind.family_id.clone());
            t.birth_order.push(ind.reporting_birth_order());
            t.firstborn.push(ind.firstborn);
            t.lastborn.push(ind.lastborn);
            t.sex.push(ind.sex);
            t.birth_year.push(ind.birth_year);
            t.birth_month.push(ind.birth_month);
            t.educ_years.push(ind.educ_years);
            for (k, p) in ind.pcs.iter().enumerate() {
                t.pcs[k].push(*p);
            }
            theta.push(ind.latent_skill);
        }
        t.theta_true = Some(theta);
        t
    }

    pub fn len(&self) -> usize {
        self.individual_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individual_id.is_empty()
    }

    /// Dense family codes in order of first appearance.
    pub fn family_codes(&self) -> Vec<usize> {
        let labels: Vec<&str> = self.family_id.iter().map(String::as_str).collect();
        encode_labels(&labels)
    }

    /// Number of rows sharing each row's family.
    pub fn family_sizes(&self) -> Vec<f64> {
        let codes = self.family_codes();
        let mut counts = vec![0usize; codes.iter().copied().max().map_or(0, |m| m + 1)];
        for &c in &codes {
            counts[c] += 1;
        }
        codes.iter().map(|&c| counts[c] as f64).collect()
    }

    /// Row indices grouped by family, in order of first appearance.
    pub fn families(&self) -> Vec<Vec<usize>> {
        let codes = self.family_codes();
        let mut groups = vec![Vec::new(); codes.iter().copied().max().map_or(0, |m| m + 1)];
        for (i, c) in codes.into_iter().enumerate() {
            groups[c].push(i);
        }
        groups
    }

    pub fn extra_column(&self, name: &str) -> Option<&[f64]> {
        self.extra.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    /// Check that every column has one value per row.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let lens = [
            ("family_id", self.family_id.len()),
            ("birth_order", self.birth_order.len()),
            ("firstborn", self.firstborn.len()),
            ("lastborn", self.lastborn.len()),
            ("sex", self.sex.len()),
            ("birth_year", self.birth_year.len()),
            ("birth_month", self.birth_month.len()),
            ("educ_years", self.educ_years.len()),
        ];
        for (name, len) in lens {
            if len != n {
                return Err(Error::Dimension(format!("column `{name}` has {len} rows, expected {n}")));
            }
        }
        let optional = [("pgs", &self.pgs), ("pgs_a", &self.pgs_a), ("pgs_b", &self.pgs_b), ("theta_true", &self.theta_true)];
        for (name, col) in optional {
            if let Some(c) = col {
                if c.len() != n {
                    return Err(Error::Dimension(format!("column `{name}` has {} rows, expected {n}", c.len())));
                }
            }
        }
        for (k, c) in self.pcs.iter().enumerate() {
            if c.len() != n {
                return Err(Error::Dimension(format!("column `pc{}` has {} rows, expected {n}", k + 1, c.len())));
            }
        }
        for (name, c) in &self.extra {
            if c.len() != n {
                return Err(Error::Dimension(format!("column `{name}` has {} rows, expected {n}", c.len())));
            }
        }
        Ok(())
    }
}
