//! Randomization inference by within-family permutation.
//!
//! Birth order (or the score) is shuffled among siblings, the model is
//! refitted, and the observed t statistic is ranked against the
//! permutation distribution.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modelspecs::{fit_spec, ModelSpec};
use crate::rng::{substream, Stream};
use crate::table::AnalysisTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PermutationScheme {
    /// Shuffle birth order, firstborn and lastborn together within families.
    #[default]
    PermuteBirthOrderWithinFamily,
    /// Shuffle the score columns together within families.
    PermuteScoreWithinFamily,
    /// Shuffle both blocks, each with its own permutation.
    PermuteBothJointly,
}

/// Share of failed refits tolerated before the test errors out.
pub const MAX_FAILED_SHARE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiConfig {
    pub n_permutations: usize,
    #[serde(default)]
    pub scheme: PermutationScheme,
    /// Term whose t statistic is the test statistic.
    pub term: String,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
}

fn default_bins() -> usize {
    50
}

impl RiConfig {
    pub fn new(term: impl Into<String>, n_permutations: usize) -> Self {
        Self { n_permutations, scheme: PermutationScheme::default(), term: term.into(), histogram_bins: default_bins() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_permutations == 0 {
            return Err(Error::Config("n_permutations must be positive".into()));
        }
        if self.histogram_bins == 0 {
            return Err(Error::Config("histogram_bins must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiResult {
    pub term: String,
    pub t_observed: f64,
    /// Permuted t statistics of successful refits, in replicate order.
    pub t_permuted: Vec<f64>,
    pub exact_p: f64,
    pub n_permutations: usize,
    pub n_failed_fits: usize,
}

/// `(1 + #{|t_perm| >= |t_obs|}) / (P + 1)`, failed fits counting as
/// non-exceedances.
pub fn exact_p_value(t_observed: f64, t_permuted: &[f64], n_permutations: usize) -> f64 {
    let exceed = t_permuted.iter().filter(|t| t.abs() >= t_observed.abs()).count();
    (1 + exceed) as f64 / (n_permutations + 1) as f64
}

fn permute_columns<T: Copy>(col: &mut [T], original: &[T], groups: &[Vec<usize>], perms: &[Vec<usize>]) {
    for (g, p) in groups.iter().zip(perms) {
        for (dst, src) in g.iter().zip(p) {
            col[*dst] = original[*src];
        }
    }
}

fn draw_permutations(groups: &[Vec<usize>], stream: &mut Stream) -> Vec<Vec<usize>> {
    groups
        .iter()
        .map(|g| {
            let mut p = g.clone();
            p.shuffle(stream);
            p
        })
        .collect()
}

/// Apply one within-family permutation of the scheme's columns.
pub fn permute_within_family(table: &AnalysisTable, scheme: PermutationScheme, stream: &mut Stream) -> AnalysisTable {
    let mut out = table.clone();
    permute_into(&mut out, table, &table.families(), scheme, stream);
    out
}

/// Overwrite the scheme's columns of `out` with a permutation of
/// `original`; `out` must otherwise equal `original`.
fn permute_into(
    out: &mut AnalysisTable,
    original: &AnalysisTable,
    groups: &[Vec<usize>],
    scheme: PermutationScheme,
    stream: &mut Stream,
) {
    let birth_order = matches!(scheme, PermutationScheme::PermuteBirthOrderWithinFamily | PermutationScheme::PermuteBothJointly);
    let score = matches!(scheme, PermutationScheme::PermuteScoreWithinFamily | PermutationScheme::PermuteBothJointly);
    if birth_order {
        let perms = draw_permutations(groups, stream);
        permute_columns(&mut out.birth_order, &original.birth_order, groups, &perms);
        permute_columns(&mut out.firstborn, &original.firstborn, groups, &perms);
        permute_columns(&mut out.lastborn, &original.lastborn, groups, &perms);
    }
    if score {
        let perms = draw_permutations(groups, stream);
        for (dst, src) in [(&mut out.pgs, &original.pgs), (&mut out.pgs_a, &original.pgs_a), (&mut out.pgs_b, &original.pgs_b)] {
            if let (Some(d), Some(s)) = (dst.as_mut(), src.as_ref()) {
                permute_columns(d, s, groups, &perms);
            }
        }
    }
}

fn t_of(table: &AnalysisTable, spec: &ModelSpec, term: &str) -> Result<f64> {
    let fit = fit_spec(table, spec)?;
    let t = fit
        .fit
        .t_stat(term)
        .ok_or_else(|| Error::Randomization(format!("term `{term}` not estimated in model `{}`", spec.id)))?;
    if !t.is_finite() {
        return Err(Error::Randomization(format!("non-finite t statistic for `{term}`")));
    }
    Ok(t)
}

/// Permutation test of `config.term` in `spec`. Replicate `r` draws from
/// its own substream of `seed`, so results do not depend on thread count.
pub fn randomization_test(table: &AnalysisTable, spec: &ModelSpec, config: &RiConfig, seed: u64) -> Result<RiResult> {
    config.validate()?;
    let t_observed = t_of(table, spec, &config.term)?;
    let groups = table.families();
    let draws: Vec<Option<f64>> = (0..config.n_permutations)
        .into_par_iter()
        .map_init(
            || table.clone(),
            |work, r| {
                let mut stream = substream(seed, "ri", r as u64);
                permute_into(work, table, &groups, config.scheme, &mut stream);
                t_of(work, spec, &config.term).ok()
            },
        )
        .collect();
    let t_permuted: Vec<f64> = draws.iter().flatten().copied().collect();
    let n_failed_fits = config.n_permutations - t_permuted.len();
    if n_failed_fits as f64 > MAX_FAILED_SHARE * config.n_permutations as f64 {
        return Err(Error::Randomization(format!(
            "{n_failed_fits} of {} permutation fits failed",
            config.n_permutations
        )));
    }
    Ok(RiResult {
        term: config.term.clone(),
        t_observed,
        exact_p: exact_p_value(t_observed, &t_permuted, config.n_permutations),
        t_permuted,
        n_permutations: config.n_permutations,
        n_failed_fits,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

/// Equal-width histogram over the range of `values`; the last bin is closed.
pub fn histogram(values: &[f64], n_bins: usize) -> Vec<HistogramBin> {
    if values.is_empty() || n_bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / n_bins as f64;
    let mut bins: Vec<HistogramBin> = (0..n_bins)
        .map(|k| HistogramBin {
            left: lo + k as f64 * width,
            right: if k + 1 == n_bins { hi } else { lo + (k + 1) as f64 * width },
            count: 0,
        })
        .collect();
    for v in values {
        let k = (((v - lo) / width) as usize).min(n_bins - 1);
        bins[k].count += 1;
    }
    bins
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(sizes: &[usize]) -> AnalysisTable {
        let mut t = AnalysisTable::default();
        let mut k = 0.0;
        for (f, &s) in sizes.iter().enumerate() {
            for b in 1..=s {
                t.individual_id.push(format!("F{f}-{b}"));
                t.family_id.push(format!("F{f}"));
                t.birth_order.push(b as u32);
                t.firstborn.push(b == 1);
                t.lastborn.push(b == s);
                t.sex.push((b % 2) as u8);
                t.birth_year.push(1950);
                t.birth_month.push(1);
                t.educ_years.push(10.0 + k);
                k += 1.0;
            }
        }
        let pgs: Vec<f64> = (0..t.len()).map(|i| i as f64 * 0.1).collect();
        t.pgs = Some(pgs.clone());
        t.pgs_a = Some(pgs.iter().map(|v| v + 1.0).collect());
        t.pgs_b = Some(pgs.iter().map(|v| v + 2.0).collect());
        t
    }

    #[test]
    fn singleton_rows_unchanged() {
        let t = toy(&[1, 1, 3]);
        let mut s = substream(7, "t", 0);
        for _ in 0..20 {
            let p = permute_within_family(&t, PermutationScheme::PermuteBothJointly, &mut s);
            assert_eq!(p.birth_order[..2], t.birth_order[..2]);
            assert_eq!(p.pgs.as_ref().unwrap()[..2], t.pgs.as_ref().unwrap()[..2]);
        }
    }

    #[test]
    fn multisets_preserved_and_blocks_move_together() {
        let t = toy(&[4, 3, 2]);
        let mut s = substream(1, "t", 0);
        let p = permute_within_family(&t, PermutationScheme::PermuteBirthOrderWithinFamily, &mut s);
        for g in t.families() {
            let mut a: Vec<u32> = g.iter().map(|&i| t.birth_order[i]).collect();
            let mut b: Vec<u32> = g.iter().map(|&i| p.birth_order[i]).collect();
            a.sort();
            b.sort();
            assert_eq!(a, b);
            for &i in &g {
                assert_eq!(p.firstborn[i], p.birth_order[i] == 1);
                assert_eq!(p.lastborn[i], p.birth_order[i] as usize == g.len());
            }
        }
        assert_eq!(p.pgs, t.pgs);

        let q = permute_within_family(&t, PermutationScheme::PermuteScoreWithinFamily, &mut s);
        assert_eq!(q.birth_order, t.birth_order);
        let (pa, pb) = (q.pgs_a.unwrap(), q.pgs_b.unwrap());
        for (i, v) in q.pgs.unwrap().iter().enumerate() {
            assert!((pa[i] - v - 1.0).abs() < 1e-12 && (pb[i] - v - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_sibling_swap_is_fair() {
        // 10,000 two-child families: the swap count is Binomial(10000, 1/2)
        let t = toy(&vec![2; 10_000]);
        let mut s = substream(3, "t", 0);
        let p = permute_within_family(&t, PermutationScheme::PermuteBirthOrderWithinFamily, &mut s);
        let swapped = (0..10_000).filter(|f| p.birth_order[2 * f] == 2).count() as f64;
        let chi2 = (swapped - 5000.0).powi(2) / 5000.0 * 2.0;
        // 99.9% point of chi-square with 1 dof
        assert!(chi2 < 10.83, "chi2 = {chi2}");
    }

    #[test]
    fn exact_p_formula() {
        assert_eq!(exact_p_value(2.0, &[0.5, -3.0, 2.0, 1.0], 4), 3.0 / 5.0);
        assert_eq!(exact_p_value(10.0, &[0.5, 1.0], 2), 1.0 / 3.0);
        // failed fits count against exceedance
        assert_eq!(exact_p_value(0.0, &[0.5], 3), 2.0 / 4.0);
    }

    #[test]
    fn histogram_counts_everything() {
        let v: Vec<f64> = (0..101).map(|i| i as f64 / 10.0).collect();
        let h = histogram(&v, 7);
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 101);
        assert_eq!(h[0].left, 0.0);
        assert_eq!(h[6].right, 10.0);
    }
}
