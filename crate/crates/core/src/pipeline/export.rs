//! Writers for every pipeline artifact and the plot-data summaries.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::genoscore::{Genotypes, WeightSet};
use crate::modelspecs::SpecFit;
use crate::ri::{histogram, RiResult};
use crate::table::AnalysisTable;

/// Shortest round-trip decimal; NaN renders as an empty cell.
pub fn fmt_real(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn writer(path: &Path, delimiter: u8) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::WriterBuilder::new()
        .delimiter(delimiter)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?)
}

fn flag(b: bool) -> String {
    (b as u8).to_string()
}

/// The cohort CSV with the fixed column order; absent score or latent
/// columns are written as empty cells (latent column only when present).
pub fn write_cohort(path: &Path, t: &AnalysisTable) -> Result<()> {
    t.validate()?;
    let mut w = writer(path, b',')?;
    let mut header: Vec<String> = [
        "individual_id",
        "family_id",
        "birth_order",
        "firstborn",
        "lastborn",
        "sex",
        "birth_year",
        "birth_month",
        "educ_years",
        "pgs",
        "pgs_a",
        "pgs_b",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((1..=t.pcs.len()).map(|k| format!("pc{k}")));
    if t.theta_true.is_some() {
        header.push("theta_true".into());
    }
    header.extend(t.extra.iter().map(|(n, _)| n.clone()));
    w.write_record(&header)?;
    let opt = |c: &Option<Vec<f64>>, i: usize| c.as_ref().map_or(String::new(), |v| fmt_real(v[i]));
    for i in 0..t.len() {
        let mut row = vec![
            t.individual_id[i].clone(),
            t.family_id[i].clone(),
            t.birth_order[i].to_string(),
            flag(t.firstborn[i]),
            flag(t.lastborn[i]),
            t.sex[i].to_string(),
            t.birth_year[i].to_string(),
            t.birth_month[i].to_string(),
            fmt_real(t.educ_years[i]),
            opt(&t.pgs, i),
            opt(&t.pgs_a, i),
            opt(&t.pgs_b, i),
        ];
        row.extend(t.pcs.iter().map(|c| fmt_real(c[i])));
        if let Some(theta) = &t.theta_true {
            row.push(fmt_real(theta[i]));
        }
        row.extend(t.extra.iter().map(|(_, c)| fmt_real(c[i])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_genotypes(path: &Path, g: &Genotypes) -> Result<()> {
    let mut w = writer(path, b',')?;
    w.write_record(std::iter::once("individual_id").chain(g.snp_ids().iter().map(String::as_str)))?;
    let mut row: Vec<String> = Vec::with_capacity(g.n_snps() + 1);
    for i in 0..g.n_individuals() {
        row.clear();
        row.push(g.individual_ids()[i].clone());
        row.extend(g.row(i).iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_weights(path: &Path, ws: &WeightSet) -> Result<()> {
    let mut w = writer(path, b'\t')?;
    w.write_record(["snp_id", "weight", "std_error"])?;
    for ((id, b), se) in ws.snp_ids.iter().zip(&ws.weights).zip(&ws.standard_errors) {
        w.write_record([id.clone(), fmt_real(*b), fmt_real(*se)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_scores(path: &Path, ids: &[String], scores: &[f64]) -> Result<()> {
    if ids.len() != scores.len() {
        return Err(Error::Dimension(format!("{} ids for {} scores", ids.len(), scores.len())));
    }
    let mut w = writer(path, b',')?;
    w.write_record(["individual_id", "score"])?;
    for (id, s) in ids.iter().zip(scores) {
        w.write_record([id.clone(), fmt_real(*s)])?;
    }
    w.flush()?;
    Ok(())
}

/// Coefficient rows followed by `__n_obs`, `__r2`, `__within_r2` and
/// `__cragg_donald` metadata rows (value in the estimate column).
pub fn write_fit(path: &Path, fit: &SpecFit) -> Result<()> {
    let mut w = writer(path, b',')?;
    w.write_record(["term", "estimate", "std_error", "t_stat", "p_value"])?;
    let f = &fit.fit;
    for term in &f.terms {
        w.write_record([
            term.clone(),
            fmt_real(f.coef(term).unwrap_or(f64::NAN)),
            fmt_real(f.std_error(term).unwrap_or(f64::NAN)),
            fmt_real(f.t_stat(term).unwrap_or(f64::NAN)),
            fmt_real(f.p_value(term).unwrap_or(f64::NAN)),
        ])?;
    }
    let meta = [
        ("__n_obs", f.n_obs.to_string()),
        ("__r2", fmt_real(f.r2)),
        ("__within_r2", if f.fe_absorbed { fmt_real(f.within_r2) } else { String::new() }),
        ("__cragg_donald", fit.cragg_donald.map_or(String::new(), fmt_real)),
    ];
    for (name, value) in meta {
        w.write_record([name.to_string(), value, String::new(), String::new(), String::new()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterBin {
    pub bin: usize,
    pub n: usize,
    pub score_mean: f64,
    pub outcome_mean: f64,
}

/// Equal-count bins of `score` (sorted, ties by row order) with the mean
/// outcome per bin. With fewer distinct scores than bins the bin count is
/// reduced to the number of distinct scores, with a notice.
pub fn binned_scatter(score: &[f64], outcome: &[f64], n_bins: usize) -> Result<(Vec<ScatterBin>, Vec<String>)> {
    if score.len() != outcome.len() {
        return Err(Error::Dimension("score and outcome lengths differ".into()));
    }
    let rows: Vec<usize> = (0..score.len()).filter(|&i| score[i].is_finite() && outcome[i].is_finite()).collect();
    if rows.is_empty() || n_bins == 0 {
        return Err(Error::EmptySample("no complete rows for the binned scatter".into()));
    }
    let mut notices = Vec::new();
    let mut distinct: Vec<f64> = rows.iter().map(|&i| score[i]).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let bins = if distinct.len() < n_bins {
        notices.push(format!("only {} distinct scores; using that many bins instead of {n_bins}", distinct.len()));
        distinct.len()
    } else {
        n_bins
    };
    let mut order = rows;
    order.sort_by(|&a, &b| score[a].total_cmp(&score[b]).then(a.cmp(&b)));
    let n = order.len();
    let out = (0..bins)
        .map(|k| {
            let members = &order[k * n / bins..(k + 1) * n / bins];
            let m = members.len() as f64;
            ScatterBin {
                bin: k + 1,
                n: members.len(),
                score_mean: members.iter().map(|&i| score[i]).sum::<f64>() / m,
                outcome_mean: members.iter().map(|&i| outcome[i]).sum::<f64>() / m,
            }
        })
        .collect();
    Ok((out, notices))
}

pub fn write_binned_scatter(path: &Path, bins: &[ScatterBin]) -> Result<()> {
    let mut w = writer(path, b',')?;
    w.write_record(["bin", "n", "score_mean", "outcome_mean"])?;
    for b in bins {
        w.write_record([b.bin.to_string(), b.n.to_string(), fmt_real(b.score_mean), fmt_real(b.outcome_mean)])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupMean {
    pub birth_order: u32,
    pub n: usize,
    pub mean: f64,
    pub std_error: f64,
}

/// Mean outcome and its standard error by censored birth order.
pub fn birth_order_means(t: &AnalysisTable) -> Vec<GroupMean> {
    let mut groups: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (b, y) in t.birth_order.iter().zip(&t.educ_years) {
        if y.is_finite() {
            groups.entry(*b).or_default().push(*y);
        }
    }
    groups
        .into_iter()
        .map(|(birth_order, ys)| {
            let n = ys.len() as f64;
            let mean = ys.iter().sum::<f64>() / n;
            let std_error = if ys.len() > 1 {
                (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
            } else {
                f64::NAN
            };
            GroupMean { birth_order, n: ys.len(), mean, std_error }
        })
        .collect()
}

pub fn write_birth_order_means(path: &Path, means: &[GroupMean]) -> Result<()> {
    let mut w = writer(path, b',')?;
    w.write_record(["birth_order", "n", "mean", "std_error"])?;
    for g in means {
        w.write_record([g.birth_order.to_string(), g.n.to_string(), fmt_real(g.mean), fmt_real(g.std_error)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ri_histogram(path: &Path, result: &RiResult, n_bins: usize) -> Result<()> {
    let mut w = writer(path, b',')?;
    w.write_record(["bin_left", "bin_right", "count"])?;
    for b in histogram(&result.t_permuted, n_bins) {
        w.write_record([fmt_real(b.left), fmt_real(b.right), b.count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ri_summary(path: &Path, result: &RiResult) -> Result<()> {
    let mut w = writer(path, b',')?;
    w.write_record(["t_observed", "exact_p", "n_permutations", "n_failed_fits"])?;
    w.write_record([
        fmt_real(result.t_observed),
        fmt_real(result.exact_p),
        result.n_permutations.to_string(),
        result.n_failed_fits.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reals_round_trip() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 123456789.12345679, f64::MAX, 5e-324] {
            assert_eq!(fmt_real(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_real(f64::NAN), "");
    }

    #[test]
    fn linear_scatter_has_collinear_bin_means() {
        let score: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin()).collect();
        let outcome: Vec<f64> = score.iter().map(|s| 2.0 + 3.0 * s).collect();
        let (bins, notices) = binned_scatter(&score, &outcome, 200).unwrap();
        assert!(notices.is_empty());
        assert_eq!(bins.len(), 200);
        assert_eq!(bins.iter().map(|b| b.n).sum::<usize>(), 1000);
        for b in &bins {
            assert!((b.outcome_mean - (2.0 + 3.0 * b.score_mean)).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_outcome_and_bin_reduction() {
        let score = [1.0, 2.0, 2.0, 3.0, 3.0, 3.0];
        let (bins, notices) = binned_scatter(&score, &[4.0; 6], 200).unwrap();
        assert_eq!(bins.len(), 3);
        assert_eq!(notices.len(), 1);
        assert!(bins.iter().all(|b| b.outcome_mean == 4.0));
    }
}
