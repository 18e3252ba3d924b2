//! Readers for cohort, genotype, weight and score files with row-level
//! validation.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohortsim::BIRTH_ORDER_CAP;
use crate::error::{Error, Result, RowError};
use crate::genoscore::{Genotypes, WeightSet, WeightSource, MAF_THRESHOLD};
use crate::table::AnalysisTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schema {
    Cohort,
    Genotypes,
    Weights,
    Scores,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum TableData {
    Cohort(AnalysisTable),
    Genotypes(Genotypes),
    Weights(WeightSet),
    Scores { individual_ids: Vec<String>, scores: Vec<f64> },
}

/// A parsed file plus the rows that were rejected (non-strict mode only)
/// and any notices, such as SNPs removed by the MAF filter.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub data: TableData,
    pub row_errors: Vec<RowError>,
    pub notices: Vec<String>,
    pub maf_dropped: Vec<String>,
}

pub const COHORT_REQUIRED: [&str; 9] = [
    "individual_id",
    "family_id",
    "birth_order",
    "firstborn",
    "lastborn",
    "sex",
    "birth_year",
    "birth_month",
    "educ_years",
];

/// Parse `path` against `schema`. In strict mode any invalid row is an
/// ingestion error; otherwise invalid rows are skipped and reported.
pub fn ingest_table(path: &Path, schema: Schema, strict: bool) -> Result<Ingested> {
    let (data, row_errors, maf_dropped) = match schema {
        Schema::Cohort => {
            let (t, e) = read_cohort(path)?;
            (TableData::Cohort(t), e, Vec::new())
        }
        Schema::Genotypes => {
            let (g, e) = read_genotypes(path)?;
            let (g, dropped) = g.maf_filter(MAF_THRESHOLD);
            (TableData::Genotypes(g), e, dropped)
        }
        Schema::Weights => {
            let (w, e) = read_weights(path)?;
            (TableData::Weights(w), e, Vec::new())
        }
        Schema::Scores => {
            let (ids, s, e) = read_scores(path)?;
            (TableData::Scores { individual_ids: ids, scores: s }, e, Vec::new())
        }
    };
    if strict && !row_errors.is_empty() {
        return Err(Error::Ingestion { path: path.display().to_string(), errors: row_errors });
    }
    let mut notices: Vec<String> = row_errors.iter().map(|e| format!("{}: skipped {e}", path.display())).collect();
    if !maf_dropped.is_empty() {
        notices.push(format!(
            "{}: {} SNPs below MAF {MAF_THRESHOLD} dropped",
            path.display(),
            maf_dropped.len()
        ));
    }
    Ok(Ingested { data, row_errors, notices, maf_dropped })
}

fn reader(path: &Path, delimiter: u8) -> Result<csv::Reader<std::fs::File>> {
    Ok(csv::ReaderBuilder::new().delimiter(delimiter).has_headers(true).flexible(true).from_path(path)?)
}

fn header_index(headers: &csv::StringRecord, path: &Path, required: &[&str]) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::new();
    for (j, h) in headers.iter().enumerate() {
        if h.is_empty() || index.insert(h.to_string(), j).is_some() {
            return Err(Error::Schema(format!("{}: empty or duplicate header `{h}`", path.display())));
        }
    }
    let missing: Vec<&str> = required.iter().copied().filter(|r| !index.contains_key(*r)).collect();
    if !missing.is_empty() {
        return Err(Error::Schema(format!("{}: missing columns {}", path.display(), missing.join(", "))));
    }
    Ok(index)
}

fn line_of(record: &csv::StringRecord, fallback: usize) -> usize {
    record.position().map_or(fallback, |p| p.line() as usize)
}

fn parse_int<T: std::str::FromStr>(cell: &str, name: &str) -> std::result::Result<T, String> {
    cell.trim().parse().map_err(|_| format!("`{name}` must be an integer, got `{cell}`"))
}

fn parse_flag(cell: &str, name: &str) -> std::result::Result<bool, String> {
    match cell.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(format!("`{name}` must be 0 or 1, got `{cell}`")),
    }
}

/// Empty cells read as NaN (missing).
fn parse_real(cell: &str, name: &str) -> std::result::Result<f64, String> {
    let c = cell.trim();
    if c.is_empty() {
        return Ok(f64::NAN);
    }
    match c.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("`{name}` must be a finite number, got `{cell}`")),
    }
}

struct CohortRow {
    id: String,
    family: String,
    birth_order: u32,
    firstborn: bool,
    lastborn: bool,
    sex: u8,
    birth_year: i32,
    birth_month: u8,
    educ: f64,
    reals: Vec<f64>,
}

fn parse_cohort_row(
    rec: &csv::StringRecord,
    idx: &HashMap<String, usize>,
    real_cols: &[(String, usize)],
    n_header: usize,
) -> std::result::Result<CohortRow, String> {
    if rec.len() != n_header {
        return Err(format!("expected {n_header} fields, found {}", rec.len()));
    }
    let cell = |name: &str| &rec[idx[name]];
    let id = cell("individual_id").trim().to_string();
    let family = cell("family_id").trim().to_string();
    if id.is_empty() || family.is_empty() {
        return Err("individual_id and family_id must be non-empty".into());
    }
    let birth_order: u32 = parse_int(cell("birth_order"), "birth_order")?;
    if birth_order < 1 {
        return Err(format!("birth_order must be at least 1, got {birth_order}"));
    }
    let sex: u8 = parse_int(cell("sex"), "sex")?;
    if sex > 1 {
        return Err(format!("sex must be 0 or 1, got {sex}"));
    }
    let birth_month: u8 = parse_int(cell("birth_month"), "birth_month")?;
    if !(1..=12).contains(&birth_month) {
        return Err(format!("birth_month must lie in 1..=12, got {birth_month}"));
    }
    Ok(CohortRow {
        id,
        family,
        birth_order: birth_order.min(BIRTH_ORDER_CAP),
        firstborn: parse_flag(cell("firstborn"), "firstborn")?,
        lastborn: parse_flag(cell("lastborn"), "lastborn")?,
        sex,
        birth_year: parse_int(cell("birth_year"), "birth_year")?,
        birth_month,
        educ: parse_real(cell("educ_years"), "educ_years")?,
        reals: real_cols.iter().map(|(name, j)| parse_real(&rec[*j], name)).collect::<std::result::Result<_, _>>()?,
    })
}

/// Cohort CSV. Columns beyond the required ones are read as reals: `pgs`,
/// `pgs_a`, `pgs_b`, `pc<k>`, `theta_true`, and anything else lands in
/// [`AnalysisTable::extra`]. Birth order is censored at 5.
pub fn read_cohort(path: &Path) -> Result<(AnalysisTable, Vec<RowError>)> {
    let mut rdr = reader(path, b',')?;
    let headers = rdr.headers()?.clone();
    let idx = header_index(&headers, path, &COHORT_REQUIRED)?;
    let real_cols: Vec<(String, usize)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| !COHORT_REQUIRED.contains(h))
        .map(|(j, h)| (h.to_string(), j))
        .collect();
    let mut pc_cols: Vec<(usize, usize)> = Vec::new();
    for (k, (name, _)) in real_cols.iter().enumerate() {
        if let Some(num) = name.strip_prefix("pc").and_then(|s| s.parse::<usize>().ok()) {
            pc_cols.push((num, k));
        }
    }
    pc_cols.sort_unstable();
    if pc_cols.iter().enumerate().any(|(i, (num, _))| *num != i + 1) {
        return Err(Error::Schema(format!("{}: pc columns must be numbered pc1..pcK", path.display())));
    }

    let mut t = AnalysisTable::default();
    let mut reals: Vec<Vec<f64>> = vec![Vec::new(); real_cols.len()];
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line_of(&rec, r + 2);
        match parse_cohort_row(&rec, &idx, &real_cols, headers.len()) {
            Ok(row) if !seen.insert(row.id.clone()) => {
                errors.push(RowError { line, message: format!("duplicate individual_id `{}`", row.id) })
            }
            Ok(row) => {
                t.individual_id.push(row.id);
                t.family_id.push(row.family);
                t.birth_order.push(row.birth_order);
                t.firstborn.push(row.firstborn);
                t.lastborn.push(row.lastborn);
                t.sex.push(row.sex);
                t.birth_year.push(row.birth_year);
                t.birth_month.push(row.birth_month);
                t.educ_years.push(row.educ);
                for (col, v) in reals.iter_mut().zip(row.reals) {
                    col.push(v);
                }
            }
            Err(message) => errors.push(RowError { line, message }),
        }
    }
    let mut taken = vec![false; real_cols.len()];
    let mut take = |name: &str| -> Option<Vec<f64>> {
        let k = real_cols.iter().position(|(n, _)| n == name)?;
        taken[k] = true;
        Some(std::mem::take(&mut reals[k]))
    };
    // an all-empty score column counts as absent
    let present = |c: Option<Vec<f64>>| c.filter(|v| v.iter().any(|x| !x.is_nan()));
    t.pgs = present(take("pgs"));
    t.pgs_a = present(take("pgs_a"));
    t.pgs_b = present(take("pgs_b"));
    t.theta_true = present(take("theta_true"));
    for (num, _) in &pc_cols {
        t.pcs.push(take(&format!("pc{num}")).expect("pc column indexed above"));
    }
    for (k, (name, _)) in real_cols.iter().enumerate() {
        if !taken[k] {
            t.extra.push((name.clone(), std::mem::take(&mut reals[k])));
        }
    }
    Ok((t, errors))
}

/// Genotype matrix CSV: `individual_id,<snp ids>`, cells in {0,1,2}.
pub fn read_genotypes(path: &Path) -> Result<(Genotypes, Vec<RowError>)> {
    let mut rdr = reader(path, b',')?;
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("individual_id") {
        return Err(Error::Schema(format!("{}: first column must be individual_id", path.display())));
    }
    header_index(&headers, path, &[])?;
    let snp_ids: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line_of(&rec, r + 2);
        let parsed = (|| -> std::result::Result<(String, Vec<u8>), String> {
            if rec.len() != headers.len() {
                return Err(format!("expected {} fields, found {}", headers.len(), rec.len()));
            }
            let id = rec[0].trim().to_string();
            if id.is_empty() {
                return Err("individual_id must be non-empty".into());
            }
            if seen.contains(&id) {
                return Err(format!("duplicate individual_id `{id}`"));
            }
            let row = rec
                .iter()
                .skip(1)
                .zip(&snp_ids)
                .map(|(c, snp)| match c.trim() {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    "2" => Ok(2),
                    other => Err(format!("genotype for `{snp}` must be 0, 1 or 2, got `{other}`")),
                })
                .collect::<std::result::Result<Vec<u8>, String>>()?;
            Ok((id, row))
        })();
        match parsed {
            Ok((id, row)) => {
                seen.insert(id.clone());
                ids.push(id);
                data.extend(row);
            }
            Err(message) => errors.push(RowError { line, message }),
        }
    }
    Ok((Genotypes::new(ids, snp_ids, data)?, errors))
}

/// Weights TSV: `snp_id<TAB>weight<TAB>std_error`.
pub fn read_weights(path: &Path) -> Result<(WeightSet, Vec<RowError>)> {
    let mut rdr = reader(path, b'\t')?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["snp_id", "weight", "std_error"] {
        return Err(Error::Schema(format!("{}: header must be snp_id, weight, std_error", path.display())));
    }
    let (mut ids, mut w, mut se) = (Vec::new(), Vec::new(), Vec::new());
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line_of(&rec, r + 2);
        let parsed = (|| -> std::result::Result<(String, f64, f64), String> {
            if rec.len() != 3 {
                return Err(format!("expected 3 fields, found {}", rec.len()));
            }
            let id = rec[0].trim().to_string();
            if id.is_empty() || seen.contains(&id) {
                return Err(format!("empty or duplicate snp_id `{id}`"));
            }
            let weight = parse_real(&rec[1], "weight")?;
            let std_error = parse_real(&rec[2], "std_error")?;
            if weight.is_nan() || !(std_error >= 0.0) {
                return Err("weight must be present and std_error non-negative".into());
            }
            Ok((id, weight, std_error))
        })();
        match parsed {
            Ok((id, a, b)) => {
                seen.insert(id.clone());
                ids.push(id);
                w.push(a);
                se.push(b);
            }
            Err(message) => errors.push(RowError { line, message }),
        }
    }
    Ok((WeightSet::new(ids, w, se, WeightSource::External)?, errors))
}

/// Scores CSV: `individual_id,score`.
pub fn read_scores(path: &Path) -> Result<(Vec<String>, Vec<f64>, Vec<RowError>)> {
    let mut rdr = reader(path, b',')?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["individual_id", "score"] {
        return Err(Error::Schema(format!("{}: header must be individual_id, score", path.display())));
    }
    let (mut ids, mut scores, mut errors) = (Vec::new(), Vec::new(), Vec::new());
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line_of(&rec, r + 2);
        if rec.len() != 2 || rec[0].trim().is_empty() {
            errors.push(RowError { line, message: "expected a non-empty id and a score".into() });
            continue;
        }
        match parse_real(&rec[1], "score") {
            Ok(s) if !s.is_nan() => {
                ids.push(rec[0].trim().to_string());
                scores.push(s);
            }
            Ok(_) => errors.push(RowError { line, message: "score is missing".into() }),
            Err(message) => errors.push(RowError { line, message }),
        }
    }
    Ok((ids, scores, errors))
}
