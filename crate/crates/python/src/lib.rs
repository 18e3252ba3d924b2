//! Python bindings. Tables travel as dicts of equal-length lists keyed by
//! the cohort CSV column names.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;

use ::sibgxe::cohortsim::{generate_cohort, CohortDesign, DgpParams, SnpPanel};
use ::sibgxe::genoscore::{self, Genotypes, WeightSet, WeightSource};
use ::sibgxe::linreg::{self, Clustering, DesignMatrix, FitOptions, FitResult, OrivInput};
use ::sibgxe::modelspecs::{self, ModelSpec};
use ::sibgxe::pipeline::{run_stages, PipelineConfig, Stage};
use ::sibgxe::ri::{self, RiConfig};
use ::sibgxe::rng::derive_seed;
use ::sibgxe::table::AnalysisTable;
use ::sibgxe::Error;

fn py_err(e: Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// Parse a snake_case enum name such as `"within_family"`.
fn parse_enum<T: DeserializeOwned>(value: &str, what: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown {what} `{value}`")))
}

fn required<'py, T: FromPyObjectOwned<'py>>(d: &Bound<'py, PyDict>, key: &str) -> PyResult<T> {
    d.get_item(key)?
        .ok_or_else(|| PyValueError::new_err(format!("table is missing column `{key}`")))?
        .extract()
        .map_err(Into::into)
}

fn optional<'py, T: FromPyObjectOwned<'py>>(d: &Bound<'py, PyDict>, key: &str) -> PyResult<Option<T>> {
    match d.get_item(key)? {
        Some(v) if !v.is_none() => Ok(Some(v.extract().map_err(Into::into)?)),
        _ => Ok(None),
    }
}

fn table_from_dict(d: &Bound<'_, PyDict>) -> PyResult<AnalysisTable> {
    let flags = |v: Vec<i64>| v.into_iter().map(|x| x != 0).collect::<Vec<bool>>();
    let mut t = AnalysisTable {
        individual_id: required(d, "individual_id")?,
        family_id: required(d, "family_id")?,
        birth_order: required(d, "birth_order")?,
        firstborn: flags(required(d, "firstborn")?),
        lastborn: flags(required(d, "lastborn")?),
        sex: required(d, "sex")?,
        birth_year: required(d, "birth_year")?,
        birth_month: required(d, "birth_month")?,
        educ_years: required(d, "educ_years")?,
        pgs: optional(d, "pgs")?,
        pgs_a: optional(d, "pgs_a")?,
        pgs_b: optional(d, "pgs_b")?,
        theta_true: optional(d, "theta_true")?,
        ..Default::default()
    };
    let mut k = 1;
    while let Some(pc) = optional::<Vec<f64>>(d, &format!("pc{k}"))? {
        t.pcs.push(pc);
        k += 1;
    }
    t.validate().map_err(py_err)?;
    Ok(t)
}

fn table_to_dict<'py>(py: Python<'py>, t: &AnalysisTable) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    let flags = |v: &[bool]| v.iter().map(|&b| b as u8).collect::<Vec<u8>>();
    d.set_item("individual_id", &t.individual_id)?;
    d.set_item("family_id", &t.family_id)?;
    d.set_item("birth_order", &t.birth_order)?;
    d.set_item("firstborn", flags(&t.firstborn))?;
    d.set_item("lastborn", flags(&t.lastborn))?;
    d.set_item("sex", &t.sex)?;
    d.set_item("birth_year", &t.birth_year)?;
    d.set_item("birth_month", &t.birth_month)?;
    d.set_item("educ_years", &t.educ_years)?;
    for (name, col) in [("pgs", &t.pgs), ("pgs_a", &t.pgs_a), ("pgs_b", &t.pgs_b), ("theta_true", &t.theta_true)] {
        if let Some(v) = col {
            d.set_item(name, v)?;
        }
    }
    for (k, pc) in t.pcs.iter().enumerate() {
        d.set_item(format!("pc{}", k + 1), pc)?;
    }
    for (name, col) in &t.extra {
        d.set_item(name, col)?;
    }
    Ok(d)
}

fn fit_to_dict<'py>(py: Python<'py>, fit: &FitResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("terms", &fit.terms)?;
    d.set_item("coefficients", &fit.coefficients)?;
    d.set_item("std_errors", fit.std_errors())?;
    d.set_item("n_obs", fit.n_obs)?;
    d.set_item("n_dropped_singletons", fit.n_dropped_singletons)?;
    d.set_item("n_clusters", fit.n_clusters)?;
    d.set_item("r2", fit.r2)?;
    d.set_item("within_r2", fit.within_r2)?;
    d.set_item("dropped_columns", &fit.dropped_columns)?;
    d.set_item("notices", &fit.notices)?;
    Ok(d)
}

fn genotypes_from_rows(rows: Vec<Vec<u8>>) -> PyResult<Genotypes> {
    let n_snps = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n_snps) {
        return Err(PyValueError::new_err("genotype rows differ in length"));
    }
    Genotypes::new(
        (0..rows.len()).map(|i| format!("i{i}")).collect(),
        (0..n_snps).map(|j| format!("s{j}")).collect(),
        rows.concat(),
    )
    .map_err(py_err)
}

/// Simulate a sibling cohort. Returns `(table, genotypes)`; the table's
/// `pgs` column holds the standardized true score.
#[pyfunction]
#[pyo3(signature = (n_families, n_snps = 200, seed = 0, noise_sd = None, nurture_coef = None))]
fn simulate_cohort<'py>(
    py: Python<'py>,
    n_families: usize,
    n_snps: usize,
    seed: u64,
    noise_sd: Option<f64>,
    nurture_coef: Option<f64>,
) -> PyResult<(Bound<'py, PyDict>, Vec<Vec<u8>>)> {
    let panel = SnpPanel::random(n_snps, 0.05, 1.0, derive_seed(seed, "panel", 0)).map_err(py_err)?;
    let mut dgp = DgpParams::default();
    if let Some(s) = noise_sd {
        dgp.noise_sd = s;
    }
    if let Some(k) = nurture_coef {
        dgp.nurture_coef = k;
    }
    let design = CohortDesign { n_families, ..CohortDesign::default() };
    let cohort = generate_cohort(&design, &panel, &dgp, derive_seed(seed, "cohort", 0)).map_err(py_err)?;
    let mut table = AnalysisTable::from_cohort(&cohort);
    table.pgs = Some(cohort.individuals().map(|i| i.true_score).collect());
    let genotypes = cohort.individuals().map(|i| i.genotype.clone()).collect();
    Ok((table_to_dict(py, &table)?, genotypes))
}

/// Read a cohort CSV into a table dict (strict validation).
#[pyfunction]
fn read_cohort<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let ing = ::sibgxe::pipeline::ingest_table(&path, ::sibgxe::pipeline::Schema::Cohort, true).map_err(py_err)?;
    let ::sibgxe::pipeline::TableData::Cohort(t) = ing.data else { unreachable!("cohort schema") };
    table_to_dict(py, &t)
}

/// Per-SNP association scan; returns `(weights, standard_errors)`.
#[pyfunction]
fn scan(genotypes: Vec<Vec<u8>>, y: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let g = genotypes_from_rows(genotypes)?;
    let ws = genoscore::run_scan(&g, &y).map_err(py_err)?;
    Ok((ws.weights, ws.standard_errors))
}

/// Polygenic score of each genotype row.
#[pyfunction]
fn score(genotypes: Vec<Vec<u8>>, weights: Vec<f64>) -> PyResult<Vec<f64>> {
    let g = genotypes_from_rows(genotypes)?;
    let ses = vec![0.0; weights.len()];
    let ws = WeightSet::new(g.snp_ids().to_vec(), weights, ses, WeightSource::External).map_err(py_err)?;
    genoscore::score(&g, &ws).map_err(py_err)
}

/// Mean zero and unit sample variance over all entries.
#[pyfunction]
fn standardize(values: Vec<f64>) -> PyResult<Vec<f64>> {
    let all: Vec<usize> = (0..values.len()).collect();
    genoscore::standardize(&values, &all).map_err(py_err)
}

/// Noisy copy of `true_score` with the given reliability.
#[pyfunction]
#[pyo3(signature = (genotypes, true_score, reliability, seed = 0, tag = "pgs"))]
fn inject_reliability(genotypes: Vec<Vec<u8>>, true_score: Vec<f64>, reliability: f64, seed: u64, tag: &str) -> PyResult<Vec<f64>> {
    let g = genotypes_from_rows(genotypes)?;
    genoscore::inject_reliability(&g, &true_score, reliability, seed, tag).map_err(py_err)
}

#[pyfunction]
fn classify_relatedness(kinship: f64, ibs0: f64) -> PyResult<String> {
    let class = genoscore::classify_relatedness(kinship, ibs0).map_err(py_err)?;
    Ok(serde_json::to_value(class).expect("enum serializes").as_str().expect("unit variant").to_string())
}

#[pyfunction]
fn isced_years(label: &str) -> PyResult<u32> {
    modelspecs::isced_years_for_label(label).map_err(py_err)
}

/// Least squares on named columns, optionally absorbing one fixed effect
/// and clustering on integer labels.
#[pyfunction]
#[pyo3(signature = (columns, y, clusters = None, fixed_effects = None))]
fn ols<'py>(
    py: Python<'py>,
    columns: Vec<(String, Vec<f64>)>,
    y: Vec<f64>,
    clusters: Option<Vec<i64>>,
    fixed_effects: Option<Vec<i64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut d = DesignMatrix::from_columns(columns, y.len()).map_err(py_err)?;
    let mut opts = FitOptions::default();
    if let Some(c) = clusters {
        d = d.with_clusters(linreg::encode_labels(&c)).map_err(py_err)?;
        opts.clustering = Clustering::One(0);
    }
    if let Some(f) = fixed_effects {
        d = d.with_fixed_effects(linreg::encode_labels(&f)).map_err(py_err)?;
    }
    let fit = linreg::ols(&d, &y, opts).map_err(py_err)?;
    fit_to_dict(py, &fit)
}

/// Stacked ORIV regression of `y` on a score measured twice.
#[pyfunction]
#[pyo3(signature = (y, score_a, score_b, family_ids, moderator = None, within_family = true))]
fn oriv<'py>(
    py: Python<'py>,
    y: Vec<f64>,
    score_a: Vec<f64>,
    score_b: Vec<f64>,
    family_ids: Vec<i64>,
    moderator: Option<Vec<f64>>,
    within_family: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let families = linreg::encode_labels(&family_ids);
    let input = OrivInput {
        y: &y,
        score_a: &score_a,
        score_b: &score_b,
        moderator: moderator.as_deref(),
        controls: &[],
        family_ids: &families,
        within_family,
        score_name: "pgs",
        moderator_name: "firstborn",
    };
    let res = linreg::oriv(&input, FitOptions { clustering: Clustering::Two, ..Default::default() }).map_err(py_err)?;
    let d = fit_to_dict(py, &res.fit)?;
    d.set_item("cragg_donald", res.first_stage_f)?;
    d.set_item("weak_instruments", res.weak_instruments)?;
    Ok(d)
}

fn build_spec(scope: &str, interaction: bool, estimator: &str, controls: Vec<String>) -> PyResult<ModelSpec> {
    let controls = controls.iter().map(|c| parse_enum(c, "control")).collect::<PyResult<Vec<_>>>()?;
    let spec = ModelSpec::new("model", parse_enum(scope, "scope")?)
        .with_estimator(parse_enum(estimator, "estimator")?)
        .with_controls(&controls);
    let spec = if interaction { spec.with_interaction() } else { spec };
    spec.validate().map_err(py_err)?;
    Ok(spec)
}

/// Fit a model specification to a table dict.
#[pyfunction]
#[pyo3(signature = (table, scope = "within_family", interaction = true, estimator = "ols", controls = Vec::new()))]
fn fit_model<'py>(
    py: Python<'py>,
    table: &Bound<'py, PyDict>,
    scope: &str,
    interaction: bool,
    estimator: &str,
    controls: Vec<String>,
) -> PyResult<Bound<'py, PyDict>> {
    let t = table_from_dict(table)?;
    let spec = build_spec(scope, interaction, estimator, controls)?;
    let fit = modelspecs::fit_spec(&t, &spec).map_err(py_err)?;
    let d = fit_to_dict(py, &fit.fit)?;
    d.set_item("cragg_donald", fit.cragg_donald)?;
    Ok(d)
}

/// Within-family permutation test of `term`.
#[pyfunction]
#[pyo3(signature = (table, term = "firstborn_x_pgs", n_permutations = 1000, seed = 0, scope = "within_family", scheme = "permute_birth_order_within_family"))]
fn randomization_test<'py>(
    py: Python<'py>,
    table: &Bound<'py, PyDict>,
    term: &str,
    n_permutations: usize,
    seed: u64,
    scope: &str,
    scheme: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let t = table_from_dict(table)?;
    let spec = build_spec(scope, true, "ols", Vec::new())?;
    let config = RiConfig { scheme: parse_enum(scheme, "scheme")?, ..RiConfig::new(term, n_permutations) };
    let res = ri::randomization_test(&t, &spec, &config, seed).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("t_observed", res.t_observed)?;
    d.set_item("t_permuted", res.t_permuted)?;
    d.set_item("exact_p", res.exact_p)?;
    d.set_item("n_failed_fits", res.n_failed_fits)?;
    Ok(d)
}

/// Run every pipeline stage for a TOML config; returns the manifest as JSON.
#[pyfunction]
fn run_pipeline(config_path: PathBuf, out_dir: PathBuf) -> PyResult<String> {
    let config = PipelineConfig::load(&config_path).map_err(py_err)?;
    let manifest = run_stages(&config, &out_dir, &Stage::ALL).map_err(py_err)?;
    Ok(serde_json::to_string(&manifest).expect("manifest serializes"))
}

#[pymodule]
fn sibgxe(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(simulate_cohort, m)?)?;
    m.add_function(wrap_pyfunction!(read_cohort, m)?)?;
    m.add_function(wrap_pyfunction!(scan, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(standardize, m)?)?;
    m.add_function(wrap_pyfunction!(inject_reliability, m)?)?;
    m.add_function(wrap_pyfunction!(classify_relatedness, m)?)?;
    m.add_function(wrap_pyfunction!(isced_years, m)?)?;
    m.add_function(wrap_pyfunction!(ols, m)?)?;
    m.add_function(wrap_pyfunction!(oriv, m)?)?;
    m.add_function(wrap_pyfunction!(fit_model, m)?)?;
    m.add_function(wrap_pyfunction!(randomization_test, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
