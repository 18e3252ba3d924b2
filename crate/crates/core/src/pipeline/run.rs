//! Stage orchestration and the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{PipelineConfig, ScoreScale, ScoringMethod};
use super::export::*;
use super::ingest::{ingest_table, Schema, TableData};
use crate::cohortsim::{generate_cohort, generate_discovery, SnpPanel};
use crate::error::{Error, Result};
use crate::genoscore::{self, Genotypes, WeightSet};
use crate::linreg::DesignMatrix;
use crate::modelspecs::{fit_spec, SpecFit};
use crate::ri::{randomization_test, RiConfig};
use crate::rng::derive_seed;
use crate::table::AnalysisTable;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARTIAL_MARKER: &str = ".partial";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Simulate,
    Scan,
    Score,
    Fit,
    Ri,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Simulate, Stage::Scan, Stage::Score, Stage::Fit, Stage::Ri, Stage::Report];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Scan => "scan",
            Stage::Score => "score",
            Stage::Fit => "fit",
            Stage::Ri => "ri",
            Stage::Report => "report",
        }
    }

    /// Stages executed by the command of the same name: the data stages
    /// up to and including it, plus the stage itself for the analysis
    /// commands.
    pub fn plan(self) -> Vec<Stage> {
        match self {
            Stage::Simulate | Stage::Scan | Stage::Score => Stage::ALL.into_iter().filter(|s| *s <= self).collect(),
            other => vec![Stage::Simulate, Stage::Scan, Stage::Score, other],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub rows: usize,
    pub dropped_singletons: usize,
    pub wall_clock_seconds: f64,
    pub notices: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
    pub maf_dropped_snps: usize,
    /// SHA-256 of every file written by the run, keyed by file name.
    pub outputs: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Default)]
struct State {
    table: Option<AnalysisTable>,
    genotypes: Option<Genotypes>,
    true_score: Option<Vec<f64>>,
    panel: Option<SnpPanel>,
    full: Option<WeightSet>,
    split: Option<(WeightSet, WeightSet)>,
    maf_dropped: Vec<String>,
    written: Vec<PathBuf>,
}

struct Runner<'a> {
    config: &'a PipelineConfig,
    out: &'a Path,
    state: State,
}

struct Outcome {
    rows: usize,
    dropped_singletons: usize,
    notices: Vec<String>,
}

impl Outcome {
    fn rows(rows: usize) -> Self {
        Self { rows, dropped_singletons: 0, notices: Vec::new() }
    }
}

impl Runner<'_> {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        if !self.state.written.contains(&p) {
            self.state.written.push(p.clone());
        }
        p
    }

    fn table(&self) -> Result<&AnalysisTable> {
        self.state.table.as_ref().ok_or_else(|| Error::Schema("no analysis table loaded".into()))
    }

    fn simulate(&mut self) -> Result<Outcome> {
        let seed = self.config.seed;
        let mut notices = Vec::new();
        if let Some(sim) = &self.config.simulation {
            let panel = SnpPanel::random(
                sim.panel.n_snps,
                sim.panel.maf_min,
                sim.panel.effect_sd,
                derive_seed(seed, "panel", 0),
            )?;
            let cohort = generate_cohort(&sim.cohort, &panel, &sim.dgp, derive_seed(seed, "cohort", 0))?;
            self.state.true_score = Some(cohort.individuals().map(|i| i.true_score).collect());
            self.state.genotypes = Some(cohort.genotypes());
            self.state.table = Some(AnalysisTable::from_cohort(&cohort));
            self.state.panel = Some(panel);
        } else if let Some(input) = &self.config.input {
            let ing = ingest_table(&input.cohort, Schema::Cohort, input.strict)?;
            notices.extend(ing.notices);
            let TableData::Cohort(table) = ing.data else { unreachable!("cohort schema") };
            if let Some(gpath) = &input.genotypes {
                let ing = ingest_table(gpath, Schema::Genotypes, input.strict)?;
                notices.extend(ing.notices);
                self.state.maf_dropped = ing.maf_dropped;
                let TableData::Genotypes(g) = ing.data else { unreachable!("genotype schema") };
                self.state.genotypes = Some(align_genotypes(&g, &table.individual_id)?);
            }
            self.state.table = Some(table);
        }
        if let Some(pca) = &self.config.pca {
            let g = self.state.genotypes.as_ref().expect("validated: pca needs genotypes");
            let pcs = genoscore::compute_pcs(g, pca.n_components)?;
            let table = self.state.table.as_mut().expect("table loaded above");
            table.pcs = (0..pca.n_components).map(|k| pcs.scores.column(k).iter().copied().collect()).collect();
        }
        let p = self.path("cohort.csv");
        write_cohort(&p, self.table()?)?;
        if self.config.simulation.is_some() {
            let p = self.path("genotypes.csv");
            write_genotypes(&p, self.state.genotypes.as_ref().expect("simulated"))?;
        }
        Ok(Outcome { notices, ..Outcome::rows(self.table()?.len()) })
    }

    fn scan(&mut self) -> Result<Outcome> {
        let method = self.config.scoring.method;
        if matches!(method, ScoringMethod::Injected | ScoringMethod::Precomputed) {
            return Ok(Outcome { notices: vec!["no association scan for this scoring method".into()], ..Outcome::rows(0) });
        }
        let mut rows = 0;
        let mut notices = Vec::new();
        if let Some(sim) = &self.config.simulation {
            let panel = self.state.panel.as_ref().expect("simulate ran");
            let seed = derive_seed(self.config.seed, "discovery", 0);
            let discovery = generate_discovery(sim.discovery_size, &sim.cohort, panel, &sim.dgp, seed)?;
            let ids: Vec<String> = discovery.iter().map(|i| i.individual_id.clone()).collect();
            let data: Vec<u8> = discovery.iter().flat_map(|i| i.genotype.iter().copied()).collect();
            let g = Genotypes::new(ids, panel.snp_ids().to_vec(), data)?;
            let y: Vec<f64> = discovery.iter().map(|i| i.educ_years).collect();
            let sex: Vec<f64> = discovery.iter().map(|i| i.sex as f64).collect();
            let years: Vec<i32> = discovery.iter().map(|i| i.birth_year).collect();
            let y_resid = genoscore::residualize(&y, &discovery_covariates(&sex, &years)?)?;
            self.state.full = Some(genoscore::run_scan(&g, &y_resid)?);
            if method == ScoringMethod::Split {
                let s = genoscore::split_scan(&g, &y_resid, derive_seed(self.config.seed, "split", 0))?;
                self.state.split = Some((s.a, s.b));
            }
            rows = discovery.len();
        } else if let Some(input) = &self.config.input {
            let dropped = &self.state.maf_dropped;
            let read = |p: &Path, notices: &mut Vec<String>| -> Result<WeightSet> {
                let ing = ingest_table(p, Schema::Weights, input.strict)?;
                notices.extend(ing.notices);
                let TableData::Weights(w) = ing.data else { unreachable!("weights schema") };
                Ok(without_snps(w, dropped))
            };
            self.state.full = Some(read(input.weights.as_ref().expect("validated"), &mut notices)?);
            if method == ScoringMethod::Split {
                let a = read(input.weights_a.as_ref().expect("validated"), &mut notices)?;
                let b = read(input.weights_b.as_ref().expect("validated"), &mut notices)?;
                self.state.split = Some((a, b));
            }
        }
        if let Some(full) = self.state.full.clone() {
            notices.extend(full.monomorphic.iter().map(|s| format!("monomorphic SNP `{s}` given weight 0")));
            let p = self.path("weights_full.tsv");
            write_weights(&p, &full)?;
        }
        if let Some((a, b)) = self.state.split.clone() {
            let p = self.path("weights_a.tsv");
            write_weights(&p, &a)?;
            let p = self.path("weights_b.tsv");
            write_weights(&p, &b)?;
        }
        Ok(Outcome { notices, ..Outcome::rows(rows) })
    }

    fn score(&mut self) -> Result<Outcome> {
        let method = self.config.scoring.method;
        let seed = self.config.seed;
        let mut table = self.state.table.take().expect("simulate ran");
        let (pgs, a, b) = match method {
            ScoringMethod::Split | ScoringMethod::Full => {
                let g = self.state.genotypes.as_ref().ok_or_else(|| Error::Schema("scoring needs genotypes".into()))?;
                let pgs = genoscore::score(g, self.state.full.as_ref().expect("scan ran"))?;
                let (a, b) = match &self.state.split {
                    Some((wa, wb)) => (Some(genoscore::score(g, wa)?), Some(genoscore::score(g, wb)?)),
                    None => (None, None),
                };
                (Some(pgs), a, b)
            }
            ScoringMethod::Injected => {
                let g = self.state.genotypes.as_ref().expect("simulated");
                let truth = self.state.true_score.as_ref().expect("simulated");
                let lambda = self.config.scoring.reliability.expect("validated");
                let s = derive_seed(seed, "inject", 0);
                (
                    Some(genoscore::inject_reliability(g, truth, lambda, s, "pgs")?),
                    Some(genoscore::inject_reliability(g, truth, lambda, s, "pgs_a")?),
                    Some(genoscore::inject_reliability(g, truth, lambda, s, "pgs_b")?),
                )
            }
            ScoringMethod::Precomputed => (table.pgs.take(), table.pgs_a.take(), table.pgs_b.take()),
        };
        let reference: Vec<usize> = (0..table.len()).collect();
        let rescale = |v: Option<Vec<f64>>| -> Result<Option<Vec<f64>>> {
            v.map(|v| match self.config.scoring.scale {
                ScoreScale::Standardized => genoscore::standardize(&v, &reference),
                ScoreScale::Latent => genoscore::center(&v, &reference),
            })
            .transpose()
        };
        let rescaled = (rescale(pgs), rescale(a), rescale(b));
        table.pgs = rescaled.0?;
        table.pgs_a = rescaled.1?;
        table.pgs_b = rescaled.2?;
        self.state.table = Some(table);
        let t = self.state.table.as_ref().expect("set above");
        let files = [("scores.csv", &t.pgs), ("scores_a.csv", &t.pgs_a), ("scores_b.csv", &t.pgs_b)];
        let mut to_write = Vec::new();
        for (name, col) in files {
            if let Some(v) = col {
                to_write.push((name, v.clone()));
            }
        }
        let ids = t.individual_id.clone();
        let n = ids.len();
        for (name, v) in to_write {
            let p = self.path(name);
            write_scores(&p, &ids, &v)?;
        }
        let p = self.path("cohort.csv");
        write_cohort(&p, self.table()?)?;
        Ok(Outcome::rows(n))
    }

    fn fit(&mut self) -> Result<Outcome> {
        let mut outcome = Outcome::rows(0);
        for spec in &self.config.models {
            let fit = fit_spec(self.table()?, spec).map_err(|e| e.in_stage("fit", Some(&spec.id)))?;
            let p = self.path(&format!("fit_{}.csv", spec.id));
            write_fit(&p, &fit)?;
            outcome.rows += fit.fit.n_obs;
            outcome.dropped_singletons += fit.fit.n_dropped_singletons;
            outcome.notices.extend(spec_notices(&fit));
        }
        Ok(outcome)
    }

    fn ri(&mut self) -> Result<Outcome> {
        let Some(block) = &self.config.ri else {
            return Ok(Outcome { notices: vec!["no [ri] block configured".into()], ..Outcome::rows(0) });
        };
        let spec = self.config.models.iter().find(|m| m.id == block.model).expect("validated");
        let ri_config = RiConfig {
            n_permutations: block.n_permutations,
            scheme: block.scheme,
            term: block.term.clone(),
            histogram_bins: block.histogram_bins,
        };
        let result = randomization_test(self.table()?, spec, &ri_config, derive_seed(self.config.seed, "ri", 0))
            .map_err(|e| e.in_stage("ri", Some(&spec.id)))?;
        let p = self.path("ri_histogram.csv");
        write_ri_histogram(&p, &result, block.histogram_bins)?;
        let p = self.path("ri_summary.csv");
        write_ri_summary(&p, &result)?;
        let mut notices = Vec::new();
        if result.n_failed_fits > 0 {
            notices.push(format!("{} permutation fits failed and count as non-exceedances", result.n_failed_fits));
        }
        Ok(Outcome { notices, ..Outcome::rows(result.n_permutations) })
    }

    fn report(&mut self) -> Result<Outcome> {
        let mut notices = Vec::new();
        let means = birth_order_means(self.table()?);
        let p = self.path("birth_order_means.csv");
        write_birth_order_means(&p, &means)?;
        let t = self.table()?;
        if let Some(pgs) = t.pgs.clone() {
            let y = t.educ_years.clone();
            let (bins, mut n) = binned_scatter(&pgs, &y, self.config.report.scatter_bins)?;
            notices.append(&mut n);
            let p = self.path("binned_scatter.csv");
            write_binned_scatter(&p, &bins)?;
        } else {
            notices.push("no score column; binned scatter skipped".into());
        }
        Ok(Outcome { notices, ..Outcome::rows(self.table()?.len()) })
    }
}

fn spec_notices(fit: &SpecFit) -> Vec<String> {
    let mut out: Vec<String> = fit.fit.notices.iter().map(|n| format!("{}: {n}", fit.spec_id)).collect();
    if fit.weak_instruments {
        out.push(format!("{}: weak instruments (Cragg-Donald F below 10)", fit.spec_id));
    }
    out
}

/// Sex plus birth-year dummies (earliest year as reference).
fn discovery_covariates(sex: &[f64], years: &[i32]) -> Result<DesignMatrix> {
    let mut levels: Vec<i32> = years.to_vec();
    levels.sort_unstable();
    levels.dedup();
    let mut cols = vec![("sex".to_string(), sex.to_vec())];
    for y in levels.iter().skip(1) {
        cols.push((format!("by_{y}"), years.iter().map(|v| (v == y) as u8 as f64).collect()));
    }
    DesignMatrix::from_columns(cols, sex.len())
}

/// Reorder genotype rows to the table's individual order.
fn align_genotypes(g: &Genotypes, ids: &[String]) -> Result<Genotypes> {
    let index: std::collections::HashMap<&str, usize> =
        g.individual_ids().iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let missing: Vec<&str> = ids.iter().map(String::as_str).filter(|id| !index.contains_key(id)).collect();
    if !missing.is_empty() {
        return Err(Error::Schema(format!(
            "{} cohort individuals lack genotypes (first: `{}`)",
            missing.len(),
            missing[0]
        )));
    }
    let rows: Vec<usize> = ids.iter().map(|id| index[id.as_str()]).collect();
    Ok(g.subset_rows(&rows))
}

/// Remove SNPs dropped from the genotypes by the MAF filter.
fn without_snps(w: WeightSet, dropped: &[String]) -> WeightSet {
    if dropped.is_empty() {
        return w;
    }
    let keep: Vec<usize> = (0..w.len()).filter(|&j| !dropped.contains(&w.snp_ids[j])).collect();
    WeightSet {
        snp_ids: keep.iter().map(|&j| w.snp_ids[j].clone()).collect(),
        weights: keep.iter().map(|&j| w.weights[j]).collect(),
        standard_errors: keep.iter().map(|&j| w.standard_errors[j]).collect(),
        monomorphic: w.monomorphic.into_iter().filter(|s| !dropped.contains(s)).collect(),
        ..w
    }
}

/// Run every stage.
pub fn run_pipeline(config: &PipelineConfig, out_dir: &Path) -> Result<RunManifest> {
    run_stages(config, out_dir, &Stage::ALL)
}

/// Run `stages` in order, writing artifacts and `manifest.json` to
/// `out_dir`. On failure a `.partial` marker naming the failed stage is
/// left next to whatever was already written.
pub fn run_stages(config: &PipelineConfig, out_dir: &Path, stages: &[Stage]) -> Result<RunManifest> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let marker = out_dir.join(PARTIAL_MARKER);
    if marker.exists() {
        std::fs::remove_file(&marker)?;
    }
    let mut runner = Runner { config, out: out_dir, state: State::default() };
    let mut records = Vec::new();
    for &stage in stages {
        let start = Instant::now();
        let result = match stage {
            Stage::Simulate => runner.simulate(),
            Stage::Scan => runner.scan(),
            Stage::Score => runner.score(),
            Stage::Fit => runner.fit(),
            Stage::Ri => runner.ri(),
            Stage::Report => runner.report(),
        };
        match result {
            Ok(o) => records.push(StageRecord {
                stage,
                rows: o.rows,
                dropped_singletons: o.dropped_singletons,
                wall_clock_seconds: start.elapsed().as_secs_f64(),
                notices: o.notices,
            }),
            Err(e) => {
                let e = match e {
                    Error::Stage { .. } => e,
                    other => other.in_stage(stage.name(), None),
                };
                std::fs::write(&marker, format!("{e}\n"))?;
                return Err(e);
            }
        }
    }
    let mut outputs = BTreeMap::new();
    for p in &runner.state.written {
        let name = p.file_name().expect("file path").to_string_lossy().into_owned();
        outputs.insert(name, sha256_hex(&std::fs::read(p)?));
    }
    let manifest = RunManifest {
        config_sha256: sha256_hex(config.canonical().as_bytes()),
        seed: config.seed,
        versions: BTreeMap::from([("sibgxe".to_string(), env!("CARGO_PKG_VERSION").to_string())]),
        stages: records,
        maf_dropped_snps: runner.state.maf_dropped.len(),
        outputs,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(out_dir.join(MANIFEST_FILE), json + "\n")?;
    Ok(manifest)
}
