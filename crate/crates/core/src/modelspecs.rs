//! Declarative regression specifications and the education-years mapping.
//!
//! A [`ModelSpec`] names the outcome, the polygenic-score and birth-order
//! forms, the controls and the estimator; [`build_design`] turns it into a
//! design matrix over an [`AnalysisTable`] and [`fit_spec`] estimates it.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linreg::{self, Clustering, DesignMatrix, FitOptions, FitResult, OrivInput};
use crate::table::AnalysisTable;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    #[default]
    EducYears,
    Pgs,
    /// Any extra numeric column of the table.
    Custom(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    BetweenFamily,
    WithinFamily,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PgsForm {
    None,
    #[default]
    Linear,
    BinaryAboveMean,
    Quartiles,
    LinearPlusSquared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BirthOrderForm {
    None,
    #[default]
    FirstbornDummy,
    RankDummies,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[default]
    Ols,
    Oriv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Control {
    Sex,
    BirthYearDummies,
    BirthMonthDummies,
    Pcs,
}

/// Covariance choice. `Auto` clusters by family within families, uses HC1
/// between families, and two-way family/individual clustering for ORIV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClusterChoice {
    #[default]
    Auto,
    Family,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub id: String,
    #[serde(default)]
    pub outcome: Outcome,
    pub scope: Scope,
    #[serde(default)]
    pub pgs_form: PgsForm,
    #[serde(default)]
    pub birth_order_form: BirthOrderForm,
    #[serde(default)]
    pub interaction: bool,
    #[serde(default)]
    pub lastborn_control: bool,
    #[serde(default)]
    pub keller_full_interactions: bool,
    #[serde(default)]
    pub estimator: Estimator,
    #[serde(default)]
    pub controls: Vec<Control>,
    #[serde(default)]
    pub cluster: ClusterChoice,
}

impl ModelSpec {
    /// Linear score, firstborn dummy, no interaction, no controls.
    pub fn new(id: impl Into<String>, scope: Scope) -> Self {
        Self {
            id: id.into(),
            outcome: Outcome::EducYears,
            scope,
            pgs_form: PgsForm::Linear,
            birth_order_form: BirthOrderForm::FirstbornDummy,
            interaction: false,
            lastborn_control: false,
            keller_full_interactions: false,
            estimator: Estimator::Ols,
            controls: Vec::new(),
            cluster: ClusterChoice::Auto,
        }
    }

    pub fn with_interaction(mut self) -> Self {
        self.interaction = true;
        self
    }

    pub fn with_estimator(mut self, estimator: Estimator) -> Self {
        self.estimator = estimator;
        self
    }

    pub fn with_controls(mut self, controls: &[Control]) -> Self {
        self.controls = controls.to_vec();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("model `{}`: {m}", self.id)));
        if self.interaction && (self.pgs_form == PgsForm::None || self.birth_order_form == BirthOrderForm::None) {
            return bad("interaction requires both a score form and a birth-order form".into());
        }
        if self.estimator == Estimator::Oriv && self.pgs_form != PgsForm::Linear {
            return bad("ORIV requires the linear score form".into());
        }
        if self.estimator == Estimator::Oriv && self.interaction && self.birth_order_form != BirthOrderForm::FirstbornDummy {
            return bad("ORIV interactions require the firstborn dummy".into());
        }
        if self.keller_full_interactions
            && (self.pgs_form != PgsForm::Linear || self.birth_order_form != BirthOrderForm::FirstbornDummy)
        {
            return bad("full control interactions require a linear score and the firstborn dummy".into());
        }
        if self.outcome == Outcome::Pgs && self.pgs_form != PgsForm::None {
            return bad("the score cannot be both outcome and regressor".into());
        }
        let unique: BTreeSet<_> = self.controls.iter().map(|c| *c as u8).collect();
        if unique.len() != self.controls.len() {
            return bad("duplicate control".into());
        }
        Ok(())
    }

    fn clustering(&self) -> Clustering {
        match (self.cluster, self.estimator, self.scope) {
            (ClusterChoice::None, _, _) => Clustering::None,
            (ClusterChoice::Family, _, _) => Clustering::One(0),
            (ClusterChoice::Auto, Estimator::Oriv, _) => Clustering::Two,
            (ClusterChoice::Auto, Estimator::Ols, Scope::WithinFamily) => Clustering::One(0),
            (ClusterChoice::Auto, Estimator::Ols, Scope::BetweenFamily) => Clustering::None,
        }
    }
}

/// Qualification categories and their equivalent years of education.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Qualification {
    CollegeOrUniversity,
    NvqHndHnc,
    OtherProfessional,
    ALevels,
    OLevelsGcse,
    NoneOfTheAbove,
}

pub const ISCED_MAP: [(Qualification, u32); 6] = [
    (Qualification::CollegeOrUniversity, 20),
    (Qualification::NvqHndHnc, 19),
    (Qualification::OtherProfessional, 15),
    (Qualification::ALevels, 13),
    (Qualification::OLevelsGcse, 10),
    (Qualification::NoneOfTheAbove, 7),
];

impl Qualification {
    /// Accepts the snake-case names and the usual survey labels.
    pub fn parse(label: &str) -> Result<Self> {
        let norm: String = label.trim().to_ascii_lowercase().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        Ok(match norm.as_str() {
            "collegeoruniversity" | "collegeoruniversitydegree" => Qualification::CollegeOrUniversity,
            "nvqhndhnc" | "nvqorhndorhnc" | "nvqorhndorhncorequivalent" => Qualification::NvqHndHnc,
            "otherprofessional" | "otherprofessionalqualifications" | "otherprofessionalqualificationseg nursingteaching" => {
                Qualification::OtherProfessional
            }
            "alevels" | "aoraslevels" | "aoraslevelsorequivalent" => Qualification::ALevels,
            "olevelsgcse" | "olevelsgcsesorequivalent" | "olevelsgcses" | "cses" | "csesorequivalent" => {
                Qualification::OLevelsGcse
            }
            "noneoftheabove" | "none" => Qualification::NoneOfTheAbove,
            _ => return Err(Error::Mapping(label.to_string())),
        })
    }
}

pub fn isced_years(qualification: Qualification) -> u32 {
    ISCED_MAP.iter().find(|(q, _)| *q == qualification).map(|(_, y)| *y).expect("map is total")
}

pub fn isced_years_for_label(label: &str) -> Result<u32> {
    Qualification::parse(label).map(isced_years)
}

/// A design matrix built from a spec, with the outcome and the table rows it
/// covers (rows with missing values in used columns are dropped).
#[derive(Debug, Clone)]
pub struct BuiltDesign {
    pub design: DesignMatrix,
    pub y: Vec<f64>,
    pub rows: Vec<usize>,
    pub notices: Vec<String>,
}

fn require<'a>(col: &'a Option<Vec<f64>>, name: &str) -> Result<&'a [f64]> {
    col.as_deref().ok_or_else(|| Error::Schema(format!("column `{name}` is required but missing")))
}

/// Quartile index 0..4 per value; values tied at a cut point go to the lower
/// quartile.
pub fn quartile_bins(values: &[f64]) -> Result<Vec<usize>> {
    let distinct: BTreeSet<u64> = values.iter().map(|v| v.to_bits()).collect();
    if distinct.len() < 4 {
        return Err(Error::Binning(format!("quartiles need at least 4 distinct values, found {}", distinct.len())));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let cuts: Vec<f64> = (1..4).map(|q| sorted[(q * n).div_ceil(4) - 1]).collect();
    let bins: Vec<usize> = values.iter().map(|v| cuts.iter().filter(|c| v > c).count()).collect();
    for q in 0..4 {
        if !bins.contains(&q) {
            return Err(Error::Binning(format!("quartile {} is empty", q + 1)));
        }
    }
    Ok(bins)
}

fn dummies<T: Ord + Copy + std::fmt::Display>(values: &[T], prefix: &str) -> Vec<(String, Vec<f64>)> {
    let levels: BTreeSet<T> = values.iter().copied().collect();
    levels
        .into_iter()
        .skip(1)
        .map(|level| (format!("{prefix}{level}"), values.iter().map(|v| (*v == level) as u8 as f64).collect()))
        .collect()
}

fn multiply(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

fn subset(v: &[f64], rows: &[usize]) -> Vec<f64> {
    rows.iter().map(|&i| v[i]).collect()
}

pub fn build_design(table: &AnalysisTable, spec: &ModelSpec) -> Result<BuiltDesign> {
    spec.validate()?;
    table.validate()?;
    let n_all = table.len();
    let mut notices = Vec::new();

    // listwise deletion over every numeric input the spec touches
    let outcome_all: Vec<f64> = match &spec.outcome {
        Outcome::EducYears => table.educ_years.clone(),
        Outcome::Pgs => require(&table.pgs, "pgs")?.to_vec(),
        Outcome::Custom(name) => table
            .extra_column(name)
            .ok_or_else(|| Error::Schema(format!("outcome column `{name}` not found")))?
            .to_vec(),
    };
    let pgs_all: Option<&[f64]> = if spec.pgs_form != PgsForm::None || spec.estimator == Estimator::Oriv {
        Some(require(&table.pgs, "pgs")?)
    } else {
        None
    };
    let (pgs_a_all, pgs_b_all) = if spec.estimator == Estimator::Oriv {
        (Some(require(&table.pgs_a, "pgs_a")?), Some(require(&table.pgs_b, "pgs_b")?))
    } else {
        (None, None)
    };
    if spec.controls.contains(&Control::Pcs) && table.pcs.is_empty() {
        return Err(Error::Schema("PC controls requested but the table has no pc columns".into()));
    }
    let rows: Vec<usize> = (0..n_all)
        .filter(|&i| {
            outcome_all[i].is_finite()
                && [pgs_all, pgs_a_all, pgs_b_all].iter().all(|c| c.is_none_or(|c| c[i].is_finite()))
                && (!spec.controls.contains(&Control::Pcs) || table.pcs.iter().all(|c| c[i].is_finite()))
        })
        .collect();
    if rows.len() < n_all {
        notices.push(format!("{} rows with missing values dropped", n_all - rows.len()));
    }
    if rows.is_empty() {
        return Err(Error::EmptySample(format!("no complete rows for model `{}`", spec.id)));
    }
    let n = rows.len();
    let firstborn: Vec<f64> = rows.iter().map(|&i| table.firstborn[i] as u8 as f64).collect();

    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();

    // birth order block
    let moderators: Vec<(String, Vec<f64>)> = match spec.birth_order_form {
        BirthOrderForm::None => Vec::new(),
        BirthOrderForm::FirstbornDummy => vec![("firstborn".into(), firstborn.clone())],
        BirthOrderForm::RankDummies => (2..=crate::cohortsim::BIRTH_ORDER_CAP)
            .map(|k| (format!("bo{k}"), rows.iter().map(|&i| (table.birth_order[i] == k) as u8 as f64).collect()))
            .collect(),
    };
    columns.extend(moderators.iter().cloned());

    // score block
    let pgs: Option<Vec<f64>> = pgs_all.map(|p| subset(p, &rows));
    let score_cols: Vec<(String, Vec<f64>)> = match (spec.pgs_form, &pgs) {
        (PgsForm::None, _) => Vec::new(),
        (_, None) => unreachable!("score presence checked above"),
        (PgsForm::Linear, Some(p)) => vec![("pgs".into(), p.clone())],
        (PgsForm::BinaryAboveMean, Some(p)) => {
            let mean = p.iter().sum::<f64>() / n as f64;
            vec![("pgs_above_mean".into(), p.iter().map(|v| (*v > mean) as u8 as f64).collect())]
        }
        (PgsForm::Quartiles, Some(p)) => {
            let bins = quartile_bins(p)?;
            (1..4)
                .map(|q| (format!("pgs_q{}", q + 1), bins.iter().map(|&b| (b == q) as u8 as f64).collect()))
                .collect()
        }
        (PgsForm::LinearPlusSquared, Some(p)) => {
            vec![("pgs".into(), p.clone()), ("pgs_sq".into(), p.iter().map(|v| v * v).collect())]
        }
    };
    columns.extend(score_cols.iter().cloned());

    if spec.interaction {
        for (mname, m) in &moderators {
            for (sname, s) in &score_cols {
                columns.push((format!("{mname}_x_{sname}"), multiply(m, s)));
            }
        }
    }
    if spec.lastborn_control {
        columns.push(("lastborn".into(), rows.iter().map(|&i| table.lastborn[i] as u8 as f64).collect()));
    }

    // controls
    let mut control_cols: Vec<(String, Vec<f64>)> = Vec::new();
    for c in &spec.controls {
        match c {
            Control::Sex => control_cols.push(("sex".into(), rows.iter().map(|&i| table.sex[i] as f64).collect())),
            Control::BirthYearDummies => {
                let years: Vec<i32> = rows.iter().map(|&i| table.birth_year[i]).collect();
                control_cols.extend(dummies(&years, "by_"));
            }
            Control::BirthMonthDummies => {
                let months: Vec<u8> = rows.iter().map(|&i| table.birth_month[i]).collect();
                control_cols.extend(dummies(&months, "bm_"));
            }
            Control::Pcs => {
                for (k, pc) in table.pcs.iter().enumerate() {
                    control_cols.push((format!("pc{}", k + 1), subset(pc, &rows)));
                }
            }
        }
    }
    if spec.keller_full_interactions {
        let p = pgs.as_ref().expect("validated linear score");
        let mut expanded = Vec::with_capacity(2 * control_cols.len());
        for (name, c) in &control_cols {
            expanded.push((format!("firstborn_x_{name}"), multiply(&firstborn, c)));
            expanded.push((format!("pgs_x_{name}"), multiply(p, c)));
        }
        control_cols.extend(expanded);
    }
    columns.extend(control_cols);

    if spec.scope == Scope::BetweenFamily {
        columns.push(("family_size".into(), subset(&table.family_sizes(), &rows)));
        columns.push(("const".into(), vec![1.0; n]));
    }

    let family_codes_all = table.family_codes();
    let families: Vec<usize> = if rows.len() == n_all {
        family_codes_all
    } else {
        linreg::encode_labels(&rows.iter().map(|&i| family_codes_all[i]).collect::<Vec<_>>())
    };
    let mut design = DesignMatrix::from_columns(columns, n)?.with_clusters(families.clone())?;
    if spec.scope == Scope::WithinFamily {
        design = design.with_fixed_effects(families)?;
    }
    Ok(BuiltDesign { design, y: subset(&outcome_all, &rows), rows, notices })
}

/// Estimated spec: the fit plus IV diagnostics when applicable.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecFit {
    pub spec_id: String,
    pub fit: FitResult,
    pub cragg_donald: Option<f64>,
    pub weak_instruments: bool,
}

pub fn fit_spec(table: &AnalysisTable, spec: &ModelSpec) -> Result<SpecFit> {
    let mut built = build_design(table, spec)?;
    let mut clustering = spec.clustering();
    if spec.cluster == ClusterChoice::Auto && built.design.cluster_ids[0].iter().all(|&c| c == 0) {
        clustering = Clustering::None;
        built.notices.push("a single family in the sample; using HC1 instead of clustered errors".into());
    }
    let opts = FitOptions { clustering, ..Default::default() }.dropping();
    match spec.estimator {
        Estimator::Ols => {
            let mut fit = linreg::ols(&built.design, &built.y, opts)?;
            let mut notices = built.notices;
            notices.append(&mut fit.notices);
            fit.notices = notices;
            Ok(SpecFit { spec_id: spec.id.clone(), fit, cragg_donald: None, weak_instruments: false })
        }
        Estimator::Oriv => {
            let a = subset(table.pgs_a.as_deref().expect("checked in build_design"), &built.rows);
            let b = subset(table.pgs_b.as_deref().expect("checked in build_design"), &built.rows);
            let d = &built.design;
            let use_moderator = spec.interaction && spec.birth_order_form == BirthOrderForm::FirstbornDummy;
            let skip = |name: &str| {
                name == "pgs" || name == "const" || (use_moderator && (name == "firstborn" || name == "firstborn_x_pgs"))
            };
            let controls: Vec<(String, Vec<f64>)> = d
                .column_names
                .iter()
                .enumerate()
                .filter(|(_, name)| !skip(name))
                .map(|(j, name)| (name.clone(), d.values.column(j).iter().copied().collect()))
                .collect();
            let moderator = use_moderator.then(|| d.column("firstborn").expect("firstborn column present"));
            let input = OrivInput {
                y: &built.y,
                score_a: &a,
                score_b: &b,
                moderator: moderator.as_deref(),
                controls: &controls,
                family_ids: &d.cluster_ids[0],
                within_family: spec.scope == Scope::WithinFamily,
                score_name: "pgs",
                moderator_name: "firstborn",
            };
            let mut res = linreg::oriv(&input, opts)?;
            let mut notices = built.notices;
            notices.append(&mut res.fit.notices);
            res.fit.notices = notices;
            Ok(SpecFit {
                spec_id: spec.id.clone(),
                fit: res.fit,
                cragg_donald: Some(res.first_stage_f),
                weak_instruments: res.weak_instruments,
            })
        }
    }
}

/// Mendelian-randomization diagnostic: score regressed on the firstborn dummy.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalityCheck {
    pub fit: FitResult,
    pub coefficient: f64,
    pub p_value: f64,
    /// True when the firstborn coefficient is significant at 5%.
    pub violated: bool,
}

pub fn orthogonality_check(table: &AnalysisTable, scope: Scope, controls: &[Control]) -> Result<OrthogonalityCheck> {
    let spec = ModelSpec {
        outcome: Outcome::Pgs,
        pgs_form: PgsForm::None,
        ..ModelSpec::new("orthogonality", scope).with_controls(controls)
    };
    let SpecFit { fit, .. } = fit_spec(table, &spec)?;
    let coefficient = fit.coef("firstborn").ok_or_else(|| Error::Collinearity { columns: vec!["firstborn".into()] })?;
    let p_value = fit.p_value("firstborn").unwrap_or(f64::NAN);
    Ok(OrthogonalityCheck { fit, coefficient, p_value, violated: p_value < 0.05 })
}

/// Incremental R² of the score block: the spec as given versus the same
/// spec without any score terms.
pub fn score_incremental_r2(table: &AnalysisTable, spec: &ModelSpec) -> Result<f64> {
    let with = fit_spec(table, spec)?;
    let base_spec = ModelSpec {
        pgs_form: PgsForm::None,
        interaction: false,
        keller_full_interactions: false,
        estimator: Estimator::Ols,
        ..spec.clone()
    };
    let without = fit_spec(table, &base_spec)?;
    linreg::incremental_r2(&without.fit, &with.fit)
}
