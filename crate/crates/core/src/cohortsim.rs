//! Synthetic sibling cohorts.
//!
//! Parents are drawn under Hardy–Weinberg equilibrium from a panel of
//! independent SNPs, children inherit one allele from each parent, and
//! outcomes follow either the reduced-form interaction model or a
//! structural skill-production recursion.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

/// Birth orders above this value are reported as this value.
pub const BIRTH_ORDER_CAP: u32 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnpPanel {
    snp_ids: Vec<String>,
    allele_freqs: Vec<f64>,
    true_effects: Vec<f64>,
}

impl SnpPanel {
    pub fn new(snp_ids: Vec<String>, allele_freqs: Vec<f64>, true_effects: Vec<f64>) -> Result<Self> {
        if snp_ids.is_empty() {
            return Err(Error::InvalidParams("SNP panel must contain at least one SNP".into()));
        }
        if snp_ids.len() != allele_freqs.len() || snp_ids.len() != true_effects.len() {
            return Err(Error::Dimension(format!(
                "panel lists differ in length: {} ids, {} frequencies, {} effects",
                snp_ids.len(),
                allele_freqs.len(),
                true_effects.len()
            )));
        }
        if let Some((i, p)) = allele_freqs.iter().enumerate().find(|(_, p)| !(**p > 0.0 && **p < 1.0)) {
            return Err(Error::InvalidParams(format!(
                "allele frequency of {} is {p}, must lie strictly inside (0, 1)",
                snp_ids[i]
            )));
        }
        if let Some(i) = true_effects.iter().position(|b| !b.is_finite()) {
            return Err(Error::InvalidParams(format!("non-finite effect for {}", snp_ids[i])));
        }
        Ok(Self { snp_ids, allele_freqs, true_effects })
    }

    /// Random panel: frequencies uniform on `[maf_min, 1 - maf_min]`, effects
    /// normal with standard deviation `effect_sd`.
    pub fn random(n_snps: usize, maf_min: f64, effect_sd: f64, seed: u64) -> Result<Self> {
        if !(maf_min > 0.0 && maf_min < 0.5) {
            return Err(Error::InvalidParams(format!("maf_min must be in (0, 0.5), got {maf_min}")));
        }
        let mut rng = substream(seed, "panel", 0);
        let ids = (1..=n_snps).map(|j| format!("rs{j}")).collect();
        let freqs = (0..n_snps).map(|_| rng.random_range(maf_min..=1.0 - maf_min)).collect();
        let effects = (0..n_snps)
            .map(|_| effect_sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self::new(ids, freqs, effects)
    }

    pub fn len(&self) -> usize {
        self.snp_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snp_ids.is_empty()
    }

    pub fn snp_ids(&self) -> &[String] {
        &self.snp_ids
    }

    pub fn allele_freqs(&self) -> &[f64] {
        &self.allele_freqs
    }

    pub fn true_effects(&self) -> &[f64] {
        &self.true_effects
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub individual_id: String,
    pub family_id: String,
    pub genotype: Vec<u8>,
    /// Uncensored birth order, 1-based.
    pub birth_order: u32,
    pub firstborn: bool,
    pub lastborn: bool,
    /// 1 = male.
    pub sex: u8,
    pub birth_year: i32,
    pub birth_month: u8,
    /// Standardized true genetic score `G*`.
    pub true_score: f64,
    /// Latent skill at the end of childhood (noise-free outcome component).
    pub latent_skill: f64,
    pub educ_years: f64,
    pub pcs: Vec<f64>,
}

impl Individual {
    pub fn reporting_birth_order(&self) -> u32 {
        self.birth_order.min(BIRTH_ORDER_CAP)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Family {
    pub family_id: String,
    pub mother_genotype: Vec<u8>,
    pub father_genotype: Vec<u8>,
    pub family_effect: f64,
    pub children: Vec<Individual>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DgpMode {
    #[default]
    ReducedForm,
    Structural,
}

/// Coefficients of the reduced-form interaction model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Alphas {
    pub intercept: f64,
    pub score: f64,
    pub firstborn: f64,
    pub interaction: f64,
}

impl Alphas {
    pub fn new(intercept: f64, score: f64, firstborn: f64, interaction: f64) -> Self {
        Self { intercept, score, firstborn, interaction }
    }
}

impl Default for Alphas {
    fn default() -> Self {
        Self::new(14.0, 0.574, 0.368, 0.162)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct CovariateEffects {
    pub sex: f64,
    /// Per year relative to the first year of the birth-year window.
    pub birth_year: f64,
    pub pcs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InvestmentSchedule {
    /// `I = budget / children present`.
    EqualShare { budget: f64 },
    /// `I = base - slope * (children present - 1)`.
    Linear { base: f64, slope: f64 },
}

impl InvestmentSchedule {
    pub fn investment(&self, children_present: usize) -> f64 {
        match *self {
            InvestmentSchedule::EqualShare { budget } => budget / children_present.max(1) as f64,
            InvestmentSchedule::Linear { base, slope } => {
                base - slope * (children_present.saturating_sub(1)) as f64
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StructuralParams {
    pub gamma_invest: f64,
    pub gamma_complement: f64,
    pub periods: u32,
    /// Periods between consecutive births.
    pub birth_spacing: u32,
    pub schedule: InvestmentSchedule,
}

impl Default for StructuralParams {
    fn default() -> Self {
        Self {
            gamma_invest: 0.4,
            gamma_complement: 0.05,
            periods: 6,
            birth_spacing: 2,
            schedule: InvestmentSchedule::EqualShare { budget: 1.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DgpParams {
    pub mode: DgpMode,
    pub alpha: Alphas,
    pub covariate_effects: CovariateEffects,
    pub family_sd: f64,
    pub noise_sd: f64,
    /// Effect of the mean standardized parental true score on the outcome.
    pub nurture_coef: f64,
    pub structural: StructuralParams,
}

impl Default for DgpParams {
    fn default() -> Self {
        Self {
            mode: DgpMode::ReducedForm,
            alpha: Alphas::default(),
            covariate_effects: CovariateEffects::default(),
            family_sd: 2.0,
            noise_sd: 4.5,
            nurture_coef: 0.0,
            structural: StructuralParams::default(),
        }
    }
}

impl DgpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.family_sd >= 0.0) || !(self.noise_sd >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "family_sd and noise_sd must be non-negative (got {}, {})",
                self.family_sd, self.noise_sd
            )));
        }
        if self.mode == DgpMode::Structural && self.structural.periods < 1 {
            return Err(Error::InvalidParams("structural mode needs at least one period".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilySizeDist {
    Point { size: u32 },
    /// Geometric on `min, min+1, ...` with success probability `p`, truncated at `max`.
    TruncatedGeometric { p: f64, min: u32, max: u32 },
    Weights { sizes: Vec<u32>, weights: Vec<f64> },
}

impl Default for FamilySizeDist {
    /// Mean of about 2.97 children.
    fn default() -> Self {
        FamilySizeDist::TruncatedGeometric { p: 0.5, min: 2, max: 8 }
    }
}

impl FamilySizeDist {
    fn table(&self) -> Result<(Vec<u32>, Vec<f64>)> {
        let (sizes, weights) = match self {
            FamilySizeDist::Point { size } => (vec![*size], vec![1.0]),
            FamilySizeDist::TruncatedGeometric { p, min, max } => {
                if !(*p > 0.0 && *p <= 1.0) || min > max {
                    return Err(Error::InvalidParams(format!(
                        "truncated geometric needs p in (0,1] and min <= max (p={p}, min={min}, max={max})"
                    )));
                }
                let sizes: Vec<u32> = (*min..=*max).collect();
                let weights = (0..sizes.len()).map(|k| p * (1.0 - p).powi(k as i32)).collect();
                (sizes, weights)
            }
            FamilySizeDist::Weights { sizes, weights } => {
                if sizes.len() != weights.len() || sizes.is_empty() {
                    return Err(Error::InvalidParams("family size weights must match sizes".into()));
                }
                (sizes.clone(), weights.clone())
            }
        };
        if sizes.iter().any(|&s| s < 1) {
            return Err(Error::InvalidParams("family sizes must be at least 1".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidParams("family size weights must be non-negative with positive sum".into()));
        }
        Ok((sizes, weights))
    }

    pub fn mean(&self) -> Result<f64> {
        let (sizes, weights) = self.table()?;
        let total: f64 = weights.iter().sum();
        Ok(sizes.iter().zip(&weights).map(|(&s, w)| s as f64 * w).sum::<f64>() / total)
    }
}

/// Ranges for the simulated covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CovariateRanges {
    pub first_birth_year: i32,
    /// Firstborn birth years are uniform over this many years.
    pub year_window: u32,
    /// Later siblings are born 1..=max_birth_gap years after the previous child.
    pub max_birth_gap: u32,
    pub n_pcs: usize,
}

impl Default for CovariateRanges {
    fn default() -> Self {
        Self { first_birth_year: 1937, year_window: 20, max_birth_gap: 3, n_pcs: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortDesign {
    pub n_families: usize,
    pub family_size: FamilySizeDist,
    pub covariates: CovariateRanges,
}

impl Default for CohortDesign {
    fn default() -> Self {
        Self { n_families: 5000, family_size: FamilySizeDist::default(), covariates: CovariateRanges::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub families: Vec<Family>,
    pub panel: SnpPanel,
    pub dgp: DgpParams,
    pub seed: u64,
    /// Mean and standard deviation of the raw true score used for standardization.
    pub true_score_scale: (f64, f64),
}

impl Cohort {
    pub fn individuals(&self) -> impl Iterator<Item = &Individual> {
        self.families.iter().flat_map(|f| f.children.iter())
    }

    pub fn n_individuals(&self) -> usize {
        self.families.iter().map(|f| f.children.len()).sum()
    }

    /// Row-major genotype matrix of all children in cohort order.
    pub fn genotypes(&self) -> crate::genoscore::Genotypes {
        let n = self.n_individuals();
        let j = self.panel.len();
        let mut data = Vec::with_capacity(n * j);
        let mut ids = Vec::with_capacity(n);
        for ind in self.individuals() {
            data.extend_from_slice(&ind.genotype);
            ids.push(ind.individual_id.clone());
        }
        crate::genoscore::Genotypes::new(ids, self.panel.snp_ids().to_vec(), data)
            .expect("cohort genotypes are valid by construction")
    }
}

/// Two independent Bernoulli(p) alleles per SNP.
pub fn sample_parent_genotype(panel: &SnpPanel, stream: &mut Stream) -> Vec<u8> {
    panel
        .allele_freqs
        .iter()
        .map(|&p| stream.random_bool(p) as u8 + stream.random_bool(p) as u8)
        .collect()
}

fn gamete_allele(count: u8, stream: &mut Stream) -> u8 {
    match count {
        0 => 0,
        2 => 1,
        _ => stream.random_bool(0.5) as u8,
    }
}

/// Child genotype with one allele from each parent.
pub fn transmit(mother: &[u8], father: &[u8], stream: &mut Stream) -> Result<Vec<u8>> {
    if mother.len() != father.len() {
        return Err(Error::Dimension(format!(
            "parental genotypes have {} and {} SNPs",
            mother.len(),
            father.len()
        )));
    }
    if let Some(c) = mother.iter().chain(father).find(|&&c| c > 2) {
        return Err(Error::Domain(format!("allele count {c} outside {{0,1,2}}")));
    }
    Ok(mother
        .iter()
        .zip(father)
        .map(|(&m, &f)| gamete_allele(m, stream) + gamete_allele(f, stream))
        .collect())
}

pub fn assign_reporting_birth_order(order: u32) -> Result<u32> {
    if order < 1 {
        return Err(Error::Domain("birth order must be at least 1".into()));
    }
    Ok(order.min(BIRTH_ORDER_CAP))
}

/// Raw true score `sum_j b_j x_ij` in fixed SNP order.
fn raw_true_score(genotype: &[u8], effects: &[f64]) -> f64 {
    genotype.iter().zip(effects).map(|(&x, b)| x as f64 * b).sum()
}

/// Per-family draws that do not depend on cohort-wide standardization.
struct FamilyDraw {
    mother: Vec<u8>,
    father: Vec<u8>,
    family_effect: f64,
    children: Vec<ChildDraw>,
}

struct ChildDraw {
    genotype: Vec<u8>,
    sex: u8,
    birth_year: i32,
    birth_month: u8,
    pcs: Vec<f64>,
    noise: f64,
}

fn draw_family(
    index: usize,
    sizes: &(Vec<u32>, Vec<f64>),
    size_index: &WeightedIndex<f64>,
    panel: &SnpPanel,
    dgp: &DgpParams,
    ranges: &CovariateRanges,
    seed: u64,
) -> Result<FamilyDraw> {
    let mut rng = substream(seed, "family", index as u64);
    let size = sizes.0[size_index.sample(&mut rng)] as usize;
    let mother = sample_parent_genotype(panel, &mut rng);
    let father = sample_parent_genotype(panel, &mut rng);
    let family_effect = dgp.family_sd * rng.sample::<f64, _>(StandardNormal);
    let mut year = ranges.first_birth_year + rng.random_range(0..ranges.year_window.max(1)) as i32;
    let mut children = Vec::with_capacity(size);
    for b in 0..size {
        if b > 0 {
            year += rng.random_range(1..=ranges.max_birth_gap.max(1)) as i32;
        }
        let genotype = transmit(&mother, &father, &mut rng)?;
        let sex = rng.random_bool(0.5) as u8;
        let birth_month = rng.random_range(1..=12u8);
        let pcs = (0..ranges.n_pcs).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let noise = dgp.noise_sd * rng.sample::<f64, _>(StandardNormal);
        children.push(ChildDraw { genotype, sex, birth_year: year, birth_month, pcs, noise });
    }
    Ok(FamilyDraw { mother, father, family_effect, children })
}

/// Skill at the end of childhood under the structural recursion.
///
/// Child `b` (0-based) is born at period `b * spacing`; in each of its `T`
/// childhood periods it receives the schedule's investment given the number
/// of children currently in childhood.
pub fn structural_skill(theta0: f64, birth_index: usize, family_size: usize, family_effect: f64, params: &StructuralParams) -> f64 {
    let t_total = params.periods as usize;
    let spacing = params.birth_spacing as usize;
    let h = family_effect / t_total as f64;
    let born = birth_index * spacing;
    let mut theta = theta0;
    for t in 0..t_total {
        let now = born + t;
        let present = (0..family_size)
            .filter(|&c| c * spacing <= now && now < c * spacing + t_total)
            .count();
        let invest = params.schedule.investment(present);
        theta = theta + params.gamma_invest * invest + params.gamma_complement * theta * invest + h;
    }
    theta
}

pub fn generate_cohort(design: &CohortDesign, panel: &SnpPanel, dgp: &DgpParams, seed: u64) -> Result<Cohort> {
    if design.n_families < 1 {
        return Err(Error::InvalidParams("n_families must be at least 1".into()));
    }
    dgp.validate()?;
    let n_pcs = design.covariates.n_pcs;
    if !dgp.covariate_effects.pcs.is_empty() && dgp.covariate_effects.pcs.len() != n_pcs {
        return Err(Error::Dimension(format!(
            "{} PC effects configured for {} simulated PCs",
            dgp.covariate_effects.pcs.len(),
            n_pcs
        )));
    }
    let sizes = design.family_size.table()?;
    let size_index = WeightedIndex::new(&sizes.1).map_err(|e| Error::InvalidParams(e.to_string()))?;

    let draws: Vec<FamilyDraw> = (0..design.n_families)
        .into_par_iter()
        .map(|f| draw_family(f, &sizes, &size_index, panel, dgp, &design.covariates, seed))
        .collect::<Result<_>>()?;

    let effects = panel.true_effects();
    let raw: Vec<f64> = draws
        .iter()
        .flat_map(|d| d.children.iter().map(|c| raw_true_score(&c.genotype, effects)))
        .collect();
    let n = raw.len();
    if n < 2 {
        return Err(Error::DegenerateDgp("fewer than two individuals; true score cannot be standardized".into()));
    }
    let mean = raw.iter().sum::<f64>() / n as f64;
    let var = raw.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if !(var > 0.0) {
        return Err(Error::DegenerateDgp("true score has zero variance in the cohort".into()));
    }
    let sd = var.sqrt();

    let alpha = dgp.alpha;
    let ce = &dgp.covariate_effects;
    let y0 = design.covariates.first_birth_year;
    let families = draws
        .into_iter()
        .enumerate()
        .map(|(f, d)| {
            let family_id = format!("F{:06}", f + 1);
            let parental = 0.5
                * ((raw_true_score(&d.mother, effects) - mean) / sd + (raw_true_score(&d.father, effects) - mean) / sd);
            let size = d.children.len();
            let children = d
                .children
                .into_iter()
                .enumerate()
                .map(|(b, c)| {
                    let g = (raw_true_score(&c.genotype, effects) - mean) / sd;
                    let firstborn = b == 0;
                    let e = firstborn as u8 as f64;
                    let covariates = ce.sex * c.sex as f64
                        + ce.birth_year * (c.birth_year - y0) as f64
                        + ce.pcs.iter().zip(&c.pcs).map(|(a, p)| a * p).sum::<f64>();
                    let latent = match dgp.mode {
                        DgpMode::ReducedForm => {
                            alpha.intercept
                                + alpha.score * g
                                + alpha.firstborn * e
                                + alpha.interaction * g * e
                                + covariates
                                + dgp.nurture_coef * parental
                                + d.family_effect
                        }
                        DgpMode::Structural => {
                            alpha.intercept
                                + structural_skill(alpha.score * g, b, size, d.family_effect, &dgp.structural)
                                + covariates
                                + dgp.nurture_coef * parental
                        }
                    };
                    Individual {
                        individual_id: format!("{family_id}-{}", b + 1),
                        family_id: family_id.clone(),
                        genotype: c.genotype,
                        birth_order: b as u32 + 1,
                        firstborn,
                        lastborn: b + 1 == size,
                        sex: c.sex,
                        birth_year: c.birth_year,
                        birth_month: c.birth_month,
                        true_score: g,
                        latent_skill: latent,
                        educ_years: latent + c.noise,
                        pcs: c.pcs,
                    }
                })
                .collect();
            Family {
                family_id,
                mother_genotype: d.mother,
                father_genotype: d.father,
                family_effect: d.family_effect,
                children,
            }
        })
        .collect();

    Ok(Cohort { families, panel: panel.clone(), dgp: dgp.clone(), seed, true_score_scale: (mean, sd) })
}

/// Unrelated discovery sample: one randomly chosen child from each of
/// `n_individuals` independently simulated families.
pub fn generate_discovery(
    n_individuals: usize,
    design: &CohortDesign,
    panel: &SnpPanel,
    dgp: &DgpParams,
    seed: u64,
) -> Result<Vec<Individual>> {
    let design = CohortDesign { n_families: n_individuals, ..design.clone() };
    let cohort = generate_cohort(&design, panel, dgp, crate::rng::derive_seed(seed, "discovery", 0))?;
    Ok(cohort
        .families
        .into_iter()
        .enumerate()
        .map(|(f, mut fam)| {
            let mut rng = substream(seed, "discovery-pick", f as u64);
            let k = rng.random_range(0..fam.children.len());
            fam.children.swap_remove(k)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(freqs: &[f64]) -> SnpPanel {
        SnpPanel::new(
            (0..freqs.len()).map(|j| format!("s{j}")).collect(),
            freqs.to_vec(),
            vec![0.1; freqs.len()],
        )
        .unwrap()
    }

    #[test]
    fn panel_rejects_boundary_frequencies() {
        assert!(SnpPanel::new(vec!["a".into()], vec![0.0], vec![1.0]).is_err());
        assert!(SnpPanel::new(vec!["a".into()], vec![1.0], vec![1.0]).is_err());
        assert!(SnpPanel::new(vec!["a".into()], vec![0.5, 0.5], vec![1.0]).is_err());
        assert!(SnpPanel::new(vec![], vec![], vec![]).is_err());
    }

    #[test]
    fn parent_genotype_moments() {
        let p = panel(&[0.5, 0.1]);
        let mut rng = substream(1, "t", 0);
        let draws = 1_000_000;
        let (mut sum_half, mut twos_tenth) = (0u64, 0u64);
        for _ in 0..draws {
            let g = sample_parent_genotype(&p, &mut rng);
            assert!(g.iter().all(|&c| c <= 2));
            sum_half += g[0] as u64;
            twos_tenth += (g[1] == 2) as u64;
        }
        let mean = sum_half as f64 / draws as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        let p2 = twos_tenth as f64 / draws as f64;
        assert!((p2 - 0.01).abs() < 0.002, "P(2) {p2}");
    }

    #[test]
    fn transmission_of_homozygous_parents_is_deterministic() {
        let mut rng = substream(2, "t", 0);
        for _ in 0..100 {
            assert_eq!(transmit(&[0, 2, 0, 2], &[0, 2, 2, 0], &mut rng).unwrap(), vec![0, 2, 1, 1]);
        }
    }

    #[test]
    fn heterozygous_cross_gives_quarter_half_quarter() {
        // four equiprobable gamete pairs: (0,0) (0,1) (1,0) (1,1)
        let expected = [0.25, 0.5, 0.25];
        let mut rng = substream(3, "t", 0);
        let n = 200_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[transmit(&[1], &[1], &mut rng).unwrap()[0] as usize] += 1;
        }
        for k in 0..3 {
            let f = counts[k] as f64 / n as f64;
            let se = (expected[k] * (1.0 - expected[k]) / n as f64).sqrt();
            assert!((f - expected[k]).abs() < 4.0 * se, "k={k} f={f}");
        }
    }

    #[test]
    fn transmit_rejects_length_mismatch() {
        let mut rng = substream(3, "t", 0);
        assert!(matches!(transmit(&[1, 1], &[1], &mut rng), Err(Error::Dimension(_))));
    }

    #[test]
    fn reporting_birth_order_is_capped() {
        assert_eq!(assign_reporting_birth_order(1).unwrap(), 1);
        assert_eq!(assign_reporting_birth_order(5).unwrap(), 5);
        assert_eq!(assign_reporting_birth_order(9).unwrap(), 5);
        assert!(assign_reporting_birth_order(0).is_err());
    }

    #[test]
    fn default_family_size_mean_is_about_three() {
        let m = FamilySizeDist::default().mean().unwrap();
        assert!((m - 2.987).abs() < 0.05, "{m}");
    }

    fn noiseless() -> DgpParams {
        DgpParams {
            alpha: Alphas::new(0.0, 1.0, 0.0, 0.0),
            family_sd: 0.0,
            noise_sd: 0.0,
            nurture_coef: 0.0,
            ..DgpParams::default()
        }
    }

    #[test]
    fn noiseless_outcome_equals_standardized_true_score() {
        let panel = SnpPanel::random(30, 0.05, 0.1, 4).unwrap();
        let design = CohortDesign { n_families: 200, ..Default::default() };
        let cohort = generate_cohort(&design, &panel, &noiseless(), 11).unwrap();
        let ys: Vec<f64> = cohort.individuals().map(|i| i.educ_years).collect();
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        for ind in cohort.individuals() {
            assert_eq!(ind.educ_years, ind.true_score);
        }
    }

    #[test]
    fn structure_flags_and_mendel_consistency() {
        let panel = SnpPanel::random(25, 0.05, 0.1, 5).unwrap();
        let design = CohortDesign { n_families: 300, ..Default::default() };
        let cohort = generate_cohort(&design, &panel, &DgpParams::default(), 12).unwrap();
        let mut ids = std::collections::HashSet::new();
        for fam in &cohort.families {
            assert!(!fam.children.is_empty());
            let n = fam.children.len() as u32;
            for c in &fam.children {
                assert!(ids.insert(c.individual_id.clone()));
                assert_eq!(c.firstborn, c.birth_order == 1);
                assert_eq!(c.lastborn, c.birth_order == n);
                for j in 0..panel.len() {
                    let (m, f, x) = (fam.mother_genotype[j], fam.father_genotype[j], c.genotype[j]);
                    let lo = (m == 2) as u8 + (f == 2) as u8;
                    let hi = (m > 0) as u8 + (f > 0) as u8;
                    assert!(x >= lo && x <= hi);
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic_across_thread_counts() {
        let panel = SnpPanel::random(10, 0.05, 0.1, 6).unwrap();
        let design = CohortDesign { n_families: 150, ..Default::default() };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| generate_cohort(&design, &panel, &DgpParams::default(), 99).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn singleton_families() {
        let panel = SnpPanel::random(10, 0.05, 0.1, 6).unwrap();
        let design = CohortDesign { n_families: 50, family_size: FamilySizeDist::Point { size: 1 }, ..Default::default() };
        let cohort = generate_cohort(&design, &panel, &DgpParams::default(), 1).unwrap();
        assert!(cohort.individuals().all(|i| i.firstborn && i.lastborn));
    }

    #[test]
    fn single_individual_is_degenerate() {
        let panel = SnpPanel::random(10, 0.05, 0.1, 6).unwrap();
        let design = CohortDesign { n_families: 1, family_size: FamilySizeDist::Point { size: 1 }, ..Default::default() };
        assert!(matches!(
            generate_cohort(&design, &panel, &DgpParams::default(), 1),
            Err(Error::DegenerateDgp(_))
        ));
    }

    #[test]
    fn children_preserve_allele_frequencies() {
        let panel = SnpPanel::random(8, 0.05, 0.1, 7).unwrap();
        let design = CohortDesign { n_families: 4000, ..Default::default() };
        let cohort = generate_cohort(&design, &panel, &DgpParams::default(), 3).unwrap();
        let n = cohort.n_individuals() as f64;
        for j in 0..panel.len() {
            let p = panel.allele_freqs()[j];
            let freq = cohort.individuals().map(|i| i.genotype[j] as f64).sum::<f64>() / (2.0 * n);
            // founder alleles (4 per family) plus segregation noise
            let f = design.n_families as f64;
            let se = (p * (1.0 - p) / (4.0 * f) + p * (1.0 - p) / (2.0 * n)).sqrt();
            assert!((freq - p).abs() < 3.0 * se, "snp {j}: {freq} vs {p}");
        }
    }

    #[test]
    fn structural_equal_share_favours_firstborn() {
        let params = StructuralParams { gamma_complement: 0.0, ..Default::default() };
        let first = structural_skill(0.0, 0, 3, 0.0, &params);
        let second = structural_skill(0.0, 1, 3, 0.0, &params);
        assert!(first > second);
        // complementarity: the firstborn advantage grows with the initial endowment
        let params = StructuralParams { gamma_complement: 0.1, ..Default::default() };
        let gap = |theta0| structural_skill(theta0, 0, 3, 0.0, &params) - structural_skill(theta0, 1, 3, 0.0, &params);
        assert!(gap(1.0) > gap(0.0));
    }
}
