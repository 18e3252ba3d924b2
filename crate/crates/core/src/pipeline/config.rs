//! TOML pipeline configuration.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cohortsim::{CohortDesign, DgpParams};
use crate::error::{Error, Result};
use crate::modelspecs::{Estimator, ModelSpec};
use crate::ri::PermutationScheme;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Used when no output directory is given on the command line.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub simulation: Option<SimulationConfig>,
    #[serde(default)]
    pub input: Option<InputConfig>,
    #[serde(default)]
    pub scoring: ScoringConfig,
    #[serde(default)]
    pub pca: Option<PcaConfig>,
    #[serde(default)]
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub ri: Option<RiBlock>,
    #[serde(default)]
    pub report: ReportConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PanelConfig {
    pub n_snps: usize,
    pub maf_min: f64,
    pub effect_sd: f64,
}

impl Default for PanelConfig {
    fn default() -> Self {
        Self { n_snps: 200, maf_min: 0.05, effect_sd: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub panel: PanelConfig,
    pub cohort: CohortDesign,
    pub dgp: DgpParams,
    /// Unrelated individuals in the simulated discovery scan.
    pub discovery_size: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            panel: PanelConfig::default(),
            cohort: CohortDesign::default(),
            dgp: DgpParams::default(),
            discovery_size: 20_000,
        }
    }
}

/// External data. Relative paths resolve against the config file directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub cohort: PathBuf,
    #[serde(default)]
    pub genotypes: Option<PathBuf>,
    #[serde(default)]
    pub weights: Option<PathBuf>,
    #[serde(default)]
    pub weights_a: Option<PathBuf>,
    #[serde(default)]
    pub weights_b: Option<PathBuf>,
    /// Reject files with any invalid row (otherwise such rows are skipped).
    #[serde(default = "default_true")]
    pub strict: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMethod {
    /// Full-sample weights for `pgs` plus two half-sample weight sets.
    #[default]
    Split,
    /// Full-sample weights only.
    Full,
    /// Scores built from the true score plus noise of set reliability.
    Injected,
    /// Scores already present in the ingested cohort file.
    Precomputed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScoreScale {
    /// Mean zero, unit variance in the analysis sample.
    #[default]
    Standardized,
    /// Mean zero only; keeps the latent units of the true score.
    Latent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringConfig {
    pub method: ScoringMethod,
    /// Reliability of each injected score, in (0, 1].
    pub reliability: Option<f64>,
    pub scale: ScoreScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcaConfig {
    /// Principal components computed from the analysis genotypes; they
    /// replace any pc columns already present.
    pub n_components: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiBlock {
    /// Id of the model in `models` to test.
    pub model: String,
    pub term: String,
    #[serde(default = "default_permutations")]
    pub n_permutations: usize,
    #[serde(default)]
    pub scheme: PermutationScheme,
    #[serde(default = "default_histogram_bins")]
    pub histogram_bins: usize,
}

fn default_permutations() -> usize {
    10_000
}

fn default_histogram_bins() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub scatter_bins: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { scatter_bins: 200 }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config = Self::from_toml(&text)?;
        if let (Some(input), Some(dir)) = (config.input.as_mut(), path.parent()) {
            input.resolve(dir);
        }
        Ok(config)
    }

    /// Canonical serialization, hashed into the run manifest.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        match (&self.simulation, &self.input) {
            (None, None) => return err("either [simulation] or [input] is required".into()),
            (Some(_), Some(_)) => return err("[simulation] and [input] are mutually exclusive".into()),
            _ => {}
        }
        if let Some(sim) = &self.simulation {
            sim.dgp.validate()?;
            sim.cohort.family_size.mean()?;
            if sim.panel.n_snps == 0 {
                return err("simulation.panel.n_snps must be positive".into());
            }
            if sim.cohort.n_families == 0 {
                return err("simulation.cohort.n_families must be positive".into());
            }
        }
        let method = self.scoring.method;
        match (method, &self.simulation, &self.input) {
            (ScoringMethod::Injected, None, _) => return err("injected scoring needs simulated data".into()),
            (ScoringMethod::Precomputed, Some(_), _) => return err("precomputed scoring needs an [input] cohort".into()),
            (ScoringMethod::Split | ScoringMethod::Full, _, Some(input)) => {
                if input.genotypes.is_none() || input.weights.is_none() {
                    return err("scoring external data needs input.genotypes and input.weights".into());
                }
                if method == ScoringMethod::Split && (input.weights_a.is_none() || input.weights_b.is_none()) {
                    return err("split scoring of external data needs input.weights_a and input.weights_b".into());
                }
            }
            _ => {}
        }
        match (method, self.scoring.reliability) {
            (ScoringMethod::Injected, None) => return err("injected scoring needs scoring.reliability".into()),
            (ScoringMethod::Injected, Some(r)) if !(r > 0.0 && r <= 1.0) => {
                return err(format!("scoring.reliability must lie in (0, 1], got {r}"))
            }
            (m, Some(_)) if m != ScoringMethod::Injected => {
                return err("scoring.reliability only applies to injected scoring".into())
            }
            _ => {}
        }
        if let Some(pca) = &self.pca {
            if pca.n_components == 0 {
                return err("pca.n_components must be positive".into());
            }
            if self.input.as_ref().is_some_and(|i| i.genotypes.is_none()) {
                return err("pca needs input.genotypes".into());
            }
        }
        let mut ids = BTreeSet::new();
        for spec in &self.models {
            spec.validate()?;
            if spec.id.is_empty() || !spec.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return err(format!("model id `{}` must be non-empty and use only [A-Za-z0-9_-]", spec.id));
            }
            if !ids.insert(spec.id.as_str()) {
                return err(format!("duplicate model id `{}`", spec.id));
            }
            if spec.estimator == Estimator::Oriv && method == ScoringMethod::Full {
                return err(format!("model `{}` uses ORIV, which needs split or injected scoring", spec.id));
            }
        }
        if let Some(ri) = &self.ri {
            if !ids.contains(ri.model.as_str()) {
                return err(format!("ri.model `{}` is not among the configured models", ri.model));
            }
            if ri.n_permutations == 0 || ri.histogram_bins == 0 {
                return err("ri.n_permutations and ri.histogram_bins must be positive".into());
            }
        }
        if self.report.scatter_bins == 0 {
            return err("report.scatter_bins must be positive".into());
        }
        Ok(())
    }
}

impl InputConfig {
    fn resolve(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.cohort);
        for p in [&mut self.genotypes, &mut self.weights, &mut self.weights_a, &mut self.weights_b].into_iter().flatten() {
            fix(p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
seed = 7
[simulation]
discovery_size = 500
[simulation.panel]
n_snps = 20
[simulation.cohort]
n_families = 50
"#;

    #[test]
    fn parses_defaults() {
        let c = PipelineConfig::from_toml(BASE).unwrap();
        assert_eq!(c.scoring.method, ScoringMethod::Split);
        assert_eq!(c.report.scatter_bins, 200);
        assert_eq!(c.simulation.unwrap().dgp.alpha.score, 0.574);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{BASE}\n[scoring]\nmetod = \"full\"\n");
        assert!(matches!(PipelineConfig::from_toml(&text), Err(Error::Config(_))));
    }

    #[test]
    fn oriv_with_full_scoring_rejected() {
        let text = format!(
            "{BASE}\n[scoring]\nmethod = \"full\"\n[[models]]\nid = \"m\"\nscope = \"within_family\"\nestimator = \"oriv\"\n"
        );
        let e = PipelineConfig::from_toml(&text).unwrap_err();
        assert!(e.to_string().contains("ORIV"), "{e}");
    }

    #[test]
    fn ri_must_name_a_model() {
        let text = format!("{BASE}\n[ri]\nmodel = \"nope\"\nterm = \"firstborn\"\n");
        assert!(PipelineConfig::from_toml(&text).is_err());
    }

    #[test]
    fn canonical_round_trips() {
        let c = PipelineConfig::from_toml(BASE).unwrap();
        assert_eq!(PipelineConfig::from_toml(&c.canonical()).unwrap(), c);
    }
}
