//! Pipeline configuration, read from a single TOML file. Unknown keys are
//! rejected; omitted sections take their defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cohort::{BalanceParams, LosMatchParams, SplitFractions};
use crate::ehr::ReferenceRange;
use crate::featurize::{FeatureCatalog, ReferenceRanges, WindowPolicy};
use crate::labeling::{LabelParams, ModelTarget};
use crate::learner::HyperparameterGrid;
use crate::synthgen::ScenarioConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// Defaults to the catalog of the synthetic scenario.
    pub catalog: Option<FeatureCatalog>,
    /// Defaults to the synthetic scenario's ranges.
    pub reference_ranges: Option<Vec<ReferenceRange>>,
    pub windows: WindowPolicy,
    pub gap_hours: i64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { catalog: None, reference_ranges: None, windows: WindowPolicy::default(), gap_hours: 24 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortConfig {
    pub los_match: LosMatchParams,
    pub balance: BalanceParams,
    pub splits: SplitFractions,
    pub n_repeats: usize,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            los_match: LosMatchParams::default(),
            balance: BalanceParams::default(),
            splits: SplitFractions::default(),
            n_repeats: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingnessStrategy {
    GaussianImpute,
    BalanceMissingness,
}

impl MissingnessStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            MissingnessStrategy::GaussianImpute => "gaussian_impute",
            MissingnessStrategy::BalanceMissingness => "balance_missingness",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub targets: Vec<ModelTarget>,
    pub strategies: Vec<MissingnessStrategy>,
    /// Targets whose training cohorts are LOS-matched.
    pub los_match_targets: Vec<ModelTarget>,
    /// Also balance anchor missingness in the test set.
    pub balance_test_set: bool,
    pub min_successful_splits: usize,
    pub ci_z: f64,
    /// Evaluate ventilation-based routing between the two models.
    pub routing: bool,
    /// Test samples per split used for the attribution summary.
    pub attribution_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            targets: vec![ModelTarget::Iri, ModelTarget::Vap],
            strategies: vec![MissingnessStrategy::GaussianImpute, MissingnessStrategy::BalanceMissingness],
            los_match_targets: vec![ModelTarget::Vap],
            balance_test_set: false,
            min_successful_splits: 3,
            ci_z: 1.96,
            routing: true,
            attribution_samples: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Directory with input tables. When unset, `generate` writes the
    /// synthetic scenario to `<out>/data` and later stages read it there.
    pub data_dir: Option<PathBuf>,
    pub scenario: ScenarioConfig,
    pub labeling: LabelParams,
    pub features: FeatureConfig,
    pub cohort: CohortConfig,
    pub grid: HyperparameterGrid,
    pub experiment: ExperimentConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            data_dir: None,
            scenario: ScenarioConfig::default(),
            labeling: LabelParams::default(),
            features: FeatureConfig::default(),
            cohort: CohortConfig::default(),
            grid: HyperparameterGrid::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(s).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_toml_str(&s).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn catalog(&self) -> FeatureCatalog {
        self.features.catalog.clone().unwrap_or_else(|| self.scenario.feature_catalog())
    }

    pub fn reference_ranges(&self) -> Result<ReferenceRanges> {
        ReferenceRanges::new(self.features.reference_ranges.clone().unwrap_or_else(|| self.scenario.reference_ranges()))
    }

    /// Full schema check, run before any stage.
    pub fn check(&self) -> Result<()> {
        if self.data_dir.is_none() {
            self.scenario.check()?;
        }
        let catalog = self.catalog();
        catalog.check()?;
        if catalog.is_empty() {
            return Err(Error::InvalidConfig("feature catalog is empty".into()));
        }
        self.reference_ranges()?.check_catalog(&catalog)?;
        self.features.windows.check()?;
        if self.features.gap_hours < 0 {
            return Err(Error::InvalidConfig("gap_hours must be non-negative".into()));
        }
        if catalog.index_of(&self.cohort.balance.anchor_feature).is_none() {
            return Err(Error::UnknownFeature(self.cohort.balance.anchor_feature.clone()));
        }
        if !(self.cohort.balance.epsilon >= 0.0) {
            return Err(Error::InvalidConfig("balance epsilon must be non-negative".into()));
        }
        if self.cohort.n_repeats == 0 {
            return Err(Error::InvalidConfig("n_repeats must be positive".into()));
        }
        self.grid.check()?;
        let e = &self.experiment;
        if e.targets.is_empty() || e.strategies.is_empty() {
            return Err(Error::InvalidConfig("experiment needs at least one target and one strategy".into()));
        }
        if e.min_successful_splits == 0 || !(e.ci_z > 0.0) {
            return Err(Error::InvalidConfig("min_successful_splits and ci_z must be positive".into()));
        }
        Ok(())
    }
}
