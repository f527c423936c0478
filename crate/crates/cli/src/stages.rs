//! Run directory layout, stage caching and the stage bodies.
//!
//! ```text
//! <out>/config.toml   resolved configuration
//! <out>/run.json      seeds, config hash and every stage's input/output hashes
//! <out>/data/         generated tables (unless `data_dir` points elsewhere)
//! <out>/labels/  <out>/cohort/  <out>/features/  <out>/models/  <out>/report/
//! ```
//!
//! Each stage directory holds a `stage.json` with the hash of the stage's
//! inputs (its slice of the config plus upstream output hashes) and the hash
//! of every file it wrote. A stage whose inputs and outputs still match is
//! skipped.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use haicmp_core::cohort::{CohortSplit, ManifestRow};
use haicmp_core::config::PipelineConfig;
use haicmp_core::ehr::{validate_dataset, ValidatedDataset};
use haicmp_core::evaluate::{label_distribution_report, svg};
use haicmp_core::experiment::{self, CohortArtifacts, EvalReport, FeatureSets, TrainedPlans, TrainedSplit};
use haicmp_core::featurize::FeaturizeSummary;
use haicmp_core::io;
use haicmp_core::labeling::{label_cohort, LabelRecord, ModelTarget};
use haicmp_core::learner::{CellResult, Hyperparameters};
use haicmp_core::rng::sha256_hex;
use haicmp_core::synthgen::generate_population;
use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;

const TABLES: [&str; 5] = [io::STAYS_TABLE, io::CLINICAL_TABLE, io::MEDICATIONS_TABLE, io::CULTURES_TABLE, io::DIAGNOSES_TABLE];

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("stage `{stage}` needs the output of `{needs}`: run stage {needs} first")]
    MissingUpstream { stage: &'static str, needs: &'static str },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: haicmp_core::Error,
    },

    #[error(transparent)]
    Core(#[from] haicmp_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "invalid_config",
            CliError::MissingUpstream { .. } => "missing_upstream",
            CliError::Stage { .. } => "stage_failed",
            CliError::Core(_) => "pipeline",
            CliError::Io(_) => "io",
        }
    }

    pub fn stage(&self) -> Option<&'static str> {
        match self {
            CliError::MissingUpstream { stage, .. } | CliError::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingUpstream { .. } => 3,
            _ => 1,
        }
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Generate,
    Label,
    Cohort,
    Featurize,
    Train,
    Evaluate,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Label => "label",
            Stage::Cohort => "cohort",
            Stage::Featurize => "featurize",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
        }
    }

    fn dir(self) -> &'static str {
        match self {
            Stage::Generate => "data",
            Stage::Label => "labels",
            Stage::Cohort => "cohort",
            Stage::Featurize => "features",
            Stage::Train => "models",
            Stage::Evaluate => "report",
        }
    }

    fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Generate => &[],
            Stage::Label => &[Stage::Generate],
            Stage::Cohort => &[Stage::Generate, Stage::Label],
            Stage::Featurize => &[Stage::Generate, Stage::Label],
            Stage::Train => &[Stage::Generate, Stage::Cohort, Stage::Featurize],
            Stage::Evaluate => &[Stage::Generate, Stage::Label, Stage::Cohort, Stage::Featurize, Stage::Train],
        }
    }
}

/// What a completed stage saw and wrote; paths are relative to the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub input_sha256: String,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct RunMetadata {
    format: &'static str,
    tool_version: &'static str,
    seed: u64,
    scenario_seed: u64,
    config_file: &'static str,
    config_sha256: String,
    data_dir: String,
    stages: BTreeMap<&'static str, StageRecord>,
}

#[derive(Serialize, Deserialize)]
struct CommonRow {
    stay_id: String,
}

/// One row of the selection log written next to the models.
#[derive(Serialize)]
struct SelectionLog<'a> {
    split_id: usize,
    error: Option<&'a str>,
    best: Option<&'a Hyperparameters>,
    validation_auc: Option<f64>,
    cells: &'a [CellResult],
}

pub struct Run {
    root: PathBuf,
    cfg: PipelineConfig,
}

fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

fn write_compact_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_vec(value).map_err(haicmp_core::Error::from)?)?;
    Ok(())
}

fn plan_dir(key: &str) -> String {
    format!("models/{key}")
}

impl Run {
    pub fn open(root: &Path, cfg: PipelineConfig) -> Result<Self> {
        fs::create_dir_all(root)?;
        let run = Run { root: root.to_path_buf(), cfg };
        fs::write(run.root.join("config.toml"), run.cfg.to_toml_string()?)?;
        run.write_metadata()?;
        Ok(run)
    }

    pub fn external_data(&self) -> bool {
        self.cfg.data_dir.is_some()
    }

    fn data_dir(&self) -> PathBuf {
        self.cfg.data_dir.clone().unwrap_or_else(|| self.root.join(Stage::Generate.dir()))
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn record_path(&self, s: Stage) -> PathBuf {
        self.root.join(s.dir()).join("stage.json")
    }

    /// The stage's record if every output it lists is still intact.
    fn verified_record(&self, s: Stage) -> Option<StageRecord> {
        let text = fs::read_to_string(self.record_path(s)).ok()?;
        let record: StageRecord = serde_json::from_str(&text).ok()?;
        let intact = record.outputs.iter().all(|(rel, h)| file_sha256(&self.path(rel)).is_ok_and(|x| &x == h));
        intact.then_some(record)
    }

    /// Hash standing for the external input tables.
    fn external_data_hash(&self) -> Result<String> {
        let dir = self.data_dir();
        let mut hashes = BTreeMap::new();
        for t in TABLES {
            if let Some(p) = io::table_path(&dir, t) {
                hashes.insert(p.file_name().unwrap_or_default().to_string_lossy().into_owned(), file_sha256(&p)?);
            }
        }
        if !hashes.keys().any(|k| k.starts_with(io::STAYS_TABLE)) {
            return Err(CliError::Config(format!("data_dir {} has no stays table", dir.display())));
        }
        Ok(sha256_hex(&serde_json::to_vec(&hashes).expect("hashes serialize")))
    }

    fn config_slice(&self, s: Stage) -> serde_json::Value {
        let c = &self.cfg;
        match s {
            Stage::Generate => json!(c.scenario),
            Stage::Label => json!(c.labeling),
            Stage::Cohort => json!({ "seed": c.seed, "cohort": c.cohort, "targets": c.experiment.targets }),
            Stage::Featurize => json!({
                "seed": c.seed,
                "catalog": c.catalog(),
                "windows": c.features.windows,
                "gap_hours": c.features.gap_hours,
                "hai_clock_hours": c.labeling.hai_clock_hours,
                "targets": c.experiment.targets,
            }),
            Stage::Train | Stage::Evaluate => json!(c),
        }
    }

    fn input_hash(&self, s: Stage) -> Result<String> {
        let mut upstream = Vec::new();
        for &u in s.upstream() {
            if u == Stage::Generate && self.external_data() {
                upstream.push(self.external_data_hash()?);
                continue;
            }
            let record = self.verified_record(u).ok_or(CliError::MissingUpstream { stage: s.name(), needs: u.name() })?;
            upstream.push(record.input_sha256.clone());
            upstream.push(sha256_hex(&serde_json::to_vec(&record.outputs).expect("hashes serialize")));
        }
        let input = json!({ "stage": s.name(), "config": self.config_slice(s), "upstream": upstream });
        Ok(sha256_hex(&serde_json::to_vec(&input).expect("input serializes")))
    }

    /// Runs a stage unless its recorded inputs and outputs are unchanged.
    pub fn stage(&self, s: Stage) -> Result<()> {
        if s == Stage::Generate && self.external_data() {
            return Err(CliError::Config("data_dir is set, so there is nothing to generate".into()));
        }
        let input = self.input_hash(s)?;
        if self.verified_record(s).is_some_and(|r| r.input_sha256 == input) {
            info!("{}: cached (inputs unchanged)", s.name());
            return Ok(());
        }
        info!("{}: running", s.name());
        let dir = self.root.join(s.dir());
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        let outputs = self.execute(s).map_err(|e| match e {
            CliError::Core(source) => CliError::Stage { stage: s.name(), source },
            other => other,
        })?;
        let mut hashes = BTreeMap::new();
        for rel in outputs {
            hashes.insert(rel.clone(), file_sha256(&self.path(&rel))?);
        }
        let record = StageRecord { stage: s.name().into(), input_sha256: input, outputs: hashes };
        fs::write(self.record_path(s), serde_json::to_string_pretty(&record).expect("record serializes") + "\n")?;
        self.write_metadata()?;
        info!("{}: done", s.name());
        Ok(())
    }

    fn write_metadata(&self) -> Result<()> {
        let stages = [Stage::Generate, Stage::Label, Stage::Cohort, Stage::Featurize, Stage::Train, Stage::Evaluate]
            .into_iter()
            .filter_map(|s| self.verified_record(s).map(|r| (s.name(), r)))
            .collect();
        let meta = RunMetadata {
            format: "haicmp-run/1",
            tool_version: env!("CARGO_PKG_VERSION"),
            seed: self.cfg.seed,
            scenario_seed: self.cfg.scenario.rng_seed,
            config_file: "config.toml",
            config_sha256: sha256_hex(self.cfg.to_toml_string()?.as_bytes()),
            data_dir: self.data_dir().display().to_string(),
            stages,
        };
        fs::write(self.root.join("run.json"), serde_json::to_string_pretty(&meta).expect("metadata serializes") + "\n")?;
        Ok(())
    }

    fn execute(&self, s: Stage) -> Result<Vec<String>> {
        match s {
            Stage::Generate => self.generate(),
            Stage::Label => self.label(),
            Stage::Cohort => self.cohort(),
            Stage::Featurize => self.featurize(),
            Stage::Train => self.train(),
            Stage::Evaluate => self.evaluate(),
        }
    }

    fn load_dataset(&self) -> Result<ValidatedDataset> {
        let ds = validate_dataset(io::read_dataset(&self.data_dir())?)?;
        let rejected = ds.rejections().total();
        if rejected > 0 {
            warn!("{rejected} input records rejected during validation");
        }
        Ok(ds)
    }

    fn generate(&self) -> Result<Vec<String>> {
        let (ds, truth) = generate_population(&self.cfg.scenario)?;
        io::write_dataset(&self.data_dir(), &ds)?;
        io::write_json(&self.path("data/truth.json"), &truth)?;
        let mut out: Vec<String> = TABLES.iter().map(|t| format!("data/{t}.csv")).collect();
        out.push("data/truth.json".into());
        info!("generated {} stays", ds.len());
        Ok(out)
    }

    fn read_labels(&self) -> Result<Vec<LabelRecord>> {
        Ok(io::read_csv(&self.path("labels/labels.csv"))?)
    }

    fn label(&self) -> Result<Vec<String>> {
        let ds = self.load_dataset()?;
        let labels = label_cohort(&ds, &self.cfg.labeling);
        io::write_csv(&self.path("labels/labels.csv"), &labels)?;
        io::write_json(&self.path("labels/label_distribution.json"), &label_distribution_report(&labels)?)?;
        Ok(vec!["labels/labels.csv".into(), "labels/label_distribution.json".into()])
    }

    fn splits_file(t: ModelTarget) -> String {
        format!("cohort/splits_{t}.csv")
    }

    fn cohort(&self) -> Result<Vec<String>> {
        let ds = self.load_dataset()?;
        let c = experiment::cohort_stage(&self.cfg, &ds, &self.read_labels()?)?;
        let common: Vec<CommonRow> = c.common.iter().map(|s| CommonRow { stay_id: s.clone() }).collect();
        io::write_csv(&self.path("cohort/common.csv"), &common)?;
        let mut out = vec!["cohort/common.csv".to_string()];
        for (t, splits) in &c.splits {
            let rows: Vec<ManifestRow> = splits.iter().flat_map(CohortSplit::manifest_rows).collect();
            io::write_csv(&self.path(&Self::splits_file(*t)), &rows)?;
            out.push(Self::splits_file(*t));
        }
        info!("common cohort: {} stays", c.common.len());
        Ok(out)
    }

    fn read_cohorts(&self) -> Result<CohortArtifacts> {
        let common: Vec<CommonRow> = io::read_csv(&self.path("cohort/common.csv"))?;
        let mut splits = BTreeMap::new();
        for &t in &self.cfg.experiment.targets {
            let rows: Vec<ManifestRow> = io::read_csv(&self.path(&Self::splits_file(t)))?;
            splits.insert(t, CohortSplit::from_manifest_rows(&rows));
        }
        Ok(CohortArtifacts { common: common.into_iter().map(|r| r.stay_id).collect(), splits })
    }

    fn feature_files(t: ModelTarget) -> (String, String) {
        (format!("features/{t}_values.csv"), format!("features/{t}_mask.csv"))
    }

    fn featurize(&self) -> Result<Vec<String>> {
        let ds = self.load_dataset()?;
        let labels = self.read_labels()?;
        let names = self.cfg.catalog().names();
        let mut summaries = BTreeMap::new();
        let mut out = Vec::new();
        for &t in &self.cfg.experiment.targets {
            let (samples, summary) = experiment::featurize_stage(&self.cfg, &ds, &labels, t)?;
            let (v, m) = Self::feature_files(t);
            io::write_features(&self.path(&v), &self.path(&m), &names, &samples)?;
            info!("{t}: {} samples, {} stays without a prediction time", summary.sampled, summary.skipped);
            summaries.insert(t, summary);
            out.extend([v, m]);
        }
        io::write_json(&self.path("features/summary.json"), &summaries)?;
        out.push("features/summary.json".into());
        Ok(out)
    }

    fn read_features(&self) -> Result<FeatureSets> {
        let summaries: BTreeMap<ModelTarget, FeaturizeSummary> = io::read_json(&self.path("features/summary.json"))?;
        let names = self.cfg.catalog().names();
        let mut sets = FeatureSets::new();
        for &t in &self.cfg.experiment.targets {
            let (v, m) = Self::feature_files(t);
            let (file_names, samples) = io::read_features(&self.path(&v), &self.path(&m))?;
            if file_names != names {
                return Err(CliError::Config(format!("{v} columns differ from the configured feature catalog")));
            }
            sets.insert(t, Ok((samples, summaries.get(&t).cloned().unwrap_or_default())));
        }
        Ok(sets)
    }

    fn train(&self) -> Result<Vec<String>> {
        let ds = self.load_dataset()?;
        let cohorts = Ok(self.read_cohorts()?);
        let features = self.read_features()?;
        let trained = experiment::train_stage(&self.cfg, &cohorts, &features, &experiment::los_hours_of(&ds));
        let mut out = Vec::new();
        for (key, result) in &trained {
            let dir = plan_dir(key);
            match result {
                Err(msg) => {
                    let p = format!("{dir}/error.txt");
                    fs::create_dir_all(self.path(&dir))?;
                    fs::write(self.path(&p), msg)?;
                    out.push(p);
                }
                Ok(splits) => {
                    let mut log = Vec::new();
                    for t in splits {
                        let p = format!("{dir}/split_{}.json", t.split_id);
                        write_compact_json(&self.path(&p), t)?;
                        out.push(p);
                        log.push(SelectionLog {
                            split_id: t.split_id,
                            error: t.error.as_deref(),
                            best: t.selection.as_ref().map(|s| &s.best),
                            validation_auc: t.selection.as_ref().map(|s| s.validation_auc),
                            cells: t.selection.as_ref().map_or(&[], |s| &s.cells),
                        });
                    }
                    let p = format!("{dir}/selection_log.json");
                    io::write_json(&self.path(&p), &log)?;
                    out.push(p);
                }
            }
        }
        Ok(out)
    }

    fn read_trained(&self, cohorts: &CohortArtifacts) -> Result<TrainedPlans> {
        let mut trained = TrainedPlans::new();
        for plan in experiment::plans(&self.cfg) {
            let dir = plan_dir(&plan.key());
            let error = self.path(&format!("{dir}/error.txt"));
            let entry = if error.exists() {
                Err(fs::read_to_string(error)?)
            } else {
                let mut splits = Vec::new();
                for s in cohorts.splits.get(&plan.model_target).map(Vec::as_slice).unwrap_or_default() {
                    let text = fs::read_to_string(self.path(&format!("{dir}/split_{}.json", s.split_id)))?;
                    let t: TrainedSplit = serde_json::from_str(&text).map_err(haicmp_core::Error::from)?;
                    splits.push(t);
                }
                Ok(splits)
            };
            trained.insert(plan.key(), entry);
        }
        Ok(trained)
    }

    fn evaluate(&self) -> Result<Vec<String>> {
        let ds = self.load_dataset()?;
        let labels = self.read_labels()?;
        let cohorts = self.read_cohorts()?;
        let features = self.read_features()?;
        let trained = self.read_trained(&cohorts)?;
        let output = experiment::evaluate_stage(&self.cfg, &ds, labels, Ok(cohorts), &features, &trained)?;
        let report = &output.report;
        let mut out = Vec::new();
        let mut put = |rel: String, text: String| -> Result<()> {
            fs::write(self.path(&rel), text)?;
            out.push(rel);
            Ok(())
        };
        put("report/report.json".into(), report.to_json()?)?;
        put("report/summary.txt".into(), report.summary_table())?;
        for svg_file in plots(report) {
            put(svg_file.0, svg_file.1)?;
        }
        Ok(out)
    }

    pub fn summary_table(&self) -> Result<String> {
        fs::read_to_string(self.path("report/summary.txt"))
            .map_err(|_| CliError::MissingUpstream { stage: "summary", needs: Stage::Evaluate.name() })
    }
}

/// Averaged ROC per target, LOS histograms per target and pooled confusion
/// heatmaps per plan, as `(relative path, svg)`.
fn plots(report: &EvalReport) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for target in [ModelTarget::Iri, ModelTarget::Vap] {
        let series: Vec<(&str, _)> = report
            .plans
            .iter()
            .filter(|p| p.plan.model_target == target)
            .filter_map(|p| p.averaged_roc.get(&target).map(|r| (p.plan.missingness_strategy.as_str(), r)))
            .collect();
        if !series.is_empty() {
            let title = format!("{} model, mean test ROC", target.as_str().to_uppercase());
            out.push((format!("report/roc_{target}.svg"), svg::averaged_roc_svg(&series, &title)));
        }
        if let Some(cmp) = report.dataset.los.get(&target) {
            let title = format!("{} cohort LOS by label", target.as_str().to_uppercase());
            out.push((format!("report/los_{target}.svg"), svg::los_histogram_svg(cmp, &title)));
        }
    }
    for p in &report.plans {
        if let Some(c) = &p.pooled_confusion {
            out.push((format!("report/confusion_{}.svg", p.plan.key()), svg::confusion_svg(c, &p.plan.key())));
        }
    }
    out
}
