//! End-to-end runs: split, debias the training side, synthesize, train on
//! the synthetic rows and score on the untouched real test split.
//!
//! Every random choice is derived from the per-seed value, so a run is a pure
//! function of its config and dataset bytes.

mod grid;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{augment_dataset, AugmentConfig, AugmentError, RealismDistance};
use crate::classifier::{train, ClassifierError, TrainConfig};
use crate::fairness::{evaluate, EoddrVariant, EvaluationOptions, FairnessError, FairnessReport, RatioPair};
use crate::kremoval::{KRemoval, RemovalError, ScoreStatistic};
use crate::synthesis::{SynthesisError, SynthesizerSpec};
use crate::table::{train_test_split, DataTable, Schema, TableError};

pub use grid::{
    expand_grid, render_csv, render_text, run_grid, summarize, CellOutcome, GridCell, GridConfig, GridRecord, GridSummary,
    MetricTriple, SummaryRow, GRID_RECORD_FILE, GRID_SUMMARY_FILE,
};

pub const RUN_RECORD_FILE: &str = "run_record.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Load,
    Split,
    Preprocess,
    Synthesize,
    Train,
    Evaluate,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Split => "split",
            Stage::Preprocess => "preprocess",
            Stage::Synthesize => "synthesize",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Write => "write",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Removal(#[from] RemovalError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Fairness(#[from] FairnessError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed{}: {source}", seed.map(|s| format!(" (seed {s})")).unwrap_or_default())]
pub struct PipelineError {
    pub stage: Stage,
    pub seed: Option<u64>,
    #[source]
    pub source: StageError,
}

impl PipelineError {
    fn at(stage: Stage, seed: Option<u64>) -> impl FnOnce(StageError) -> PipelineError {
        move |source| PipelineError { stage, seed, source }
    }

    fn invalid(message: impl Into<String>) -> PipelineError {
        PipelineError { stage: Stage::Config, seed: None, source: StageError::Invalid(message.into()) }
    }
}

/// Training-side preprocessing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Technique {
    Raw,
    Kremoval {
        k: f64,
        #[serde(default)]
        statistic: ScoreStatistic,
    },
    Augmentation {
        #[serde(default = "default_add_percent")]
        add_percent: f64,
        #[serde(default)]
        realism_distance: RealismDistance,
        #[serde(default = "default_clusters")]
        clusters_per_cell: usize,
    },
}

fn default_add_percent() -> f64 {
    100.0
}

fn default_clusters() -> usize {
    AugmentConfig::default().clusters_per_cell
}

impl Technique {
    pub fn label(&self) -> String {
        match self {
            Technique::Raw => "Raw".into(),
            Technique::Kremoval { k, .. } => format!("{}% removal", format_percent(*k)),
            Technique::Augmentation { add_percent, .. } if *add_percent == 100.0 => "Augmentation".into(),
            Technique::Augmentation { add_percent, .. } => format!("Augmentation {}%", format_percent(*add_percent)),
        }
    }

    pub fn is_raw(&self) -> bool {
        matches!(self, Technique::Raw)
    }

    fn validate(&self) -> Result<(), PipelineError> {
        match *self {
            Technique::Raw => Ok(()),
            Technique::Kremoval { k, .. } if !(0.0..=100.0).contains(&k) => {
                Err(PipelineError::invalid(format!("k must lie in [0, 100], got {k}")))
            }
            Technique::Augmentation { add_percent, .. } if !(0.0..=100.0).contains(&add_percent) => {
                Err(PipelineError::invalid(format!("add_percent must lie in [0, 100], got {add_percent}")))
            }
            Technique::Augmentation { clusters_per_cell: 0, .. } => Err(PipelineError::invalid("clusters_per_cell must be at least 1")),
            _ => Ok(()),
        }
    }
}

fn format_percent(p: f64) -> String {
    if p.fract() == 0.0 {
        format!("{p:.0}")
    } else {
        format!("{p}")
    }
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_min_support() -> usize {
    10
}

/// One pipeline run. Relative paths are resolved against the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub schema: PathBuf,
    pub technique: Technique,
    /// Protected column the technique operates on; defaults to the first
    /// evaluation attribute. Ignored for raw runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub debias_attribute: Option<String>,
    pub synthesizer: SynthesizerSpec,
    pub evaluation_attributes: Vec<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Synthetic rows to draw; defaults to the preprocessed training size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthesis_size: Option<usize>,
    #[serde(default)]
    pub classifier: TrainConfig,
    #[serde(default = "default_min_support")]
    pub min_support: usize,
    #[serde(default)]
    pub eoddr_variant: EoddrVariant,
    /// Also write the split, preprocessed and synthetic tables per seed.
    #[serde(default)]
    pub write_tables: bool,
    pub output_dir: PathBuf,
}

pub(crate) fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let bytes = std::fs::read(path)
        .map_err(|source| StageError::Io { path: path.to_path_buf(), source })
        .map_err(PipelineError::at(Stage::Config, None))?;
    serde_json::from_slice(&bytes).map_err(|e| PipelineError::at(Stage::Config, None)(e.into()))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::at(Stage::Config, None)(e.into()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let mut config: RunConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.dataset = resolve(base, &config.dataset);
        config.schema = resolve(base, &config.schema);
        config.output_dir = resolve(base, &config.output_dir);
        Ok(config)
    }

    pub fn validate(&self, schema: &Schema) -> Result<(), PipelineError> {
        self.technique.validate()?;
        self.synthesizer.validate().map_err(|e| PipelineError::at(Stage::Config, None)(e.into()))?;
        if self.evaluation_attributes.is_empty() {
            return Err(PipelineError::invalid("evaluation_attributes must not be empty"));
        }
        if self.seeds.is_empty() {
            return Err(PipelineError::invalid("seeds must not be empty"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(PipelineError::invalid(format!("test_fraction must lie in (0, 1), got {}", self.test_fraction)));
        }
        if self.synthesis_size == Some(0) {
            return Err(PipelineError::invalid("synthesis_size must be at least 1"));
        }
        let mut attributes: Vec<&String> = self.evaluation_attributes.iter().chain(&self.debias_attribute).collect();
        attributes.sort();
        attributes.dedup();
        for attribute in attributes {
            schema.protected_index(attribute).map_err(|e| PipelineError::at(Stage::Config, None)(e.into()))?;
        }
        Ok(())
    }

    /// Protected column the technique runs on, if any.
    pub fn effective_debias_attribute(&self) -> Option<&str> {
        if self.technique.is_raw() {
            return None;
        }
        self.debias_attribute.as_deref().or(self.evaluation_attributes.first().map(String::as_str))
    }

    pub fn fingerprint(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub train_rows: usize,
    pub test_rows: usize,
    pub test_split_sha256: String,
    pub preprocessed_rows: usize,
    pub removed_ids: Vec<usize>,
    pub augmented_count: usize,
    pub synthetic_rows: usize,
    pub synthesizer_fingerprint: String,
    pub report: FairnessReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub bca: f64,
    pub per_attribute: BTreeMap<String, RatioPair>,
    pub intersectional: RatioPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_fingerprint: String,
    pub config: RunConfig,
    pub dataset_sha256: String,
    pub rows_dropped_missing: usize,
    pub technique: String,
    pub synthesizer: String,
    pub debias_attribute: Option<String>,
    pub seeds: Vec<SeedRecord>,
    /// Arithmetic mean over `seeds`.
    pub aggregate: Aggregate,
}

impl RunRecord {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, PipelineError> {
        read_json(&dir.as_ref().join(RUN_RECORD_FILE))
    }
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len() as f64;
    values.sum::<f64>() / n
}

fn mean_pair<'a>(pairs: impl ExactSizeIterator<Item = &'a RatioPair> + Clone) -> RatioPair {
    RatioPair { dpr: mean(pairs.clone().map(|p| p.dpr)), eoddr: mean(pairs.map(|p| p.eoddr)) }
}

pub fn aggregate(seeds: &[SeedRecord]) -> Aggregate {
    let attributes = seeds[0].report.per_attribute.keys().cloned();
    Aggregate {
        bca: mean(seeds.iter().map(|s| s.report.bca)),
        per_attribute: attributes.map(|a| (a.clone(), mean_pair(seeds.iter().map(|s| &s.report.per_attribute[&a])))).collect(),
        intersectional: mean_pair(seeds.iter().map(|s| &s.report.intersectional)),
    }
}

/// Independent stream for one stage of one seed.
fn stage_seed(seed: u64, stage: u64) -> u64 {
    let mut z = seed ^ stage.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Preprocessed {
    table: DataTable,
    removed_ids: Vec<usize>,
    augmented_count: usize,
}

fn preprocess(config: &RunConfig, train: &DataTable, seed: u64) -> Result<Preprocessed, StageError> {
    let attribute = config.effective_debias_attribute();
    match (config.technique, attribute) {
        (Technique::Raw, _) => Ok(Preprocessed { table: train.clone(), removed_ids: Vec::new(), augmented_count: 0 }),
        (Technique::Kremoval { k, statistic }, Some(attribute)) => {
            let outcome = KRemoval { k_percent: k, statistic }.apply(train, attribute)?;
            Ok(Preprocessed { table: outcome.kept, removed_ids: outcome.removed_ids, augmented_count: 0 })
        }
        (Technique::Augmentation { add_percent, realism_distance, clusters_per_cell }, Some(attribute)) => {
            let augment_config = AugmentConfig {
                add_percent,
                realism_distance,
                clusters_per_cell,
                seed: stage_seed(seed, 1),
                ..AugmentConfig::default()
            };
            let outcome = augment_dataset(train, attribute, &augment_config)?;
            Ok(Preprocessed { table: outcome.table, removed_ids: Vec::new(), augmented_count: outcome.added })
        }
        (_, None) => Err(StageError::Invalid("technique needs a debias attribute".into())),
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), StageError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| StageError::Io { path: parent.to_path_buf(), source })?;
    }
    std::fs::write(path, bytes).map_err(|source| StageError::Io { path: path.to_path_buf(), source })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), StageError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

fn run_seed(config: &RunConfig, data: &DataTable, seed: u64) -> Result<SeedRecord, PipelineError> {
    let at = |stage| PipelineError::at(stage, Some(seed));
    let clock = std::time::Instant::now();
    let lap = |stage: Stage| log::debug!("seed {seed}: {stage} done at {:.2?}", clock.elapsed());
    let dir = config.output_dir.join(format!("seed-{seed}"));

    let (train_split, test) = train_test_split(data, config.test_fraction, seed).map_err(|e| at(Stage::Split)(e.into()))?;
    let test_bytes = test.to_csv_bytes();
    log::info!("seed {seed}: {} train / {} test rows", train_split.len(), test.len());

    let pre = preprocess(config, &train_split, seed).map_err(at(Stage::Preprocess))?;
    log::info!("seed {seed}: {} rows after {}", pre.table.len(), config.technique.label());
    lap(Stage::Preprocess);

    let n = config.synthesis_size.unwrap_or(pre.table.len());
    let synthetic = config
        .synthesizer
        .synthesize(&pre.table, n, stage_seed(seed, 2), &dir.join("synthesizer"))
        .map_err(|e| at(Stage::Synthesize)(e.into()))?;
    lap(Stage::Synthesize);

    let model = train(&synthetic.table, &config.classifier).map_err(|e| at(Stage::Train)(e.into()))?;
    lap(Stage::Train);
    let predictions = model.predict(&test).map_err(|e| at(Stage::Evaluate)(e.into()))?;
    let y_pred: Vec<bool> = predictions.iter().map(|p| p.favourable).collect();
    let options = EvaluationOptions { min_support: config.min_support, eoddr_variant: config.eoddr_variant };
    let report = evaluate(&test.favourable_labels(), &y_pred, &test, &config.evaluation_attributes, &options)
        .map_err(|e| at(Stage::Evaluate)(e.into()))?;

    let record = SeedRecord {
        seed,
        train_rows: train_split.len(),
        test_rows: test.len(),
        test_split_sha256: sha256_hex(&test_bytes),
        preprocessed_rows: pre.table.len(),
        removed_ids: pre.removed_ids,
        augmented_count: pre.augmented_count,
        synthetic_rows: synthetic.table.len(),
        synthesizer_fingerprint: synthetic.model_fingerprint,
        report,
    };

    let write = || -> Result<(), StageError> {
        write_json(&dir.join("report.json"), &record.report)?;
        if config.write_tables {
            write_bytes(&dir.join("train.csv"), &train_split.to_csv_bytes())?;
            write_bytes(&dir.join("test.csv"), &test_bytes)?;
            write_bytes(&dir.join("preprocessed.csv"), &pre.table.to_csv_bytes())?;
            write_bytes(&dir.join("synthetic.csv"), &synthetic.table.to_csv_bytes())?;
        }
        Ok(())
    };
    write().map_err(at(Stage::Write))?;
    Ok(record)
}

/// Loads the dataset and runs every seed. Seeds run in parallel; results are
/// ordered as configured.
pub fn run_pipeline(config: &RunConfig) -> Result<RunRecord, PipelineError> {
    let schema = Schema::load(&config.schema).map_err(|e| PipelineError::at(Stage::Load, None)(e.into()))?;
    config.validate(&schema)?;
    let bytes = std::fs::read(&config.dataset)
        .map_err(|source| PipelineError::at(Stage::Load, None)(StageError::Io { path: config.dataset.clone(), source }))?;
    let (data, ingest) =
        crate::table::read_csv(bytes.as_slice(), &schema).map_err(|e| PipelineError::at(Stage::Load, None)(e.into()))?;
    if ingest.rows_dropped_missing > 0 {
        log::warn!("{}: dropped {} rows with missing values", config.dataset.display(), ingest.rows_dropped_missing);
    }

    let seeds = config.seeds.par_iter().map(|&seed| run_seed(config, &data, seed)).collect::<Result<Vec<_>, _>>()?;
    let record = RunRecord {
        config_fingerprint: config.fingerprint(),
        config: config.clone(),
        dataset_sha256: sha256_hex(&bytes),
        rows_dropped_missing: ingest.rows_dropped_missing,
        technique: config.technique.label(),
        synthesizer: config.synthesizer.display_name(),
        debias_attribute: config.effective_debias_attribute().map(str::to_owned),
        aggregate: aggregate(&seeds),
        seeds,
    };
    write_json(&config.output_dir.join(RUN_RECORD_FILE), &record).map_err(PipelineError::at(Stage::Write, None))?;
    Ok(record)
}
