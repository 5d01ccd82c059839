//! Experiment grid: synthesizers × techniques × debias attributes, with a
//! summary laid out one row per (synthesizer, technique) and one metric block
//! per protected attribute plus an intersectional block.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    default_min_support, default_seeds, default_test_fraction, read_json, resolve, run_pipeline, write_json, PipelineError,
    RunConfig, RunRecord, Stage, Technique,
};
use crate::classifier::TrainConfig;
use crate::fairness::EoddrVariant;
use crate::synthesis::SynthesizerSpec;

pub const GRID_RECORD_FILE: &str = "grid.json";
pub const GRID_SUMMARY_FILE: &str = "summary.txt";

/// A grid over one dataset. Raw runs once per synthesizer; every other
/// technique runs once per evaluation attribute, debiasing on that attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dataset: PathBuf,
    pub schema: PathBuf,
    pub synthesizers: Vec<SynthesizerSpec>,
    pub techniques: Vec<Technique>,
    pub evaluation_attributes: Vec<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthesis_size: Option<usize>,
    #[serde(default)]
    pub classifier: TrainConfig,
    #[serde(default = "default_min_support")]
    pub min_support: usize,
    #[serde(default)]
    pub eoddr_variant: EoddrVariant,
    #[serde(default)]
    pub write_tables: bool,
    pub output_dir: PathBuf,
}

impl GridConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::at(Stage::Config, None)(e.into()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let mut config: GridConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.dataset = resolve(base, &config.dataset);
        config.schema = resolve(base, &config.schema);
        config.output_dir = resolve(base, &config.output_dir);
        Ok(config)
    }
}

fn slug(text: &str) -> String {
    let mut out = String::new();
    for c in text.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if c == '.' {
            out.push('_');
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_string()
}

pub fn expand_grid(grid: &GridConfig) -> Vec<RunConfig> {
    let mut configs = Vec::new();
    for synthesizer in &grid.synthesizers {
        for technique in &grid.techniques {
            let attributes: Vec<Option<&String>> =
                if technique.is_raw() { vec![None] } else { grid.evaluation_attributes.iter().map(Some).collect() };
            for attribute in attributes {
                let mut dir = grid.output_dir.join(slug(&synthesizer.display_name())).join(slug(&technique.label()));
                if let Some(attribute) = attribute {
                    dir = dir.join(slug(attribute));
                }
                configs.push(RunConfig {
                    dataset: grid.dataset.clone(),
                    schema: grid.schema.clone(),
                    technique: *technique,
                    debias_attribute: attribute.cloned(),
                    synthesizer: synthesizer.clone(),
                    evaluation_attributes: grid.evaluation_attributes.clone(),
                    seeds: grid.seeds.clone(),
                    test_fraction: grid.test_fraction,
                    synthesis_size: grid.synthesis_size,
                    classifier: grid.classifier,
                    min_support: grid.min_support,
                    eoddr_variant: grid.eoddr_variant,
                    write_tables: grid.write_tables,
                    output_dir: dir,
                });
            }
        }
    }
    configs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Completed { record: Box<RunRecord> },
    Failed { stage: Stage, error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub synthesizer: String,
    pub technique: String,
    pub debias_attribute: Option<String>,
    pub output_dir: PathBuf,
    #[serde(flatten)]
    pub outcome: CellOutcome,
}

impl GridCell {
    pub fn record(&self) -> Option<&RunRecord> {
        match &self.outcome {
            CellOutcome::Completed { record } => Some(record),
            CellOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub bca: f64,
    pub dpr: f64,
    pub eoddr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub synthesizer: String,
    pub technique: String,
    /// One entry per attribute, in `GridSummary::attributes` order; `None`
    /// marks a failed cell.
    pub blocks: Vec<Option<MetricTriple>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intersectional: Option<MetricTriple>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub attributes: Vec<String>,
    /// Debias attribute whose runs feed the intersectional block; absent
    /// when there is a single attribute.
    pub intersectional_source: Option<String>,
    pub rows: Vec<SummaryRow>,
}

impl GridSummary {
    pub fn has_intersectional(&self) -> bool {
        self.attributes.len() > 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub cells: Vec<GridCell>,
    pub summary: GridSummary,
}

impl GridRecord {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.record().is_none()).count()
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, PipelineError> {
        read_json(&dir.as_ref().join(GRID_RECORD_FILE))
    }
}

fn triple(record: &RunRecord, attribute: Option<&str>) -> MetricTriple {
    let pair = match attribute {
        Some(a) => record.aggregate.per_attribute[a],
        None => record.aggregate.intersectional,
    };
    MetricTriple { bca: record.aggregate.bca, dpr: pair.dpr, eoddr: pair.eoddr }
}

/// Builds the summary table from grid cells. The intersectional block of a
/// debiased row comes from the run debiased on the first attribute.
pub fn summarize(cells: &[GridCell], attributes: &[String]) -> GridSummary {
    let intersectional = attributes.len() > 1;
    let source = attributes.first().filter(|_| intersectional).cloned();
    let mut rows: Vec<SummaryRow> = Vec::new();
    for cell in cells {
        let index = match rows.iter().position(|r| r.synthesizer == cell.synthesizer && r.technique == cell.technique) {
            Some(i) => i,
            None => {
                rows.push(SummaryRow {
                    synthesizer: cell.synthesizer.clone(),
                    technique: cell.technique.clone(),
                    blocks: vec![None; attributes.len()],
                    intersectional: None,
                });
                rows.len() - 1
            }
        };
        let Some(record) = cell.record() else { continue };
        let row = &mut rows[index];
        for (block, attribute) in row.blocks.iter_mut().zip(attributes) {
            if cell.debias_attribute.is_none() || cell.debias_attribute.as_ref() == Some(attribute) {
                *block = Some(triple(record, Some(attribute)));
            }
        }
        if intersectional && (cell.debias_attribute.is_none() || cell.debias_attribute == source) {
            row.intersectional = Some(triple(record, None));
        }
    }
    GridSummary { attributes: attributes.to_vec(), intersectional_source: source, rows }
}

fn worker_count() -> usize {
    std::env::var("FAIRGEN_WORKERS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Runs every config, isolating failures per cell. Parallelism is capped by
/// `FAIRGEN_WORKERS`; results keep the input order.
pub fn run_grid(configs: &[RunConfig]) -> Vec<GridCell> {
    let run = || {
        configs
            .par_iter()
            .map(|config| {
                let outcome = match run_pipeline(config) {
                    Ok(record) => CellOutcome::Completed { record: Box::new(record) },
                    Err(e) => {
                        log::error!("{}: {e}", config.output_dir.display());
                        CellOutcome::Failed { stage: e.stage, error: error_chain(&e) }
                    }
                };
                GridCell {
                    synthesizer: config.synthesizer.display_name(),
                    technique: config.technique.label(),
                    debias_attribute: config.effective_debias_attribute().map(str::to_owned),
                    output_dir: config.output_dir.clone(),
                    outcome,
                }
            })
            .collect()
    };
    match rayon::ThreadPoolBuilder::new().num_threads(worker_count()).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    }
}

fn error_chain(error: &dyn std::error::Error) -> String {
    let mut text = error.to_string();
    let mut source = error.source();
    while let Some(inner) = source {
        let next = inner.to_string();
        if !text.contains(&next) {
            text.push_str(": ");
            text.push_str(&next);
        }
        source = inner.source();
    }
    text
}

impl GridConfig {
    /// Expands, runs and writes `grid.json` plus a text summary.
    pub fn run(&self) -> Result<GridRecord, PipelineError> {
        let cells = run_grid(&expand_grid(self));
        let summary = summarize(&cells, &self.evaluation_attributes);
        let record = GridRecord { cells, summary };
        let write = || -> Result<(), super::StageError> {
            write_json(&self.output_dir.join(GRID_RECORD_FILE), &record)?;
            super::write_bytes(&self.output_dir.join(GRID_SUMMARY_FILE), render_text(&record.summary, false).as_bytes())
        };
        write().map_err(PipelineError::at(Stage::Write, None))?;
        Ok(record)
    }
}

/// Column-wise best value per synthesizer; every metric is higher-is-better.
fn best_marks(summary: &GridSummary) -> Vec<Vec<bool>> {
    let values = |row: &SummaryRow| -> Vec<Option<f64>> {
        row.blocks
            .iter()
            .chain(summary.has_intersectional().then_some(&row.intersectional))
            .flat_map(|b| match b {
                Some(t) => [Some(t.bca), Some(t.dpr), Some(t.eoddr)],
                None => [None; 3],
            })
            .collect()
    };
    let all: Vec<Vec<Option<f64>>> = summary.rows.iter().map(values).collect();
    summary
        .rows
        .iter()
        .zip(&all)
        .map(|(row, own)| {
            own.iter()
                .enumerate()
                .map(|(col, v)| {
                    let Some(v) = v else { return false };
                    summary
                        .rows
                        .iter()
                        .zip(&all)
                        .filter(|(other, _)| other.synthesizer == row.synthesizer)
                        .all(|(_, vals)| vals[col].is_none_or(|o| o <= *v))
                })
                .collect()
        })
        .collect()
}

/// Aligned text table. With `bold`, each synthesizer's best value per column
/// is wrapped in `**`.
pub fn render_text(summary: &GridSummary, bold: bool) -> String {
    let mut blocks: Vec<String> = summary.attributes.clone();
    if summary.has_intersectional() {
        blocks.push("Intersectional".into());
    }
    let marks = best_marks(summary);
    let mut table: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["Synthesizer".to_string(), "Technique".to_string()];
    for block in &blocks {
        for metric in ["BCA", "DPR", "EOddR"] {
            header.push(format!("{block} {metric}"));
        }
    }
    table.push(header);
    for (row, marks) in summary.rows.iter().zip(&marks) {
        let mut line = vec![row.synthesizer.clone(), row.technique.clone()];
        let triples = row.blocks.iter().chain(summary.has_intersectional().then_some(&row.intersectional));
        let cells = triples.flat_map(|b| match b {
            Some(t) => [Some(t.bca), Some(t.dpr), Some(t.eoddr)],
            None => [None; 3],
        });
        for (value, &best) in cells.zip(marks) {
            line.push(match value {
                Some(v) if bold && best => format!("**{v:.4}**"),
                Some(v) => format!("{v:.4}"),
                None => "failed".into(),
            });
        }
        table.push(line);
    }
    let widths: Vec<usize> =
        (0..table[0].len()).map(|c| table.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    if let Some(source) = &summary.intersectional_source {
        let _ = writeln!(out, "intersectional block from runs debiased on {source}");
    }
    for (i, line) in table.iter().enumerate() {
        let cells: Vec<String> = line
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, &w))| if c < 2 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(out, "{}", widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("  "));
        }
    }
    out
}

pub fn render_csv(summary: &GridSummary) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut blocks: Vec<String> = summary.attributes.clone();
    if summary.has_intersectional() {
        blocks.push("intersectional".into());
    }
    let mut header = vec!["synthesizer".to_string(), "technique".to_string()];
    for block in &blocks {
        for metric in ["bca", "dpr", "eoddr"] {
            header.push(format!("{block}_{metric}"));
        }
    }
    writer.write_record(&header).expect("in-memory write");
    for row in &summary.rows {
        let mut record = vec![row.synthesizer.clone(), row.technique.clone()];
        for block in row.blocks.iter().chain(summary.has_intersectional().then_some(&row.intersectional)) {
            match block {
                Some(t) => record.extend([t.bca, t.dpr, t.eoddr].map(|v| v.to_string())),
                None => record.extend([String::new(), String::new(), String::new()]),
            }
        }
        writer.write_record(&record).expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}
