//! Data augmentation baseline: every row gets a twin with the protected
//! attribute flipped, twins are ranked by how realistic they look against
//! k-means centers of the raw data's (protected value, label) cells, and the
//! top `add_percent` of them are appended.

mod kmeans;

use std::collections::BTreeMap;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use kmeans::{fit_kmeans, inertia, nearest_center, CONVERGENCE_TOLERANCE};

use crate::table::{DataTable, Encoder, Row, TableError, Value};

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("k-means needs at least k points (got {points}, k = {k})")]
    TooFewPoints { points: usize, k: usize },
    #[error("no cluster model for protected value {protected:?} and label {label:?}")]
    MissingCellModel { protected: String, label: String },
    #[error("add_percent must lie in [0, 100], got {0}")]
    InvalidPercent(f64),
    #[error(transparent)]
    Table(#[from] TableError),
}

/// Which center distance feeds the realism score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RealismDistance {
    /// Farthest center of the cell.
    #[default]
    Max,
    /// Nearest center of the cell.
    Min,
}

/// (protected value, label value) cell, both as category indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub protected: u32,
    pub label: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub cell: Cell,
    pub centers: Vec<Vec<f64>>,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centers.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlippedPoint {
    pub row: Row,
    pub source_row_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSyntheticPoint {
    pub row: Row,
    pub realism: f64,
    pub source_row_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub add_percent: f64,
    /// Upper bound on centers per cell; a cell with fewer rows uses one center per row.
    pub clusters_per_cell: usize,
    pub max_iters: usize,
    pub epsilon: f64,
    pub realism_distance: RealismDistance,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            add_percent: 100.0,
            clusters_per_cell: 8,
            max_iters: 100,
            epsilon: 1e-9,
            realism_distance: RealismDistance::Max,
            seed: 0,
        }
    }
}

/// Twin of every row with the protected value replaced by the next category
/// (the other one for a binary column).
pub fn flip_protected(table: &DataTable, protected_column: &str) -> Result<Vec<FlippedPoint>, AugmentError> {
    let column = table.schema().protected_index(protected_column)?;
    let n_categories = table.schema().column(column).categories.len() as u32;
    Ok(table
        .rows()
        .iter()
        .zip(table.row_ids())
        .map(|(row, &id)| {
            let mut row = row.clone();
            let current = row[column].as_cat().expect("protected columns are categorical");
            row[column] = Value::Cat((current + 1) % n_categories);
            FlippedPoint { row, source_row_id: id }
        })
        .collect())
}

fn cell_of(row: &Row, protected: usize, label: usize) -> Cell {
    Cell {
        protected: row[protected].as_cat().expect("categorical"),
        label: row[label].as_cat().expect("categorical"),
    }
}

/// Fits one k-means model per (protected value, label) cell present in `table`,
/// in the feature space of `encoder`.
pub fn fit_cluster_models(
    table: &DataTable,
    encoder: &Encoder,
    protected_column: &str,
    config: &AugmentConfig,
) -> Result<Vec<ClusterModel>, AugmentError> {
    let schema = table.schema();
    let protected = schema.protected_index(protected_column)?;
    let label = schema.label_index();
    let mut cells: BTreeMap<Cell, Vec<usize>> = BTreeMap::new();
    for (pos, row) in table.rows().iter().enumerate() {
        cells.entry(cell_of(row, protected, label)).or_default().push(pos);
    }
    let matrix = encoder.transform(table)?.values;
    let cells: Vec<(Cell, Vec<usize>)> = cells.into_iter().collect();
    cells
        .par_iter()
        .map(|(cell, positions)| {
            let points = matrix.select(ndarray::Axis(0), positions);
            let k = config.clusters_per_cell.max(1).min(positions.len());
            let seed = config.seed ^ (u64::from(cell.protected) << 32 | u64::from(cell.label)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let centers = fit_kmeans(points.view(), k, seed, config.max_iters)?;
            Ok(ClusterModel { cell: *cell, centers: centers.rows().into_iter().map(|r| r.to_vec()).collect() })
        })
        .collect()
}

/// Scores flipped points as `1 / (distance + epsilon)` against the centers
/// of the cell matching their (flipped) protected value and label.
pub fn score_realism(
    synthetic: &[FlippedPoint],
    models: &[ClusterModel],
    encoder: &Encoder,
    table: &DataTable,
    protected_column: &str,
    epsilon: f64,
    distance: RealismDistance,
) -> Result<Vec<ScoredSyntheticPoint>, AugmentError> {
    let schema = table.schema();
    let protected = schema.protected_index(protected_column)?;
    let label = schema.label_index();
    let by_cell: BTreeMap<Cell, Array2<f64>> = models
        .iter()
        .filter(|m| !m.centers.is_empty())
        .map(|m| {
            let dims = m.centers[0].len();
            let flat: Vec<f64> = m.centers.iter().flatten().copied().collect();
            (m.cell, Array2::from_shape_vec((m.centers.len(), dims), flat).expect("rectangular centers"))
        })
        .collect();

    synthetic
        .iter()
        .map(|point| {
            let cell = cell_of(&point.row, protected, label);
            let centers = by_cell.get(&cell).ok_or_else(|| AugmentError::MissingCellModel {
                protected: schema.column(protected).categories[cell.protected as usize].clone(),
                label: schema.column(label).categories[cell.label as usize].clone(),
            })?;
            let encoded = ndarray::Array1::from(encoder.encode_row(&point.row));
            let distances = centers.rows().into_iter().map(|c| {
                c.iter().zip(encoded.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            });
            let d = match distance {
                RealismDistance::Max => distances.fold(0.0, f64::max),
                RealismDistance::Min => distances.fold(f64::INFINITY, f64::min),
            };
            Ok(ScoredSyntheticPoint { row: point.row.clone(), realism: 1.0 / (d + epsilon), source_row_id: point.source_row_id })
        })
        .collect()
}

/// Number of synthetic points appended for `n` candidates.
pub fn augmentation_count(add_percent: f64, n: usize) -> usize {
    ((add_percent * n as f64 / 100.0).round() as usize).min(n)
}

/// Appends the `round(add_percent% · n)` most realistic points (ties by
/// source row id) with fresh row ids above the table's maximum.
pub fn augment(table: &DataTable, scored: &[ScoredSyntheticPoint], add_percent: f64) -> Result<DataTable, AugmentError> {
    if !(0.0..=100.0).contains(&add_percent) {
        return Err(AugmentError::InvalidPercent(add_percent));
    }
    let mut order: Vec<&ScoredSyntheticPoint> = scored.iter().collect();
    order.sort_by(|a, b| b.realism.total_cmp(&a.realism).then(a.source_row_id.cmp(&b.source_row_id)));
    let take = augmentation_count(add_percent, scored.len());
    let rows = order[..take].iter().map(|p| p.row.clone()).collect();
    Ok(table.append_rows(rows)?)
}

#[derive(Debug, Clone)]
pub struct AugmentOutcome {
    pub table: DataTable,
    pub added: usize,
    pub models: Vec<ClusterModel>,
}

/// Flip, cluster, score and append in one call. Clusters are fitted on
/// `table` itself in its protected- and label-free feature encoding.
pub fn augment_dataset(table: &DataTable, protected_column: &str, config: &AugmentConfig) -> Result<AugmentOutcome, AugmentError> {
    if !(0.0..=100.0).contains(&config.add_percent) {
        return Err(AugmentError::InvalidPercent(config.add_percent));
    }
    let encoder = Encoder::fit(table, false, false);
    let models = fit_cluster_models(table, &encoder, protected_column, config)?;
    let flipped = flip_protected(table, protected_column)?;
    let scored = score_realism(&flipped, &models, &encoder, table, protected_column, config.epsilon, config.realism_distance)?;
    let out = augment(table, &scored, config.add_percent)?;
    let added = out.len() - table.len();
    Ok(AugmentOutcome { table: out, added, models })
}
