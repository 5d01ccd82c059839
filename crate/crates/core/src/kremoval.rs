//! K% removal: drop the rows that look most like an opposite-group row
//! carrying the opposite outcome.
//!
//! Two groups are formed for one protected column: privileged rows with the
//! favourable label, and unprivileged rows (every non-privileged value) with
//! a non-favourable label. Each grouped row is scored by its cosine
//! similarity to the other group in the feature space (protected and label
//! columns excluded), and the top `ceil(K% · group size)` rows of each group
//! are removed independently.

use std::cmp::Ordering;
use std::collections::HashSet;

use ndarray::{s, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::table::{encode, DataTable, TableError};

#[derive(Debug, thiserror::Error)]
pub enum RemovalError {
    #[error("group {0:?} has no rows")]
    EmptyGroup(Group),
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("vectors have different dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("k_percent must be non-negative, got {0}")]
    NegativeK(f64),
    #[error("protected column {0:?} has no privileged value")]
    NoPrivilegedValue(String),
    #[error("row id {0} is not in the table")]
    UnknownRow(usize),
    #[error(transparent)]
    Table(#[from] TableError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    PrivilegedFavourable,
    UnprivilegedUnfavourable,
}

/// How a row's similarities to the opposite group collapse into one score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreStatistic {
    #[default]
    Max,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasScoreRecord {
    pub row_id: usize,
    pub group: Group,
    pub score: f64,
    pub matched_row_id: usize,
}

/// Row ids of the two groups, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Groups {
    pub privileged_favourable: Vec<usize>,
    pub unprivileged_unfavourable: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct RemovalOutcome {
    pub kept: DataTable,
    pub removed_ids: Vec<usize>,
    pub k_percent: f64,
    pub scores: Vec<BiasScoreRecord>,
}

/// Audit form of a [`RemovalOutcome`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalReport {
    pub protected_column: String,
    pub k_percent: f64,
    pub statistic: ScoreStatistic,
    pub removed_ids: Vec<usize>,
    pub scores: Vec<BiasScoreRecord>,
}

pub fn form_groups(table: &DataTable, protected_column: &str) -> Result<Groups, RemovalError> {
    let schema = table.schema();
    let column = schema.protected_index(protected_column)?;
    let privileged = schema
        .privileged_index(protected_column)
        .ok_or_else(|| RemovalError::NoPrivilegedValue(protected_column.to_string()))?;

    let mut g1 = Vec::new();
    let mut g2 = Vec::new();
    for pos in 0..table.len() {
        let is_privileged = table.category_of(pos, column) == privileged;
        let favourable = table.is_favourable(pos);
        match (is_privileged, favourable) {
            (true, true) => g1.push(table.row_ids()[pos]),
            (false, false) => g2.push(table.row_ids()[pos]),
            _ => {}
        }
    }
    if g1.is_empty() {
        return Err(RemovalError::EmptyGroup(Group::PrivilegedFavourable));
    }
    if g2.is_empty() {
        return Err(RemovalError::EmptyGroup(Group::UnprivilegedUnfavourable));
    }
    g1.sort_unstable();
    g2.sort_unstable();
    Ok(Groups { privileged_favourable: g1, unprivileged_unfavourable: g2 })
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, RemovalError> {
    if a.len() != b.len() {
        return Err(RemovalError::DimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(RemovalError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

struct GroupVectors {
    ids: Vec<usize>,
    /// Rows normalised to unit length; zero rows stay zero.
    unit: Array2<f64>,
    nonzero: Vec<bool>,
}

fn group_vectors(matrix: &Array2<f64>, positions: &[usize], ids: &[usize]) -> GroupVectors {
    let mut unit = Array2::zeros((positions.len(), matrix.ncols()));
    let mut nonzero = Vec::with_capacity(positions.len());
    for (mut out, &pos) in unit.rows_mut().into_iter().zip(positions) {
        let row = matrix.row(pos);
        let norm = row.dot(&row).sqrt();
        nonzero.push(norm > 0.0);
        if norm > 0.0 {
            out.assign(&(&row / norm));
        }
    }
    GroupVectors { ids: ids.to_vec(), unit, nonzero }
}

/// Resolution at which two scores count as tied; ties go to the smaller id.
pub const SCORE_RESOLUTION: f64 = 1e-12;

/// Integer ranking key for a score, so float noise below the resolution
/// never overrides the row-id tie-break.
pub fn rank_key(score: f64) -> i64 {
    (score / SCORE_RESOLUTION).round() as i64
}

#[derive(Debug, Clone, Copy)]
struct Best {
    key: i64,
    score: f64,
    /// Index into the opposite group.
    index: usize,
    sum: f64,
}

impl Best {
    const EMPTY: Best = Best { key: i64::MIN, score: f64::NEG_INFINITY, index: 0, sum: 0.0 };

    /// Candidates must arrive in ascending index order.
    fn offer(&mut self, sim: f64, index: usize) {
        self.sum += sim;
        let key = rank_key(sim);
        if key > self.key {
            *self = Best { key, score: sim, index, sum: self.sum };
        }
    }

    fn merge(&mut self, later: Best) {
        self.sum += later.sum;
        if later.key > self.key {
            self.key = later.key;
            self.score = later.score;
            self.index = later.index;
        }
    }
}

const BLOCK_ROWS: usize = 256;

/// Best match of every row of `a` in `b` and of every row of `b` in `a`,
/// from one blocked pass over the similarity matrix.
fn cross_best(a: &GroupVectors, b: &GroupVectors) -> (Vec<Best>, Vec<Best>) {
    let bt = b.unit.t();
    let blocks: Vec<(Vec<Best>, Vec<Best>)> = (0..a.ids.len())
        .step_by(BLOCK_ROWS)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            let stop = (start + BLOCK_ROWS).min(a.ids.len());
            let sims = a.unit.slice(s![start..stop, ..]).dot(&bt);
            let mut rows = vec![Best::EMPTY; stop - start];
            let mut cols = vec![Best::EMPTY; b.ids.len()];
            for (r, sim_row) in sims.rows().into_iter().enumerate() {
                let row_ok = a.nonzero[start + r];
                for (c, &raw) in sim_row.iter().enumerate() {
                    // Zero vectors have no defined similarity and count as least similar.
                    let sim = if row_ok && b.nonzero[c] { raw.clamp(-1.0, 1.0) } else { -1.0 };
                    rows[r].offer(sim, c);
                    cols[c].offer(sim, start + r);
                }
            }
            (rows, cols)
        })
        .collect();
    let mut a_best = Vec::with_capacity(a.ids.len());
    let mut b_best = vec![Best::EMPTY; b.ids.len()];
    for (rows, cols) in blocks {
        a_best.extend(rows);
        for (acc, block) in b_best.iter_mut().zip(cols) {
            acc.merge(block);
        }
    }
    (a_best, b_best)
}

fn to_record(best: &Best, row_id: usize, group: Group, other: &GroupVectors, statistic: ScoreStatistic) -> BiasScoreRecord {
    let score = match statistic {
        ScoreStatistic::Max => best.score,
        ScoreStatistic::Mean => best.sum / other.ids.len() as f64,
    };
    BiasScoreRecord { row_id, group, score, matched_row_id: other.ids[best.index] }
}

/// Scores every row of both groups against the opposite group. Records are
/// returned group by group, each in ascending row id order.
pub fn score_groups(
    table: &DataTable,
    groups: &Groups,
    statistic: ScoreStatistic,
) -> Result<Vec<BiasScoreRecord>, RemovalError> {
    if groups.privileged_favourable.is_empty() {
        return Err(RemovalError::EmptyGroup(Group::PrivilegedFavourable));
    }
    if groups.unprivileged_unfavourable.is_empty() {
        return Err(RemovalError::EmptyGroup(Group::UnprivilegedUnfavourable));
    }
    let positions = table.positions();
    let lookup = |ids: &[usize]| -> Result<Vec<usize>, RemovalError> {
        let mut sorted = ids.to_vec();
        sorted.sort_unstable();
        sorted.iter().map(|id| positions.get(id).copied().ok_or(RemovalError::UnknownRow(*id))).collect()
    };
    let mut g1_ids = groups.privileged_favourable.clone();
    let mut g2_ids = groups.unprivileged_unfavourable.clone();
    g1_ids.sort_unstable();
    g2_ids.sort_unstable();
    let g1_pos = lookup(&g1_ids)?;
    let g2_pos = lookup(&g2_ids)?;

    let matrix = encode(table, false, false).values;
    let g1 = group_vectors(&matrix, &g1_pos, &g1_ids);
    let g2 = group_vectors(&matrix, &g2_pos, &g2_ids);

    let (g1_best, g2_best) = cross_best(&g1, &g2);
    let mut records: Vec<BiasScoreRecord> = g1_best
        .iter()
        .zip(&g1.ids)
        .map(|(b, &id)| to_record(b, id, Group::PrivilegedFavourable, &g2, statistic))
        .collect();
    records.extend(g2_best.iter().zip(&g2.ids).map(|(b, &id)| to_record(b, id, Group::UnprivilegedUnfavourable, &g1, statistic)));
    Ok(records)
}

/// Number of rows removed from a group of `size` rows at `k_percent`.
pub fn removal_count(k_percent: f64, size: usize) -> usize {
    if k_percent <= 0.0 || size == 0 {
        return 0;
    }
    // k·n/100 keeps whole-percent inputs exact (3·100/100 = 3, not 3.0000000000000004)
    let exact = k_percent * size as f64 / 100.0;
    let count = (exact - 1e-9).ceil().max(0.0) as usize;
    count.min(size)
}

fn by_score_desc(a: &BiasScoreRecord, b: &BiasScoreRecord) -> Ordering {
    rank_key(b.score).cmp(&rank_key(a.score)).then(a.row_id.cmp(&b.row_id))
}

/// Removes the top `ceil(k_percent/100 · group size)` rows from each group,
/// ranked by score descending with ties going to the smaller row id.
pub fn remove_top_k(table: &DataTable, scores: &[BiasScoreRecord], k_percent: f64) -> Result<RemovalOutcome, RemovalError> {
    if k_percent.is_nan() || k_percent < 0.0 {
        return Err(RemovalError::NegativeK(k_percent));
    }
    let mut removed = Vec::new();
    for group in [Group::PrivilegedFavourable, Group::UnprivilegedUnfavourable] {
        let mut members: Vec<&BiasScoreRecord> = scores.iter().filter(|r| r.group == group).collect();
        members.sort_by(|a, b| by_score_desc(a, b));
        let take = removal_count(k_percent, members.len());
        removed.extend(members[..take].iter().map(|r| r.row_id));
    }
    removed.sort_unstable();
    let removed_set: HashSet<usize> = removed.iter().copied().collect();
    let kept = table.filter_ids(|id| !removed_set.contains(&id));
    Ok(RemovalOutcome { kept, removed_ids: removed, k_percent, scores: scores.to_vec() })
}

/// Settings for one K% removal pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KRemoval {
    pub k_percent: f64,
    #[serde(default)]
    pub statistic: ScoreStatistic,
}

impl KRemoval {
    pub fn new(k_percent: f64) -> Self {
        Self { k_percent, statistic: ScoreStatistic::Max }
    }

    /// Groups, scores and removes in one pass.
    pub fn apply(&self, table: &DataTable, protected_column: &str) -> Result<RemovalOutcome, RemovalError> {
        if self.k_percent.is_nan() || self.k_percent < 0.0 {
            return Err(RemovalError::NegativeK(self.k_percent));
        }
        let groups = form_groups(table, protected_column)?;
        let scores = score_groups(table, &groups, self.statistic)?;
        remove_top_k(table, &scores, self.k_percent)
    }
}

impl RemovalOutcome {
    pub fn report(&self, protected_column: &str, statistic: ScoreStatistic) -> RemovalReport {
        RemovalReport {
            protected_column: protected_column.to_string(),
            k_percent: self.k_percent,
            statistic,
            removed_ids: self.removed_ids.clone(),
            scores: self.scores.clone(),
        }
    }
}
