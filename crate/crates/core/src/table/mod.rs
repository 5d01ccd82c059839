//! Schema-aware tabular data: ingestion, CSV output, stratified splitting and
//! numeric encoding.

mod encode;
mod schema;

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use encode::{encode, DimSource, EncodedMatrix, Encoder, NumericRange};
pub use schema::{ColumnKind, ColumnSpec, Role, Schema};

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("column {0:?} is missing")]
    MissingColumn(String),
    #[error("column {0:?} is not declared in the schema")]
    UnexpectedColumn(String),
    #[error("row {row}: value {value:?} is not a declared category of column {column:?}")]
    UnknownCategory { row: usize, column: String, value: String },
    #[error("row {row}: value {value:?} in numeric column {column:?} is not a finite number")]
    NonNumericCell { row: usize, column: String, value: String },
    #[error("row {row}: {reason}")]
    InvalidRow { row: usize, reason: String },
    #[error("file contains no data rows")]
    EmptyFile,
    #[error("split would leave an empty partition ({train} train / {test} test rows)")]
    DegenerateSplit { train: usize, test: usize },
    #[error("duplicate row id {0}")]
    DuplicateRowId(usize),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A single cell. Categorical cells hold the index of the value in the
/// column's declared category list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Num(f64),
    Cat(u32),
}

impl Value {
    pub fn as_num(self) -> Option<f64> {
        match self {
            Value::Num(x) => Some(x),
            Value::Cat(_) => None,
        }
    }

    pub fn as_cat(self) -> Option<u32> {
        match self {
            Value::Cat(c) => Some(c),
            Value::Num(_) => None,
        }
    }
}

pub type Row = Vec<Value>;

/// Immutable, schema-validated table. `row_ids` are stable identifiers that
/// survive filtering, splitting and reordering.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    schema: Arc<Schema>,
    rows: Vec<Row>,
    row_ids: Vec<usize>,
}

impl DataTable {
    pub fn new(schema: Arc<Schema>, rows: Vec<Row>, row_ids: Vec<usize>) -> Result<Self, TableError> {
        if rows.len() != row_ids.len() {
            return Err(TableError::InvalidRow {
                row: rows.len().min(row_ids.len()),
                reason: format!("{} rows but {} row ids", rows.len(), row_ids.len()),
            });
        }
        let mut seen = std::collections::HashSet::with_capacity(row_ids.len());
        for &id in &row_ids {
            if !seen.insert(id) {
                return Err(TableError::DuplicateRowId(id));
            }
        }
        for (row, &id) in rows.iter().zip(&row_ids) {
            validate_row(&schema, row, id)?;
        }
        Ok(Self { schema, rows, row_ids })
    }

    /// Builds a table whose row ids are `0..rows.len()`.
    pub fn from_rows(schema: Arc<Schema>, rows: Vec<Row>) -> Result<Self, TableError> {
        let ids = (0..rows.len()).collect();
        Self::new(schema, rows, ids)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn schema_arc(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn row(&self, position: usize) -> &Row {
        &self.rows[position]
    }

    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    pub fn max_row_id(&self) -> Option<usize> {
        self.row_ids.iter().copied().max()
    }

    /// Map from row id to position in this table.
    pub fn positions(&self) -> HashMap<usize, usize> {
        self.row_ids.iter().enumerate().map(|(pos, &id)| (id, pos)).collect()
    }

    /// Label category index of the row at `position`.
    pub fn label_of(&self, position: usize) -> u32 {
        self.rows[position][self.schema.label_index()].as_cat().expect("label is categorical")
    }

    pub fn is_favourable(&self, position: usize) -> bool {
        self.label_of(position) == self.schema.favourable_index()
    }

    /// Binary ground truth, `true` for the favourable label.
    pub fn favourable_labels(&self) -> Vec<bool> {
        (0..self.len()).map(|i| self.is_favourable(i)).collect()
    }

    /// Category index of a categorical column at `position`.
    pub fn category_of(&self, position: usize, column: usize) -> u32 {
        self.rows[position][column].as_cat().expect("categorical column")
    }

    /// Rows at the given positions, in the given order.
    pub fn select(&self, positions: &[usize]) -> DataTable {
        DataTable {
            schema: Arc::clone(&self.schema),
            rows: positions.iter().map(|&p| self.rows[p].clone()).collect(),
            row_ids: positions.iter().map(|&p| self.row_ids[p]).collect(),
        }
    }

    /// Rows whose id satisfies `keep`, preserving order.
    pub fn filter_ids(&self, mut keep: impl FnMut(usize) -> bool) -> DataTable {
        let positions: Vec<usize> = (0..self.len()).filter(|&p| keep(self.row_ids[p])).collect();
        self.select(&positions)
    }

    /// Appends rows with fresh ids starting above the current maximum.
    pub fn append_rows(&self, extra: Vec<Row>) -> Result<DataTable, TableError> {
        let start = self.max_row_id().map_or(0, |m| m + 1);
        let mut rows = self.rows.clone();
        let mut ids = self.row_ids.clone();
        for (offset, row) in extra.into_iter().enumerate() {
            validate_row(&self.schema, &row, start + offset)?;
            rows.push(row);
            ids.push(start + offset);
        }
        Ok(DataTable { schema: Arc::clone(&self.schema), rows, row_ids: ids })
    }

    /// Same rows ordered by ascending row id.
    pub fn sorted_by_id(&self) -> DataTable {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&p| self.row_ids[p]);
        self.select(&order)
    }

    pub fn format_cell(&self, column: usize, value: Value) -> String {
        format_value(self.schema.column(column), value)
    }

    /// Serializes the table as header-first CSV (row ids are not written).
    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(self.schema.columns().iter().map(|c| c.name.as_str()))
            .expect("in-memory write");
        for row in &self.rows {
            writer
                .write_record(row.iter().enumerate().map(|(i, v)| self.format_cell(i, *v)))
                .expect("in-memory write");
        }
        writer.into_inner().expect("in-memory flush")
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), TableError> {
        let path = path.as_ref();
        let io_err = |source| TableError::Io { path: path.to_path_buf(), source };
        let mut file = std::fs::File::create(path).map_err(io_err)?;
        file.write_all(&self.to_csv_bytes()).map_err(io_err)
    }
}

fn format_value(spec: &ColumnSpec, value: Value) -> String {
    match value {
        Value::Num(x) => format!("{x}"),
        Value::Cat(c) => spec.categories[c as usize].clone(),
    }
}

fn validate_row(schema: &Schema, row: &Row, row_id: usize) -> Result<(), TableError> {
    if row.len() != schema.columns().len() {
        return Err(TableError::InvalidRow {
            row: row_id,
            reason: format!("{} cells for {} columns", row.len(), schema.columns().len()),
        });
    }
    for (spec, value) in schema.columns().iter().zip(row) {
        match (spec.kind, value) {
            (ColumnKind::Numeric, Value::Num(x)) if x.is_finite() => {}
            (ColumnKind::Numeric, v) => {
                return Err(TableError::NonNumericCell {
                    row: row_id,
                    column: spec.name.clone(),
                    value: format!("{v:?}"),
                })
            }
            (ColumnKind::Categorical, Value::Cat(c)) if (*c as usize) < spec.categories.len() => {}
            (ColumnKind::Categorical, v) => {
                return Err(TableError::UnknownCategory {
                    row: row_id,
                    column: spec.name.clone(),
                    value: format!("{v:?}"),
                })
            }
        }
    }
    Ok(())
}

/// Counts reported alongside an ingested table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_dropped_missing: usize,
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell == "?"
}

/// Reads a header-first CSV file. Rows with a missing cell (`?` or empty)
/// are dropped; the row id of every kept row is its 0-based position among
/// the file's data rows.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<DataTable, TableError> {
    load_csv_with_report(path, schema).map(|(table, _)| table)
}

pub fn load_csv_with_report(path: impl AsRef<Path>, schema: &Schema) -> Result<(DataTable, IngestReport), TableError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| TableError::Io { path: path.to_path_buf(), source })?;
    let (table, report) = read_csv(file, schema)?;
    if report.rows_dropped_missing > 0 {
        log::warn!(
            "{}: dropped {} of {} rows with missing values",
            path.display(),
            report.rows_dropped_missing,
            report.rows_read
        );
    }
    Ok((table, report))
}

pub fn read_csv(reader: impl std::io::Read, schema: &Schema) -> Result<(DataTable, IngestReport), TableError> {
    let mut csv_reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut records = csv_reader.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(TableError::EmptyFile),
    };

    // file column position -> schema column index
    let mut mapping = Vec::with_capacity(header.len());
    let mut seen = vec![false; schema.columns().len()];
    for name in header.iter() {
        let index = schema.column_index(name).ok_or_else(|| TableError::UnexpectedColumn(name.to_string()))?;
        if std::mem::replace(&mut seen[index], true) {
            return Err(TableError::InvalidSchema(format!("header repeats column {name:?}")));
        }
        mapping.push(index);
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(TableError::MissingColumn(schema.column(missing).name.clone()));
    }

    let mut rows = Vec::new();
    let mut ids = Vec::new();
    let mut report = IngestReport::default();
    let placeholder = Value::Num(f64::NAN);
    for (row_id, record) in records.enumerate() {
        let record = record?;
        report.rows_read += 1;
        if record.iter().any(is_missing) {
            report.rows_dropped_missing += 1;
            continue;
        }
        let mut row = vec![placeholder; mapping.len()];
        for (cell, &index) in record.iter().zip(&mapping) {
            let spec = schema.column(index);
            row[index] = match spec.kind {
                ColumnKind::Numeric => match cell.parse::<f64>() {
                    Ok(x) if x.is_finite() => Value::Num(x),
                    _ => {
                        return Err(TableError::NonNumericCell {
                            row: row_id,
                            column: spec.name.clone(),
                            value: cell.to_string(),
                        })
                    }
                },
                ColumnKind::Categorical => match spec.category_index(cell) {
                    Some(c) => Value::Cat(c),
                    None => {
                        return Err(TableError::UnknownCategory {
                            row: row_id,
                            column: spec.name.clone(),
                            value: cell.to_string(),
                        })
                    }
                },
            };
        }
        rows.push(row);
        ids.push(row_id);
    }
    if rows.is_empty() {
        return Err(TableError::EmptyFile);
    }
    Ok((DataTable { schema: Arc::new(schema.clone()), rows, row_ids: ids }, report))
}

/// Stratified, seeded train/test split.
///
/// The test partition has `round(test_fraction * n)` rows, apportioned to
/// label strata by largest remainder so each stratum contributes
/// `floor` or `ceil` of `test_fraction * stratum_size`. Both partitions keep
/// the input's row order.
pub fn train_test_split(
    table: &DataTable,
    test_fraction: f64,
    seed: u64,
) -> Result<(DataTable, DataTable), TableError> {
    let n = table.len();
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(TableError::DegenerateSplit { train: n, test: 0 });
    }
    let total_test = (test_fraction * n as f64).round() as usize;
    if total_test == 0 || total_test >= n {
        return Err(TableError::DegenerateSplit { train: n - total_test.min(n), test: total_test });
    }

    let label_count = table.schema().column(table.schema().label_index()).categories.len();
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); label_count];
    for pos in 0..n {
        strata[table.label_of(pos) as usize].push(pos);
    }

    let exact: Vec<f64> = strata.iter().map(|s| test_fraction * s.len() as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut remaining = total_test.saturating_sub(quota.iter().sum());
    let mut by_remainder: Vec<usize> = (0..label_count).collect();
    by_remainder.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &stratum in by_remainder.iter().cycle().take(label_count * 2) {
        if remaining == 0 {
            break;
        }
        if quota[stratum] < strata[stratum].len() {
            quota[stratum] += 1;
            remaining -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_test = vec![false; n];
    for (stratum, take) in strata.iter_mut().zip(&quota) {
        stratum.shuffle(&mut rng);
        for &pos in stratum.iter().take(*take) {
            in_test[pos] = true;
        }
    }
    let (test_pos, train_pos): (Vec<usize>, Vec<usize>) = (0..n).partition(|&p| in_test[p]);
    if test_pos.is_empty() || train_pos.is_empty() {
        return Err(TableError::DegenerateSplit { train: train_pos.len(), test: test_pos.len() });
    }
    Ok((table.select(&train_pos), table.select(&test_pos)))
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use std::collections::BTreeMap;

    /// age (numeric), workclass (3 cats), race (3 cats, protected),
    /// sex (2 cats, protected), income (label).
    pub fn adult_like_schema() -> Arc<Schema> {
        let columns = vec![
            ColumnSpec::numeric("age"),
            ColumnSpec::categorical("workclass", ["Private", "State-gov", "Self-emp"]),
            ColumnSpec::categorical("race", ["White", "Black", "Other"]).with_role(Role::Protected),
            ColumnSpec::categorical("sex", ["Female", "Male"]).with_role(Role::Protected),
            ColumnSpec::categorical("income", ["<=50K", ">50K"]).with_role(Role::Label),
        ];
        let privileged = BTreeMap::from([
            ("sex".to_string(), "Male".to_string()),
            ("race".to_string(), "White".to_string()),
        ]);
        Arc::new(Schema::new(columns, "income", ">50K", privileged).unwrap())
    }
}
