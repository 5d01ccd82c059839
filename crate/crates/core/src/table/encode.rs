use ndarray::{Array2, ArrayViewMut1};
use serde::{Deserialize, Serialize};

use super::{ColumnKind, DataTable, Role, Row, Schema, TableError, Value};

/// Min/max used to scale one numeric column into `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericRange {
    pub column: String,
    pub min: f64,
    pub max: f64,
}

impl NumericRange {
    pub fn scale(&self, x: f64) -> f64 {
        let span = self.max - self.min;
        if span > 0.0 {
            (x - self.min) / span
        } else {
            0.0
        }
    }

    pub fn unscale(&self, v: f64) -> f64 {
        self.min + v * (self.max - self.min)
    }
}

/// Source of one encoded dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimSource {
    pub column: String,
    pub category: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Block {
    Numeric {
        column: usize,
        range: NumericRange,
    },
    Categorical {
        column: usize,
        name: String,
        /// Category indices (into the schema's declared list) that own a dimension.
        categories: Vec<u32>,
        labels: Vec<String>,
    },
}

impl Block {
    fn width(&self) -> usize {
        match self {
            Block::Numeric { .. } => 1,
            Block::Categorical { categories, .. } => categories.len(),
        }
    }
}

/// Fitted one-hot + min-max layout.
///
/// Categorical columns get one dimension per category observed in the
/// fitting table; a category unseen at fit time encodes as an all-zero
/// block. Numeric columns are scaled with the fitting table's min/max, so
/// other tables may fall outside `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    column_names: Vec<String>,
    blocks: Vec<Block>,
    n_dims: usize,
}

/// Numeric view of a table.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMatrix {
    pub values: Array2<f64>,
    pub dim_provenance: Vec<DimSource>,
    pub scaling: Vec<NumericRange>,
}

/// Encodes `table` with statistics taken from `table` itself.
pub fn encode(table: &DataTable, include_protected: bool, include_label: bool) -> EncodedMatrix {
    Encoder::fit(table, include_protected, include_label).transform_unchecked(table)
}

impl Encoder {
    pub fn fit(table: &DataTable, include_protected: bool, include_label: bool) -> Self {
        let schema = table.schema();
        let mut blocks = Vec::new();
        for (index, spec) in schema.columns().iter().enumerate() {
            let included = match spec.role {
                Role::Feature => true,
                Role::Protected => include_protected,
                Role::Label => include_label,
            };
            if !included {
                continue;
            }
            match spec.kind {
                ColumnKind::Numeric => {
                    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
                    for row in table.rows() {
                        let x = row[index].as_num().expect("numeric column");
                        min = min.min(x);
                        max = max.max(x);
                    }
                    if table.is_empty() {
                        (min, max) = (0.0, 0.0);
                    }
                    blocks.push(Block::Numeric { column: index, range: NumericRange { column: spec.name.clone(), min, max } });
                }
                ColumnKind::Categorical => {
                    let mut present = vec![false; spec.categories.len()];
                    for row in table.rows() {
                        present[row[index].as_cat().expect("categorical column") as usize] = true;
                    }
                    let categories: Vec<u32> =
                        (0..spec.categories.len() as u32).filter(|&c| present[c as usize]).collect();
                    let labels = categories.iter().map(|&c| spec.categories[c as usize].clone()).collect();
                    blocks.push(Block::Categorical { column: index, name: spec.name.clone(), categories, labels });
                }
            }
        }
        let n_dims = blocks.iter().map(Block::width).sum();
        Self { column_names: schema.columns().iter().map(|c| c.name.clone()).collect(), blocks, n_dims }
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn scaling(&self) -> Vec<NumericRange> {
        self.blocks
            .iter()
            .filter_map(|b| match b {
                Block::Numeric { range, .. } => Some(range.clone()),
                Block::Categorical { .. } => None,
            })
            .collect()
    }

    pub fn dim_provenance(&self) -> Vec<DimSource> {
        let mut out = Vec::with_capacity(self.n_dims);
        for block in &self.blocks {
            match block {
                Block::Numeric { range, .. } => out.push(DimSource { column: range.column.clone(), category: None }),
                Block::Categorical { name, labels, .. } => out.extend(
                    labels.iter().map(|l| DimSource { column: name.clone(), category: Some(l.clone()) }),
                ),
            }
        }
        out
    }

    /// Whether `schema` has the column layout this encoder was fitted on.
    pub fn matches(&self, schema: &Schema) -> bool {
        schema.columns().len() == self.column_names.len()
            && schema.columns().iter().zip(&self.column_names).all(|(c, n)| &c.name == n)
    }

    pub fn transform(&self, table: &DataTable) -> Result<EncodedMatrix, TableError> {
        if !self.matches(table.schema()) {
            return Err(TableError::InvalidSchema("table columns differ from the encoder's fitting table".into()));
        }
        Ok(self.transform_unchecked(table))
    }

    fn transform_unchecked(&self, table: &DataTable) -> EncodedMatrix {
        let mut values = Array2::zeros((table.len(), self.n_dims));
        for (row, out) in table.rows().iter().zip(values.rows_mut()) {
            self.encode_into(row, out);
        }
        EncodedMatrix { values, dim_provenance: self.dim_provenance(), scaling: self.scaling() }
    }

    /// Encodes one row; `out` must have `n_dims` entries and start zeroed.
    pub fn encode_into(&self, row: &Row, mut out: ArrayViewMut1<'_, f64>) {
        let mut offset = 0;
        for block in &self.blocks {
            match block {
                Block::Numeric { column, range } => {
                    out[offset] = range.scale(row[*column].as_num().expect("numeric column"));
                }
                Block::Categorical { column, categories, .. } => {
                    let c = row[*column].as_cat().expect("categorical column");
                    if let Ok(k) = categories.binary_search(&c) {
                        out[offset + k] = 1.0;
                    }
                }
            }
            offset += block.width();
        }
    }

    pub fn encode_row(&self, row: &Row) -> Vec<f64> {
        let mut out = ndarray::Array1::zeros(self.n_dims);
        self.encode_into(row, out.view_mut());
        out.to_vec()
    }

    /// Recovers `(column index, value)` for every encoded column. A
    /// categorical block with no hot dimension decodes to `None`.
    pub fn decode_row(&self, encoded: &[f64]) -> Vec<(usize, Option<Value>)> {
        let mut offset = 0;
        let mut out = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            match block {
                Block::Numeric { column, range } => out.push((*column, Some(Value::Num(range.unscale(encoded[offset]))))),
                Block::Categorical { column, categories, .. } => {
                    let slice = &encoded[offset..offset + categories.len()];
                    let hot = slice
                        .iter()
                        .enumerate()
                        .filter(|(_, v)| **v > 0.5)
                        .max_by(|a, b| a.1.total_cmp(b.1))
                        .map(|(k, _)| Value::Cat(categories[k]));
                    out.push((*column, hot));
                }
            }
            offset += block.width();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::adult_like_schema;
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn table(rows: Vec<(f64, u32, u32, u32, u32)>) -> DataTable {
        let rows = rows
            .into_iter()
            .map(|(a, w, r, s, y)| vec![Value::Num(a), Value::Cat(w), Value::Cat(r), Value::Cat(s), Value::Cat(y)])
            .collect();
        DataTable::from_rows(adult_like_schema(), rows).unwrap()
    }

    #[test]
    fn one_hot_and_min_max() {
        let t = table(vec![(10.0, 0, 0, 0, 0), (20.0, 1, 1, 1, 1), (30.0, 2, 2, 0, 0)]);
        let m = encode(&t, false, false);
        assert_eq!(m.values.ncols(), 4);
        assert_eq!(m.values.column(0).to_vec(), vec![0.0, 0.5, 1.0]);
        for row in m.values.rows() {
            assert_eq!(row.slice(ndarray::s![1..]).sum(), 1.0);
        }
        assert_eq!(m.dim_provenance[2], DimSource { column: "workclass".into(), category: Some("State-gov".into()) });
        assert_eq!(m.scaling, vec![NumericRange { column: "age".into(), min: 10.0, max: 30.0 }]);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let t = table(vec![(7.0, 0, 0, 0, 0), (7.0, 0, 1, 1, 1)]);
        let m = encode(&t, false, false);
        assert_eq!(m.values.column(0).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn protected_and_label_flags() {
        let t = table(vec![(1.0, 0, 0, 0, 0), (2.0, 1, 1, 1, 1)]);
        assert_eq!(encode(&t, false, false).values.ncols(), 1 + 2);
        assert_eq!(encode(&t, true, false).values.ncols(), 1 + 2 + 2 + 2);
        assert_eq!(encode(&t, true, true).values.ncols(), 1 + 2 + 2 + 2 + 2);
    }

    #[test]
    fn unseen_category_encodes_as_zero_block() {
        let fit = table(vec![(1.0, 0, 0, 0, 0), (2.0, 1, 1, 1, 1)]);
        let other = table(vec![(3.0, 2, 0, 0, 0)]);
        let encoder = Encoder::fit(&fit, false, false);
        let m = encoder.transform(&other).unwrap();
        assert_eq!(m.values.row(0).to_vec(), vec![2.0, 0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn decode_recovers_rows(rows in prop::collection::vec((-1e6f64..1e6, 0u32..3, 0u32..3, 0u32..2, 0u32..2), 1..40)) {
            let t = table(rows);
            let encoder = Encoder::fit(&t, true, true);
            let m = encoder.transform(&t).unwrap();
            for (row, enc) in t.rows().iter().zip(m.values.rows()) {
                for (column, value) in encoder.decode_row(enc.as_slice().unwrap()) {
                    match (row[column], value.unwrap()) {
                        (Value::Num(a), Value::Num(b)) => assert_abs_diff_eq!(a, b, epsilon = 1e-9 * (1.0 + a.abs())),
                        (a, b) => prop_assert_eq!(a, b),
                    }
                }
                for x in enc.iter().take(1) {
                    prop_assert!((0.0..=1.0).contains(x));
                }
            }
        }
    }
}
