use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::TableError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    #[default]
    Feature,
    Protected,
    Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default)]
    pub categories: Vec<String>,
    #[serde(default)]
    pub role: Role,
}

impl ColumnSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        Self { name: name.into(), kind: ColumnKind::Numeric, categories: Vec::new(), role: Role::Feature }
    }

    pub fn categorical<S: Into<String>>(name: impl Into<String>, categories: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical,
            categories: categories.into_iter().map(Into::into).collect(),
            role: Role::Feature,
        }
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn category_index(&self, value: &str) -> Option<u32> {
        self.categories.iter().position(|c| c == value).map(|i| i as u32)
    }
}

/// Column layout of a dataset together with its fairness designations.
///
/// Built through [`Schema::new`] (or deserialized from the JSON document
/// form), both of which validate that the label and protected columns are
/// categorical, declared once, and that the favourable and privileged values
/// name declared categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchemaDocument", into = "SchemaDocument")]
pub struct Schema {
    columns: Vec<ColumnSpec>,
    label_column: String,
    protected_columns: Vec<String>,
    favourable_label: String,
    privileged_values: BTreeMap<String, String>,
    label_index: usize,
    favourable_index: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SchemaDocument {
    columns: Vec<ColumnSpec>,
    label_column: String,
    favourable_label: String,
    #[serde(default)]
    privileged_values: BTreeMap<String, String>,
}

impl TryFrom<SchemaDocument> for Schema {
    type Error = TableError;

    fn try_from(doc: SchemaDocument) -> Result<Self, Self::Error> {
        Schema::new(doc.columns, doc.label_column, doc.favourable_label, doc.privileged_values)
    }
}

impl From<Schema> for SchemaDocument {
    fn from(schema: Schema) -> Self {
        SchemaDocument {
            columns: schema.columns,
            label_column: schema.label_column,
            favourable_label: schema.favourable_label,
            privileged_values: schema.privileged_values,
        }
    }
}

fn invalid(msg: impl Into<String>) -> TableError {
    TableError::InvalidSchema(msg.into())
}

impl Schema {
    pub fn new(
        columns: Vec<ColumnSpec>,
        label_column: impl Into<String>,
        favourable_label: impl Into<String>,
        privileged_values: BTreeMap<String, String>,
    ) -> Result<Self, TableError> {
        let label_column = label_column.into();
        let favourable_label = favourable_label.into();

        let mut seen = HashSet::new();
        for col in &columns {
            if !seen.insert(col.name.as_str()) {
                return Err(invalid(format!("column {:?} declared twice", col.name)));
            }
            match col.kind {
                ColumnKind::Numeric if !col.categories.is_empty() => {
                    return Err(invalid(format!("numeric column {:?} declares categories", col.name)));
                }
                ColumnKind::Categorical => {
                    if col.categories.is_empty() {
                        return Err(invalid(format!("categorical column {:?} declares no categories", col.name)));
                    }
                    let mut cats = HashSet::new();
                    if let Some(dup) = col.categories.iter().find(|c| !cats.insert(c.as_str())) {
                        return Err(invalid(format!("column {:?} repeats category {dup:?}", col.name)));
                    }
                }
                _ => {}
            }
        }

        let label_index = columns
            .iter()
            .position(|c| c.name == label_column)
            .ok_or_else(|| invalid(format!("label column {label_column:?} is not declared")))?;
        let label = &columns[label_index];
        if label.role != Role::Label {
            return Err(invalid(format!("label column {label_column:?} must have role \"label\"")));
        }
        if let Some(other) = columns.iter().find(|c| c.role == Role::Label && c.name != label_column) {
            return Err(invalid(format!("column {:?} has role \"label\" but is not the label column", other.name)));
        }
        if label.kind != ColumnKind::Categorical {
            return Err(invalid("label column must be categorical"));
        }
        let favourable_index = label
            .category_index(&favourable_label)
            .ok_or_else(|| invalid(format!("favourable label {favourable_label:?} is not a label category")))?;

        let protected_columns: Vec<String> =
            columns.iter().filter(|c| c.role == Role::Protected).map(|c| c.name.clone()).collect();
        for name in &protected_columns {
            let col = columns.iter().find(|c| &c.name == name).expect("listed above");
            if col.kind != ColumnKind::Categorical || col.categories.len() < 2 {
                return Err(invalid(format!("protected column {name:?} must be categorical with at least 2 categories")));
            }
        }
        for (column, value) in &privileged_values {
            let col = columns
                .iter()
                .find(|c| &c.name == column)
                .ok_or_else(|| invalid(format!("privileged value given for undeclared column {column:?}")))?;
            if col.role != Role::Protected {
                return Err(invalid(format!("privileged value given for non-protected column {column:?}")));
            }
            if col.category_index(value).is_none() {
                return Err(invalid(format!("privileged value {value:?} is not a category of {column:?}")));
            }
        }

        Ok(Self {
            columns,
            label_column,
            protected_columns,
            favourable_label,
            privileged_values,
            label_index,
            favourable_index,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, TableError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, TableError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| TableError::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn column(&self, index: usize) -> &ColumnSpec {
        &self.columns[index]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn label_column(&self) -> &str {
        &self.label_column
    }

    pub fn label_index(&self) -> usize {
        self.label_index
    }

    pub fn favourable_label(&self) -> &str {
        &self.favourable_label
    }

    /// Category index of the favourable label within the label column.
    pub fn favourable_index(&self) -> u32 {
        self.favourable_index
    }

    pub fn protected_columns(&self) -> &[String] {
        &self.protected_columns
    }

    pub fn privileged_values(&self) -> &BTreeMap<String, String> {
        &self.privileged_values
    }

    /// Category index of the privileged value of `column`, if one is declared.
    pub fn privileged_index(&self, column: &str) -> Option<u32> {
        let value = self.privileged_values.get(column)?;
        self.column_index(column).and_then(|i| self.columns[i].category_index(value))
    }

    /// Index of a protected column, or an error naming why it cannot be used as one.
    pub fn protected_index(&self, column: &str) -> Result<usize, TableError> {
        let index = self.column_index(column).ok_or_else(|| TableError::MissingColumn(column.to_string()))?;
        if self.columns[index].role != Role::Protected {
            return Err(invalid(format!("column {column:?} is not protected")));
        }
        Ok(index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn columns() -> Vec<ColumnSpec> {
        vec![
            ColumnSpec::numeric("age"),
            ColumnSpec::categorical("sex", ["Female", "Male"]).with_role(Role::Protected),
            ColumnSpec::categorical("income", ["<=50K", ">50K"]).with_role(Role::Label),
        ]
    }

    fn privileged() -> BTreeMap<String, String> {
        BTreeMap::from([("sex".to_string(), "Male".to_string())])
    }

    #[test]
    fn json_round_trip() {
        let schema = Schema::new(columns(), "income", ">50K", privileged()).unwrap();
        let back = Schema::from_json(&schema.to_json()).unwrap();
        assert_eq!(schema, back);
        assert_eq!(back.protected_columns(), ["sex"]);
        assert_eq!(back.favourable_index(), 1);
        assert_eq!(back.privileged_index("sex"), Some(1));
    }

    #[test]
    fn rejects_unknown_favourable_label() {
        let err = Schema::new(columns(), "income", "rich", privileged()).unwrap_err();
        assert!(matches!(err, TableError::InvalidSchema(_)));
    }

    #[test]
    fn rejects_single_category_protected_column() {
        let mut cols = columns();
        cols[1].categories = vec!["Male".into()];
        assert!(Schema::new(cols, "income", ">50K", BTreeMap::new()).is_err());
    }

    #[test]
    fn rejects_privileged_value_outside_categories() {
        let priv_values = BTreeMap::from([("sex".to_string(), "Other".to_string())]);
        assert!(Schema::new(columns(), "income", ">50K", priv_values).is_err());
    }

    #[test]
    fn rejects_numeric_with_categories() {
        let mut cols = columns();
        cols[0].categories = vec!["x".into()];
        assert!(Schema::new(cols, "income", ">50K", privileged()).is_err());
    }

    #[test]
    fn shipped_schemas_parse() {
        let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../schemas");
        let adult = Schema::load(format!("{root}/adult.schema.json")).unwrap();
        assert_eq!(adult.protected_columns(), ["race", "sex"]);
        assert_eq!(adult.privileged_values().get("race").map(String::as_str), Some("White"));
        let german = Schema::load(format!("{root}/german.schema.json")).unwrap();
        assert_eq!(german.protected_columns(), ["sex"]);
        assert_eq!(german.favourable_label(), "good");
    }
}
