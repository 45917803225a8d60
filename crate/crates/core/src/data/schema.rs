use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical {
        categories: Vec<String>,
        /// Index of the base level dropped from GLM designs.
        #[serde(default)]
        reference: usize,
    },
}

impl ColumnKind {
    pub fn name(&self) -> &'static str {
        match self {
            ColumnKind::Numeric => "numeric",
            ColumnKind::Categorical { .. } => "categorical",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

impl ColumnSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Numeric,
        }
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        categories: impl IntoIterator<Item = S>,
        reference: usize,
    ) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Categorical {
                categories: categories.into_iter().map(Into::into).collect(),
                reference,
            },
        }
    }

    pub fn categories(&self) -> Option<&[String]> {
        match &self.kind {
            ColumnKind::Categorical { categories, .. } => Some(categories),
            ColumnKind::Numeric => None,
        }
    }
}

/// Describes the feature columns of a claim-count table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<ColumnSpec>,
    pub response_column: String,
    pub exposure_column: String,
}

impl FeatureSchema {
    pub fn new(
        columns: Vec<ColumnSpec>,
        response_column: impl Into<String>,
        exposure_column: impl Into<String>,
    ) -> Result<Self> {
        let schema = FeatureSchema {
            columns,
            response_column: response_column.into(),
            exposure_column: exposure_column.into(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        if self.response_column == self.exposure_column {
            return Err(Error::Schema(
                "response and exposure columns must differ".into(),
            ));
        }
        for col in &self.columns {
            if !seen.insert(col.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column '{}'", col.name)));
            }
            if col.name == self.response_column || col.name == self.exposure_column {
                return Err(Error::Schema(format!(
                    "'{}' is the response or exposure column and cannot be a feature",
                    col.name
                )));
            }
            if let ColumnKind::Categorical {
                categories,
                reference,
            } = &col.kind
            {
                let distinct: HashSet<&String> = categories.iter().collect();
                if distinct.len() != categories.len() {
                    return Err(Error::Schema(format!(
                        "categorical '{}' lists a category twice",
                        col.name
                    )));
                }
                if categories.len() < 2 {
                    return Err(Error::Schema(format!(
                        "categorical '{}' needs at least 2 categories",
                        col.name
                    )));
                }
                if *reference >= categories.len() {
                    return Err(Error::Schema(format!(
                        "reference index {} out of range for '{}'",
                        reference, col.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::UnknownFeature(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<&ColumnSpec> {
        Ok(&self.columns[self.index_of(name)?])
    }

    pub fn feature_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }
}
