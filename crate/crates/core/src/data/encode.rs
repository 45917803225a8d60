//! Network input encoding: min-max scaled numerics, one-hot blocks for
//! low-cardinality factors and integer index columns feeding embedding layers.

use serde::{Deserialize, Serialize};

use super::dataset::{Column, Dataset};
use super::schema::{ColumnKind, FeatureSchema};
use crate::error::{Error, Result};

pub const DEFAULT_ONEHOT_THRESHOLD: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Encoding {
    /// `2·(x − min)/(max − min) − 1`
    ScaledNumeric {
        min: f64,
        max: f64,
    },
    OneHot {
        level: usize,
        label: String,
    },
    EmbeddingIndex {
        cardinality: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedColumn {
    pub source: String,
    pub encoding: Encoding,
}

/// Column layout and scaling parameters, fitted once on training data and then
/// applied unchanged to every split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NnEncoding {
    pub schema: FeatureSchema,
    pub onehot_threshold: usize,
    pub columns: Vec<EncodedColumn>,
}

/// Row-major `n × width` encoded inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedMatrix {
    pub values: Vec<f64>,
    pub n_rows: usize,
    pub column_map: Vec<EncodedColumn>,
}

impl EncodedMatrix {
    pub fn width(&self) -> usize {
        self.column_map.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.values[i * w..(i + 1) * w]
    }

    /// `(feature, min, max)` for each scaled numeric column.
    pub fn scaling_params(&self) -> Vec<(String, f64, f64)> {
        self.column_map
            .iter()
            .filter_map(|c| match c.encoding {
                Encoding::ScaledNumeric { min, max } => Some((c.source.clone(), min, max)),
                _ => None,
            })
            .collect()
    }
}

impl NnEncoding {
    pub fn fit(scaling_source: &Dataset, onehot_threshold: usize) -> Result<Self> {
        if scaling_source.is_empty() {
            return Err(Error::InvalidArgument("scaling source is empty".into()));
        }
        let schema = scaling_source.schema().clone();
        let mut columns = Vec::new();
        for (spec, col) in schema.columns.iter().zip(scaling_source.columns()) {
            match (&spec.kind, col) {
                (ColumnKind::Numeric, Column::Numeric(v)) => {
                    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
                    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    if !(max > min) {
                        return Err(Error::ConstantFeature {
                            feature: spec.name.clone(),
                        });
                    }
                    columns.push(EncodedColumn {
                        source: spec.name.clone(),
                        encoding: Encoding::ScaledNumeric { min, max },
                    });
                }
                (ColumnKind::Categorical { categories, .. }, _) => {
                    if categories.len() < 2 {
                        return Err(Error::Schema(format!(
                            "'{}' has a single category",
                            spec.name
                        )));
                    }
                    if categories.len() <= onehot_threshold {
                        columns.extend(categories.iter().enumerate().map(|(level, label)| {
                            EncodedColumn {
                                source: spec.name.clone(),
                                encoding: Encoding::OneHot {
                                    level,
                                    label: label.clone(),
                                },
                            }
                        }));
                    } else {
                        columns.push(EncodedColumn {
                            source: spec.name.clone(),
                            encoding: Encoding::EmbeddingIndex {
                                cardinality: categories.len(),
                            },
                        });
                    }
                }
                _ => unreachable!("dataset columns match schema"),
            }
        }
        Ok(NnEncoding {
            schema,
            onehot_threshold,
            columns,
        })
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    /// `(feature, cardinality)` of every embedding-input column in layout order.
    pub fn embedding_inputs(&self) -> Vec<(String, usize)> {
        self.columns
            .iter()
            .filter_map(|c| match c.encoding {
                Encoding::EmbeddingIndex { cardinality } => Some((c.source.clone(), cardinality)),
                _ => None,
            })
            .collect()
    }

    pub fn encode(&self, data: &Dataset) -> Result<EncodedMatrix> {
        let data = data.conform_to(&self.schema.columns)?;
        let n = data.len();
        let w = self.width();
        let mut values = vec![0.0; n * w];
        for (j, col) in self.columns.iter().enumerate() {
            let (_, column) = data.column(&col.source)?;
            match (&col.encoding, column) {
                (Encoding::ScaledNumeric { min, max }, Column::Numeric(v)) => {
                    let span = max - min;
                    for (i, x) in v.iter().enumerate() {
                        values[i * w + j] = 2.0 * (x - min) / span - 1.0;
                    }
                }
                (Encoding::OneHot { level, .. }, Column::Categorical(v)) => {
                    for (i, &c) in v.iter().enumerate() {
                        values[i * w + j] = if c as usize == *level { 1.0 } else { 0.0 };
                    }
                }
                (Encoding::EmbeddingIndex { .. }, Column::Categorical(v)) => {
                    for (i, &c) in v.iter().enumerate() {
                        values[i * w + j] = c as f64;
                    }
                }
                _ => {
                    return Err(Error::Layout(format!(
                        "column '{}' does not match its encoding",
                        col.source
                    )))
                }
            }
        }
        Ok(EncodedMatrix {
            values,
            n_rows: n,
            column_map: self.columns.clone(),
        })
    }
}

/// Fits the layout on `scaling_source` and encodes `data` with it.
pub fn encode_for_nn(
    data: &Dataset,
    schema: &FeatureSchema,
    onehot_threshold: usize,
    scaling_source: &Dataset,
) -> Result<EncodedMatrix> {
    if scaling_source.schema() != schema {
        return Err(Error::Schema(
            "scaling source does not use the supplied schema".into(),
        ));
    }
    NnEncoding::fit(scaling_source, onehot_threshold)?.encode(data)
}
