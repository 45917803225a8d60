use serde::{Deserialize, Serialize};

use super::schema::{ColumnKind, ColumnSpec, FeatureSchema};
use crate::error::{Error, Result};

/// Values of one feature column. Categorical values are indices into the
/// schema's category list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Column {
    Numeric(Vec<f64>),
    Categorical(Vec<u32>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&i| v[i]).collect()),
            Column::Categorical(v) => Column::Categorical(rows.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// Claim counts, exposures and features in column-major layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    schema: FeatureSchema,
    claims: Vec<u32>,
    exposure: Vec<f64>,
    columns: Vec<Column>,
}

impl Dataset {
    pub fn new(
        schema: FeatureSchema,
        claims: Vec<u32>,
        exposure: Vec<f64>,
        columns: Vec<Column>,
    ) -> Result<Self> {
        schema.validate()?;
        let n = claims.len();
        if exposure.len() != n {
            return Err(Error::InvalidArgument(format!(
                "exposure has {} rows, claims have {n}",
                exposure.len()
            )));
        }
        if columns.len() != schema.columns.len() {
            return Err(Error::InvalidArgument(format!(
                "{} columns supplied for a schema with {}",
                columns.len(),
                schema.columns.len()
            )));
        }
        if let Some(i) = exposure.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "exposure must be positive and finite (row {i}: {})",
                exposure[i]
            )));
        }
        for (spec, col) in schema.columns.iter().zip(&columns) {
            if col.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "column '{}' has {} rows, expected {n}",
                    spec.name,
                    col.len()
                )));
            }
            match (&spec.kind, col) {
                (ColumnKind::Numeric, Column::Numeric(v)) => {
                    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                        return Err(Error::MissingValue {
                            row: i,
                            column: spec.name.clone(),
                        });
                    }
                }
                (ColumnKind::Categorical { categories, .. }, Column::Categorical(v)) => {
                    if let Some(i) = v.iter().position(|&c| c as usize >= categories.len()) {
                        return Err(Error::UnknownCategory {
                            row: i,
                            column: spec.name.clone(),
                            value: v[i].to_string(),
                        });
                    }
                }
                (kind, _) => {
                    return Err(Error::KindMismatch {
                        name: spec.name.clone(),
                        expected: kind.name(),
                        found: if matches!(kind, ColumnKind::Numeric) {
                            "categorical"
                        } else {
                            "numeric"
                        },
                    })
                }
            }
        }
        Ok(Dataset {
            schema,
            claims,
            exposure,
            columns,
        })
    }

    pub fn len(&self) -> usize {
        self.claims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.claims.is_empty()
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn claims(&self) -> &[u32] {
        &self.claims
    }

    pub fn exposure(&self) -> &[f64] {
        &self.exposure
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Result<(&ColumnSpec, &Column)> {
        let i = self.schema.index_of(name)?;
        Ok((&self.schema.columns[i], &self.columns[i]))
    }

    pub fn numeric(&self, name: &str) -> Result<&[f64]> {
        match self.column(name)? {
            (_, Column::Numeric(v)) => Ok(v),
            _ => Err(Error::KindMismatch {
                name: name.to_string(),
                expected: "numeric",
                found: "categorical",
            }),
        }
    }

    /// Category codes plus the level labels and reference index.
    pub fn categorical(&self, name: &str) -> Result<(&[u32], &[String], usize)> {
        match self.column(name)? {
            (
                ColumnSpec {
                    kind:
                        ColumnKind::Categorical {
                            categories,
                            reference,
                        },
                    ..
                },
                Column::Categorical(v),
            ) => Ok((v, categories, *reference)),
            _ => Err(Error::KindMismatch {
                name: name.to_string(),
                expected: "categorical",
                found: "numeric",
            }),
        }
    }

    pub fn total_claims(&self) -> u64 {
        self.claims.iter().map(|&c| c as u64).sum()
    }

    pub fn total_exposure(&self) -> f64 {
        self.exposure.iter().sum()
    }

    /// Rows at the given indices, in the given order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            claims: rows.iter().map(|&i| self.claims[i]).collect(),
            exposure: rows.iter().map(|&i| self.exposure[i]).collect(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
        }
    }

    /// Stacks datasets that share a schema.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
        let mut out = (*first).clone();
        for part in &parts[1..] {
            if part.schema != first.schema {
                return Err(Error::Schema("cannot concatenate differing schemas".into()));
            }
            out.claims.extend_from_slice(&part.claims);
            out.exposure.extend_from_slice(&part.exposure);
            for (dst, src) in out.columns.iter_mut().zip(&part.columns) {
                match (dst, src) {
                    (Column::Numeric(d), Column::Numeric(s)) => d.extend_from_slice(s),
                    (Column::Categorical(d), Column::Categorical(s)) => d.extend_from_slice(s),
                    _ => unreachable!("schemas are equal"),
                }
            }
        }
        Ok(out)
    }

    /// Copy with every exposure replaced.
    pub fn with_exposure(&self, exposure: Vec<f64>) -> Result<Dataset> {
        Dataset::new(
            self.schema.clone(),
            self.claims.clone(),
            exposure,
            self.columns.clone(),
        )
    }

    /// Copy with one extra feature column appended.
    pub fn with_column(&self, spec: ColumnSpec, column: Column) -> Result<Dataset> {
        let mut schema = self.schema.clone();
        schema.columns.push(spec);
        let mut columns = self.columns.clone();
        columns.push(column);
        Dataset::new(schema, self.claims.clone(), self.exposure.clone(), columns)
    }

    /// Re-codes categorical features onto the level lists of `target`, so that a
    /// model fitted against `target` can consume this data. Features absent from
    /// `target` are left untouched.
    pub fn conform_to(&self, target: &[ColumnSpec]) -> Result<Dataset> {
        let mut out = self.clone();
        for (i, spec) in self.schema.columns.iter().enumerate() {
            let Some(t) = target.iter().find(|c| c.name == spec.name) else {
                continue;
            };
            match (&spec.kind, &t.kind, &self.columns[i]) {
                (ColumnKind::Numeric, ColumnKind::Numeric, _) => {}
                (
                    ColumnKind::Categorical {
                        categories: src, ..
                    },
                    ColumnKind::Categorical {
                        categories: dst, ..
                    },
                    Column::Categorical(codes),
                ) => {
                    if spec.kind == t.kind {
                        continue;
                    }
                    let map: Vec<Option<u32>> = src
                        .iter()
                        .map(|l| dst.iter().position(|d| d == l).map(|p| p as u32))
                        .collect();
                    let mut recoded = Vec::with_capacity(codes.len());
                    for (row, &c) in codes.iter().enumerate() {
                        match map[c as usize] {
                            Some(m) => recoded.push(m),
                            None => {
                                return Err(Error::UnknownCategory {
                                    row,
                                    column: spec.name.clone(),
                                    value: src[c as usize].clone(),
                                })
                            }
                        }
                    }
                    out.schema.columns[i].kind = t.kind.clone();
                    out.columns[i] = Column::Categorical(recoded);
                }
                (a, b, _) => {
                    return Err(Error::KindMismatch {
                        name: spec.name.clone(),
                        expected: b.name(),
                        found: a.name(),
                    })
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let schema = FeatureSchema::new(
            vec![
                ColumnSpec::numeric("x"),
                ColumnSpec::categorical("c", ["a", "b", "z"], 0),
            ],
            "n",
            "v",
        )
        .unwrap();
        Dataset::new(
            schema,
            vec![0, 1, 2],
            vec![1.0, 0.5, 1.0],
            vec![
                Column::Numeric(vec![0.1, 0.2, 0.3]),
                Column::Categorical(vec![0, 1, 2]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn rejects_non_positive_exposure() {
        let d = tiny();
        assert!(d.with_exposure(vec![1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn conform_recodes_and_rejects_unseen() {
        let d = tiny();
        let mut target = d.schema().clone();
        target.columns[1] = ColumnSpec::categorical("c", ["z", "b", "a"], 0);
        let c = d.conform_to(&target.columns).unwrap();
        assert_eq!(c.categorical("c").unwrap().0, &[2, 1, 0]);

        target.columns[1] = ColumnSpec::categorical("c", ["a", "b"], 0);
        let err = d.conform_to(&target.columns).unwrap_err();
        assert!(matches!(err, Error::UnknownCategory { row: 2, .. }));
    }

    #[test]
    fn concat_then_select() {
        let d = tiny();
        let both = Dataset::concat(&[&d, &d]).unwrap();
        assert_eq!(both.len(), 6);
        let s = both.select(&[5, 0]);
        assert_eq!(s.claims(), &[2, 0]);
    }
}
