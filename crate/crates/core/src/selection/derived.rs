use serde::{Deserialize, Serialize};

use crate::data::{Column, ColumnSpec, Dataset};
use crate::error::{Error, Result};

/// A categorical column computed from an existing feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DerivedFeature {
    /// Numeric feature cut at `edges`; bins are closed on the right.
    Binned {
        name: String,
        source: String,
        edges: Vec<f64>,
    },
    /// Categorical feature with its levels merged into clusters.
    Clustered {
        name: String,
        source: String,
        source_categories: Vec<String>,
        assignment: Vec<u32>,
        k: usize,
    },
}

impl DerivedFeature {
    pub fn name(&self) -> &str {
        match self {
            DerivedFeature::Binned { name, .. } | DerivedFeature::Clustered { name, .. } => name,
        }
    }

    pub fn source(&self) -> &str {
        match self {
            DerivedFeature::Binned { source, .. } | DerivedFeature::Clustered { source, .. } => {
                source
            }
        }
    }

    pub fn levels(&self) -> usize {
        match self {
            DerivedFeature::Binned { edges, .. } => edges.len() + 1,
            DerivedFeature::Clustered { k, .. } => *k,
        }
    }

    pub fn spec(&self) -> ColumnSpec {
        let prefix = match self {
            DerivedFeature::Binned { .. } => "b",
            DerivedFeature::Clustered { .. } => "c",
        };
        ColumnSpec::categorical(
            self.name(),
            (1..=self.levels()).map(|l| format!("{prefix}{l}")),
            0,
        )
    }

    pub fn codes(&self, data: &Dataset) -> Result<Vec<u32>> {
        match self {
            DerivedFeature::Binned { source, edges, .. } => Ok(data
                .numeric(source)?
                .iter()
                .map(|x| edges.partition_point(|e| e < x) as u32)
                .collect()),
            DerivedFeature::Clustered {
                source,
                source_categories,
                assignment,
                ..
            } => {
                let (codes, cats, _) = data.categorical(source)?;
                let map: Vec<u32> = cats
                    .iter()
                    .map(|c| {
                        source_categories
                            .iter()
                            .position(|s| s == c)
                            .map(|p| assignment[p])
                            .ok_or_else(|| Error::UnknownCategory {
                                row: 0,
                                column: source.clone(),
                                value: c.clone(),
                            })
                    })
                    .collect::<Result<_>>()?;
                Ok(codes.iter().map(|&c| map[c as usize]).collect())
            }
        }
    }

    /// Appends the derived column; a no-op when `data` already has it.
    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        if data.schema().index_of(self.name()).is_ok() {
            return Ok(data.clone());
        }
        data.with_column(self.spec(), Column::Categorical(self.codes(data)?))
    }
}

pub fn apply_all(data: &Dataset, derived: &[DerivedFeature]) -> Result<Dataset> {
    let mut out = data.clone();
    for d in derived {
        out = d.apply(&out)?;
    }
    Ok(out)
}

/// Equal-count bins of a numeric feature from its empirical quantiles in
/// `data`. Values tied across a bin edge fall into the lower bin.
pub fn quantile_bin(data: &Dataset, feature: &str, bins: usize) -> Result<DerivedFeature> {
    if bins < 2 {
        return Err(Error::InvalidArgument("need at least two bins".into()));
    }
    let mut v = data.numeric(feature)?.to_vec();
    v.sort_by(f64::total_cmp);
    let mut distinct = v.clone();
    distinct.dedup();
    if distinct.len() < bins {
        return Err(Error::InvalidArgument(format!(
            "'{feature}' has {} distinct values, fewer than {bins} bins",
            distinct.len()
        )));
    }
    let n = v.len();
    let mut edges: Vec<f64> = (1..bins).map(|b| v[b * n / bins - 1]).collect();
    edges.dedup();
    Ok(DerivedFeature::Binned {
        name: format!("{feature}_q{bins}"),
        source: feature.to_string(),
        edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, FeatureSchema};

    fn numeric_data(values: Vec<f64>) -> Dataset {
        let n = values.len();
        let schema = FeatureSchema::new(vec![ColumnSpec::numeric("x")], "n", "v").unwrap();
        Dataset::new(
            schema,
            vec![0; n],
            vec![1.0; n],
            vec![Column::Numeric(values)],
        )
        .unwrap()
    }

    #[test]
    fn uniform_values_split_evenly() {
        let d = numeric_data((0..100).map(f64::from).collect());
        let b = quantile_bin(&d, "x", 4).unwrap();
        let out = b.apply(&d).unwrap();
        let (codes, cats, _) = out.categorical("x_q4").unwrap();
        assert_eq!(cats.len(), 4);
        for l in 0..4 {
            assert_eq!(codes.iter().filter(|&&c| c == l).count(), 25);
        }
    }

    #[test]
    fn constant_feature_is_rejected() {
        let d = numeric_data(vec![1.0; 10]);
        assert!(quantile_bin(&d, "x", 2).is_err());
    }

    #[test]
    fn ties_fall_into_the_lower_bin() {
        let d = numeric_data(vec![1.0, 2.0, 2.0, 2.0, 3.0, 4.0]);
        let b = quantile_bin(&d, "x", 3).unwrap();
        let codes = b.codes(&d).unwrap();
        // upper edges at sorted positions 1, 3, 5 are 2, 2, 4
        assert_eq!(codes, vec![0, 0, 0, 0, 1, 1]);
    }

    #[test]
    fn clustered_codes_follow_assignment() {
        let d = generate_synthetic(300, 1, true).unwrap();
        let f = DerivedFeature::Clustered {
            name: "x10_k2".into(),
            source: "x10".into(),
            source_categories: (0..6).map(|i| i.to_string()).collect(),
            assignment: vec![0, 0, 1, 1, 1, 0],
            k: 2,
        };
        let out = f.apply(&d).unwrap();
        let (src, ..) = out.categorical("x10").unwrap();
        let (dst, cats, _) = out.categorical("x10_k2").unwrap();
        assert_eq!(cats, ["c1", "c2"]);
        for (s, t) in src.iter().zip(dst) {
            assert_eq!(*t, [0, 0, 1, 1, 1, 0][*s as usize]);
        }
        assert_eq!(f.apply(&out).unwrap(), out);
    }
}
