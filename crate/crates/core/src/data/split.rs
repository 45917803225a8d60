use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

impl SplitFractions {
    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self> {
        let f = SplitFractions {
            train,
            validation,
            test,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "split fractions must be positive, got {parts:?}"
            )));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split fractions must sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }

    /// Part sizes for `n` rows: train and validation rounded, test takes the rest.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let train = ((n as f64) * self.train).round() as usize;
        let validation = (((n as f64) * self.validation).round() as usize).min(n - train.min(n));
        let train = train.min(n);
        (train, validation, n - train - validation)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub seed: u64,
    /// Source row indices of each part, ascending.
    pub rows: [Vec<usize>; 3],
}

impl SplitDataset {
    /// Training and validation rows stacked; the data a benchmark GLM is fitted on.
    pub fn train_validation(&self) -> Dataset {
        Dataset::concat(&[&self.train, &self.validation]).expect("parts share a schema")
    }
}

/// Uniform random partition of the rows, deterministic in `seed`.
pub fn split(data: &Dataset, fractions: SplitFractions, seed: u64) -> Result<SplitDataset> {
    fractions.validate()?;
    let n = data.len();
    let (n_train, n_val, n_test) = fractions.sizes(n);
    if n > 0 && (n_train == 0 || n_val == 0 || n_test == 0) {
        return Err(Error::InvalidArgument(format!(
            "split of {n} rows leaves an empty part ({n_train}, {n_val}, {n_test})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut parts = [
        order[..n_train].to_vec(),
        order[n_train..n_train + n_val].to_vec(),
        order[n_train + n_val..].to_vec(),
    ];
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(SplitDataset {
        train: data.select(&parts[0]),
        validation: data.select(&parts[1]),
        test: data.select(&parts[2]),
        seed,
        rows: parts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;
    use proptest::prelude::*;

    #[test]
    fn ten_rows_split_eight_one_one() {
        let d = generate_synthetic(10, 1, true).unwrap();
        let s = split(&d, SplitFractions::default(), 4).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (8, 1, 1));
    }

    #[test]
    fn same_seed_same_partition() {
        let d = generate_synthetic(200, 1, true).unwrap();
        let a = split(&d, SplitFractions::default(), 9).unwrap();
        let b = split(&d, SplitFractions::default(), 9).unwrap();
        assert_eq!(a.rows, b.rows);
        let c = split(&d, SplitFractions::default(), 10).unwrap();
        assert_ne!(a.rows, c.rows);
    }

    #[test]
    fn degenerate_parts_rejected() {
        let d = generate_synthetic(3, 1, true).unwrap();
        assert!(split(&d, SplitFractions::default(), 1).is_err());
        assert!(SplitFractions::new(0.5, 0.5, 0.0).is_err());
        assert!(SplitFractions::new(0.5, 0.4, 0.2).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn parts_partition_source(n in 30usize..400, seed in any::<u64>()) {
            let d = generate_synthetic(n, 2, true).unwrap();
            let s = split(&d, SplitFractions::default(), seed).unwrap();
            let mut all: Vec<usize> = s.rows.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(s.train.len() + s.validation.len() + s.test.len(), n);
        }
    }
}
