//! Synthetic claim-count data with two planted interactions
//! (`0.5·x4·x5` and `0.125·x5²·x6`).

use nalgebra::{Matrix, SMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson, StandardNormal};

use super::dataset::{Column, Dataset};
use super::schema::{ColumnSpec, FeatureSchema};
use crate::error::{Error, Result};

pub const RESPONSE: &str = "claim_total_nb";
pub const EXPOSURE: &str = "annual_exposure";

const NUMERIC: usize = 8;
const X9_EFFECT: [f64; 3] = [0.0, -0.1, -0.2];
const X10_EFFECT: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];

/// Schema of the generated data: `x1..x8` numeric, `x9` with levels 0..2 and
/// `x10` with levels 0..5, both using level "0" as reference.
pub fn synthetic_schema() -> FeatureSchema {
    let mut columns: Vec<ColumnSpec> = (1..=NUMERIC)
        .map(|j| ColumnSpec::numeric(format!("x{j}")))
        .collect();
    columns.push(ColumnSpec::categorical(
        "x9",
        (0..3).map(|c| c.to_string()),
        0,
    ));
    columns.push(ColumnSpec::categorical(
        "x10",
        (0..6).map(|c| c.to_string()),
        0,
    ));
    FeatureSchema::new(columns, RESPONSE, EXPOSURE).expect("static schema is valid")
}

/// Log of the true claim rate before clamping.
pub fn true_log_rate(x: &[f64; NUMERIC], x9: usize, x10: usize) -> f64 {
    -3.0 + 0.5 * x[0] - 0.25 * x[1] * x[1]
        + 0.5 * x[2].abs() * (2.0 * x[2]).sin()
        + 0.5 * x[3] * x[4]
        + 0.125 * x[4] * x[4] * x[5]
        + X9_EFFECT[x9]
        + X10_EFFECT[x10]
}

/// True claim rate, optionally clamped at 1.
pub fn true_rate(x: &[f64; NUMERIC], x9: usize, x10: usize, clamp: bool) -> f64 {
    let mu = true_log_rate(x, x9, x10).exp();
    if clamp {
        mu.min(1.0)
    } else {
        mu
    }
}

/// Per-row true rates for a dataset produced by [`generate_synthetic`].
pub fn true_rates(data: &Dataset, clamp: bool) -> Result<Vec<f64>> {
    let numeric: Vec<&[f64]> = (1..=NUMERIC)
        .map(|j| data.numeric(&format!("x{j}")))
        .collect::<Result<_>>()?;
    let (x9, ..) = data.categorical("x9")?;
    let (x10, ..) = data.categorical("x10")?;
    Ok((0..data.len())
        .map(|i| {
            let x: [f64; NUMERIC] = std::array::from_fn(|j| numeric[j][i]);
            true_rate(&x, x9[i] as usize, x10[i] as usize, clamp)
        })
        .collect())
}

fn correlation_factor() -> SMatrix<f64, NUMERIC, NUMERIC> {
    let mut sigma = SMatrix::<f64, NUMERIC, NUMERIC>::identity();
    // corr(x2, x8) = 0.5
    sigma[(1, 7)] = 0.5;
    sigma[(7, 1)] = 0.5;
    Matrix::cholesky(sigma)
        .expect("correlation matrix is positive definite")
        .l()
}

/// Draws `n` rows with unit exposure. Claims are Poisson with the (optionally
/// clamped) true rate.
pub fn generate_synthetic(n: usize, seed: u64, clamp: bool) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = correlation_factor();
    let x9_dist = Binomial::new(2, 0.3).expect("valid binomial");
    let x10_dist = Binomial::new(5, 0.2).expect("valid binomial");

    let mut numeric: Vec<Vec<f64>> = (0..NUMERIC).map(|_| Vec::with_capacity(n)).collect();
    let mut x9 = Vec::with_capacity(n);
    let mut x10 = Vec::with_capacity(n);
    let mut claims = Vec::with_capacity(n);
    for _ in 0..n {
        let z = SMatrix::<f64, NUMERIC, 1>::from_fn(|_, _| rng.sample(StandardNormal));
        let xv = l * z;
        let x: [f64; NUMERIC] = std::array::from_fn(|j| xv[j]);
        let c9 = x9_dist.sample(&mut rng) as usize;
        let c10 = x10_dist.sample(&mut rng) as usize;
        let mu = true_rate(&x, c9, c10, clamp);
        let count: f64 = Poisson::new(mu).expect("rate is positive").sample(&mut rng);
        for (col, v) in numeric.iter_mut().zip(x) {
            col.push(v);
        }
        x9.push(c9 as u32);
        x10.push(c10 as u32);
        claims.push(count as u32);
    }
    let mut columns: Vec<Column> = numeric.into_iter().map(Column::Numeric).collect();
    columns.push(Column::Categorical(x9));
    columns.push(Column::Categorical(x10));
    Dataset::new(synthetic_schema(), claims, vec![1.0; n], columns)
}
