//! Poisson deviance and frequency summaries shared by the GLM, the network and
//! the lift reports.

use crate::exec::{sum_rows, Exec};

/// Unit deviance `2·[μ − N + N·ln(N/μ)]`, with `N·ln(N/μ) = 0` at `N = 0`.
#[inline]
pub fn unit_deviance(count: f64, mean: f64) -> f64 {
    if count > 0.0 {
        2.0 * (mean - count + count * (count / mean).ln())
    } else {
        2.0 * mean
    }
}

/// Sum of unit deviances; `expected[i]` is the predicted count including exposure.
pub fn total_deviance(exec: Exec, claims: &[u32], expected: &[f64]) -> f64 {
    assert_eq!(claims.len(), expected.len());
    sum_rows(exec, claims.len(), |i| {
        unit_deviance(claims[i] as f64, expected[i])
    })
}

pub fn mean_deviance(exec: Exec, claims: &[u32], expected: &[f64]) -> f64 {
    if claims.is_empty() {
        return 0.0;
    }
    total_deviance(exec, claims, expected) / claims.len() as f64
}

/// Weighted average predicted frequency `Σ λ̂·v / Σ v`, given expected counts `λ̂·v`.
pub fn wapf(expected: &[f64], exposure: &[f64]) -> f64 {
    expected.iter().sum::<f64>() / exposure.iter().sum::<f64>()
}

/// Weighted average observed frequency `Σ N / Σ v`.
pub fn waof(claims: &[u32], exposure: &[f64]) -> f64 {
    claims.iter().map(|&c| c as f64).sum::<f64>() / exposure.iter().sum::<f64>()
}
