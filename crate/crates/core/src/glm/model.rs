use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::factorial::ln_factorial;

use super::irls::{self, IrlsOptions};
use super::terms::{build_design, TermSpec};
use crate::data::{ColumnSpec, Dataset};
use crate::error::{Error, Result};
use crate::exec::{sum_rows, Exec};
use crate::poisson;

/// Per-row log-offset entering the linear predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct Offset(Vec<f64>);

impl Offset {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "offset is not finite at row {i}"
            )));
        }
        Ok(Offset(values))
    }

    /// `ln v_i`
    pub fn log_exposure(data: &Dataset) -> Self {
        Offset(data.exposure().iter().map(|v| v.ln()).collect())
    }

    /// `ln(v_i·λ̂_i)` from expected counts that already include exposure.
    pub fn from_expected(expected: &[f64]) -> Result<Self> {
        if let Some(i) = expected.iter().position(|m| !(*m > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "expected count must be positive (row {i}: {})",
                expected[i]
            )));
        }
        Offset::new(expected.iter().map(|m| m.ln()).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitStats {
    pub n_obs: usize,
    pub log_likelihood: f64,
    pub residual_deviance: f64,
    pub null_deviance: f64,
    pub aic: f64,
    pub bic: f64,
    pub degrees_of_freedom: usize,
    pub converged: bool,
    pub iterations: usize,
    pub deviance_trace: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientStat {
    pub label: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z_value: f64,
    pub p_value: f64,
}

/// A fitted Poisson log-link GLM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlmModel {
    pub terms: Vec<TermSpec>,
    /// Specs of the features the terms reference, fixing category codings.
    pub features: Vec<ColumnSpec>,
    pub beta: Vec<f64>,
    pub fit: FitStats,
    pub coefficients: Vec<CoefficientStat>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlmMetrics {
    pub mean_poisson_deviance: f64,
    pub wapf: f64,
    pub waof: f64,
}

impl GlmMetrics {
    pub fn balance_residual(&self) -> f64 {
        self.wapf - self.waof
    }
}

fn referenced_features(data: &Dataset, terms: &[TermSpec]) -> Result<Vec<ColumnSpec>> {
    let mut out: Vec<ColumnSpec> = Vec::new();
    for t in terms {
        for name in t.features() {
            if out.iter().all(|c| c.name != name) {
                out.push(data.schema().column(name)?.clone());
            }
        }
    }
    Ok(out)
}

fn log_likelihood(exec: Exec, claims: &[u32], mean: &[f64]) -> f64 {
    sum_rows(exec, claims.len(), |i| {
        let y = claims[i] as f64;
        let ll = if claims[i] > 0 { y * mean[i].ln() } else { 0.0 };
        ll - mean[i] - ln_factorial(claims[i] as u64)
    })
}

/// Fits `N_i ~ Poisson(exp(offset_i + x_iᵀβ))` by IRLS.
pub fn fit_poisson(
    data: &Dataset,
    terms: &[TermSpec],
    offset: &Offset,
    opts: &IrlsOptions,
) -> Result<GlmModel> {
    if offset.len() != data.len() {
        return Err(Error::InvalidArgument(format!(
            "offset has {} rows, data {}",
            offset.len(),
            data.len()
        )));
    }
    let design = build_design(data, terms)?;
    let res = irls::fit(&design, data.claims(), offset.values(), opts)?;
    let n = data.len();
    let p = design.width();
    let ll = log_likelihood(opts.exec, data.claims(), &res.mean);

    let null_mean: Vec<f64> = if terms.contains(&TermSpec::Intercept) {
        let total_mu: f64 = offset.values().iter().map(|o| o.exp()).sum();
        let level = data.total_claims() as f64 / total_mu;
        offset.values().iter().map(|o| o.exp() * level).collect()
    } else {
        offset.values().iter().map(|o| o.exp()).collect()
    };
    let null_deviance = poisson::total_deviance(opts.exec, data.claims(), &null_mean);

    let coefficients = design
        .labels
        .iter()
        .enumerate()
        .map(|(j, label)| {
            let estimate = res.beta[j];
            let std_error = res.covariance[(j, j)].max(0.0).sqrt();
            let z_value = estimate / std_error;
            CoefficientStat {
                label: label.clone(),
                estimate,
                std_error,
                z_value,
                p_value: erfc(z_value.abs() / std::f64::consts::SQRT_2),
            }
        })
        .collect();

    Ok(GlmModel {
        terms: terms.to_vec(),
        features: referenced_features(data, terms)?,
        beta: res.beta,
        fit: FitStats {
            n_obs: n,
            log_likelihood: ll,
            residual_deviance: res.deviance,
            null_deviance,
            aic: -2.0 * ll + 2.0 * p as f64,
            bic: -2.0 * ll + (n as f64).ln() * p as f64,
            degrees_of_freedom: n.saturating_sub(p),
            converged: res.converged,
            iterations: res.iterations,
            deviance_trace: res.deviance_trace,
        },
        coefficients,
    })
}

impl GlmModel {
    pub fn labels(&self) -> Vec<&str> {
        self.coefficients.iter().map(|c| c.label.as_str()).collect()
    }

    pub fn n_coefficients(&self) -> usize {
        self.beta.len()
    }

    pub fn has_intercept(&self) -> bool {
        self.terms.contains(&TermSpec::Intercept)
    }

    /// Expected counts `exp(offset + η̂)`; with a log-exposure offset this is `v·λ̂`.
    pub fn predict(&self, data: &Dataset, offset: &Offset) -> Result<Vec<f64>> {
        if offset.len() != data.len() {
            return Err(Error::InvalidArgument(
                "offset length differs from data".into(),
            ));
        }
        let data = data.conform_to(&self.features)?;
        let design = build_design(&data, &self.terms)?;
        let p = design.width();
        if p != self.beta.len() {
            return Err(Error::Layout(format!(
                "design has {p} columns, model {}",
                self.beta.len()
            )));
        }
        Ok((0..data.len())
            .map(|i| {
                let eta: f64 = design
                    .row(i)
                    .iter()
                    .zip(&self.beta)
                    .map(|(a, b)| a * b)
                    .sum();
                (offset.values()[i] + eta).exp()
            })
            .collect())
    }

    /// Expected counts with the plain `ln v` offset.
    pub fn predict_counts(&self, data: &Dataset) -> Result<Vec<f64>> {
        self.predict(data, &Offset::log_exposure(data))
    }

    pub fn metrics(&self, data: &Dataset, offset: &Offset) -> Result<GlmMetrics> {
        let expected = self.predict(data, offset)?;
        Ok(metrics_from_expected(data, &expected))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        crate::io::read_json(path)
    }
}

pub fn metrics_from_expected(data: &Dataset, expected: &[f64]) -> GlmMetrics {
    GlmMetrics {
        mean_poisson_deviance: poisson::mean_deviance(Exec::default(), data.claims(), expected),
        wapf: poisson::wapf(expected, data.exposure()),
        waof: poisson::waof(data.claims(), data.exposure()),
    }
}
