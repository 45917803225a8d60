//! Poisson GLMs with log link: design construction, IRLS fitting, prediction
//! and fit statistics.

mod irls;
mod model;
mod terms;

pub use irls::{collinear_columns, IrlsOptions, IrlsResult};
pub use model::{
    fit_poisson, metrics_from_expected, CoefficientStat, FitStats, GlmMetrics, GlmModel, Offset,
};
pub use terms::{build_design, Design, InteractionForm, TermSpec};

/// Terms of the benchmark model used on the synthetic data.
pub fn synthetic_benchmark_terms() -> Vec<TermSpec> {
    vec![
        TermSpec::Intercept,
        TermSpec::numeric("x1", 1),
        TermSpec::numeric("x2", 2),
        TermSpec::numeric("x3", 1),
        TermSpec::numeric("x3", 2),
        TermSpec::categorical("x9"),
        TermSpec::categorical("x10"),
    ]
}
