//! Turns ranked interaction candidates into GLM terms, scores each with a
//! small GLM offset by the benchmark, and recommends the best one.

mod cluster;
mod derived;

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use cluster::{
    calinski_harabasz, cluster_embeddings, cluster_points, default_k_range, kmeans, ClusterMap,
    DEFAULT_RESTARTS,
};
pub use derived::{apply_all, quantile_bin, DerivedFeature};

use crate::cann::CannModel;
use crate::data::{ColumnKind, Dataset, SplitDataset};
use crate::error::{Error, Result};
use crate::exec::{map_items, Exec};
use crate::glm::{
    fit_poisson, CoefficientStat, GlmModel, InteractionForm, IrlsOptions, Offset, TermSpec,
};
use crate::io::fmt_f64;
use crate::nid::FeaturePairScore;
use crate::poisson;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kpi {
    #[default]
    Aic,
    Bic,
    Deviance,
}

impl Kpi {
    pub fn value(self, r: &MiniGlmReport) -> f64 {
        match self {
            Kpi::Aic => r.aic,
            Kpi::Bic => r.bic,
            Kpi::Deviance => r.residual_deviance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FormsConfig {
    /// Powers tried on each side of a numeric × numeric pair.
    pub powers: Vec<u32>,
    /// Also try quantile-binned versions of numeric features.
    pub quantile_bins: Option<usize>,
    /// Also try embedding-clustered versions of embedded categoricals.
    pub cluster_embeddings: bool,
    pub cluster_restarts: usize,
    pub seed: u64,
}

impl Default for FormsConfig {
    fn default() -> Self {
        FormsConfig {
            powers: vec![1, 2, 3],
            quantile_bins: None,
            cluster_embeddings: false,
            cluster_restarts: DEFAULT_RESTARTS,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub kpi: Kpi,
    /// Number of NID pairs turned into candidates.
    pub top_k: usize,
    pub forms: FormsConfig,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            kpi: Kpi::Aic,
            top_k: 5,
            forms: FormsConfig::default(),
        }
    }
}

/// One concrete term to try for a candidate pair, with any derived columns
/// it needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateForm {
    pub form: InteractionForm,
    pub derived: Vec<DerivedFeature>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateInteraction {
    pub feature_1: String,
    pub feature_2: String,
    pub forms: Vec<CandidateForm>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiniGlmReport {
    pub feature_1: String,
    pub feature_2: String,
    pub form: InteractionForm,
    pub derived: Vec<DerivedFeature>,
    pub converged: bool,
    pub n_coefficients: usize,
    pub aic: f64,
    pub bic: f64,
    pub residual_deviance: f64,
    pub test_mean_deviance: f64,
    pub coefficients: Vec<CoefficientStat>,
    pub error: Option<String>,
}

impl MiniGlmReport {
    fn failed(f1: &str, f2: &str, form: &CandidateForm, err: &Error) -> Self {
        MiniGlmReport {
            feature_1: f1.to_string(),
            feature_2: f2.to_string(),
            form: form.form.clone(),
            derived: form.derived.clone(),
            converged: false,
            n_coefficients: 0,
            aic: f64::NAN,
            bic: f64::NAN,
            residual_deviance: f64::NAN,
            test_mean_deviance: f64::NAN,
            coefficients: Vec::new(),
            error: Some(err.to_string()),
        }
    }

    pub fn term(&self) -> TermSpec {
        TermSpec::interaction(self.form.clone())
    }

    pub fn is_pair(&self, a: &str, b: &str) -> bool {
        (self.feature_1 == a && self.feature_2 == b) || (self.feature_1 == b && self.feature_2 == a)
    }
}

fn fit_form(
    fit_data: &Dataset,
    fit_offset: &Offset,
    test: Option<(&Dataset, &[f64])>,
    form: &InteractionForm,
    opts: &IrlsOptions,
) -> Result<(GlmModel, f64)> {
    let model = fit_poisson(
        fit_data,
        &[TermSpec::interaction(form.clone())],
        fit_offset,
        opts,
    )?;
    let test_dev = match test {
        Some((data, expected)) => {
            let pred = model.predict(data, &Offset::from_expected(expected)?)?;
            poisson::mean_deviance(opts.exec, data.claims(), &pred)
        }
        None => f64::NAN,
    };
    Ok((model, test_dev))
}

fn report(
    f1: &str,
    f2: &str,
    form: &CandidateForm,
    model: &GlmModel,
    test_dev: f64,
) -> MiniGlmReport {
    MiniGlmReport {
        feature_1: f1.to_string(),
        feature_2: f2.to_string(),
        form: form.form.clone(),
        derived: form.derived.clone(),
        converged: model.fit.converged,
        n_coefficients: model.n_coefficients(),
        aic: model.fit.aic,
        bic: model.fit.bic,
        residual_deviance: model.fit.residual_deviance,
        test_mean_deviance: test_dev,
        coefficients: model.coefficients.clone(),
        error: None,
    }
}

/// Fits `N ~ Poisson(v·λ̂_benchmark·exp(I(x)))` with the interaction columns as
/// the only covariates and no intercept.
pub fn fit_mini_glm(
    data: &Dataset,
    benchmark: &GlmModel,
    form: &InteractionForm,
    opts: &IrlsOptions,
) -> Result<MiniGlmReport> {
    let expected = benchmark.predict_counts(data)?;
    let offset = Offset::from_expected(&expected)?;
    let (model, _) = fit_form(data, &offset, None, form, opts)?;
    let (a, b) = form.features();
    let cf = CandidateForm {
        form: form.clone(),
        derived: Vec::new(),
    };
    Ok(report(a, b, &cf, &model, f64::NAN))
}

fn kind_of<'a>(data: &'a Dataset, name: &str) -> Result<&'a ColumnKind> {
    Ok(&data.schema().column(name)?.kind)
}

/// Expands a feature pair into the forms to try. `binning_source` supplies
/// quantile edges; `cann` supplies embeddings for clustering.
pub fn candidate_forms(
    data: &Dataset,
    binning_source: &Dataset,
    pair: (&str, &str),
    cfg: &FormsConfig,
    cann: Option<&CannModel>,
) -> Result<CandidateInteraction> {
    let (a, b) = pair;
    let ka = kind_of(data, a)?;
    let kb = kind_of(data, b)?;
    let mut forms = Vec::new();
    let plain = |form| CandidateForm {
        form,
        derived: Vec::new(),
    };

    let binned = |name: &str| -> Option<DerivedFeature> {
        let bins = cfg.quantile_bins?;
        match quantile_bin(binning_source, name, bins) {
            Ok(d) => Some(d),
            Err(e) => {
                log::warn!("skipping binned '{name}': {e}");
                None
            }
        }
    };
    let clustered = |name: &str| -> Option<DerivedFeature> {
        if !cfg.cluster_embeddings {
            return None;
        }
        let model = cann?;
        if !model
            .architecture()
            .embeddings
            .iter()
            .any(|e| e.feature == name)
        {
            return None;
        }
        let n = data.schema().column(name).ok()?.categories()?.len();
        match cluster_embeddings(
            model,
            name,
            default_k_range(n),
            cfg.cluster_restarts,
            cfg.seed,
        ) {
            Ok(map) => Some(map.derived_feature()),
            Err(e) => {
                log::warn!("skipping clustered '{name}': {e}");
                None
            }
        }
    };
    // categorical stand-ins for a feature: binned numerics, clustered categoricals
    let alternatives = |name: &str, kind: &ColumnKind| -> Vec<DerivedFeature> {
        match kind {
            ColumnKind::Numeric => binned(name).into_iter().collect(),
            ColumnKind::Categorical { .. } => clustered(name).into_iter().collect(),
        }
    };

    match (ka, kb) {
        (ColumnKind::Numeric, ColumnKind::Numeric) => {
            for &pa in &cfg.powers {
                for &pb in &cfg.powers {
                    forms.push(plain(InteractionForm::NumNum {
                        a: a.into(),
                        power_a: pa,
                        b: b.into(),
                        power_b: pb,
                    }));
                }
            }
            if let (Some(da), Some(db)) = (binned(a), binned(b)) {
                forms.push(CandidateForm {
                    form: InteractionForm::CatCat {
                        a: da.name().into(),
                        b: db.name().into(),
                    },
                    derived: vec![da, db],
                });
            }
        }
        (ColumnKind::Numeric, ColumnKind::Categorical { .. })
        | (ColumnKind::Categorical { .. }, ColumnKind::Numeric) => {
            let (num, cat) = if matches!(ka, ColumnKind::Numeric) {
                (a, b)
            } else {
                (b, a)
            };
            forms.push(plain(InteractionForm::NumCat {
                num: num.into(),
                cat: cat.into(),
            }));
            if let Some(dn) = binned(num) {
                forms.push(CandidateForm {
                    form: InteractionForm::CatCat {
                        a: dn.name().into(),
                        b: cat.into(),
                    },
                    derived: vec![dn],
                });
            }
            if let Some(dc) = clustered(cat) {
                forms.push(CandidateForm {
                    form: InteractionForm::NumCat {
                        num: num.into(),
                        cat: dc.name().into(),
                    },
                    derived: vec![dc],
                });
            }
        }
        (ColumnKind::Categorical { .. }, ColumnKind::Categorical { .. }) => {
            forms.push(plain(InteractionForm::CatCat {
                a: a.into(),
                b: b.into(),
            }));
            let alt_a = alternatives(a, ka);
            let alt_b = alternatives(b, kb);
            for da in &alt_a {
                forms.push(CandidateForm {
                    form: InteractionForm::CatCat {
                        a: da.name().into(),
                        b: b.into(),
                    },
                    derived: vec![da.clone()],
                });
            }
            for db in &alt_b {
                forms.push(CandidateForm {
                    form: InteractionForm::CatCat {
                        a: a.into(),
                        b: db.name().into(),
                    },
                    derived: vec![db.clone()],
                });
            }
            for da in &alt_a {
                for db in &alt_b {
                    forms.push(CandidateForm {
                        form: InteractionForm::CatCat {
                            a: da.name().into(),
                            b: db.name().into(),
                        },
                        derived: vec![da.clone(), db.clone()],
                    });
                }
            }
        }
    }
    Ok(CandidateInteraction {
        feature_1: a.to_string(),
        feature_2: b.to_string(),
        forms,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub kpi: Kpi,
    /// Converged reports ordered by the KPI, followed by failed ones.
    pub reports: Vec<MiniGlmReport>,
}

/// Summary written next to the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecommendationRecord {
    pub kpi: Kpi,
    pub feature_1: String,
    pub feature_2: String,
    pub term: String,
    pub kpi_value: f64,
    pub aic: f64,
    pub bic: f64,
    pub residual_deviance: f64,
    pub test_mean_deviance: f64,
    pub term_spec: TermSpec,
    pub derived: Vec<DerivedFeature>,
    pub coefficients: Vec<CoefficientStat>,
}

impl Recommendation {
    pub fn winner(&self) -> &MiniGlmReport {
        &self.reports[0]
    }

    pub fn record(&self) -> RecommendationRecord {
        let w = self.winner();
        RecommendationRecord {
            kpi: self.kpi,
            feature_1: w.feature_1.clone(),
            feature_2: w.feature_2.clone(),
            term: w.form.to_string(),
            kpi_value: self.kpi.value(w),
            aic: w.aic,
            bic: w.bic,
            residual_deviance: w.residual_deviance,
            test_mean_deviance: w.test_mean_deviance,
            term_spec: w.term(),
            derived: w.derived.clone(),
            coefficients: w.coefficients.clone(),
        }
    }

    /// `candidate,form,aic,bic,resid_deviance,test_deviance,converged`
    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("candidate,form,n_coef,aic,bic,resid_deviance,test_deviance,converged\n");
        for r in &self.reports {
            let _ = writeln!(
                s,
                "{}*{},{},{},{},{},{},{},{}",
                r.feature_1,
                r.feature_2,
                r.form,
                r.n_coefficients,
                fmt_f64(r.aic),
                fmt_f64(r.bic),
                fmt_f64(r.residual_deviance),
                fmt_f64(r.test_mean_deviance),
                r.converged
            );
        }
        s
    }
}

impl RecommendationRecord {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Orders converged reports by KPI, then fewer coefficients, then pair and
/// form names.
pub fn rank_reports(kpi: Kpi, reports: &mut [MiniGlmReport]) {
    let key = |r: &MiniGlmReport| (!r.converged || r.error.is_some(), kpi.value(r));
    reports.sort_by(|x, y| {
        let (fx, vx) = key(x);
        let (fy, vy) = key(y);
        fx.cmp(&fy)
            .then_with(|| {
                if fx {
                    Ordering::Equal
                } else {
                    vx.partial_cmp(&vy).unwrap_or(Ordering::Equal)
                }
            })
            .then(x.n_coefficients.cmp(&y.n_coefficients))
            .then_with(|| (&x.feature_1, &x.feature_2).cmp(&(&y.feature_1, &y.feature_2)))
            .then_with(|| x.form.to_string().cmp(&y.form.to_string()))
    });
}

/// Fits a mini-GLM for every form of the top NID pairs on the
/// train+validation data and recommends the one with the best KPI.
/// Test deviances are reported but do not affect the choice.
pub fn recommend(
    data: &SplitDataset,
    benchmark: &GlmModel,
    top: &[FeaturePairScore],
    cfg: &SelectionConfig,
    cann: Option<&CannModel>,
    exec: Exec,
) -> Result<Recommendation> {
    if top.is_empty() {
        return Err(Error::InvalidArgument("no candidate pairs".into()));
    }
    let fit_base = data.train_validation();
    let test_base = &data.test;
    let fit_expected = benchmark.predict_counts(&fit_base)?;
    let test_expected = benchmark.predict_counts(test_base)?;
    let fit_offset = Offset::from_expected(&fit_expected)?;

    let mut jobs = Vec::new();
    for pair in top.iter().take(cfg.top_k.max(1)) {
        let cand = candidate_forms(
            &fit_base,
            &data.train,
            (&pair.feature_1, &pair.feature_2),
            &cfg.forms,
            cann,
        )?;
        for form in cand.forms {
            jobs.push((cand.feature_1.clone(), cand.feature_2.clone(), form));
        }
    }
    let opts = IrlsOptions {
        exec: Exec::Sequential,
        ..IrlsOptions::default()
    };
    let mut reports = map_items(exec, jobs, |(f1, f2, form)| {
        let run = || -> Result<MiniGlmReport> {
            let fit_data = apply_all(&fit_base, &form.derived)?;
            let test_data = apply_all(test_base, &form.derived)?;
            let (model, test_dev) = fit_form(
                &fit_data,
                &fit_offset,
                Some((&test_data, &test_expected)),
                &form.form,
                &opts,
            )?;
            Ok(report(&f1, &f2, &form, &model, test_dev))
        };
        run().unwrap_or_else(|e| MiniGlmReport::failed(&f1, &f2, &form, &e))
    });
    rank_reports(cfg.kpi, &mut reports);
    if reports
        .first()
        .is_none_or(|r| !r.converged || r.error.is_some())
    {
        return Err(Error::AllCandidatesFailed {
            diagnostics: reports
                .iter()
                .map(|r| {
                    format!(
                        "{}: {}",
                        r.form,
                        r.error.as_deref().unwrap_or("did not converge")
                    )
                })
                .collect(),
        });
    }
    Ok(Recommendation {
        kpi: cfg.kpi,
        reports,
    })
}

#[cfg(test)]
mod tests;
