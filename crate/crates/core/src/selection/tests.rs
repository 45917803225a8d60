use super::*;
use crate::data::{generate_synthetic, split, Column, ColumnSpec, SplitFractions};
use crate::glm::synthetic_benchmark_terms;
use crate::nid::Aggregation;

fn setup(n: usize, seed: u64) -> (SplitDataset, GlmModel) {
    let d = generate_synthetic(n, seed, true).unwrap();
    let s = split(&d, SplitFractions::default(), seed).unwrap();
    let tv = s.train_validation();
    let glm = fit_poisson(
        &tv,
        &synthetic_benchmark_terms(),
        &Offset::log_exposure(&tv),
        &IrlsOptions::default(),
    )
    .unwrap();
    (s, glm)
}

fn pair(a: &str, b: &str) -> FeaturePairScore {
    FeaturePairScore {
        feature_1: a.into(),
        feature_2: b.into(),
        score: 1.0,
        aggregation: Aggregation::Min,
    }
}

fn num_num(a: &str, pa: u32, b: &str, pb: u32) -> InteractionForm {
    InteractionForm::NumNum {
        a: a.into(),
        power_a: pa,
        b: b.into(),
        power_b: pb,
    }
}

#[test]
fn zero_coefficient_reproduces_benchmark() {
    let (s, glm) = setup(20_000, 1);
    let tv = s.train_validation();
    let expected = glm.predict_counts(&tv).unwrap();
    let offset = Offset::from_expected(&expected).unwrap();
    let form = num_num("x4", 1, "x5", 1);
    let (mut m, _) = fit_form(&tv, &offset, None, &form, &IrlsOptions::default()).unwrap();
    assert!(!m.has_intercept());
    m.beta = vec![0.0];
    let p = m.predict(&tv, &offset).unwrap();
    for (a, b) in p.iter().zip(&expected) {
        assert!((a - b).abs() <= 1e-12 * b);
    }
}

#[test]
fn all_zero_form_is_rank_deficient() {
    let (s, glm) = setup(5_000, 2);
    let tv = s.train_validation();
    let tv = tv
        .with_column(
            ColumnSpec::numeric("z"),
            Column::Numeric(vec![0.0; tv.len()]),
        )
        .unwrap();
    let err = fit_mini_glm(
        &tv,
        &glm,
        &num_num("z", 1, "x4", 1),
        &IrlsOptions::default(),
    );
    assert!(matches!(err, Err(Error::RankDeficient { .. })), "{err:?}");
}

#[test]
fn planted_interaction_is_recommended() {
    let (s, glm) = setup(60_000, 3);
    let top = [
        pair("x1", "x2"),
        pair("x5", "x6"),
        pair("x4", "x5"),
        pair("x7", "x8"),
    ];
    let rec = recommend(
        &s,
        &glm,
        &top,
        &SelectionConfig::default(),
        None,
        Exec::default(),
    )
    .unwrap();
    let w = rec.winner();
    assert!(w.is_pair("x4", "x5"), "winner {}", w.form);
    assert_eq!(rec.reports.len(), 4 * 9);
    assert!(w.test_mean_deviance.is_finite());
    // the winner has the smallest AIC of all converged fits
    for r in &rec.reports {
        assert!(r.aic >= w.aic);
    }
    // refitting the benchmark with the new term cannot increase deviance
    let tv = s.train_validation();
    let mut terms = synthetic_benchmark_terms();
    terms.push(w.term());
    let refit = fit_poisson(
        &tv,
        &terms,
        &Offset::log_exposure(&tv),
        &IrlsOptions::default(),
    )
    .unwrap();
    assert!(refit.fit.residual_deviance <= glm.fit.residual_deviance);
}

#[test]
fn bic_and_aic_can_disagree() {
    let mk = |name: &str, n: usize, aic: f64, bic: f64| MiniGlmReport {
        feature_1: name.into(),
        feature_2: "z".into(),
        form: InteractionForm::CatCat {
            a: name.into(),
            b: "z".into(),
        },
        derived: Vec::new(),
        converged: true,
        n_coefficients: n,
        aic,
        bic,
        residual_deviance: aic - 2.0 * n as f64,
        test_mean_deviance: 0.3,
        coefficients: Vec::new(),
        error: None,
    };
    // many coefficients: better AIC, worse BIC
    let reports = vec![mk("a", 10, 100.0, 150.0), mk("b", 1, 110.0, 115.0)];
    let mut by_aic = reports.clone();
    rank_reports(Kpi::Aic, &mut by_aic);
    let mut by_bic = reports;
    rank_reports(Kpi::Bic, &mut by_bic);
    assert_eq!(by_aic[0].feature_1, "a");
    assert_eq!(by_bic[0].feature_1, "b");
}

#[test]
fn ties_prefer_fewer_coefficients_then_names() {
    let mk = |a: &str, n: usize| MiniGlmReport {
        feature_1: a.into(),
        feature_2: "z".into(),
        form: num_num(a, 1, "z", 1),
        derived: Vec::new(),
        converged: true,
        n_coefficients: n,
        aic: 1.0,
        bic: 1.0,
        residual_deviance: 1.0,
        test_mean_deviance: 1.0,
        coefficients: Vec::new(),
        error: None,
    };
    let mut r = vec![mk("c", 2), mk("b", 1), mk("a", 1)];
    rank_reports(Kpi::Aic, &mut r);
    let names: Vec<&str> = r.iter().map(|x| x.feature_1.as_str()).collect();
    assert_eq!(names, ["a", "b", "c"]);
}

#[test]
fn binned_pair_fits() {
    let (s, glm) = setup(50_000, 4);
    let tv = s.train_validation();
    let b4 = quantile_bin(&s.train, "x4", 10).unwrap();
    let b5 = quantile_bin(&s.train, "x5", 10).unwrap();
    let d = apply_all(&tv, &[b4.clone(), b5.clone()]).unwrap();
    let (c4, ..) = d.categorical(b4.name()).unwrap();
    let (c5, ..) = d.categorical(b5.name()).unwrap();
    let mut cells = vec![0usize; 100];
    for (a, b) in c4.iter().zip(c5) {
        cells[(*a * 10 + *b) as usize] += 1;
    }
    assert!(cells.iter().all(|&c| c > 0));
    let form = InteractionForm::CatCat {
        a: b4.name().into(),
        b: b5.name().into(),
    };
    let r = fit_mini_glm(&d, &glm, &form, &IrlsOptions::default()).unwrap();
    assert_eq!(r.n_coefficients, 81);
    assert!(r.converged);
}

#[test]
fn candidate_forms_follow_kinds() {
    let (s, _) = setup(40_000, 5);
    let tv = s.train_validation();
    let cfg = FormsConfig {
        quantile_bins: Some(4),
        ..FormsConfig::default()
    };
    let c = candidate_forms(&tv, &s.train, ("x4", "x5"), &cfg, None).unwrap();
    assert_eq!(c.forms.len(), 10);
    assert_eq!(c.forms[9].derived.len(), 2);
    let c = candidate_forms(&tv, &s.train, ("x9", "x3"), &cfg, None).unwrap();
    assert_eq!(
        c.forms[0].form,
        InteractionForm::NumCat {
            num: "x3".into(),
            cat: "x9".into()
        }
    );
    assert_eq!(c.forms.len(), 2);
    let c = candidate_forms(&tv, &s.train, ("x9", "x10"), &cfg, None).unwrap();
    assert_eq!(c.forms.len(), 1);
}

#[test]
fn all_failures_are_reported() {
    let (s, glm) = setup(3_000, 6);
    let mut s = s;
    let zeros = |d: &Dataset| {
        d.with_column(
            ColumnSpec::numeric("z"),
            Column::Numeric(vec![0.0; d.len()]),
        )
        .unwrap()
    };
    s.train = zeros(&s.train);
    s.validation = zeros(&s.validation);
    s.test = zeros(&s.test);
    let cfg = SelectionConfig {
        forms: FormsConfig {
            powers: vec![1],
            ..FormsConfig::default()
        },
        ..SelectionConfig::default()
    };
    let err = recommend(&s, &glm, &[pair("z", "x1")], &cfg, None, Exec::Sequential);
    match err {
        Err(Error::AllCandidatesFailed { diagnostics }) => assert_eq!(diagnostics.len(), 1),
        other => panic!("{other:?}"),
    }
}

#[test]
fn record_round_trips_through_toml() {
    let (s, glm) = setup(20_000, 7);
    let cfg = SelectionConfig {
        forms: FormsConfig {
            powers: vec![1],
            quantile_bins: Some(3),
            ..FormsConfig::default()
        },
        kpi: Kpi::Bic,
        ..SelectionConfig::default()
    };
    let rec = recommend(&s, &glm, &[pair("x4", "x5")], &cfg, None, Exec::Sequential).unwrap();
    let record = rec.record();
    let text = record.to_toml().unwrap();
    assert_eq!(RecommendationRecord::from_toml(&text).unwrap(), record);
    assert!(rec.to_csv().starts_with("candidate,form,"));
}
