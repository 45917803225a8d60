//! Stage orchestration for the command-line tool. Every stage reads its
//! inputs from and writes its outputs to the output directory, and records
//! content hashes so that stale artifacts are detected.

mod config;
mod state;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{
    BenchmarkConfig, CannConfig, Competitor, DataConfig, DetectConfig, EvaluationConfig, RunConfig,
    SplitConfig, TuningConfig, TuningMode, DEFAULT_OUT_DIR, OUT_DIR_ENV,
};
pub use state::{ArtifactRecord, Freshness, PipelineState, STATE_FILE};

use crate::cann::{train_with_exposure, CannModel};
use crate::data::{
    generate_synthetic, load_csv, split, write_csv, Dataset, FeatureSchema, NnEncoding,
    SplitDataset, SplitFractions,
};
use crate::error::{Error, Result};
use crate::evaluation::{lift_report, Binning};
use crate::exec::Exec;
use crate::glm::{
    fit_poisson, metrics_from_expected, CoefficientStat, GlmModel, IrlsOptions, Offset, TermSpec,
};
use crate::io::{
    file_sha256, hex_digest, read_json, read_toml, write_json, write_text, write_toml,
};
use crate::nid::{detect, NidResult};
use crate::poisson;
use crate::selection::{apply_all, recommend, DerivedFeature, RecommendationRecord};
use crate::tuning::{
    ga_search_grid, generation_log_csv, grid_search, leaderboard_csv, Evaluation, HyperParams,
};

pub const SPLIT_FILES: [&str; 3] = ["train.csv", "validation.csv", "test.csv"];
pub const MANIFEST: &str = "split_manifest.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub name: String,
    pub rows: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub source: String,
    pub n: usize,
    pub seed: u64,
    pub fractions: SplitFractions,
    pub files: Vec<SplitFile>,
    pub schema: FeatureSchema,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub terms: Vec<String>,
    pub n_obs: usize,
    pub converged: bool,
    pub iterations: usize,
    pub residual_deviance: f64,
    pub null_deviance: f64,
    pub aic: f64,
    pub bic: f64,
    pub wapf: f64,
    pub waof: f64,
    pub balance_residual: f64,
    pub test_mean_deviance: f64,
    pub coefficients: Vec<CoefficientStat>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CannSummary {
    pub params: HyperParams,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub train_mean_deviance: f64,
    pub validation_mean_deviance: f64,
    pub test_mean_deviance: f64,
    pub benchmark_test_mean_deviance: f64,
    pub train_wapf: f64,
    pub train_waof: f64,
    pub train_balance_residual: f64,
    pub test_balance_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitKpis {
    pub aic: f64,
    pub bic: f64,
    pub residual_deviance: f64,
    pub test_mean_deviance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefitSummary {
    pub term: String,
    pub relative_test_improvement: f64,
    pub before: FitKpis,
    pub after: FitKpis,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftKpis {
    pub binning: String,
    pub mae_lift: f64,
    pub mae_lift_benchmark: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub competitor: Competitor,
    pub competitor_test_mean_deviance: f64,
    pub benchmark_test_mean_deviance: f64,
    pub predetermined: LiftKpis,
    pub quantile: LiftKpis,
}

fn cycle_dir(cycle: usize) -> String {
    format!("cycle-{cycle}")
}

fn artifact(cycle: usize, file: &str) -> String {
    format!("{}/{file}", cycle_dir(cycle))
}

fn digest<T: Serialize>(value: &T) -> String {
    hex_digest(toml::to_string(value).unwrap_or_default().as_bytes())
}

pub struct Pipeline {
    pub config: RunConfig,
    pub out: PathBuf,
    pub exec: Exec,
    /// Recompute stale inputs instead of failing.
    pub refresh: bool,
    state: PipelineState,
    configs: BTreeMap<String, String>,
    split_cache: Option<SplitDataset>,
}

impl Pipeline {
    pub fn open(config: RunConfig) -> Result<Self> {
        let out = config.resolve_out_dir();
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let exec = if config.parallel {
            Exec::Parallel
        } else {
            Exec::Sequential
        };
        let mut configs = BTreeMap::new();
        let mut data_key = digest(&config.data);
        if let Some(p) = &config.data.path {
            if p.exists() {
                data_key = hex_digest(format!("{data_key}{}", file_sha256(p)?).as_bytes());
            }
        }
        configs.insert("config:data".to_string(), data_key);
        configs.insert("config:split".into(), digest(&config.split));
        configs.insert("config:benchmark".into(), digest(&config.benchmark));
        configs.insert("config:cann".into(), digest(&config.cann));
        configs.insert("config:tuning".into(), digest(&config.tuning));
        configs.insert("config:detect".into(), digest(&config.detect));
        configs.insert("config:selection".into(), digest(&config.selection));
        configs.insert("config:evaluation".into(), digest(&config.evaluation));
        let state = PipelineState::load(&out)?;
        Ok(Pipeline {
            config,
            out,
            exec,
            refresh: false,
            state,
            configs,
            split_cache: None,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn state(&self) -> &PipelineState {
        &self.state
    }

    fn record(&mut self, names: &[String], inputs: &[String]) -> Result<()> {
        for n in names {
            self.state.record(&self.out, n, inputs, &self.configs)?;
        }
        self.state.save(&self.out)
    }

    /// Makes sure `names` exist and are fresh, running `produce` when they
    /// are missing (or stale, in refresh mode).
    fn need(
        &mut self,
        names: &[String],
        produce: impl FnOnce(&mut Self) -> Result<()>,
    ) -> Result<()> {
        let mut run = false;
        for n in names {
            match self.state.freshness(&self.out, n, &self.configs)? {
                Freshness::Fresh => {}
                Freshness::Missing => run = true,
                Freshness::Stale(reason) => {
                    if self.refresh {
                        log::info!("{n} is stale ({reason}); recomputing");
                        run = true;
                    } else {
                        return Err(Error::StaleArtifact {
                            path: self.path(n),
                            reason,
                        });
                    }
                }
            }
        }
        if run {
            produce(self)?;
        }
        Ok(())
    }

    fn split_names() -> Vec<String> {
        let mut v: Vec<String> = SPLIT_FILES.iter().map(|s| s.to_string()).collect();
        v.push(MANIFEST.into());
        v
    }

    fn write_split(&mut self, data: &Dataset, source: String) -> Result<()> {
        let fractions = self.config.split.fractions;
        let seed = self.config.split.seed;
        let s = split(data, fractions, seed)?;
        let mut files = Vec::new();
        for (name, part) in SPLIT_FILES.iter().zip([&s.train, &s.validation, &s.test]) {
            let path = self.path(name);
            write_csv(part, &path)?;
            files.push(SplitFile {
                name: name.to_string(),
                rows: part.len(),
                sha256: file_sha256(&path)?,
            });
        }
        let manifest = SplitManifest {
            source,
            n: data.len(),
            seed,
            fractions,
            files,
            schema: data.schema().clone(),
        };
        write_toml(self.path(MANIFEST), &manifest)?;
        self.split_cache = Some(s);
        self.record(
            &Self::split_names(),
            &["config:data".into(), "config:split".into()],
        )
    }

    /// Writes a synthetic data set split into three CSVs plus a manifest.
    pub fn generate(&mut self) -> Result<SplitManifest> {
        let d = &self.config.data;
        let data = generate_synthetic(d.n, d.seed, d.clamp)?;
        let source = format!("synthetic n={} seed={} clamp={}", d.n, d.seed, d.clamp);
        log::info!("generated {} rows", data.len());
        self.write_split(&data, source)?;
        self.manifest()
    }

    fn ingest_schema(&self) -> Result<FeatureSchema> {
        if let Some(s) = &self.config.data.schema {
            s.validate()?;
            return Ok(s.clone());
        }
        if let Some(p) = &self.config.data.schema_path {
            let s: FeatureSchema = read_toml(p)?;
            s.validate()?;
            return Ok(s);
        }
        Err(Error::Config(
            "ingest needs data.schema or data.schema_path".into(),
        ))
    }

    /// Reads an external CSV against the configured schema and splits it.
    pub fn ingest(&mut self) -> Result<SplitManifest> {
        let path = self
            .config
            .data
            .path
            .clone()
            .ok_or_else(|| Error::Config("ingest needs data.path".into()))?;
        let schema = self.ingest_schema()?;
        let data = load_csv(&path, &schema)?;
        log::info!("ingested {} rows from {}", data.len(), path.display());
        let name = path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default();
        self.write_split(&data, format!("csv {name}"))?;
        self.manifest()
    }

    pub fn manifest(&self) -> Result<SplitManifest> {
        read_toml(self.path(MANIFEST))
    }

    pub fn split_data(&mut self) -> Result<SplitDataset> {
        let names = Self::split_names();
        self.need(&names, |p| {
            if p.config.data.path.is_some() {
                p.ingest().map(|_| ())
            } else {
                p.generate().map(|_| ())
            }
        })?;
        if let Some(s) = &self.split_cache {
            return Ok(s.clone());
        }
        let m = self.manifest()?;
        let mut parts = Vec::new();
        for f in &m.files {
            let path = self.path(&f.name);
            if file_sha256(&path)? != f.sha256 {
                return Err(Error::StaleArtifact {
                    path,
                    reason: "split file does not match the manifest".into(),
                });
            }
            parts.push(load_csv(&path, &m.schema)?);
        }
        let test = parts.pop().expect("three parts");
        let validation = parts.pop().expect("three parts");
        let train = parts.pop().expect("three parts");
        let s = SplitDataset {
            train,
            validation,
            test,
            seed: m.seed,
            rows: Default::default(),
        };
        self.split_cache = Some(s.clone());
        Ok(s)
    }

    fn split_inputs() -> Vec<String> {
        SPLIT_FILES.iter().map(|s| s.to_string()).collect()
    }

    /// Recommendations of earlier cycles, oldest first.
    fn previous_recommendations(&mut self, cycle: usize) -> Result<Vec<RecommendationRecord>> {
        (1..cycle).map(|c| self.recommendation(c)).collect()
    }

    /// Term list and derived columns of the benchmark used in `cycle`.
    pub fn benchmark_spec(&mut self, cycle: usize) -> Result<(Vec<TermSpec>, Vec<DerivedFeature>)> {
        let manifest = self.manifest()?;
        let mut terms = TermSpec::parse_list(&self.config.benchmark.terms, &manifest.schema)?;
        let mut derived: Vec<DerivedFeature> = Vec::new();
        for rec in self.previous_recommendations(cycle)? {
            for d in rec.derived {
                if derived.iter().all(|x| x.name() != d.name()) {
                    derived.push(d);
                }
            }
            if !terms.contains(&rec.term_spec) {
                terms.push(rec.term_spec);
            }
        }
        Ok((terms, derived))
    }

    fn glm_view(data: &Dataset, derived: &[DerivedFeature]) -> Result<Dataset> {
        apply_all(data, derived)
    }

    fn benchmark_inputs(cycle: usize) -> Vec<String> {
        let mut v = Self::split_inputs();
        v.push("config:benchmark".into());
        if cycle > 1 {
            v.push(artifact(cycle - 1, "recommendation.toml"));
        }
        v
    }

    fn benchmark_names(cycle: usize) -> Vec<String> {
        vec![
            artifact(cycle, "benchmark.json"),
            artifact(cycle, "benchmark_summary.toml"),
        ]
    }

    /// Fits the cycle's benchmark GLM on train+validation.
    pub fn fit_benchmark(&mut self, cycle: usize) -> Result<BenchmarkSummary> {
        let s = self.split_data()?;
        let (terms, derived) = self.benchmark_spec(cycle)?;
        let fit_data = Self::glm_view(&s.train_validation(), &derived)?;
        let opts = IrlsOptions {
            exec: self.exec,
            ..IrlsOptions::default()
        };
        let model = fit_poisson(&fit_data, &terms, &Offset::log_exposure(&fit_data), &opts)?;
        let metrics = model.metrics(&fit_data, &Offset::log_exposure(&fit_data))?;
        let test = Self::glm_view(&s.test, &derived)?;
        let test_pred = model.predict_counts(&test)?;
        let summary = BenchmarkSummary {
            terms: terms.iter().map(|t| t.to_string()).collect(),
            n_obs: model.fit.n_obs,
            converged: model.fit.converged,
            iterations: model.fit.iterations,
            residual_deviance: model.fit.residual_deviance,
            null_deviance: model.fit.null_deviance,
            aic: model.fit.aic,
            bic: model.fit.bic,
            wapf: metrics.wapf,
            waof: metrics.waof,
            balance_residual: metrics.balance_residual(),
            test_mean_deviance: poisson::mean_deviance(self.exec, test.claims(), &test_pred),
            coefficients: model.coefficients.clone(),
        };
        log::info!(
            "cycle {cycle} benchmark: AIC {:.2}, test deviance {:.6}",
            summary.aic,
            summary.test_mean_deviance
        );
        model.save(self.path(&artifact(cycle, "benchmark.json")))?;
        write_toml(
            self.path(&artifact(cycle, "benchmark_summary.toml")),
            &summary,
        )?;
        self.record(
            &Self::benchmark_names(cycle),
            &Self::benchmark_inputs(cycle),
        )?;
        Ok(summary)
    }

    pub fn benchmark(&mut self, cycle: usize) -> Result<GlmModel> {
        self.need(&Self::benchmark_names(cycle), |p| {
            p.fit_benchmark(cycle).map(|_| ())
        })?;
        GlmModel::load(self.path(&artifact(cycle, "benchmark.json")))
    }

    /// Benchmark expected counts for the three splits, in split order.
    pub fn benchmark_predictions(&mut self, cycle: usize) -> Result<[Vec<f64>; 3]> {
        let s = self.split_data()?;
        let model = self.benchmark(cycle)?;
        let (_, derived) = self.benchmark_spec(cycle)?;
        let p = |d: &Dataset| -> Result<Vec<f64>> {
            model.predict_counts(&Self::glm_view(d, &derived)?)
        };
        Ok([p(&s.train)?, p(&s.validation)?, p(&s.test)?])
    }

    fn tuning_names(cycle: usize) -> Vec<String> {
        vec![
            artifact(cycle, "tuned_params.toml"),
            artifact(cycle, "tuning_leaderboard.csv"),
        ]
    }

    fn tuning_inputs(cycle: usize) -> Vec<String> {
        let mut v = Self::split_inputs();
        v.push(artifact(cycle, "benchmark.json"));
        v.push("config:cann".into());
        v.push("config:tuning".into());
        v
    }

    /// Searches the configured grid for the best network settings.
    pub fn tune(&mut self, cycle: usize) -> Result<HyperParams> {
        let s = self.split_data()?;
        let [v_train, v_val, _] = self.benchmark_predictions(cycle)?;
        let cfg = self.config.clone();
        let exec = self.exec;
        let encoding = NnEncoding::fit(&s.train, cfg.cann.train.onehot_threshold)?;
        let base = TrainConfig {
            exec: Exec::Sequential,
            ..cfg.cann.train.clone()
        };
        let train_fn = |p: &HyperParams, seed: u64| -> Result<CannModel> {
            let arch = p.architecture(&encoding)?;
            let tc = TrainConfig {
                seed,
                ..p.train_config(&base)
            };
            train_with_exposure(&s, &v_train, &v_val, arch, &tc)
        };
        let kpi_fn = |m: &CannModel| -> Result<Evaluation> {
            let pred = m.predict_with_exposure(&s.validation, &v_val, Exec::Sequential)?;
            let fitness = poisson::mean_deviance(Exec::Sequential, s.validation.claims(), &pred);
            let y = s.validation.claims();
            let v = s.validation.exposure();
            let pb = lift_report(&pred, &v_val, y, v, Binning::Predetermined)?;
            let qb = lift_report(
                &pred,
                &v_val,
                y,
                v,
                Binning::Quantile {
                    bins: cfg.evaluation.quantile_bins,
                },
            )?;
            Ok(Evaluation {
                fitness,
                reported: vec![
                    ("mae_lift_pb".into(), pb.mae_lift),
                    ("mae_lift_qbb".into(), qb.mae_lift),
                ],
            })
        };
        let (best, board, generations) = match cfg.tuning.mode {
            TuningMode::None => (cfg.cann.params.clone(), Vec::new(), None),
            TuningMode::Grid => {
                let out = grid_search(
                    &cfg.tuning.grid,
                    cfg.cann.train.seed,
                    exec,
                    train_fn,
                    kpi_fn,
                )?;
                (out.best, out.leaderboard, None)
            }
            TuningMode::Ga => {
                let (out, log) =
                    ga_search_grid(&cfg.tuning.grid, &cfg.tuning.ga, exec, train_fn, kpi_fn)?;
                (out.best, out.leaderboard, Some(log))
            }
        };
        write_toml(self.path(&artifact(cycle, "tuned_params.toml")), &best)?;
        write_text(
            self.path(&artifact(cycle, "tuning_leaderboard.csv")),
            &leaderboard_csv(&board),
        )?;
        let mut names = Self::tuning_names(cycle);
        if let Some(log) = generations {
            let name = artifact(cycle, "tuning_generations.csv");
            write_text(self.path(&name), &generation_log_csv(&log))?;
            names.push(name);
        }
        self.record(&names, &Self::tuning_inputs(cycle))?;
        log::info!("cycle {cycle} tuned: {}", best.describe());
        Ok(best)
    }

    /// Network settings for the cycle: tuned when tuning is on, else configured.
    pub fn hyper_params(&mut self, cycle: usize) -> Result<HyperParams> {
        if self.config.tuning.mode == TuningMode::None {
            return Ok(self.config.cann.params.clone());
        }
        self.need(&Self::tuning_names(cycle), |p| p.tune(cycle).map(|_| ()))?;
        read_toml(self.path(&artifact(cycle, "tuned_params.toml")))
    }

    fn cann_names(cycle: usize) -> Vec<String> {
        vec![
            artifact(cycle, "cann.json"),
            artifact(cycle, "cann_epochs.csv"),
            artifact(cycle, "cann_summary.toml"),
        ]
    }

    fn cann_inputs(&self, cycle: usize) -> Vec<String> {
        let mut v = Self::split_inputs();
        v.push(artifact(cycle, "benchmark.json"));
        v.push("config:cann".into());
        if self.config.tuning.mode != TuningMode::None {
            v.push(artifact(cycle, "tuned_params.toml"));
        }
        v
    }

    /// Trains the cycle's CANN on the training split with early stopping on
    /// the validation split.
    pub fn train_cann(&mut self, cycle: usize) -> Result<CannSummary> {
        let s = self.split_data()?;
        let [v_train, v_val, v_test] = self.benchmark_predictions(cycle)?;
        let params = self.hyper_params(cycle)?;
        let encoding = NnEncoding::fit(&s.train, self.config.cann.train.onehot_threshold)?;
        let arch = params.architecture(&encoding)?;
        let tc = TrainConfig {
            exec: self.exec,
            ..params.train_config(&self.config.cann.train)
        };
        let model = train_with_exposure(&s, &v_train, &v_val, arch, &tc)?;
        let exec = self.exec;
        let p_train = model.predict_with_exposure(&s.train, &v_train, exec)?;
        let p_val = model.predict_with_exposure(&s.validation, &v_val, exec)?;
        let p_test = model.predict_with_exposure(&s.test, &v_test, exec)?;
        let m_train = metrics_from_expected(&s.train, &p_train);
        let m_test = metrics_from_expected(&s.test, &p_test);
        let summary = CannSummary {
            params,
            best_epoch: model.best_epoch,
            stopped_epoch: model.stopped_epoch,
            train_mean_deviance: m_train.mean_poisson_deviance,
            validation_mean_deviance: poisson::mean_deviance(exec, s.validation.claims(), &p_val),
            test_mean_deviance: m_test.mean_poisson_deviance,
            benchmark_test_mean_deviance: poisson::mean_deviance(exec, s.test.claims(), &v_test),
            train_wapf: m_train.wapf,
            train_waof: m_train.waof,
            train_balance_residual: m_train.balance_residual(),
            test_balance_residual: m_test.balance_residual(),
        };
        log::info!(
            "cycle {cycle} CANN: best epoch {}, test deviance {:.6} (benchmark {:.6})",
            summary.best_epoch,
            summary.test_mean_deviance,
            summary.benchmark_test_mean_deviance
        );
        model.save(self.path(&artifact(cycle, "cann.json")))?;
        write_text(
            self.path(&artifact(cycle, "cann_epochs.csv")),
            &model.epoch_log_csv(),
        )?;
        write_toml(self.path(&artifact(cycle, "cann_summary.toml")), &summary)?;
        let inputs = self.cann_inputs(cycle);
        self.record(&Self::cann_names(cycle), &inputs)?;
        Ok(summary)
    }

    pub fn cann(&mut self, cycle: usize) -> Result<CannModel> {
        if self.config.tuning.mode != TuningMode::None {
            self.hyper_params(cycle)?;
        }
        self.need(&Self::cann_names(cycle), |p| {
            p.train_cann(cycle).map(|_| ())
        })?;
        CannModel::load(self.path(&artifact(cycle, "cann.json")))
    }

    fn detect_names(cycle: usize) -> Vec<String> {
        vec![
            artifact(cycle, "nid.json"),
            artifact(cycle, "nid_ranking.csv"),
            artifact(cycle, "nid_top.csv"),
            artifact(cycle, "nid_neurons.csv"),
        ]
    }

    /// Ranks feature interactions of the cycle's CANN.
    pub fn detect(&mut self, cycle: usize) -> Result<NidResult> {
        let model = self.cann(cycle)?;
        let result = detect(
            model.weights(),
            &model.network.layout.neurons,
            self.config.detect.nid,
        )?;
        let top_k = self.config.detect.top_k.max(1);
        let top = NidResult {
            pairs: result.pairs.iter().take(top_k).cloned().collect(),
            ..result.clone()
        };
        write_json(self.path(&artifact(cycle, "nid.json")), &result)?;
        write_text(
            self.path(&artifact(cycle, "nid_ranking.csv")),
            &result.to_csv(),
        )?;
        write_text(self.path(&artifact(cycle, "nid_top.csv")), &top.to_csv())?;
        write_text(
            self.path(&artifact(cycle, "nid_neurons.csv")),
            &result.neuron_csv(),
        )?;
        let inputs = vec![artifact(cycle, "cann.json"), "config:detect".into()];
        self.record(&Self::detect_names(cycle), &inputs)?;
        if let Some(p) = result.pairs.first() {
            log::info!(
                "cycle {cycle} top interaction: {} x {}",
                p.feature_1,
                p.feature_2
            );
        }
        Ok(result)
    }

    pub fn nid(&mut self, cycle: usize) -> Result<NidResult> {
        self.need(&Self::detect_names(cycle), |p| p.detect(cycle).map(|_| ()))?;
        read_json(self.path(&artifact(cycle, "nid.json")))
    }

    fn recommend_names(cycle: usize) -> Vec<String> {
        vec![
            artifact(cycle, "mini_glms.csv"),
            artifact(cycle, "recommendation.toml"),
            artifact(cycle, "refit.json"),
            artifact(cycle, "refit_summary.toml"),
        ]
    }

    fn recommend_inputs(&self, cycle: usize) -> Vec<String> {
        let mut v = Self::split_inputs();
        v.push(artifact(cycle, "benchmark.json"));
        v.push(artifact(cycle, "nid.json"));
        v.push("config:selection".into());
        if self.config.selection.forms.cluster_embeddings {
            v.push(artifact(cycle, "cann.json"));
        }
        v
    }

    /// Fits mini-GLMs for the top-ranked pairs, recommends one, and refits the
    /// benchmark with it.
    pub fn recommend(&mut self, cycle: usize) -> Result<(RecommendationRecord, RefitSummary)> {
        let s = self.split_data()?;
        let benchmark = self.benchmark(cycle)?;
        let nid = self.nid(cycle)?;
        let cann = if self.config.selection.forms.cluster_embeddings {
            Some(self.cann(cycle)?)
        } else {
            None
        };
        let (terms, derived) = self.benchmark_spec(cycle)?;
        let view = SplitDataset {
            train: Self::glm_view(&s.train, &derived)?,
            validation: Self::glm_view(&s.validation, &derived)?,
            test: Self::glm_view(&s.test, &derived)?,
            seed: s.seed,
            rows: s.rows.clone(),
        };
        let top_k = self.config.selection.top_k.max(1);
        let top: Vec<_> = nid.pairs.iter().take(top_k).cloned().collect();
        let rec = recommend(
            &view,
            &benchmark,
            &top,
            &self.config.selection,
            cann.as_ref(),
            self.exec,
        )?;
        let record = rec.record();

        // refit the benchmark with the recommended term
        let mut new_terms = terms.clone();
        new_terms.push(record.term_spec.clone());
        let fit_data = apply_all(&view.train_validation(), &record.derived)?;
        let test = apply_all(&view.test, &record.derived)?;
        let opts = IrlsOptions {
            exec: self.exec,
            ..IrlsOptions::default()
        };
        let refit = fit_poisson(
            &fit_data,
            &new_terms,
            &Offset::log_exposure(&fit_data),
            &opts,
        )?;
        let before_test =
            poisson::mean_deviance(self.exec, test.claims(), &benchmark.predict_counts(&test)?);
        let after_test =
            poisson::mean_deviance(self.exec, test.claims(), &refit.predict_counts(&test)?);
        let summary = RefitSummary {
            term: record.term.clone(),
            relative_test_improvement: (before_test - after_test) / before_test,
            before: FitKpis {
                aic: benchmark.fit.aic,
                bic: benchmark.fit.bic,
                residual_deviance: benchmark.fit.residual_deviance,
                test_mean_deviance: before_test,
            },
            after: FitKpis {
                aic: refit.fit.aic,
                bic: refit.fit.bic,
                residual_deviance: refit.fit.residual_deviance,
                test_mean_deviance: after_test,
            },
        };
        log::info!(
            "cycle {cycle} recommends {} (test deviance {:.6} -> {:.6})",
            record.term,
            before_test,
            after_test
        );
        write_text(self.path(&artifact(cycle, "mini_glms.csv")), &rec.to_csv())?;
        write_text(
            self.path(&artifact(cycle, "recommendation.toml")),
            &record.to_toml()?,
        )?;
        refit.save(self.path(&artifact(cycle, "refit.json")))?;
        write_toml(self.path(&artifact(cycle, "refit_summary.toml")), &summary)?;
        let inputs = self.recommend_inputs(cycle);
        self.record(&Self::recommend_names(cycle), &inputs)?;
        Ok((record, summary))
    }

    pub fn recommendation(&mut self, cycle: usize) -> Result<RecommendationRecord> {
        self.need(&Self::recommend_names(cycle), |p| {
            p.recommend(cycle).map(|_| ())
        })?;
        RecommendationRecord::from_toml(&crate::io::read_text(
            self.path(&artifact(cycle, "recommendation.toml")),
        )?)
    }

    fn evaluate_names(cycle: usize) -> Vec<String> {
        vec![
            artifact(cycle, "lift_predetermined.csv"),
            artifact(cycle, "lift_quantile.csv"),
            artifact(cycle, "evaluation_summary.toml"),
        ]
    }

    /// Double-lift comparison of the competitor against the benchmark on the
    /// test split.
    pub fn evaluate(&mut self, cycle: usize) -> Result<EvaluationSummary> {
        let s = self.split_data()?;
        let [_, _, v_test] = self.benchmark_predictions(cycle)?;
        let competitor = self.config.evaluation.competitor;
        let (pred, model_input) = match competitor {
            Competitor::Cann => {
                let m = self.cann(cycle)?;
                (
                    m.predict_with_exposure(&s.test, &v_test, self.exec)?,
                    artifact(cycle, "cann.json"),
                )
            }
            Competitor::Refit => {
                let rec = self.recommendation(cycle)?;
                let (_, mut derived) = self.benchmark_spec(cycle)?;
                derived.extend(rec.derived);
                let refit = GlmModel::load(self.path(&artifact(cycle, "refit.json")))?;
                (
                    refit.predict_counts(&apply_all(&s.test, &derived)?)?,
                    artifact(cycle, "refit.json"),
                )
            }
            Competitor::Benchmark => (v_test.clone(), artifact(cycle, "benchmark.json")),
        };
        let y = s.test.claims();
        let v = s.test.exposure();
        let pb = lift_report(&pred, &v_test, y, v, Binning::Predetermined)?;
        let bins = self.config.evaluation.quantile_bins;
        let qb = lift_report(&pred, &v_test, y, v, Binning::Quantile { bins })?;
        let summary = EvaluationSummary {
            competitor,
            competitor_test_mean_deviance: poisson::mean_deviance(self.exec, y, &pred),
            benchmark_test_mean_deviance: poisson::mean_deviance(self.exec, y, &v_test),
            predetermined: LiftKpis {
                binning: pb.binning.name(),
                mae_lift: pb.mae_lift,
                mae_lift_benchmark: pb.mae_lift_benchmark,
            },
            quantile: LiftKpis {
                binning: qb.binning.name(),
                mae_lift: qb.mae_lift,
                mae_lift_benchmark: qb.mae_lift_benchmark,
            },
        };
        log::info!(
            "cycle {cycle} lift: pb {:.5} vs {:.5}, qbb {:.5} vs {:.5}",
            pb.mae_lift,
            pb.mae_lift_benchmark,
            qb.mae_lift,
            qb.mae_lift_benchmark
        );
        write_text(
            self.path(&artifact(cycle, "lift_predetermined.csv")),
            &pb.to_csv(),
        )?;
        write_text(
            self.path(&artifact(cycle, "lift_quantile.csv")),
            &qb.to_csv(),
        )?;
        write_toml(
            self.path(&artifact(cycle, "evaluation_summary.toml")),
            &summary,
        )?;
        let mut inputs = Self::split_inputs();
        inputs.push(artifact(cycle, "benchmark.json"));
        inputs.push(model_input);
        inputs.push("config:evaluation".into());
        inputs.dedup();
        self.record(&Self::evaluate_names(cycle), &inputs)?;
        Ok(summary)
    }

    /// Runs every stage for `cycles` cycles, skipping fresh artifacts.
    pub fn run_all(&mut self, cycles: usize) -> Result<()> {
        self.refresh = true;
        self.split_data()?;
        for c in 1..=cycles {
            self.benchmark(c)?;
            self.cann(c)?;
            self.nid(c)?;
            self.recommendation(c)?;
            self.need(&Self::evaluate_names(c), |p| p.evaluate(c).map(|_| ()))?;
        }
        Ok(())
    }

    /// All files under the output directory, relative and sorted.
    pub fn artifact_files(&self) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        collect_files(&self.out, &self.out, &mut out)?;
        out.sort();
        Ok(out)
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).unwrap_or(&path).to_path_buf());
        }
    }
    Ok(())
}

use crate::cann::TrainConfig;
