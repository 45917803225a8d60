use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cann::TrainConfig;
use crate::data::{FeatureSchema, SplitFractions};
use crate::error::Result;
use crate::evaluation::DEFAULT_QUANTILE_BINS;
use crate::glm::synthetic_benchmark_terms;
use crate::nid::NidConfig;
use crate::selection::SelectionConfig;
use crate::tuning::{GaConfig, HyperGrid, HyperParams};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "NBI_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "nbi-out";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Rows generated by `generate`.
    pub n: usize,
    pub seed: u64,
    /// Cap the synthetic rate at 1.
    pub clamp: bool,
    /// CSV read by `ingest`.
    pub path: Option<PathBuf>,
    /// Schema file for `ingest`.
    pub schema_path: Option<PathBuf>,
    pub schema: Option<FeatureSchema>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n: 200_000,
            seed: 7,
            clamp: true,
            path: None,
            schema_path: None,
            schema: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub fractions: SplitFractions,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            fractions: SplitFractions::default(),
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    /// Term syntax: `intercept`, `x`, `x^2`, `log(x)`, `a*b`, `a^2*b`.
    pub terms: Vec<String>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            terms: synthetic_benchmark_terms()
                .iter()
                .map(|t| t.to_string())
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CannConfig {
    pub params: HyperParams,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    #[serde(flatten)]
    pub nid: NidConfig,
    /// Rows of the top-k table.
    pub top_k: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            nid: NidConfig::default(),
            top_k: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuningMode {
    #[default]
    None,
    Grid,
    Ga,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningConfig {
    pub mode: TuningMode,
    pub grid: HyperGrid,
    pub ga: GaConfig,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Competitor {
    /// The trained CANN of the cycle.
    #[default]
    Cann,
    /// The benchmark refitted with the recommended term.
    Refit,
    /// The benchmark itself.
    Benchmark,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    pub quantile_bins: usize,
    pub competitor: Competitor,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            quantile_bins: DEFAULT_QUANTILE_BINS,
            competitor: Competitor::Cann,
        }
    }
}

/// Everything a pipeline run needs, one section per stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub out_dir: Option<PathBuf>,
    /// Use the data-parallel code paths.
    pub parallel: bool,
    /// Number of detect-recommend cycles run by `run-all`.
    pub cycles: usize,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub benchmark: BenchmarkConfig,
    pub cann: CannConfig,
    pub tuning: TuningConfig,
    pub detect: DetectConfig,
    pub selection: SelectionConfig,
    pub evaluation: EvaluationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out_dir: None,
            parallel: true,
            cycles: 2,
            data: DataConfig::default(),
            split: SplitConfig::default(),
            benchmark: BenchmarkConfig::default(),
            cann: CannConfig::default(),
            tuning: TuningConfig::default(),
            detect: DetectConfig::default(),
            selection: SelectionConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        crate::io::read_toml(path)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| crate::error::Error::Config(e.to_string()))
    }

    /// Output directory: the configured one, else the environment variable,
    /// else `nbi-out`.
    pub fn resolve_out_dir(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let c = RunConfig::default();
        let text = c.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_config_uses_defaults() {
        let c: RunConfig = toml::from_str(
            "cycles = 1\n[data]\nn = 1000\n[selection]\nkpi = \"bic\"\n[detect]\nsurrogate = \"harmonic_mean\"\n",
        )
        .unwrap();
        assert_eq!(c.data.n, 1000);
        assert_eq!(c.data.seed, 7);
        assert_eq!(c.selection.kpi, crate::selection::Kpi::Bic);
        assert_eq!(c.detect.nid.surrogate, crate::nid::Surrogate::HarmonicMean);
        assert_eq!(c.cann.train.batch_size, 1000);
    }
}
