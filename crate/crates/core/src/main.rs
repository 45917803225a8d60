use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nbi::error::Result;
use nbi::pipeline::{Competitor, Pipeline, RunConfig, TuningMode, OUT_DIR_ENV};
use nbi::selection::Kpi;

#[derive(Parser, Debug)]
#[command(
    name = "nbi",
    version,
    about = "Find the next-best interaction missing from a Poisson GLM"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML run configuration; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for all artifacts.
    #[arg(long, global = true, env = OUT_DIR_ENV)]
    out: Option<PathBuf>,
    /// Seed for data generation, splitting, training and search.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run every stage on one thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Args, Debug)]
struct CycleArg {
    /// Detection cycle; cycle N extends the benchmark with the recommendations of cycles 1..N.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    cycle: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KpiArg {
    Aic,
    Bic,
    Deviance,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CompetitorArg {
    Cann,
    Refit,
    Benchmark,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    None,
    Grid,
    Ga,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the synthetic portfolio and split it.
    Generate {
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        n: Option<u64>,
        /// Keep the raw normal draws instead of clamping them to [-1, 1].
        #[arg(long)]
        no_clamp: bool,
    },
    /// Read an external CSV against a schema and split it.
    Ingest {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Fit the benchmark GLM on train+validation.
    FitBenchmark {
        #[command(flatten)]
        cycle: CycleArg,
        /// Comma-separated term list, e.g. "1,x1,x2^2,x9".
        #[arg(long, value_delimiter = ',')]
        terms: Option<Vec<String>>,
    },
    /// Search network settings.
    Tune {
        #[command(flatten)]
        cycle: CycleArg,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Train the CANN on top of the benchmark.
    TrainCann {
        #[command(flatten)]
        cycle: CycleArg,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Rank the interactions learned by the CANN.
    Detect {
        #[command(flatten)]
        cycle: CycleArg,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        top_k: Option<u64>,
    },
    /// Fit mini-GLMs for the top pairs and recommend one.
    Recommend {
        #[command(flatten)]
        cycle: CycleArg,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        top_k: Option<u64>,
        #[arg(long, value_enum)]
        kpi: Option<KpiArg>,
    },
    /// Double-lift comparison against the benchmark on the test split.
    Evaluate {
        #[command(flatten)]
        cycle: CycleArg,
        #[arg(long, value_enum)]
        competitor: Option<CompetitorArg>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        bins: Option<u64>,
    },
    /// Run every stage, skipping artifacts that are already fresh.
    RunAll {
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        cycles: Option<u64>,
    },
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let g = &cli.global;
    if let Some(out) = &g.out {
        cfg.out_dir = Some(out.clone());
    }
    if let Some(seed) = g.seed {
        cfg.data.seed = seed;
        cfg.split.seed = seed;
        cfg.cann.train.seed = seed;
        cfg.tuning.ga.seed = seed;
        cfg.selection.forms.seed = seed;
    }
    if g.sequential {
        cfg.parallel = false;
    }
    match &cli.command {
        Command::Generate { n, no_clamp } => {
            if let Some(n) = n {
                cfg.data.n = *n as usize;
            }
            if *no_clamp {
                cfg.data.clamp = false;
            }
            cfg.data.path = None;
        }
        Command::Ingest { data, schema } => {
            if data.is_some() {
                cfg.data.path = data.clone();
            }
            if schema.is_some() {
                cfg.data.schema_path = schema.clone();
                cfg.data.schema = None;
            }
        }
        Command::FitBenchmark { terms: Some(t), .. } => cfg.benchmark.terms = t.clone(),
        Command::Tune { mode, .. } => {
            cfg.tuning.mode = match mode {
                Some(ModeArg::None) => TuningMode::None,
                Some(ModeArg::Grid) => TuningMode::Grid,
                Some(ModeArg::Ga) => TuningMode::Ga,
                None if cfg.tuning.mode == TuningMode::None => TuningMode::Grid,
                None => cfg.tuning.mode,
            };
        }
        Command::TrainCann {
            epochs: Some(e), ..
        } => cfg.cann.train.max_epochs = *e,
        Command::Detect { top_k: Some(k), .. } => cfg.detect.top_k = *k as usize,
        Command::Recommend { top_k, kpi, .. } => {
            if let Some(k) = top_k {
                cfg.selection.top_k = *k as usize;
            }
            if let Some(k) = kpi {
                cfg.selection.kpi = match k {
                    KpiArg::Aic => Kpi::Aic,
                    KpiArg::Bic => Kpi::Bic,
                    KpiArg::Deviance => Kpi::Deviance,
                };
            }
        }
        Command::Evaluate {
            competitor, bins, ..
        } => {
            if let Some(c) = competitor {
                cfg.evaluation.competitor = match c {
                    CompetitorArg::Cann => Competitor::Cann,
                    CompetitorArg::Refit => Competitor::Refit,
                    CompetitorArg::Benchmark => Competitor::Benchmark,
                };
            }
            if let Some(b) = bins {
                cfg.evaluation.quantile_bins = *b as usize;
            }
        }
        Command::RunAll { cycles: Some(c) } => cfg.cycles = *c as usize,
        _ => {}
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = build_config(&cli)?;
    let mut p = Pipeline::open(cfg)?;
    match cli.command {
        Command::Generate { .. } => {
            let m = p.generate()?;
            println!("wrote {} rows to {}", m.n, p.out.display());
        }
        Command::Ingest { .. } => {
            let m = p.ingest()?;
            println!("ingested {} rows into {}", m.n, p.out.display());
        }
        Command::FitBenchmark { cycle, .. } => {
            let s = p.fit_benchmark(cycle.cycle as usize)?;
            println!(
                "deviance {} AIC {} BIC {} balance residual {:e}",
                s.residual_deviance, s.aic, s.bic, s.balance_residual
            );
        }
        Command::Tune { cycle, .. } => {
            let best = p.tune(cycle.cycle as usize)?;
            println!("best: {}", best.describe());
        }
        Command::TrainCann { cycle, .. } => {
            let s = p.train_cann(cycle.cycle as usize)?;
            println!(
                "best epoch {} test deviance {} (benchmark {})",
                s.best_epoch, s.test_mean_deviance, s.benchmark_test_mean_deviance
            );
        }
        Command::Detect { cycle, .. } => {
            let r = p.detect(cycle.cycle as usize)?;
            for (i, pair) in r.pairs.iter().take(p.config.detect.top_k).enumerate() {
                println!(
                    "{} {} {} {}",
                    i + 1,
                    pair.feature_1,
                    pair.feature_2,
                    pair.score
                );
            }
        }
        Command::Recommend { cycle, .. } => {
            let (rec, refit) = p.recommend(cycle.cycle as usize)?;
            println!(
                "recommend {} ({:?} {}); test deviance {} -> {}",
                rec.term,
                rec.kpi,
                rec.kpi_value,
                refit.before.test_mean_deviance,
                refit.after.test_mean_deviance
            );
        }
        Command::Evaluate { cycle, .. } => {
            let s = p.evaluate(cycle.cycle as usize)?;
            println!(
                "mae_lift pb {} (benchmark {}), qbb {} (benchmark {})",
                s.predetermined.mae_lift,
                s.predetermined.mae_lift_benchmark,
                s.quantile.mae_lift,
                s.quantile.mae_lift_benchmark
            );
        }
        Command::RunAll { .. } => {
            let cycles = p.config.cycles;
            p.run_all(cycles)?;
            println!("completed {cycles} cycle(s) in {}", p.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
