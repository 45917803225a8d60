//! Hyper-parameter search: exhaustive grid search and a steady-state genetic
//! algorithm over index-encoded genotypes.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cann::{Activation, NnArchitecture, TrainConfig};
use crate::data::NnEncoding;
use crate::error::{Error, Result};
use crate::exec::{map_items, Exec};
use crate::io::fmt_f64;

/// Candidate values for each tuned hyper-parameter. Each entry of
/// `activations` lists one activation per hidden layer; a shorter list
/// repeats its last entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperGrid {
    pub hidden_sizes: Vec<Vec<usize>>,
    pub activations: Vec<Vec<Activation>>,
    pub dropout_rates: Vec<f64>,
    pub learning_rates: Vec<f64>,
    pub embedding_dims: Vec<usize>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid {
            hidden_sizes: vec![vec![20, 15, 10]],
            activations: vec![
                vec![Activation::default()],
                vec![Activation::Sigmoid],
                vec![Activation::Tanh],
            ],
            dropout_rates: vec![0.05],
            learning_rates: vec![1e-3],
            embedding_dims: vec![2],
        }
    }
}

/// One concrete setting drawn from a [`HyperGrid`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub hidden_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub embedding_dim: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            hidden_sizes: vec![20, 15, 10],
            activations: vec![Activation::default()],
            dropout_rate: 0.05,
            learning_rate: 1e-3,
            embedding_dim: 2,
        }
    }
}

impl HyperParams {
    pub fn layer_activations(&self) -> Vec<Activation> {
        let last = self.activations.last().copied().unwrap_or_default();
        (0..self.hidden_sizes.len())
            .map(|l| self.activations.get(l).copied().unwrap_or(last))
            .collect()
    }

    pub fn architecture(&self, encoding: &NnEncoding) -> Result<NnArchitecture> {
        let mut arch = NnArchitecture::for_encoding(
            encoding,
            &self.hidden_sizes,
            Activation::default(),
            self.embedding_dim,
            self.dropout_rate,
        )?;
        arch.activations = self.layer_activations();
        Ok(arch)
    }

    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.optimizer.learning_rate = self.learning_rate;
        cfg
    }

    pub fn describe(&self) -> String {
        let sizes: Vec<String> = self.hidden_sizes.iter().map(|s| s.to_string()).collect();
        let acts: Vec<&str> = self.layer_activations().iter().map(|a| a.name()).collect();
        format!(
            "hidden={} act={} dropout={} lr={} emb={}",
            sizes.join("-"),
            acts.join("-"),
            self.dropout_rate,
            self.learning_rate,
            self.embedding_dim
        )
    }
}

impl HyperGrid {
    /// Number of choices per gene.
    pub fn cardinalities(&self) -> [usize; 5] {
        [
            self.hidden_sizes.len(),
            self.activations.len(),
            self.dropout_rates.len(),
            self.learning_rates.len(),
            self.embedding_dims.len(),
        ]
    }

    pub fn size(&self) -> usize {
        self.cardinalities().iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.cardinalities().contains(&0) {
            return Err(Error::InvalidArgument(
                "every grid list must be non-empty".into(),
            ));
        }
        Ok(())
    }

    pub fn decode(&self, genes: &[usize]) -> Result<HyperParams> {
        let cards = self.cardinalities();
        if genes.len() != cards.len() || genes.iter().zip(cards).any(|(g, c)| *g >= c) {
            return Err(Error::InvalidArgument(format!(
                "genotype {genes:?} outside the grid"
            )));
        }
        Ok(HyperParams {
            hidden_sizes: self.hidden_sizes[genes[0]].clone(),
            activations: self.activations[genes[1]].clone(),
            dropout_rate: self.dropout_rates[genes[2]],
            learning_rate: self.learning_rates[genes[3]],
            embedding_dim: self.embedding_dims[genes[4]],
        })
    }

    /// All genotypes in lexicographic order.
    pub fn points(&self) -> Vec<Vec<usize>> {
        cartesian(&self.cardinalities())
    }
}

fn cartesian(cards: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &c in cards {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..c).map(move |i| {
                    let mut q = p.clone();
                    q.push(i);
                    q
                })
            })
            .collect();
    }
    out
}

/// Fitness (lower is better) and additional reported KPIs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub fitness: f64,
    pub reported: Vec<(String, f64)>,
}

impl Evaluation {
    pub fn new(fitness: f64) -> Self {
        Evaluation {
            fitness,
            reported: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub genotype: Vec<usize>,
    pub params: HyperParams,
    pub seed: u64,
    pub evaluation: Option<Evaluation>,
    pub error: Option<String>,
}

impl LeaderboardEntry {
    pub fn fitness(&self) -> f64 {
        self.evaluation
            .as_ref()
            .map_or(f64::INFINITY, |e| e.fitness)
    }
}

pub struct SearchOutcome<M> {
    pub best: HyperParams,
    pub best_model: M,
    /// Successful entries by fitness, then failures in grid order.
    pub leaderboard: Vec<LeaderboardEntry>,
}

/// Per-point training seed.
pub fn point_seed(seed: u64, genes: &[usize]) -> u64 {
    let mut parts = vec![seed, 0x7475_6e65];
    parts.extend(genes.iter().map(|&g| g as u64));
    crate::cann::derive_seed(&parts)
}

fn sort_entries(entries: &mut [LeaderboardEntry]) {
    entries.sort_by(|a, b| {
        let fa = a.evaluation.is_none();
        let fb = b.evaluation.is_none();
        fa.cmp(&fb)
            .then(a.fitness().total_cmp(&b.fitness()))
            .then_with(|| a.genotype.cmp(&b.genotype))
    });
}

/// Trains one model per grid point with `train_fn(params, seed)` and ranks the
/// points by `kpi_fn(model)`.
pub fn grid_search<M, T, K>(
    grid: &HyperGrid,
    seed: u64,
    exec: Exec,
    train_fn: T,
    kpi_fn: K,
) -> Result<SearchOutcome<M>>
where
    M: Send,
    T: Fn(&HyperParams, u64) -> Result<M> + Sync,
    K: Fn(&M) -> Result<Evaluation> + Sync,
{
    grid.validate()?;
    let points = grid.points();
    let results = map_items(exec, points, |genes| {
        let params = grid.decode(&genes).expect("grid point");
        let s = point_seed(seed, &genes);
        let outcome = train_fn(&params, s).and_then(|m| kpi_fn(&m).map(|e| (m, e)));
        (genes, params, s, outcome)
    });
    let mut best: Option<(f64, Vec<usize>, M)> = None;
    let mut entries = Vec::new();
    for (genes, params, s, outcome) in results {
        let entry = match outcome {
            Ok((model, eval)) => {
                let f = eval.fitness;
                if best.as_ref().is_none_or(|b| f < b.0) {
                    best = Some((f, genes.clone(), model));
                }
                LeaderboardEntry {
                    genotype: genes,
                    params,
                    seed: s,
                    evaluation: Some(eval),
                    error: None,
                }
            }
            Err(e) => LeaderboardEntry {
                genotype: genes,
                params,
                seed: s,
                evaluation: None,
                error: Some(e.to_string()),
            },
        };
        entries.push(entry);
    }
    sort_entries(&mut entries);
    let Some((_, genes, model)) = best else {
        return Err(Error::AllCandidatesFailed {
            diagnostics: entries.iter().filter_map(|e| e.error.clone()).collect(),
        });
    };
    Ok(SearchOutcome {
        best: grid.decode(&genes)?,
        best_model: model,
        leaderboard: entries,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population_size: usize,
    pub max_generations: usize,
    pub mutation_rate: f64,
    /// Offspring replace the worst individual only when strictly fitter.
    /// When off, the worst is always replaced.
    pub elitism: bool,
    /// Stop after this many generations without a new best.
    pub stall_patience: usize,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population_size: 20,
            max_generations: 200,
            mutation_rate: 0.2,
            elitism: true,
            stall_patience: 50,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::InvalidArgument(
                "population_size must be at least 2".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(Error::InvalidArgument(
                "mutation_rate must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub offspring: Vec<usize>,
    pub offspring_fitness: f64,
    pub replaced: bool,
    pub best_fitness: f64,
    pub worst_fitness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaOutcome {
    pub best: Vec<usize>,
    pub best_fitness: f64,
    pub log: Vec<GenerationRecord>,
    /// Every distinct genotype evaluated, with its fitness.
    pub evaluated: Vec<(Vec<usize>, f64)>,
}

fn random_genotype(cards: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    cards.iter().map(|&c| rng.random_range(0..c)).collect()
}

fn best_two(fit: &[f64]) -> (usize, usize) {
    let mut idx: Vec<usize> = (0..fit.len()).collect();
    idx.sort_by(|&a, &b| fit[a].total_cmp(&fit[b]).then(a.cmp(&b)));
    (idx[0], idx[1])
}

fn worst(fit: &[f64]) -> usize {
    let mut w = 0;
    for (i, f) in fit.iter().enumerate() {
        if f.total_cmp(&fit[w]).is_gt() {
            w = i;
        }
    }
    w
}

/// Steady-state GA over genotypes with `cards[g]` choices per gene. Failed
/// evaluations count as infinitely unfit.
pub fn ga_search<F>(cards: &[usize], cfg: &GaConfig, exec: Exec, fitness: F) -> Result<GaOutcome>
where
    F: Fn(&[usize]) -> Result<f64> + Sync,
{
    cfg.validate()?;
    if cards.is_empty() || cards.contains(&0) {
        return Err(Error::InvalidArgument(
            "every gene needs at least one choice".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cache: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut order: Vec<Vec<usize>> = Vec::new();
    let eval = |genes: &[usize]| fitness(genes).unwrap_or(f64::INFINITY);

    let population: Vec<Vec<usize>> = (0..cfg.population_size)
        .map(|_| random_genotype(cards, &mut rng))
        .collect();
    let mut fresh: Vec<Vec<usize>> = Vec::new();
    for g in &population {
        if !fresh.contains(g) {
            fresh.push(g.clone());
        }
    }
    let values = map_items(exec, fresh.clone(), |g| eval(&g));
    for (g, v) in fresh.into_iter().zip(values) {
        order.push(g.clone());
        cache.insert(g, v);
    }
    let mut population = population;
    let mut fit: Vec<f64> = population.iter().map(|g| cache[g]).collect();
    let mut best_so_far = fit.iter().copied().fold(f64::INFINITY, f64::min);
    let mut stall = 0;
    let mut log = Vec::new();

    for generation in 1..=cfg.max_generations {
        let (p1, p2) = best_two(&fit);
        let mut child: Vec<usize> = (0..cards.len())
            .map(|g| {
                if rng.random::<bool>() {
                    population[p1][g]
                } else {
                    population[p2][g]
                }
            })
            .collect();
        for (g, &c) in cards.iter().enumerate() {
            if c > 1 && rng.random::<f64>() < cfg.mutation_rate {
                let alt = rng.random_range(0..c - 1);
                child[g] = if alt >= child[g] { alt + 1 } else { alt };
            }
        }
        let child_fit = match cache.get(&child) {
            Some(&f) => f,
            None => {
                let f = eval(&child);
                cache.insert(child.clone(), f);
                order.push(child.clone());
                f
            }
        };
        let w = worst(&fit);
        let replaced = !cfg.elitism || child_fit < fit[w];
        if replaced {
            population[w] = child.clone();
            fit[w] = child_fit;
        }
        let current_best = fit.iter().copied().fold(f64::INFINITY, f64::min);
        if current_best < best_so_far {
            best_so_far = current_best;
            stall = 0;
        } else {
            stall += 1;
        }
        log.push(GenerationRecord {
            generation,
            offspring: child,
            offspring_fitness: child_fit,
            replaced,
            best_fitness: best_so_far,
            worst_fitness: fit.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
        if stall >= cfg.stall_patience {
            break;
        }
    }
    let evaluated: Vec<(Vec<usize>, f64)> = order
        .into_iter()
        .map(|g| {
            let f = cache[&g];
            (g, f)
        })
        .collect();
    let (best, best_fitness) = evaluated
        .iter()
        .filter(|(_, f)| f.is_finite())
        .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)))
        .cloned()
        .ok_or_else(|| Error::AllCandidatesFailed {
            diagnostics: vec!["no genotype could be evaluated".into()],
        })?;
    Ok(GaOutcome {
        best,
        best_fitness,
        log,
        evaluated,
    })
}

/// GA over a [`HyperGrid`]: `train_fn` and `kpi_fn` as in [`grid_search`].
/// The best genotype is retrained with its seed to return its model.
pub fn ga_search_grid<M, T, K>(
    grid: &HyperGrid,
    cfg: &GaConfig,
    exec: Exec,
    train_fn: T,
    kpi_fn: K,
) -> Result<(SearchOutcome<M>, Vec<GenerationRecord>)>
where
    M: Send,
    T: Fn(&HyperParams, u64) -> Result<M> + Sync,
    K: Fn(&M) -> Result<Evaluation> + Sync,
{
    grid.validate()?;
    let evaluations =
        std::sync::Mutex::new(HashMap::<Vec<usize>, Result<Evaluation, String>>::new());
    let fitness = |genes: &[usize]| -> Result<f64> {
        let params = grid.decode(genes)?;
        let out = train_fn(&params, point_seed(cfg.seed, genes)).and_then(|m| kpi_fn(&m));
        let f = out
            .as_ref()
            .map(|e| e.fitness)
            .map_err(|e| Error::Config(e.to_string()));
        evaluations
            .lock()
            .expect("evaluation log")
            .insert(genes.to_vec(), out.map_err(|e| e.to_string()));
        f
    };
    let ga = ga_search(&grid.cardinalities(), cfg, exec, fitness)?;
    let evaluations = evaluations.into_inner().expect("evaluation log");
    let mut entries: Vec<LeaderboardEntry> = ga
        .evaluated
        .iter()
        .map(|(g, _)| {
            let (evaluation, error) = match &evaluations[g] {
                Ok(e) => (Some(e.clone()), None),
                Err(e) => (None, Some(e.clone())),
            };
            LeaderboardEntry {
                genotype: g.clone(),
                params: grid.decode(g).expect("evaluated genotype"),
                seed: point_seed(cfg.seed, g),
                evaluation,
                error,
            }
        })
        .collect();
    sort_entries(&mut entries);
    let best = grid.decode(&ga.best)?;
    let best_model = train_fn(&best, point_seed(cfg.seed, &ga.best))?;
    Ok((
        SearchOutcome {
            best,
            best_model,
            leaderboard: entries,
        },
        ga.log,
    ))
}

pub fn leaderboard_csv(entries: &[LeaderboardEntry]) -> String {
    let mut names: Vec<String> = Vec::new();
    for e in entries {
        for (k, _) in e.evaluation.iter().flat_map(|v| &v.reported) {
            if !names.contains(k) {
                names.push(k.clone());
            }
        }
    }
    let mut s = String::from("rank,genotype,params,seed,fitness");
    for n in &names {
        s.push(',');
        s.push_str(n);
    }
    s.push_str(",error\n");
    for (i, e) in entries.iter().enumerate() {
        let genes: Vec<String> = e.genotype.iter().map(|g| g.to_string()).collect();
        let _ = write!(
            s,
            "{},{},{},{},{}",
            i + 1,
            genes.join("-"),
            e.params.describe(),
            e.seed,
            fmt_f64(e.fitness())
        );
        for n in &names {
            let v = e
                .evaluation
                .iter()
                .flat_map(|v| &v.reported)
                .find(|(k, _)| k == n)
                .map_or(f64::NAN, |(_, v)| *v);
            let _ = write!(s, ",{}", fmt_f64(v));
        }
        let err = e.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        let _ = writeln!(s, ",{err}");
    }
    s
}

pub fn generation_log_csv(log: &[GenerationRecord]) -> String {
    let mut s = String::from(
        "generation,offspring,offspring_fitness,replaced,best_fitness,worst_fitness\n",
    );
    for r in log {
        let genes: Vec<String> = r.offspring.iter().map(|g| g.to_string()).collect();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.generation,
            genes.join("-"),
            fmt_f64(r.offspring_fitness),
            r.replaced,
            fmt_f64(r.best_fitness),
            fmt_f64(r.worst_fitness)
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn landscape(target: &[usize]) -> impl Fn(&[usize]) -> Result<f64> + Sync + '_ {
        move |g: &[usize]| {
            Ok(g.iter()
                .zip(target)
                .map(|(a, b)| (*a as f64 - *b as f64).abs())
                .sum())
        }
    }

    #[test]
    fn ga_finds_landscape_optimum() {
        let cards = [3usize; 5];
        let target = [2, 0, 1, 2, 1];
        // exhaustive ground truth
        let f = landscape(&target);
        let optimum = cartesian(&cards)
            .into_iter()
            .min_by(|a, b| f(a).unwrap().total_cmp(&f(b).unwrap()))
            .unwrap();
        assert_eq!(optimum, target);
        let mut hits = 0;
        for seed in 0..10 {
            let cfg = GaConfig {
                seed,
                ..GaConfig::default()
            };
            let out = ga_search(&cards, &cfg, Exec::Sequential, landscape(&target)).unwrap();
            if out.best == optimum {
                hits += 1;
            }
            for w in out.log.windows(2) {
                assert!(w[1].best_fitness <= w[0].best_fitness);
            }
            assert!(out.log.len() <= 200);
        }
        assert!(hits >= 9, "{hits}/10");
    }

    #[test]
    fn pair_population_without_mutation_never_worsens() {
        let cfg = GaConfig {
            population_size: 2,
            mutation_rate: 0.0,
            max_generations: 50,
            seed: 4,
            ..GaConfig::default()
        };
        let out = ga_search(&[4, 4, 4], &cfg, Exec::Sequential, landscape(&[3, 0, 2])).unwrap();
        for w in out.log.windows(2) {
            assert!(w[1].worst_fitness <= w[0].worst_fitness);
        }
    }

    #[test]
    fn ga_is_deterministic() {
        let cfg = GaConfig {
            seed: 9,
            ..GaConfig::default()
        };
        let a = ga_search(&[3; 5], &cfg, Exec::Sequential, landscape(&[1; 5])).unwrap();
        let b = ga_search(&[3; 5], &cfg, Exec::Parallel, landscape(&[1; 5])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_configs() {
        let cfg = GaConfig {
            population_size: 1,
            ..GaConfig::default()
        };
        assert!(ga_search(&[2], &cfg, Exec::Sequential, landscape(&[0])).is_err());
        let cfg = GaConfig {
            mutation_rate: 1.5,
            ..GaConfig::default()
        };
        assert!(ga_search(&[2], &cfg, Exec::Sequential, landscape(&[0])).is_err());
    }

    fn small_grid() -> HyperGrid {
        HyperGrid {
            hidden_sizes: vec![vec![4], vec![3, 2]],
            activations: vec![vec![Activation::default()], vec![Activation::Tanh]],
            dropout_rates: vec![0.0, 0.1],
            learning_rates: vec![1e-3],
            embedding_dims: vec![1],
        }
    }

    #[test]
    fn grid_leaderboard_is_sorted_permutation() {
        let grid = small_grid();
        // fitness depends on the params, so re-evaluation can be checked
        let kpi = |p: &HyperParams| p.hidden_sizes.iter().sum::<usize>() as f64 + p.dropout_rate;
        let out = grid_search(
            &grid,
            1,
            Exec::Sequential,
            |p, _| {
                if p.dropout_rate > 0.05 && p.hidden_sizes.len() == 2 {
                    Err(Error::InvalidArgument("planted failure".into()))
                } else {
                    Ok(p.clone())
                }
            },
            |m: &HyperParams| Ok(Evaluation::new(kpi(m))),
        )
        .unwrap();
        assert_eq!(out.leaderboard.len(), grid.size());
        let mut seen: Vec<Vec<usize>> =
            out.leaderboard.iter().map(|e| e.genotype.clone()).collect();
        seen.sort();
        assert_eq!(seen, grid.points());
        let ok: Vec<&LeaderboardEntry> = out
            .leaderboard
            .iter()
            .filter(|e| e.error.is_none())
            .collect();
        assert_eq!(ok.len(), 6);
        for w in ok.windows(2) {
            assert!(w[0].fitness() <= w[1].fitness());
        }
        for e in &ok {
            assert_eq!(e.fitness(), kpi(&e.params));
        }
        assert!(out.leaderboard[6..].iter().all(|e| e.error.is_some()));
        assert_eq!(out.best, out.leaderboard[0].params);
        assert!(leaderboard_csv(&out.leaderboard).lines().count() == 9);
    }

    #[test]
    fn single_point_grid() {
        let grid = HyperGrid {
            activations: vec![vec![Activation::Sigmoid]],
            ..HyperGrid::default()
        };
        assert_eq!(grid.size(), 1);
        let out = grid_search(
            &grid,
            0,
            Exec::Sequential,
            |p, _| Ok(p.clone()),
            |_| Ok(Evaluation::new(1.0)),
        )
        .unwrap();
        assert_eq!(out.best, grid.decode(&[0; 5]).unwrap());
    }

    #[test]
    fn ga_over_grid_reports_evaluations() {
        let grid = small_grid();
        let cfg = GaConfig {
            population_size: 4,
            max_generations: 10,
            seed: 2,
            ..GaConfig::default()
        };
        let (out, log) = ga_search_grid(
            &grid,
            &cfg,
            Exec::Sequential,
            |p, _| Ok(p.clone()),
            |m: &HyperParams| {
                Ok(Evaluation::new(
                    m.dropout_rate + m.hidden_sizes.len() as f64,
                ))
            },
        )
        .unwrap();
        assert_eq!(out.best.hidden_sizes.len(), 1);
        assert!(!log.is_empty());
        assert!(generation_log_csv(&log).starts_with("generation,"));
    }
}
