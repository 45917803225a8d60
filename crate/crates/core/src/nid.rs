//! Neural interaction detection on the first hidden layer of a trained network.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cann::{InputNeuron, NnWeights};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surrogate {
    #[default]
    Min,
    HarmonicMean,
}

impl Surrogate {
    #[inline]
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            Surrogate::Min => a.min(b),
            Surrogate::HarmonicMean => {
                if a + b == 0.0 {
                    0.0
                } else {
                    2.0 * a * b / (a + b)
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Min,
    Mean,
    Max,
}

impl Aggregation {
    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Min => "min",
            Aggregation::Mean => "mean",
            Aggregation::Max => "max",
        }
    }

    fn reduce(self, values: &[f64]) -> f64 {
        match self {
            Aggregation::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
            Aggregation::Max => values.iter().copied().fold(0.0, f64::max),
            Aggregation::Mean => values.iter().sum::<f64>() / values.len() as f64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronPairScore {
    pub input_index_1: usize,
    pub input_index_2: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeaturePairScore {
    pub feature_1: String,
    pub feature_2: String,
    pub score: f64,
    pub aggregation: Aggregation,
}

impl FeaturePairScore {
    pub fn is_pair(&self, a: &str, b: &str) -> bool {
        (self.feature_1 == a && self.feature_2 == b) || (self.feature_1 == b && self.feature_2 == a)
    }
}

/// `ζᵀ = |w^y|ᵀ·|W^(d)|·…·|W^(2)|`, one entry per first-hidden-layer neuron.
pub fn influence(weights: &NnWeights) -> Result<Vec<f64>> {
    let lay = &weights.layout;
    let d = lay.weights.len();
    if d == 0 {
        return Err(Error::Layout("network has no hidden layer".into()));
    }
    if lay.output_weights.rows != lay.weights[d - 1].rows {
        return Err(Error::Layout(
            "output weights do not match last hidden layer".into(),
        ));
    }
    let mut z: Vec<f64> = weights.output_weights().iter().map(|w| w.abs()).collect();
    for l in (1..d).rev() {
        let slot = lay.weights[l];
        if slot.cols != lay.weights[l - 1].rows || slot.rows != z.len() {
            return Err(Error::Layout(format!("layer {} shape mismatch", l + 1)));
        }
        let w = weights.layer_weights(l);
        let mut next = vec![0.0; slot.cols];
        for (r, zr) in z.iter().enumerate() {
            for (n, a) in next.iter_mut().zip(&w[r * slot.cols..(r + 1) * slot.cols]) {
                *n += zr * a.abs();
            }
        }
        z = next;
    }
    Ok(z)
}

/// `s(I) = Σ_j ζ_j·μ(|W^(1)_{j,i}|, |W^(1)_{j,k}|)` for every unordered input pair.
pub fn pair_scores(weights: &NnWeights, surrogate: Surrogate) -> Result<Vec<NeuronPairScore>> {
    let zeta = influence(weights)?;
    let slot = weights.layout.weights[0];
    let q0 = slot.cols;
    let w1: Vec<f64> = weights.layer_weights(0).iter().map(|w| w.abs()).collect();
    let mut out = Vec::with_capacity(q0 * q0.saturating_sub(1) / 2);
    for i in 0..q0 {
        for k in i + 1..q0 {
            let score = zeta
                .iter()
                .enumerate()
                .map(|(j, z)| z * surrogate.apply(w1[j * q0 + i], w1[j * q0 + k]))
                .sum();
            out.push(NeuronPairScore {
                input_index_1: i,
                input_index_2: k,
                score,
            });
        }
    }
    Ok(out)
}

/// Pools neuron-pair scores into feature pairs. Features are ordered by their
/// first input neuron; pairs of inputs from the same feature are skipped.
pub fn aggregate(
    scores: &[NeuronPairScore],
    neurons: &[InputNeuron],
    aggregation: Aggregation,
) -> Result<Vec<FeaturePairScore>> {
    let mut features: Vec<&str> = Vec::new();
    let mut group = Vec::with_capacity(neurons.len());
    for n in neurons {
        let g = match features.iter().position(|f| *f == n.feature) {
            Some(g) => g,
            None => {
                features.push(&n.feature);
                features.len() - 1
            }
        };
        group.push(g);
    }
    let nf = features.len();
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); nf * nf];
    for s in scores {
        let (Some(&a), Some(&b)) = (group.get(s.input_index_1), group.get(s.input_index_2)) else {
            return Err(Error::Layout(format!(
                "input index {} or {} not mapped to a feature",
                s.input_index_1, s.input_index_2
            )));
        };
        if a != b {
            let (a, b) = (a.min(b), a.max(b));
            buckets[a * nf + b].push(s.score);
        }
    }
    let mut out = Vec::new();
    for a in 0..nf {
        for b in a + 1..nf {
            let v = &buckets[a * nf + b];
            if !v.is_empty() {
                out.push(FeaturePairScore {
                    feature_1: features[a].to_string(),
                    feature_2: features[b].to_string(),
                    score: aggregation.reduce(v),
                    aggregation,
                });
            }
        }
    }
    Ok(out)
}

/// Sorts by descending score, ties by feature names, and keeps `top_k`.
pub fn rank(mut scores: Vec<FeaturePairScore>, top_k: Option<usize>) -> Vec<FeaturePairScore> {
    scores.sort_by(|x, y| {
        y.score
            .partial_cmp(&x.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| (&x.feature_1, &x.feature_2).cmp(&(&y.feature_1, &y.feature_2)))
    });
    if let Some(k) = top_k {
        scores.truncate(k);
    }
    scores
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NidConfig {
    pub surrogate: Surrogate,
    pub aggregation: Aggregation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NidResult {
    pub config: NidConfig,
    /// Ranked feature pairs.
    pub pairs: Vec<FeaturePairScore>,
    /// Input-neuron pairs, one entry per one-hot level or embedding dimension.
    pub neuron_pairs: Vec<NeuronPairScore>,
    pub neurons: Vec<InputNeuron>,
}

pub fn detect(
    weights: &NnWeights,
    neurons: &[InputNeuron],
    config: NidConfig,
) -> Result<NidResult> {
    if neurons.len() != weights.input_width() {
        return Err(Error::Layout(format!(
            "{} input neurons named, network has {}",
            neurons.len(),
            weights.input_width()
        )));
    }
    let neuron_pairs = pair_scores(weights, config.surrogate)?;
    let pairs = rank(aggregate(&neuron_pairs, neurons, config.aggregation)?, None);
    Ok(NidResult {
        config,
        pairs,
        neuron_pairs,
        neurons: neurons.to_vec(),
    })
}

impl NidResult {
    /// Rank of the unordered pair, starting at 1.
    pub fn position(&self, a: &str, b: &str) -> Option<usize> {
        self.pairs
            .iter()
            .position(|p| p.is_pair(a, b))
            .map(|i| i + 1)
    }

    /// `rank,feature_1,feature_2,score`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,feature_1,feature_2,score\n");
        for (i, p) in self.pairs.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                i + 1,
                p.feature_1,
                p.feature_2,
                crate::io::fmt_f64(p.score)
            );
        }
        s
    }

    /// Neuron-level scores labelled by input neuron, in descending order.
    pub fn neuron_csv(&self) -> String {
        let mut pairs = self.neuron_pairs.clone();
        pairs.sort_by(|x, y| {
            y.score
                .partial_cmp(&x.score)
                .unwrap_or(Ordering::Equal)
                .then((x.input_index_1, x.input_index_2).cmp(&(y.input_index_1, y.input_index_2)))
        });
        let mut s = String::from("rank,input_1,input_2,score\n");
        for (i, p) in pairs.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                i + 1,
                self.neurons[p.input_index_1].label,
                self.neurons[p.input_index_2].label,
                crate::io::fmt_f64(p.score)
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cann::{Activation, EmbeddingSpec, NnArchitecture, ParamLayout};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn arch(hidden: &[usize]) -> NnArchitecture {
        NnArchitecture {
            hidden_sizes: hidden.to_vec(),
            activations: vec![Activation::default(); hidden.len()],
            embeddings: Vec::<EmbeddingSpec>::new(),
            dropout_rate: 0.0,
        }
    }

    fn random_weights(q0: usize, hidden: &[usize], seed: u64) -> NnWeights {
        let layout = ParamLayout::new(&arch(hidden), q0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = (0..layout.total)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        NnWeights { layout, params }
    }

    fn neurons(names: &[&str]) -> Vec<InputNeuron> {
        names
            .iter()
            .map(|n| InputNeuron {
                feature: n.to_string(),
                label: n.to_string(),
            })
            .collect()
    }

    /// Sum over all paths from first-layer neuron `j` to the output of the
    /// product of absolute weights, by explicit recursion.
    fn path_sum(w: &NnWeights, layer: usize, neuron: usize) -> f64 {
        let d = w.depth();
        if layer == d - 1 {
            return w.output_weights()[neuron].abs();
        }
        let next = w.layout.weights[layer + 1];
        (0..next.rows)
            .map(|r| {
                w.layer_weights(layer + 1)[r * next.cols + neuron].abs() * path_sum(w, layer + 1, r)
            })
            .sum()
    }

    #[test]
    fn influence_matches_path_enumeration() {
        let w = random_weights(4, &[4, 3, 2], 1);
        let z = influence(&w).unwrap();
        assert_eq!(z.len(), 4);
        for (j, zj) in z.iter().enumerate() {
            assert!((zj - path_sum(&w, 0, j)).abs() < 1e-10);
        }
    }

    #[test]
    fn single_layer_influence_is_abs_output_weights() {
        let w = random_weights(3, &[5], 2);
        let want: Vec<f64> = w.output_weights().iter().map(|x| x.abs()).collect();
        assert_eq!(influence(&w).unwrap(), want);
    }

    #[test]
    fn identity_second_layer_gives_ones() {
        let mut w = random_weights(3, &[3, 3], 3);
        let s = w.layout.weights[1];
        let eye: Vec<f64> = (0..9).map(|i| if i % 4 == 0 { 1.0 } else { 0.0 }).collect();
        w.slice_mut(s).copy_from_slice(&eye);
        let o = w.layout.output_weights;
        w.slice_mut(o).copy_from_slice(&[1.0, 1.0, 1.0]);
        assert_eq!(influence(&w).unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn hand_example_scores_ten() {
        let mut w = random_weights(2, &[1], 4);
        let s = w.layout.weights[0];
        w.slice_mut(s).copy_from_slice(&[2.0, 3.0]);
        let o = w.layout.output_weights;
        w.slice_mut(o)[0] = 5.0;
        let p = pair_scores(&w, Surrogate::Min).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].score, 10.0);
        let h = pair_scores(&w, Surrogate::HarmonicMean).unwrap();
        assert!((h[0].score - 5.0 * 2.4).abs() < 1e-12);
    }

    #[test]
    fn zero_column_is_isolated() {
        let mut w = random_weights(4, &[5, 3], 5);
        let s = w.layout.weights[0];
        for r in 0..s.rows {
            w.params[s.offset + r * s.cols + 2] = 0.0;
        }
        for p in pair_scores(&w, Surrogate::Min).unwrap() {
            if p.input_index_1 == 2 || p.input_index_2 == 2 {
                assert_eq!(p.score, 0.0);
            } else {
                assert!(p.score > 0.0);
            }
        }
    }

    #[test]
    fn scaling_output_scales_scores() {
        let w = random_weights(5, &[4, 3], 6);
        let mut w2 = w.clone();
        let o = w2.layout.output_weights;
        w2.slice_mut(o).iter_mut().for_each(|x| *x *= 4.0);
        let a = pair_scores(&w, Surrogate::Min).unwrap();
        let b = pair_scores(&w2, Surrogate::Min).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((y.score - 4.0 * x.score).abs() <= 1e-12 * y.score.max(1.0));
        }
        let n = neurons(&["a", "b", "c", "d", "e"]);
        let ra = detect(&w, &n, NidConfig::default()).unwrap();
        let rb = detect(&w2, &n, NidConfig::default()).unwrap();
        let names = |r: &NidResult| -> Vec<(String, String)> {
            r.pairs
                .iter()
                .map(|p| (p.feature_1.clone(), p.feature_2.clone()))
                .collect()
        };
        assert_eq!(names(&ra), names(&rb));
    }

    #[test]
    fn singletons_aggregate_to_raw_score() {
        let w = random_weights(2, &[3], 7);
        let raw = pair_scores(&w, Surrogate::Min).unwrap();
        for agg in [Aggregation::Min, Aggregation::Mean, Aggregation::Max] {
            let f = aggregate(&raw, &neurons(&["a", "b"]), agg).unwrap();
            assert_eq!(f.len(), 1);
            assert_eq!(f[0].score, raw[0].score);
        }
    }

    #[test]
    fn one_hot_group_reduces_its_pairs() {
        // inputs: x (numeric), c=0, c=1, c=2
        let w = random_weights(4, &[3, 2], 8);
        let raw = pair_scores(&w, Surrogate::Min).unwrap();
        let mut n = neurons(&["x", "c", "c", "c"]);
        for (i, lab) in ["c=0", "c=1", "c=2"].iter().enumerate() {
            n[i + 1].label = lab.to_string();
        }
        let with_x: Vec<f64> = raw
            .iter()
            .filter(|p| p.input_index_1 == 0)
            .map(|p| p.score)
            .collect();
        assert_eq!(with_x.len(), 3);
        let min = with_x.iter().copied().fold(f64::INFINITY, f64::min);
        let max = with_x.iter().copied().fold(0.0, f64::max);
        let mean = (with_x[0] + with_x[1] + with_x[2]) / 3.0;
        for (agg, want) in [
            (Aggregation::Min, min),
            (Aggregation::Mean, mean),
            (Aggregation::Max, max),
        ] {
            let f = aggregate(&raw, &n, agg).unwrap();
            assert_eq!(f.len(), 1, "same-feature pairs must be excluded");
            assert!((f[0].score - want).abs() < 1e-14);
        }
    }

    #[test]
    fn unmapped_index_is_an_error() {
        let w = random_weights(3, &[2], 9);
        let raw = pair_scores(&w, Surrogate::Min).unwrap();
        assert!(aggregate(&raw, &neurons(&["a", "b"]), Aggregation::Min).is_err());
    }

    #[test]
    fn ranking_and_ties() {
        let p = |a: &str, b: &str, s: f64| FeaturePairScore {
            feature_1: a.into(),
            feature_2: b.into(),
            score: s,
            aggregation: Aggregation::Min,
        };
        let r = rank(vec![p("a", "b", 2.0), p("a", "c", 5.0)], None);
        assert_eq!(r[0].feature_2, "c");
        let r = rank(vec![p("a", "c", 1.0), p("a", "b", 1.0)], Some(1));
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].feature_2, "b");
    }

    #[test]
    fn csv_layout() {
        let mut w = random_weights(2, &[1], 4);
        let s = w.layout.weights[0];
        w.slice_mut(s).copy_from_slice(&[2.0, 3.0]);
        let o = w.layout.output_weights;
        w.slice_mut(o)[0] = 5.0;
        let r = detect(&w, &neurons(&["x4", "x5"]), NidConfig::default()).unwrap();
        assert_eq!(
            r.to_csv(),
            "rank,feature_1,feature_2,score\n1,x4,x5,1.0000000000000000e1\n"
        );
        assert_eq!(r.position("x5", "x4"), Some(1));
    }

    proptest! {
        #[test]
        fn scores_are_monotone_in_first_layer_weights(
            seed in 0u64..1000,
            j in 0usize..4,
            i in 0usize..5,
            bump in 0.0f64..3.0,
        ) {
            let w = random_weights(5, &[4, 3], seed);
            let mut w2 = w.clone();
            let s = w2.layout.weights[0];
            let idx = s.offset + j * s.cols + i;
            let v = w2.params[idx];
            w2.params[idx] = v + bump * v.signum();
            for surrogate in [Surrogate::Min, Surrogate::HarmonicMean] {
                let a = pair_scores(&w, surrogate).unwrap();
                let b = pair_scores(&w2, surrogate).unwrap();
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!(x.score >= 0.0);
                    prop_assert!(y.score >= x.score - 1e-12);
                }
            }
        }
    }
}
