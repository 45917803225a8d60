use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DerivedFeature;
use crate::cann::CannModel;
use crate::error::{Error, Result};

pub const DEFAULT_RESTARTS: usize = 10;
const MAX_LLOYD_ITERATIONS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterMap {
    pub feature: String,
    pub categories: Vec<String>,
    pub k: usize,
    /// Cluster id per category.
    pub assignment: Vec<u32>,
    /// Calinski–Harabasz score for each scanned `k`.
    pub ch_scores: Vec<(usize, f64)>,
}

impl ClusterMap {
    pub fn derived_feature(&self) -> DerivedFeature {
        DerivedFeature::Clustered {
            name: format!("{}_k{}", self.feature, self.k),
            source: self.feature.clone(),
            source_categories: self.categories.clone(),
            assignment: self.assignment.clone(),
            k: self.k,
        }
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = dist2(p, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations. Returns the assignment and
/// the within-cluster sum of squares.
fn kmeans_once(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64) {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    while centers.len() < k {
        let d: Vec<f64> = points.iter().map(|p| nearest(p, &centers).1).collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, di) in d.iter().enumerate() {
                if u < *di {
                    idx = i;
                    break;
                }
                u -= di;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[pick].clone());
    }
    let mut assign = vec![usize::MAX; n];
    for _ in 0..MAX_LLOYD_ITERATIONS {
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
        if next == assign {
            break;
        }
        assign = next;
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points
                .iter()
                .zip(&assign)
                .filter(|(_, &a)| a == c)
                .map(|(p, _)| p)
                .collect();
            if members.is_empty() {
                continue;
            }
            for (j, x) in center.iter_mut().enumerate() {
                *x = members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    let inertia = points
        .iter()
        .zip(&assign)
        .map(|(p, &a)| dist2(p, &centers[a]))
        .sum();
    (assign, inertia)
}

/// Best of `restarts` k-means runs, with cluster ids renumbered in order of
/// first appearance.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 || k > points.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot form {k} clusters from {} points",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..restarts.max(1) {
        let run = kmeans_once(points, k, &mut rng);
        if best.as_ref().is_none_or(|b| run.1 < b.1) {
            best = Some(run);
        }
    }
    let assign = best.expect("at least one run").0;
    let mut relabel = vec![usize::MAX; k];
    let mut next = 0;
    Ok(assign
        .into_iter()
        .map(|a| {
            if relabel[a] == usize::MAX {
                relabel[a] = next;
                next += 1;
            }
            relabel[a]
        })
        .collect())
}

/// `[B/(k−1)] / [W/(n−k)]`, infinite when clusters have no spread.
pub fn calinski_harabasz(points: &[Vec<f64>], assign: &[usize]) -> f64 {
    let n = points.len();
    let k = assign.iter().copied().max().map_or(0, |m| m + 1);
    if k < 2 || n <= k {
        return 0.0;
    }
    let dim = points[0].len();
    let mean: Vec<f64> = (0..dim)
        .map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n as f64)
        .collect();
    let mut between = 0.0;
    let mut within = 0.0;
    for c in 0..k {
        let members: Vec<&Vec<f64>> = points
            .iter()
            .zip(assign)
            .filter(|(_, &a)| a == c)
            .map(|(p, _)| p)
            .collect();
        if members.is_empty() {
            continue;
        }
        let centroid: Vec<f64> = (0..dim)
            .map(|j| members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64)
            .collect();
        between += members.len() as f64 * dist2(&centroid, &mean);
        within += members.iter().map(|m| dist2(m, &centroid)).sum::<f64>();
    }
    if within == 0.0 {
        return f64::INFINITY;
    }
    (between / (k - 1) as f64) / (within / (n - k) as f64)
}

/// Chosen `k`, cluster of each point, and the score of every `k` tried.
pub type Clustering = (usize, Vec<usize>, Vec<(usize, f64)>);

/// Scans `k` over `k_range` and keeps the assignment with the highest
/// Calinski–Harabasz score (smallest `k` on ties).
pub fn cluster_points(
    points: &[Vec<f64>],
    k_range: (usize, usize),
    restarts: usize,
    seed: u64,
) -> Result<Clustering> {
    let (lo, hi) = k_range;
    if lo < 2 || hi < lo || hi + 1 > points.len() {
        return Err(Error::InvalidArgument(format!(
            "cluster range {lo}..={hi} invalid for {} categories",
            points.len()
        )));
    }
    let mut scores = Vec::new();
    let mut best: Option<(usize, Vec<usize>, f64)> = None;
    for k in lo..=hi {
        let assign = kmeans(points, k, restarts, seed.wrapping_add(k as u64))?;
        let ch = calinski_harabasz(points, &assign);
        scores.push((k, ch));
        if best.as_ref().is_none_or(|b| ch > b.2) {
            best = Some((k, assign, ch));
        }
    }
    let (k, assign, _) = best.expect("non-empty range");
    Ok((k, assign, scores))
}

/// Clusters the categories of `feature` by their learned embedding vectors.
pub fn cluster_embeddings(
    model: &CannModel,
    feature: &str,
    k_range: (usize, usize),
    restarts: usize,
    seed: u64,
) -> Result<ClusterMap> {
    let e = model
        .architecture()
        .embeddings
        .iter()
        .position(|e| e.feature == feature)
        .ok_or_else(|| Error::InvalidArgument(format!("'{feature}' has no embedding")))?;
    let slot = model.weights().layout.embeddings[e];
    let m = model.weights().embedding(e);
    let points: Vec<Vec<f64>> = (0..slot.rows)
        .map(|r| m[r * slot.cols..(r + 1) * slot.cols].to_vec())
        .collect();
    let categories = model
        .encoding
        .schema
        .column(feature)?
        .categories()
        .map(<[String]>::to_vec)
        .unwrap_or_default();
    let (k, assign, ch_scores) = cluster_points(&points, k_range, restarts, seed)?;
    Ok(ClusterMap {
        feature: feature.to_string(),
        categories,
        k,
        assignment: assign.into_iter().map(|a| a as u32).collect(),
        ch_scores,
    })
}

/// Default scan `2..=min(10, categories − 1)`.
pub fn default_k_range(categories: usize) -> (usize, usize) {
    (2, 10.min(categories.saturating_sub(1)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planted() -> Vec<Vec<f64>> {
        vec![
            vec![0.0, 0.1],
            vec![0.1, 0.0],
            vec![-0.1, 0.05],
            vec![5.0, 5.1],
            vec![5.1, 4.9],
            vec![4.9, 5.0],
            vec![5.05, 5.05],
        ]
    }

    #[test]
    fn planted_clusters_are_recovered() {
        let (k, assign, scores) = cluster_points(&planted(), (2, 5), 10, 1).unwrap();
        assert_eq!(k, 2);
        assert_eq!(assign, vec![0, 0, 0, 1, 1, 1, 1]);
        assert_eq!(scores.len(), 4);
        let best = scores.iter().map(|s| s.1).fold(f64::MIN, f64::max);
        assert_eq!(scores[0].1, best);
    }

    #[test]
    fn fixed_range_returns_that_k() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let (k, ..) = cluster_points(&pts, (2, 2), 5, 3).unwrap();
        assert_eq!(k, 2);
    }

    #[test]
    fn duplicates_share_a_cluster() {
        let mut pts = planted();
        pts.push(pts[4].clone());
        pts.push(pts[0].clone());
        for seed in 0..5 {
            let (_, a, _) = cluster_points(&pts, (2, 4), 3, seed).unwrap();
            assert_eq!(a[7], a[4]);
            assert_eq!(a[8], a[0]);
        }
    }

    #[test]
    fn clustering_is_deterministic() {
        let a = cluster_points(&planted(), (2, 6), 4, 9).unwrap();
        let b = cluster_points(&planted(), (2, 6), 4, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_range() {
        assert!(cluster_points(&planted(), (1, 3), 1, 0).is_err());
        assert!(cluster_points(&planted(), (2, 7), 1, 0).is_err());
    }

    #[test]
    fn ch_matches_hand_value() {
        // clusters {0,2} and {10,12}: B = 4·25 = 100, W = 4, n−k = 2
        let pts = vec![vec![0.0], vec![2.0], vec![10.0], vec![12.0]];
        let ch = calinski_harabasz(&pts, &[0, 0, 1, 1]);
        assert!((ch - 100.0 / (4.0 / 2.0)).abs() < 1e-12);
    }
}
