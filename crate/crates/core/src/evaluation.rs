//! Double lift charts of a competitor against the benchmark, and the
//! `mae_lift` summary of how far each model's per-bin frequency is from the
//! observed one.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_f64;

pub const DEFAULT_QUANTILE_BINS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Binning {
    /// `(−∞,−0.5], (−0.5,−0.48], …, (0.48,0.5], (0.5,∞)`
    Predetermined,
    Quantile {
        bins: usize,
    },
}

impl Binning {
    pub fn name(&self) -> String {
        match self {
            Binning::Predetermined => "predetermined".into(),
            Binning::Quantile { bins } => format!("quantile({bins})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftBin {
    pub lower: f64,
    pub upper: f64,
    pub exposure_weight: f64,
    pub waof: f64,
    pub wapf_competitor: f64,
    pub wapf_benchmark: f64,
    pub row_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftReport {
    pub binning: Binning,
    pub bins: Vec<LiftBin>,
    pub mae_lift: f64,
    pub mae_lift_benchmark: f64,
}

/// Edges `−0.5, −0.48, …, 0.5` of the predetermined bins.
pub fn predetermined_edges() -> Vec<f64> {
    (0..=50).map(|i| (i as f64 - 25.0) / 50.0).collect()
}

/// Upper edges of quantile bins: position-based equal-count groups over the
/// sorted ratios; values tied across a boundary fall into the lower bin.
fn quantile_edges(sorted: &[f64], bins: usize) -> Vec<f64> {
    let n = sorted.len();
    let mut edges: Vec<f64> = (1..bins)
        .map(|b| b * n / bins)
        .filter(|&end| end > 0)
        .map(|end| sorted[end - 1])
        .collect();
    edges.dedup();
    edges
}

/// Bin index of each value: the number of edges strictly below it, so bins
/// are closed on the right.
fn assign(values: &[f64], edges: &[f64]) -> Vec<usize> {
    values
        .iter()
        .map(|d| edges.partition_point(|e| e < d))
        .collect()
}

/// Builds the lift chart data. `competitor` and `benchmark` are expected counts.
pub fn lift_report(
    competitor: &[f64],
    benchmark: &[f64],
    claims: &[u32],
    exposure: &[f64],
    binning: Binning,
) -> Result<LiftReport> {
    let n = benchmark.len();
    if competitor.len() != n || claims.len() != n || exposure.len() != n {
        return Err(Error::InvalidArgument(
            "lift inputs differ in length".into(),
        ));
    }
    if benchmark.iter().any(|b| !(*b > 0.0)) {
        return Err(Error::InvalidArgument(
            "benchmark predictions must be positive".into(),
        ));
    }
    let total_exposure: f64 = exposure.iter().sum();
    if !(total_exposure > 0.0) {
        return Err(Error::InvalidArgument("total exposure is zero".into()));
    }
    let delta: Vec<f64> = competitor
        .iter()
        .zip(benchmark)
        .map(|(c, b)| c / b - 1.0)
        .collect();
    let edges = match binning {
        Binning::Predetermined => predetermined_edges(),
        Binning::Quantile { bins } => {
            if bins == 0 {
                return Err(Error::InvalidArgument(
                    "need at least one quantile bin".into(),
                ));
            }
            let mut sorted = delta.clone();
            sorted.sort_by(f64::total_cmp);
            quantile_edges(&sorted, bins)
        }
    };
    let n_bins = edges.len() + 1;
    let index = assign(&delta, &edges);

    let mut v = vec![0.0; n_bins];
    let mut obs = vec![0.0; n_bins];
    let mut comp = vec![0.0; n_bins];
    let mut bench = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    for (i, &b) in index.iter().enumerate() {
        v[b] += exposure[i];
        obs[b] += claims[i] as f64;
        comp[b] += competitor[i];
        bench[b] += benchmark[i];
        count[b] += 1;
    }

    let mut bins = Vec::with_capacity(n_bins);
    let mut mae_lift = 0.0;
    let mut mae_lift_benchmark = 0.0;
    for b in 0..n_bins {
        let lower = if b == 0 {
            f64::NEG_INFINITY
        } else {
            edges[b - 1]
        };
        let upper = edges.get(b).copied().unwrap_or(f64::INFINITY);
        if count[b] == 0 {
            if binning == Binning::Predetermined {
                bins.push(LiftBin {
                    lower,
                    upper,
                    exposure_weight: 0.0,
                    waof: 0.0,
                    wapf_competitor: 0.0,
                    wapf_benchmark: 0.0,
                    row_count: 0,
                });
            }
            continue;
        }
        let u = v[b] / total_exposure;
        let waof = obs[b] / v[b];
        let wc = comp[b] / v[b];
        let wb = bench[b] / v[b];
        mae_lift += u * (wc - waof).abs();
        mae_lift_benchmark += u * (wb - waof).abs();
        bins.push(LiftBin {
            lower,
            upper,
            exposure_weight: u,
            waof,
            wapf_competitor: wc,
            wapf_benchmark: wb,
            row_count: count[b],
        });
    }
    Ok(LiftReport {
        binning,
        bins,
        mae_lift,
        mae_lift_benchmark,
    })
}

impl LiftReport {
    /// One line per bin, ready for charting.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "bin,lower,upper,exposure_weight,waof,wapf_competitor,wapf_benchmark,rows\n",
        );
        for (i, b) in self.bins.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                i + 1,
                fmt_f64(b.lower),
                fmt_f64(b.upper),
                fmt_f64(b.exposure_weight),
                fmt_f64(b.waof),
                fmt_f64(b.wapf_competitor),
                fmt_f64(b.wapf_benchmark),
                b.row_count
            );
        }
        s
    }

    pub fn summary(&self) -> String {
        format!(
            "binning = \"{}\"\nmae_lift = {}\nmae_lift_benchmark = {}\n",
            self.binning.name(),
            fmt_f64(self.mae_lift),
            fmt_f64(self.mae_lift_benchmark)
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn four_row_hand_example() {
        let ones = [1.0; 4];
        let claims = [0, 1, 0, 2];
        let bench = [0.5, 0.5, 1.0, 1.0];
        let comp = [0.5, 0.6, 1.5, 1.5];
        let r = lift_report(&comp, &bench, &claims, &ones, Binning::Predetermined).unwrap();
        assert_eq!(r.bins.len(), 52);
        let used: Vec<&LiftBin> = r.bins.iter().filter(|b| b.row_count > 0).collect();
        assert_eq!(used.len(), 3);
        assert_eq!(used[0].upper, 0.0);
        assert_eq!(used[1].upper, 0.2);
        assert_eq!(used[2].upper, 0.5);
        // bins {0}, {1}, {2,3}: weights 1/4, 1/4, 1/2
        let want_c = 0.25 * 0.5 + 0.25 * 0.4 + 0.5 * 0.5;
        let want_b = 0.25 * 0.5 + 0.25 * 0.5 + 0.0;
        assert!((r.mae_lift - want_c).abs() < 1e-12);
        assert!((r.mae_lift_benchmark - want_b).abs() < 1e-12);
    }

    #[test]
    fn identical_models_share_one_bin() {
        let p = [0.1, 0.2, 0.3];
        let r = lift_report(&p, &p, &[0, 1, 0], &[1.0; 3], Binning::Predetermined).unwrap();
        assert_eq!(r.bins.iter().filter(|b| b.row_count > 0).count(), 1);
        assert_eq!(r.mae_lift, r.mae_lift_benchmark);
        let q = lift_report(&p, &p, &[0, 1, 0], &[1.0; 3], Binning::Quantile { bins: 5 }).unwrap();
        assert_eq!(q.bins.len(), 1);
    }

    #[test]
    fn perfect_bins_have_zero_mae() {
        let r = lift_report(
            &[1.0, 2.0],
            &[1.0, 1.0],
            &[1, 2],
            &[1.0, 1.0],
            Binning::Predetermined,
        )
        .unwrap();
        assert_eq!(r.mae_lift, 0.0);
    }

    #[test]
    fn quantile_ties_go_low() {
        let bench = [1.0; 6];
        let comp = [1.0, 1.1, 1.1, 1.1, 1.2, 1.3];
        let r = lift_report(
            &comp,
            &bench,
            &[0; 6],
            &[1.0; 6],
            Binning::Quantile { bins: 3 },
        )
        .unwrap();
        let counts: Vec<usize> = r.bins.iter().map(|b| b.row_count).collect();
        assert_eq!(counts, vec![4, 2]);
    }

    #[test]
    fn input_errors() {
        assert!(lift_report(&[1.0], &[0.0], &[0], &[1.0], Binning::Predetermined).is_err());
        assert!(lift_report(&[1.0], &[1.0, 2.0], &[0], &[1.0], Binning::Predetermined).is_err());
        assert!(lift_report(&[1.0], &[1.0], &[0], &[0.0], Binning::Predetermined).is_err());
    }

    proptest! {
        #[test]
        fn invariants(
            rows in prop::collection::vec((0.01f64..2.0, 0.01f64..2.0, 0u32..4, 0.1f64..1.0), 1..200),
            bins in 1usize..25,
            rot in 0usize..200,
        ) {
            let comp: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let bench: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let claims: Vec<u32> = rows.iter().map(|r| r.2).collect();
            let expo: Vec<f64> = rows.iter().map(|r| r.3).collect();
            for binning in [Binning::Predetermined, Binning::Quantile { bins }] {
                let r = lift_report(&comp, &bench, &claims, &expo, binning).unwrap();
                let total: usize = r.bins.iter().map(|b| b.row_count).sum();
                prop_assert_eq!(total, rows.len());
                let u: f64 = r.bins.iter().map(|b| b.exposure_weight).sum();
                prop_assert!((u - 1.0).abs() < 1e-12);
                prop_assert!(r.mae_lift >= 0.0 && r.mae_lift_benchmark >= 0.0);
                for b in &r.bins {
                    prop_assert!(b.lower < b.upper || (b.lower == b.upper && b.row_count == 0));
                }
                let k = rot % rows.len();
                let rotate = |x: &[f64]| -> Vec<f64> { x[k..].iter().chain(&x[..k]).copied().collect() };
                let claims_r: Vec<u32> = claims[k..].iter().chain(&claims[..k]).copied().collect();
                let r2 = lift_report(&rotate(&comp), &rotate(&bench), &claims_r, &rotate(&expo), binning).unwrap();
                prop_assert!((r.mae_lift - r2.mae_lift).abs() < 1e-12);
                prop_assert!((r.mae_lift_benchmark - r2.mae_lift_benchmark).abs() < 1e-12);
            }
            // distinct ratios split into near-equal counts
            let distinct: Vec<f64> = (0..rows.len()).map(|i| 1.0 + i as f64 * 1e-3).collect();
            let r = lift_report(&distinct, &vec![1.0; rows.len()], &claims, &expo, Binning::Quantile { bins }).unwrap();
            let c: Vec<usize> = r.bins.iter().map(|b| b.row_count).collect();
            prop_assert!(c.iter().max().unwrap() - c.iter().min().unwrap() <= 1);
        }
    }
}
