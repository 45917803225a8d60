//! Newton/Fisher scoring (IRLS) for the Poisson log-link model
//! `E[N] = exp(offset + Xβ)`.

use nalgebra::{DMatrix, DVector};

use super::terms::Design;
use crate::error::{Error, Result};
use crate::exec::{map_chunks, sum_rows, Exec, ROW_CHUNK};
use crate::poisson::unit_deviance;

const MAX_ETA: f64 = 700.0;
const MAX_HALVINGS: usize = 30;
const RANK_TOL: f64 = 1e-10;
const STEP_TOL: f64 = 1e-13;

#[derive(Clone, Copy, Debug)]
pub struct IrlsOptions {
    /// Relative deviance change that stops the iterations.
    pub tol: f64,
    pub max_iter: usize,
    pub exec: Exec,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        IrlsOptions {
            tol: 1e-8,
            max_iter: 25,
            exec: Exec::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct IrlsResult {
    pub beta: Vec<f64>,
    /// Expected counts at the final coefficients.
    pub mean: Vec<f64>,
    pub deviance: f64,
    /// Deviance at the start and after every accepted iteration.
    pub deviance_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Inverse Fisher information at the final coefficients.
    pub covariance: DMatrix<f64>,
}

/// `D(old) − D(new)` summed row by row, which stays accurate when both
/// totals agree to many digits.
fn decrease(exec: Exec, y: &[u32], old: &[f64], new: &[f64]) -> f64 {
    2.0 * sum_rows(exec, y.len(), |i| {
        let yi = y[i] as f64;
        let log_ratio = if y[i] > 0 {
            yi * (new[i] / old[i]).ln()
        } else {
            0.0
        };
        log_ratio - (new[i] - old[i])
    })
}

/// Linear predictor and deviance at `beta`; `None` if exp would overflow.
fn evaluate(
    exec: Exec,
    x: &Design,
    y: &[u32],
    offset: &[f64],
    beta: &[f64],
) -> Option<(Vec<f64>, f64)> {
    let p = x.width();
    let parts = map_chunks(exec, x.n_rows, ROW_CHUNK, |rows| {
        let mut mu = Vec::with_capacity(rows.len());
        let mut dev = 0.0;
        let mut overflow = false;
        for i in rows {
            let row = &x.values[i * p..(i + 1) * p];
            let eta = offset[i] + row.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
            if !(eta <= MAX_ETA) {
                overflow = true;
            }
            let m = eta.exp();
            dev += unit_deviance(y[i] as f64, m);
            mu.push(m);
        }
        (mu, dev, overflow)
    });
    let mut mean = Vec::with_capacity(x.n_rows);
    let mut dev = 0.0;
    for (mu, d, overflow) in parts {
        if overflow {
            return None;
        }
        mean.extend(mu);
        dev += d;
    }
    Some((mean, dev))
}

/// Score `X'(y − μ)` and information `X' diag(μ) X`.
fn score_and_information(
    exec: Exec,
    x: &Design,
    y: &[u32],
    mean: &[f64],
) -> (DVector<f64>, DMatrix<f64>) {
    let p = x.width();
    let parts = map_chunks(exec, x.n_rows, ROW_CHUNK, |rows| {
        let mut g = vec![0.0; p];
        let mut h = vec![0.0; p * p];
        for i in rows {
            let row = &x.values[i * p..(i + 1) * p];
            let r = y[i] as f64 - mean[i];
            let w = mean[i];
            for a in 0..p {
                g[a] += row[a] * r;
                let wa = w * row[a];
                if wa == 0.0 {
                    continue;
                }
                for b in a..p {
                    h[a * p + b] += wa * row[b];
                }
            }
        }
        (g, h)
    });
    let mut g = DVector::zeros(p);
    let mut h = DMatrix::zeros(p, p);
    for (gp, hp) in parts {
        for a in 0..p {
            g[a] += gp[a];
            for b in a..p {
                h[(a, b)] += hp[a * p + b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            h[(a, b)] = h[(b, a)];
        }
    }
    (g, h)
}

/// Labels of columns that are linearly dependent on earlier-pivoted ones.
pub fn collinear_columns(information: &DMatrix<f64>, labels: &[String]) -> Vec<String> {
    let p = information.nrows();
    let diag: Vec<f64> = (0..p).map(|j| information[(j, j)]).collect();
    let mut bad: Vec<usize> = (0..p).filter(|&j| !(diag[j] > 0.0)).collect();
    let live: Vec<usize> = (0..p).filter(|j| !bad.contains(j)).collect();
    if !live.is_empty() {
        let m = live.len();
        let scaled = DMatrix::from_fn(m, m, |a, b| {
            let (i, j) = (live[a], live[b]);
            information[(i, j)] / (diag[i] * diag[j]).sqrt()
        });
        let qr = scaled.col_piv_qr();
        let r = qr.r();
        let mut order = DMatrix::from_fn(1, m, |_, j| j as f64);
        qr.p().permute_columns(&mut order);
        let rmax = r[(0, 0)].abs();
        for k in 0..m {
            if r[(k, k)].abs() <= RANK_TOL * rmax {
                bad.push(live[order[(0, k)] as usize]);
            }
        }
    }
    bad.sort_unstable();
    bad.into_iter().map(|j| labels[j].clone()).collect()
}

fn solve(
    information: &DMatrix<f64>,
    score: &DVector<f64>,
    labels: &[String],
) -> Result<DVector<f64>> {
    let deficient = collinear_columns(information, labels);
    if !deficient.is_empty() {
        return Err(Error::RankDeficient { columns: deficient });
    }
    let chol = information
        .clone()
        .cholesky()
        .ok_or_else(|| Error::RankDeficient {
            columns: labels.to_vec(),
        })?;
    Ok(chol.solve(score))
}

pub fn fit(x: &Design, y: &[u32], offset: &[f64], opts: &IrlsOptions) -> Result<IrlsResult> {
    assert_eq!(x.n_rows, y.len());
    assert_eq!(x.n_rows, offset.len());
    let p = x.width();
    let exec = opts.exec;
    let mut beta = vec![0.0; p];
    let (mut mean, mut dev) = evaluate(exec, x, y, offset, &beta).ok_or(Error::Overflow {
        max_eta: offset.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })?;
    let mut trace = vec![dev];
    let mut converged = p == 0;
    let mut iterations = 0;
    let mut polishing = false;

    while p > 0 && iterations < opts.max_iter {
        let (g, h) = score_and_information(exec, x, y, &mean);
        let step = solve(&h, &g, &x.labels)?;
        let scale = 1.0 + beta.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if polishing && step.iter().all(|s| s.abs() <= STEP_TOL * scale) {
            break;
        }
        iterations += 1;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = beta
                .iter()
                .zip(step.iter())
                .map(|(b, s)| b + t * s)
                .collect();
            if let Some((m, d)) = evaluate(exec, x, y, offset, &trial) {
                if d.is_finite() && decrease(exec, y, &mean, &m) >= 0.0 {
                    accepted = Some((trial, m, d));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((trial, m, d)) = accepted else {
            // No descent direction left within rounding: already at the optimum.
            converged = true;
            break;
        };
        // Near the optimum the recomputed total can exceed the previous one by
        // rounding although the row-wise decrease is non-negative.
        let d = d.min(dev);
        let change = (dev - d).abs() / (d.abs() + 0.1);
        beta = trial;
        mean = m;
        dev = d;
        trace.push(dev);
        if change < opts.tol {
            converged = true;
            // Keep taking Newton steps until they vanish so the score reaches
            // rounding level.
            polishing = true;
        }
    }

    let (_, h) = score_and_information(exec, x, y, &mean);
    let covariance = if p == 0 {
        DMatrix::zeros(0, 0)
    } else {
        let chol = h.clone().cholesky().ok_or_else(|| Error::RankDeficient {
            columns: collinear_columns(&h, &x.labels),
        })?;
        chol.inverse()
    };
    Ok(IrlsResult {
        beta,
        mean,
        deviance: dev,
        deviance_trace: trace,
        converged,
        iterations,
        covariance,
    })
}
