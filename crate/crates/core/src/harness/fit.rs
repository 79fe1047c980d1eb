//! Complexity-model fitting: words-versus-n data against `a * n * ln^2 n`
//! and `b * n^2`, compared by residual sum of squares.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum FitError {
    #[error("need at least {0} grid points, got {1}")]
    InsufficientGrid(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreferredModel {
    NLog2N,
    NSquared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Coefficient of words = a * n * ln^2 n.
    pub nlog2n_coeff: f64,
    pub nlog2n_rss: f64,
    /// Coefficient of words = b * n^2.
    pub nsquared_coeff: f64,
    pub nsquared_rss: f64,
    pub preferred: PreferredModel,
    /// words(n_{i+1}) / words(n_i) along the grid.
    pub growth_ratios: Vec<f64>,
}

fn least_squares_through_origin(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let a = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let rss = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - a * x;
            r * r
        })
        .sum();
    (a, rss)
}

/// Fits mean words-sent against both growth models over an n-grid.
///
/// `points` are (n, mean_words) pairs; at least four distinct n values are
/// required.
pub fn fit_complexity(points: &[(u32, f64)]) -> Result<FitReport, FitError> {
    let mut points = points.to_vec();
    points.sort_by_key(|&(n, _)| n);
    points.dedup_by_key(|&mut (n, _)| n);
    if points.len() < 4 {
        return Err(FitError::InsufficientGrid(4, points.len()));
    }
    let ys: Vec<f64> = points.iter().map(|&(_, w)| w).collect();
    let x1: Vec<f64> = points
        .iter()
        .map(|&(n, _)| {
            let n = n as f64;
            let l = n.ln();
            n * l * l
        })
        .collect();
    let x2: Vec<f64> = points
        .iter()
        .map(|&(n, _)| {
            let n = n as f64;
            n * n
        })
        .collect();
    let (a, rss_a) = least_squares_through_origin(&x1, &ys);
    let (b, rss_b) = least_squares_through_origin(&x2, &ys);
    let growth_ratios = points
        .windows(2)
        .map(|w| {
            if w[0].1 > 0.0 {
                w[1].1 / w[0].1
            } else {
                f64::INFINITY
            }
        })
        .collect();
    Ok(FitReport {
        nlog2n_coeff: a,
        nlog2n_rss: rss_a,
        nsquared_coeff: b,
        nsquared_rss: rss_b,
        preferred: if rss_a <= rss_b {
            PreferredModel::NLog2N
        } else {
            PreferredModel::NSquared
        },
        growth_ratios,
    })
}
