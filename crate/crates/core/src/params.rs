//! Protocol parameter derivation and closed-form bounds.
//!
//! Everything numeric that the protocols and the harness rely on is derived
//! here: the Byzantine budget `f`, the expected committee size `lambda`, the
//! wait threshold `W`, the per-committee Byzantine bound `B`, the shared-coin
//! and committee-coin success-rate lower bounds, and the four Chernoff tail
//! exponents used to bound committee sampling failures.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest admissible committee-slack parameter, independent of `lambda`.
pub const D_FLOOR: f64 = 0.0362;

/// Smallest admissible resilience slack, independent of `n`.
pub const EPSILON_FLOOR: f64 = 0.109;

/// Derived protocol constants for a system of `n` processes.
///
/// `f = floor((1/3 - epsilon) * n)` processes may be corrupted. Committees are
/// sampled with probability `lambda / n` per process; committee-based waits
/// use the threshold `w` and tolerate up to `b` Byzantine members per
/// committee. In full-participation mode every process is sampled
/// (`lambda = n`), `w = n - f`, and `b = f`, which recovers the
/// all-to-all thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub n: u32,
    pub epsilon: f64,
    pub f: u32,
    pub lambda: f64,
    pub d: f64,
    pub w: u32,
    pub b: u32,
    pub full_participation: bool,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParamError {
    #[error("n = {0} is too small; need n >= 4")]
    NTooSmall(u32),
    #[error("no epsilon satisfies max(3/(8 ln n), 0.109) + 1/(8 ln n) < epsilon < 1/3 for n = {0}")]
    NoValidEpsilon(u32),
    #[error("epsilon = {epsilon} violates {bound}")]
    EpsilonOutOfRange { epsilon: f64, bound: String },
    #[error("d = {d} violates {bound}")]
    DOutOfRange { d: f64, bound: String },
    #[error("value {value} outside domain {domain}")]
    Domain { value: f64, domain: String },
    #[error("non-positive Chernoff exponent {name} = {value}; (epsilon, d) pair is invalid")]
    NonPositiveExponent { name: &'static str, value: f64 },
}

/// Lower end of the admissible epsilon interval for a given `n` (exclusive).
pub fn epsilon_lower_bound(n: u32) -> f64 {
    let inv = 1.0 / (8.0 * (n as f64).ln());
    (3.0 * inv).max(EPSILON_FLOOR) + inv
}

/// Admissible open interval for `d` given `epsilon` and `lambda`.
pub fn d_bounds(epsilon: f64, lambda: f64) -> (f64, f64) {
    let lo = (1.0 / lambda).max(D_FLOOR);
    let hi = epsilon / 3.0 - 1.0 / (3.0 * lambda);
    (lo, hi)
}

/// Derives and validates the full parameter set.
///
/// In full-participation mode the epsilon and d range checks are skipped:
/// `lambda = n`, `w = n - f`, `b = f`. This degenerate mode exists so the
/// all-to-all coin and small-n brute-force oracles can share one code path;
/// it carries none of the committee-sampling guarantees.
pub fn derive_params(
    n: u32,
    epsilon: f64,
    d: f64,
    full_participation: bool,
) -> Result<Parameters, ParamError> {
    if n < 4 {
        return Err(ParamError::NTooSmall(n));
    }
    if !epsilon.is_finite() || !d.is_finite() {
        return Err(ParamError::Domain {
            value: if epsilon.is_finite() { d } else { epsilon },
            domain: "finite reals".into(),
        });
    }
    if full_participation {
        if epsilon <= 0.0 || epsilon > 1.0 / 3.0 {
            return Err(ParamError::EpsilonOutOfRange {
                epsilon,
                bound: "0 < epsilon <= 1/3 (full participation)".into(),
            });
        }
        let f = ((1.0 / 3.0 - epsilon) * n as f64).floor() as u32;
        return Ok(Parameters {
            n,
            epsilon,
            f,
            lambda: n as f64,
            d,
            w: n - f,
            b: f,
            full_participation: true,
        });
    }

    let lo = epsilon_lower_bound(n);
    if lo >= 1.0 / 3.0 {
        return Err(ParamError::NoValidEpsilon(n));
    }
    if epsilon <= lo {
        return Err(ParamError::EpsilonOutOfRange {
            epsilon,
            bound: format!("epsilon > max(3/(8 ln n), 0.109) + 1/(8 ln n) = {lo}"),
        });
    }
    if epsilon >= 1.0 / 3.0 {
        return Err(ParamError::EpsilonOutOfRange {
            epsilon,
            bound: "epsilon < 1/3".into(),
        });
    }

    let lambda = 8.0 * (n as f64).ln();
    let (d_lo, d_hi) = d_bounds(epsilon, lambda);
    if d <= d_lo {
        return Err(ParamError::DOutOfRange {
            d,
            bound: format!("d > max(1/lambda, 0.0362) = {d_lo}"),
        });
    }
    if d >= d_hi {
        return Err(ParamError::DOutOfRange {
            d,
            bound: format!("d < epsilon/3 - 1/(3 lambda) = {d_hi}"),
        });
    }

    let f = ((1.0 / 3.0 - epsilon) * n as f64).floor() as u32;
    let w = ((2.0 / 3.0 + 3.0 * d) * lambda).ceil() as u32;
    let b = ((1.0 / 3.0 - d) * lambda).floor() as u32;
    debug_assert!(b < w && 2 * b < w + 1);
    Ok(Parameters {
        n,
        epsilon,
        f,
        lambda,
        d,
        w,
        b,
        full_participation: false,
    })
}

/// Success-rate lower bound of the all-to-all shared coin:
/// `(18 eps^2 + 24 eps - 1) / (6 (1 + 6 eps))`. Equals 1/2 at eps = 1/3.
pub fn coin_success_bound(epsilon: f64) -> Result<f64, ParamError> {
    if !(epsilon > 0.0 && epsilon <= 1.0 / 3.0) {
        return Err(ParamError::Domain {
            value: epsilon,
            domain: "(0, 1/3]".into(),
        });
    }
    Ok((18.0 * epsilon * epsilon + 24.0 * epsilon - 1.0) / (6.0 * (1.0 + 6.0 * epsilon)))
}

/// Success-rate lower bound of the committee coin:
/// `rho = (18 d^2 + 27 d - 1) / (3 (5 + 6d)(1 - d)(1 + 9d))`.
/// Positive for d > 0.0362 (just above the positive root of the numerator).
pub fn whp_coin_success_bound(d: f64) -> Result<f64, ParamError> {
    if !(d > 0.0 && d < 1.0) {
        return Err(ParamError::Domain {
            value: d,
            domain: "(0, 1)".into(),
        });
    }
    Ok((18.0 * d * d + 27.0 * d - 1.0) / (3.0 * (5.0 + 6.0 * d) * (1.0 - d) * (1.0 + 9.0 * d)))
}

/// Lower bound on the number of common values at the end of the coin's first
/// phase: `9 eps / (1 + 6 eps) * n` for the all-to-all coin, or
/// `d (11 - 3d) / (1 + 9d) * lambda` for the committee coin.
pub fn common_value_lower_bound(params: &Parameters, committee_mode: bool) -> f64 {
    if committee_mode {
        params.d * (11.0 - 3.0 * params.d) / (1.0 + 9.0 * params.d) * params.lambda
    } else {
        9.0 * params.epsilon / (1.0 + 6.0 * params.epsilon) * params.n as f64
    }
}

/// The four committee-sampling tail exponents, with the sampling constant
/// fixed at 8 (`lambda = 8 ln n`). The probability that property `Si` fails
/// for one committee is at most `n^(-ci)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChernoffExponents {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

impl ChernoffExponents {
    /// Failure-probability bounds `n^(-ci)` in order (S1, S2, S3, S4).
    pub fn failure_bounds(&self, n: u32) -> [f64; 4] {
        let n = n as f64;
        [
            n.powf(-self.c1),
            n.powf(-self.c2),
            n.powf(-self.c3),
            n.powf(-self.c4),
        ]
    }
}

pub fn chernoff_exponents(params: &Parameters) -> Result<ChernoffExponents, ParamError> {
    if params.full_participation {
        return Err(ParamError::Domain {
            value: params.lambda,
            domain: "committee mode (full_participation = false)".into(),
        });
    }
    const CONST: f64 = 8.0;
    let d = params.d;
    let eps = params.epsilon;
    let c1 = CONST * d * d / (2.0 + d);
    let c2 = CONST * d * d / 2.0;
    let d_prime = 3.0 * d + 1.0 / params.lambda;
    let frac = (2.0 / 3.0 + d_prime) / (2.0 / 3.0 + eps);
    let c3 = CONST * (1.0 - frac) * (1.0 - frac) * (2.0 / 3.0 + eps) / 2.0;
    let delta = (eps - d) / (1.0 / 3.0 - eps);
    let c4 = CONST * ((eps - d) * (eps - d) / (1.0 / 3.0 - eps)) / (2.0 + delta);
    let out = ChernoffExponents { c1, c2, c3, c4 };
    for (name, value) in [("c1", c1), ("c2", c2), ("c3", c3), ("c4", c4)] {
        if !(value > 0.0) {
            return Err(ParamError::NonPositiveExponent { name, value });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    // Expected values below were computed independently with a 30-digit
    // calculator (mpmath) and frozen.

    #[test]
    fn derive_n1024() {
        let p = derive_params(1024, 0.2, 0.05, false).unwrap();
        assert!(close(p.lambda, 55.451774444795625, 1e-9));
        assert_eq!(p.f, 136);
        assert_eq!(p.w, 46);
        assert_eq!(p.b, 15);
        assert!(!p.full_participation);
    }

    #[test]
    fn derive_d_too_large() {
        // upper d bound at (1024, 0.2) is ~0.060655
        let err = derive_params(1024, 0.2, 0.2, false).unwrap_err();
        assert!(matches!(err, ParamError::DOutOfRange { .. }));
    }

    #[test]
    fn derive_full_participation_degenerate() {
        let p = derive_params(16, 1.0 / 3.0 - 1e-9, 0.123, true).unwrap();
        assert_eq!(p.f, 0);
        assert_eq!(p.w, 16);
        assert_eq!(p.b, 0);
        assert_eq!(p.lambda, 16.0);
    }

    #[test]
    fn derive_rejects_small_n() {
        assert!(matches!(
            derive_params(3, 0.2, 0.05, false),
            Err(ParamError::NTooSmall(3))
        ));
        // n = 4 passes the precondition but admits no valid epsilon:
        // 1/(2 ln 4) = 0.3607 > 1/3.
        assert!(matches!(
            derive_params(4, 0.3, 0.05, false),
            Err(ParamError::NoValidEpsilon(4))
        ));
        // n = 5 admits epsilon in (0.3107, 1/3).
        assert!(derive_params(5, 0.32, 0.0385, false).is_ok());
    }

    #[test]
    fn coin_bound_values() {
        assert_eq!(coin_success_bound(1.0 / 3.0).unwrap(), 0.5);
        assert!(close(
            coin_success_bound(0.2).unwrap(),
            0.3424242424242424,
            1e-12
        ));
        let v = coin_success_bound(0.109).unwrap();
        assert!(close(v, 0.18438714228133817, 1e-12));
        assert!(v > 0.0);
        assert!(coin_success_bound(0.0).is_err());
        assert!(coin_success_bound(0.34).is_err());
    }

    #[test]
    fn whp_coin_bound_values() {
        assert!(close(
            whp_coin_success_bound(0.05).unwrap(),
            0.018034676802611604,
            1e-12
        ));
        // d = 0.0362 sits within 1e-3 of the numerator's positive root.
        let near_root = whp_coin_success_bound(0.0362).unwrap();
        assert!(near_root.abs() < 1e-3);
        // exact root of 18d^2 + 27d - 1
        let root = (-27.0 + 801.0_f64.sqrt()) / 36.0;
        assert!(whp_coin_success_bound(root).unwrap().abs() < 1e-15);
        assert!(whp_coin_success_bound(0.0).is_err());
        assert!(whp_coin_success_bound(1.0).is_err());
    }

    #[test]
    fn common_value_bounds() {
        let p = derive_params(100, 1.0 / 3.0, 0.0, true).unwrap();
        assert!(close(common_value_lower_bound(&p, false), 100.0, 1e-9));

        let p = derive_params(1000, 0.2, 0.05, false).unwrap();
        assert!(close(
            common_value_lower_bound(&p, false),
            818.1818181818181,
            1e-9
        ));

        let p = derive_params(1024, 0.2, 0.05, false).unwrap();
        assert!(close(
            common_value_lower_bound(&p, true),
            20.746612162966639,
            1e-9
        ));
    }

    #[test]
    fn chernoff_exponent_values() {
        let p = derive_params(1024, 0.2, 0.05, false).unwrap();
        let c = chernoff_exponents(&p).unwrap();
        assert!(close(c.c1, 0.009756097560975610, 1e-15));
        assert!(close(c.c2, 0.01, 1e-15));
        assert!(close(c.c3, 0.004716208163865794, 1e-12));
        assert!(close(c.c4, 0.432, 1e-12));
        assert!(chernoff_exponents(&derive_params(16, 0.3, 0.0, true).unwrap()).is_err());
    }

    /// Deterministic grid of valid (n, epsilon, d) triples used by the
    /// arithmetic invariant checks below.
    fn valid_grid() -> Vec<Parameters> {
        let mut out = Vec::new();
        let ns = [
            8u32, 16, 32, 64, 120, 250, 500, 1000, 2000, 5000, 10_000, 50_000, 100_000,
        ];
        for &n in &ns {
            let lo = epsilon_lower_bound(n);
            if lo >= 1.0 / 3.0 {
                continue;
            }
            for i in 1..=10 {
                let eps = lo + (1.0 / 3.0 - lo) * i as f64 / 11.0;
                let lambda = 8.0 * (n as f64).ln();
                let (d_lo, d_hi) = d_bounds(eps, lambda);
                if d_hi <= d_lo {
                    continue;
                }
                for j in 1..=10 {
                    let d = d_lo + (d_hi - d_lo) * j as f64 / 11.0;
                    out.push(derive_params(n, eps, d, false).unwrap());
                }
            }
        }
        assert!(out.len() >= 1000, "grid has {} points", out.len());
        out
    }

    #[test]
    fn grid_invariants() {
        for p in valid_grid() {
            let n = p.n as f64;
            assert!(p.f as f64 <= (1.0 / 3.0 - p.epsilon) * n);
            // strict inequalities the intersection corollaries rely on
            assert!(6.0 * p.d * p.lambda > 1.0, "6 d lambda at n={}", p.n);
            assert!(p.d * p.lambda > 1.0);
            // threshold sandwich
            assert!(p.w as f64 <= (2.0 / 3.0 + 3.0 * p.d) * p.lambda + 1.0);
            assert!(p.b as f64 <= (1.0 / 3.0 - p.d) * p.lambda);
            assert!(p.b + 1 <= p.w);
            assert!(2 * p.b < p.w + 1);
            // S5 / S6 by counting, for the worst admissible committee size
            let c_max = ((1.0 + p.d) * p.lambda).ceil() as i64;
            assert!(2 * p.w as i64 - c_max >= p.b as i64 + 1, "S5 at n={}", p.n);
            assert!(
                (p.b as i64 + 1) + p.w as i64 - c_max >= 1,
                "S6 at n={}",
                p.n
            );
            // exponents all positive on valid pairs
            let c = chernoff_exponents(&p).unwrap();
            assert!(c.c1 > 0.0 && c.c2 > 0.0 && c.c3 > 0.0 && c.c4 > 0.0);
            // committee-coin success bound positive on every valid d
            assert!(whp_coin_success_bound(p.d).unwrap() > 0.0);
        }
    }

    #[test]
    fn coin_bound_monotone_and_anchored() {
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=1000 {
            let eps = 0.109 + (1.0 / 3.0 - 0.109) * i as f64 / 1000.0;
            let v = coin_success_bound(eps).unwrap();
            assert!(v > prev, "not increasing at eps={eps}");
            prev = v;
        }
        assert_eq!(coin_success_bound(1.0 / 3.0).unwrap(), 0.5);
    }
}
