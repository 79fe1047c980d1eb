//! Empirical validation of the committee-sampling properties S1-S6 against
//! a fixed corrupted set.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{setup_registry, ProcessId};
use crate::harness::stats::mix64;
use crate::params::{chernoff_exponents, Parameters};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub params: Parameters,
    pub committees: u64,
    pub base_seed: u64,
    /// Place the corrupted set at a seeded random f-subset instead of
    /// {0..f-1}; sampling independence makes placement irrelevant, this mode
    /// exists to confirm that.
    pub randomize_corrupted: bool,
    /// Random subset pairs drawn per committee for the S5/S6 checks.
    pub subset_checks: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingReport {
    pub committees: u64,
    pub corrupted_placement: String,
    pub mean_committee_size: f64,
    /// S1..S4 failure counts.
    pub failures: [u64; 4],
    pub empirical_rates: [f64; 4],
    /// Analytic bounds n^(-ci) from the tail exponents.
    pub analytic_bounds: [f64; 4],
    pub s5_checked: u64,
    pub s5_failures: u64,
    pub s6_checked: u64,
    pub s6_failures: u64,
    /// Committees too small to even draw a W-subset (counted, not failed;
    /// those trip S3 instead).
    pub subset_skipped: u64,
}

/// Byte string for the i-th sampled committee of a campaign; same layout as
/// protocol committee strings (tag, instance, round).
fn sampling_string(index: u64) -> Vec<u8> {
    let tag = b"SAMPLE";
    let mut s = Vec::with_capacity(1 + tag.len() + 16);
    s.push(tag.len() as u8);
    s.extend_from_slice(tag);
    s.extend_from_slice(&index.to_be_bytes());
    s.extend_from_slice(&0u64.to_be_bytes());
    s
}

pub fn verify_sampling_properties(cfg: &SamplingConfig) -> SamplingReport {
    let p = &cfg.params;
    let n = p.n;
    let registry = setup_registry(n, cfg.base_seed).expect("n >= 1");

    let mut corrupted = vec![false; n as usize];
    let placement = if cfg.randomize_corrupted {
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(cfg.base_seed, 0xc0de));
        let mut ids: Vec<u32> = (0..n).collect();
        ids.shuffle(&mut rng);
        for &pid in ids.iter().take(p.f as usize) {
            corrupted[pid as usize] = true;
        }
        "random".to_string()
    } else {
        for pid in 0..p.f {
            corrupted[pid as usize] = true;
        }
        "prefix".to_string()
    };

    let mut failures = [0u64; 4];
    let mut size_sum = 0u64;
    let (mut s5_checked, mut s5_failures) = (0u64, 0u64);
    let (mut s6_checked, mut s6_failures) = (0u64, 0u64);
    let mut subset_skipped = 0u64;

    for i in 0..cfg.committees {
        let s = sampling_string(i);
        let members_vec = registry.committee_members(&s, p.lambda);
        let members: Vec<ProcessId> = members_vec
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(pid, _)| pid as u32)
            .collect();
        let size = members.len() as u32;
        size_sum += size as u64;
        let correct = members
            .iter()
            .filter(|&&pid| !corrupted[pid as usize])
            .count() as u32;
        let byz = size - correct;

        let s1 = (size as f64) <= (1.0 + p.d) * p.lambda;
        let s2 = (size as f64) >= (1.0 - p.d) * p.lambda;
        let s3 = correct >= p.w;
        let s4 = byz <= p.b;
        for (k, ok) in [s1, s2, s3, s4].into_iter().enumerate() {
            if !ok {
                failures[k] += 1;
            }
        }

        // brute-force subset checks of the intersection corollaries
        if s1 {
            if size < p.w {
                subset_skipped += 1;
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(mix64(cfg.base_seed, i + 1));
                for _ in 0..cfg.subset_checks {
                    let mut pool = members.clone();
                    pool.shuffle(&mut rng);
                    let p1: std::collections::BTreeSet<u32> =
                        pool.iter().take(p.w as usize).copied().collect();
                    pool.shuffle(&mut rng);
                    let inter = pool
                        .iter()
                        .take(p.w as usize)
                        .filter(|pid| p1.contains(pid))
                        .count() as u32;
                    s5_checked += 1;
                    if inter < p.b + 1 {
                        s5_failures += 1;
                    }
                    if size >= p.b + 1 {
                        pool.shuffle(&mut rng);
                        let small: std::collections::BTreeSet<u32> =
                            pool.iter().take(p.b as usize + 1).copied().collect();
                        pool.shuffle(&mut rng);
                        let hit = pool
                            .iter()
                            .take(p.w as usize)
                            .any(|pid| small.contains(pid));
                        s6_checked += 1;
                        if !hit {
                            s6_failures += 1;
                        }
                    }
                }
            }
        }
    }

    let total = cfg.committees.max(1) as f64;
    let analytic_bounds = match chernoff_exponents(p) {
        Ok(c) => c.failure_bounds(n),
        Err(_) => [1.0; 4],
    };
    SamplingReport {
        committees: cfg.committees,
        corrupted_placement: placement,
        mean_committee_size: size_sum as f64 / total,
        failures,
        empirical_rates: failures.map(|f| f as f64 / total),
        analytic_bounds,
        s5_checked,
        s5_failures,
        s6_checked,
        s6_failures,
        subset_skipped,
    }
}
