//! Small statistics helpers used by the harness and the acceptance suite.

/// splitmix64-style hash combiner; the deterministic seed router for
/// per-process and per-trial derived randomness.
pub fn mix64(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Standard deviation of a binomial frequency estimate at probability `p`
/// over `trials` samples.
pub fn binomial_sigma(p: f64, trials: u64) -> f64 {
    if trials == 0 {
        return 0.0;
    }
    (p * (1.0 - p) / trials as f64).sqrt()
}

/// Wilson score interval for a binomial proportion.
///
/// `z = 2.576` gives the 99% interval used in campaign reports.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = (z / denom) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Percentile by nearest-rank on a sorted copy; `q` in [0, 1].
pub fn percentile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix64_is_deterministic_and_spreads() {
        assert_eq!(mix64(1, 2), mix64(1, 2));
        assert_ne!(mix64(1, 2), mix64(2, 1));
        assert_ne!(mix64(0, 0), 0);
    }

    #[test]
    fn wilson_brackets_the_point_estimate() {
        let (lo, hi) = wilson_interval(50, 100, 2.576);
        assert!(lo < 0.5 && 0.5 < hi);
        assert!(lo > 0.35 && hi < 0.65);
        // extreme counts stay in [0, 1]
        let (lo, hi) = wilson_interval(0, 100, 2.576);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0);
        let (lo, hi) = wilson_interval(100, 100, 2.576);
        assert!(lo < 1.0);
        assert_eq!(hi, 1.0);
    }

    #[test]
    fn sigma_and_percentile() {
        assert!((binomial_sigma(0.5, 10000) - 0.005).abs() < 1e-12);
        let xs = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(percentile(&xs, 0.5), 3.0);
        assert_eq!(percentile(&xs, 1.0), 5.0);
        assert_eq!(percentile(&xs, 0.0), 1.0);
        assert_eq!(mean(&xs), 3.0);
    }
}
