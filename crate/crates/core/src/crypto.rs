//! Ideal-functionality crypto oracles: VRFs, signatures, and validated
//! committee sampling.
//!
//! Everything is realized as a keyed hash of a per-trial secret seed, so
//! uniqueness, verifiability and pseudorandomness hold by construction and
//! every trial is reproducible from its seed. Nothing here is a real
//! cryptographic construction.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub type ProcessId = u32;

/// Truncated-hash opaque token used for VRF proofs and signature digests.
pub type Token = [u8; 16];

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CryptoError {
    #[error("unknown process id {0}")]
    UnknownProcess(ProcessId),
    #[error("lambda = {0} outside (0, n]")]
    LambdaOutOfRange(f64),
    #[error("registry requires n >= 1")]
    EmptyRegistry,
}

#[derive(Debug, Clone)]
struct KeyPair {
    secret_seed: [u8; 32],
    public_id: [u8; 32],
}

/// Pseudorandom VRF output `y` with its proof `pi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VrfOutput {
    pub value: u64,
    pub proof: Token,
}

/// Committee membership bit `v_i` with its proof `sigma_i` (the underlying
/// VRF evaluation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleProof {
    pub member: bool,
    pub proof: VrfOutput,
}

/// Binds (signer, payload); verifies only against the exact pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    pub signer: ProcessId,
    pub payload_digest: Token,
}

/// Per-trial key registry. Immutable after setup; evaluations are pure.
///
/// The registry is the simulation oracle: protocol machines and trial
/// instrumentation may evaluate any process's functions through it. The
/// adversary never holds a registry; it only gets the confined accessors on
/// the scheduler view, which expose secrets of corrupted processes alone.
#[derive(Debug, Clone)]
pub struct Registry {
    keys: Vec<KeyPair>,
}

fn h(parts: &[&[u8]]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p);
    }
    hasher.finalize().into()
}

/// Creates `n` key pairs, deterministic in `trial_seed`.
pub fn setup_registry(n: u32, trial_seed: u64) -> Result<Registry, CryptoError> {
    if n == 0 {
        return Err(CryptoError::EmptyRegistry);
    }
    let keys = (0..n)
        .map(|i| {
            let secret_seed = h(&[b"basim.sk", &trial_seed.to_be_bytes(), &i.to_be_bytes()]);
            let public_id = h(&[b"basim.pk", &secret_seed]);
            KeyPair {
                secret_seed,
                public_id,
            }
        })
        .collect();
    Ok(Registry { keys })
}

impl Registry {
    pub fn n(&self) -> u32 {
        self.keys.len() as u32
    }

    pub fn public_id(&self, i: ProcessId) -> Option<&[u8; 32]> {
        self.keys.get(i as usize).map(|k| &k.public_id)
    }

    /// Exposes a process's secret seed. Used by the simulator when handing a
    /// corrupted process to the adversary; never reachable from the view of
    /// an uncorrupted process.
    pub(crate) fn secret_seed(&self, i: ProcessId) -> Option<&[u8; 32]> {
        self.keys.get(i as usize).map(|k| &k.secret_seed)
    }

    fn raw_eval(&self, i: ProcessId, input: &[u8]) -> Result<VrfOutput, CryptoError> {
        let key = self
            .keys
            .get(i as usize)
            .ok_or(CryptoError::UnknownProcess(i))?;
        let digest = h(&[b"basim.vrf", &key.secret_seed, input]);
        let value = u64::from_be_bytes(digest[0..8].try_into().unwrap());
        let mut proof = [0u8; 16];
        proof.copy_from_slice(&digest[8..24]);
        Ok(VrfOutput { value, proof })
    }

    /// `VRF_i(input)`: deterministic keyed pseudorandom value plus proof.
    pub fn vrf_eval(&self, i: ProcessId, input: &[u8]) -> Result<VrfOutput, CryptoError> {
        self.raw_eval(i, input)
    }

    /// True iff `output` was produced by `vrf_eval(i, input)`.
    pub fn vrf_verify(&self, i: ProcessId, input: &[u8], output: &VrfOutput) -> bool {
        match self.raw_eval(i, input) {
            Ok(real) => real == *output,
            Err(_) => false,
        }
    }

    /// Self-sampling into the committee for string `s` with expected size
    /// `lambda`: member with probability `lambda / n`, decided by the
    /// process's own VRF on the namespaced string.
    pub fn sample(
        &self,
        i: ProcessId,
        s: &[u8],
        lambda: f64,
    ) -> Result<SampleProof, CryptoError> {
        let n = self.n() as f64;
        if !(lambda > 0.0 && lambda <= n) {
            return Err(CryptoError::LambdaOutOfRange(lambda));
        }
        let vrf = self.raw_eval(i, &sample_input(s))?;
        Ok(SampleProof {
            member: below_threshold(vrf.value, lambda, self.n()),
            proof: vrf,
        })
    }

    /// Public membership check: reproduces the member bit from a proof and
    /// returns false for any tampered proof.
    pub fn committee_val(&self, s: &[u8], lambda: f64, i: ProcessId, proof: &SampleProof) -> bool {
        if !self.vrf_verify(i, &sample_input(s), &proof.proof) {
            return false;
        }
        let member = below_threshold(proof.proof.value, lambda, self.n());
        member && proof.member == member
    }

    /// Signs `payload` with process `i`'s key.
    pub fn sign(&self, i: ProcessId, payload: &[u8]) -> Result<Signature, CryptoError> {
        let key = self
            .keys
            .get(i as usize)
            .ok_or(CryptoError::UnknownProcess(i))?;
        let digest = h(&[b"basim.sig", &key.secret_seed, payload]);
        let mut payload_digest = [0u8; 16];
        payload_digest.copy_from_slice(&digest[0..16]);
        Ok(Signature {
            signer: i,
            payload_digest,
        })
    }

    /// True iff `sig` is process `sig.signer`'s signature over exactly
    /// `payload`.
    pub fn verify_sig(&self, sig: &Signature, payload: &[u8]) -> bool {
        match self.sign(sig.signer, payload) {
            Ok(real) => real == *sig,
            Err(_) => false,
        }
    }

    /// Full membership vector for the committee on string `s`; simulation
    /// oracle used for instrumentation and cached committee lookups.
    pub fn committee_members(&self, s: &[u8], lambda: f64) -> Vec<bool> {
        (0..self.n())
            .map(|i| self.sample(i, s, lambda).map(|p| p.member).unwrap_or(false))
            .collect()
    }
}

fn sample_input(s: &[u8]) -> Vec<u8> {
    let mut input = Vec::with_capacity(4 + s.len());
    input.extend_from_slice(b"smp.");
    input.extend_from_slice(s);
    input
}

/// Membership predicate: value < lambda/n * 2^64, computed in u128 so the
/// lambda = n case is exactly probability one.
fn below_threshold(value: u64, lambda: f64, n: u32) -> bool {
    let t = ((lambda / n as f64) * 2.0f64.powi(64)) as u128;
    (value as u128) < t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_deterministic_in_seed() {
        let a = setup_registry(4, 7).unwrap();
        let b = setup_registry(4, 7).unwrap();
        for i in 0..4 {
            assert_eq!(a.public_id(i), b.public_id(i));
            assert_eq!(a.secret_seed(i), b.secret_seed(i));
        }
        let c = setup_registry(4, 8).unwrap();
        assert_ne!(a.secret_seed(0), c.secret_seed(0));
        assert!(setup_registry(0, 7).is_err());
    }

    #[test]
    fn vrf_deterministic_and_binding() {
        let reg = setup_registry(4, 1).unwrap();
        let out1 = reg.vrf_eval(1, b"round-0").unwrap();
        let out2 = reg.vrf_eval(1, b"round-0").unwrap();
        assert_eq!(out1, out2);
        assert!(reg.vrf_verify(1, b"round-0", &out1));

        let mut forged = out1;
        forged.value = forged.value.wrapping_add(1);
        assert!(!reg.vrf_verify(1, b"round-0", &forged));

        // cross-process check
        assert!(!reg.vrf_verify(2, b"round-0", &out1));
        // unknown id
        assert!(reg.vrf_eval(99, b"x").is_err());
    }

    #[test]
    fn vrf_uniqueness() {
        // Exactly one accepted (value, proof) per (i, input): any bit flip in
        // either component is rejected.
        let reg = setup_registry(2, 3).unwrap();
        let out = reg.vrf_eval(0, b"in").unwrap();
        for bit in 0..16 {
            let mut forged = out;
            forged.proof[bit] ^= 1;
            assert!(!reg.vrf_verify(0, b"in", &forged));
        }
        for bit in 0..64 {
            let mut forged = out;
            forged.value ^= 1 << bit;
            assert!(!reg.vrf_verify(0, b"in", &forged));
        }
    }

    #[test]
    fn sampling_membership_and_proofs() {
        let reg = setup_registry(64, 5).unwrap();
        // lambda = n: probability one
        for i in 0..64 {
            let p = reg.sample(i, b"s", 64.0).unwrap();
            assert!(p.member);
            assert!(reg.committee_val(b"s", 64.0, i, &p));
        }
        // committee_val reproduces the member bit for every process
        for i in 0..64 {
            let p = reg.sample(i, b"t", 8.0).unwrap();
            assert_eq!(reg.committee_val(b"t", 8.0, i, &p), p.member);
        }
        // tampered proof rejected
        let mut p = reg.sample(0, b"t", 64.0).unwrap();
        p.proof.value ^= 1;
        assert!(!reg.committee_val(b"t", 64.0, 0, &p));
        // lambda out of range
        assert!(reg.sample(0, b"t", 0.0).is_err());
        assert!(reg.sample(0, b"t", 65.0).is_err());
    }

    #[test]
    fn sampling_mean_committee_size() {
        // Binomial oracle: sigma = sqrt(lambda (1 - lambda/n)); the mean over
        // k strings has deviation sigma/sqrt(k).
        let n = 10_000u32;
        let reg = setup_registry(n, 11).unwrap();
        let lambda = 8.0 * (n as f64).ln();
        let k = 100;
        let mut total = 0usize;
        for s in 0..k {
            let tag = format!("string-{s}");
            total += reg
                .committee_members(tag.as_bytes(), lambda)
                .iter()
                .filter(|&&m| m)
                .count();
        }
        let mean = total as f64 / k as f64;
        let sigma = (lambda * (1.0 - lambda / n as f64)).sqrt();
        let tol = 3.0 * sigma / (k as f64).sqrt();
        assert!(
            (mean - lambda).abs() <= tol,
            "mean {mean} vs lambda {lambda} (tol {tol})"
        );
    }

    #[test]
    fn sampling_unpredictable_from_public_ids() {
        // A guesser that sees only public ids must not beat lambda/n
        // guessing: chi-square independence over (guess, actual) pairs stays
        // under the 99% critical value for one degree of freedom.
        let n = 10_000u32;
        let reg = setup_registry(n, 13).unwrap();
        let lambda = 8.0 * (n as f64).ln();
        let p = lambda / n as f64;
        let s = b"target-string";
        let mut counts = [[0f64; 2]; 2];
        for i in 0..n {
            let pid = reg.public_id(i).unwrap();
            let guess_val = u64::from_be_bytes(h(&[b"guess", pid, s])[0..8].try_into().unwrap());
            let guess = (guess_val as f64 / u64::MAX as f64) < p;
            let actual = reg.sample(i, s, lambda).unwrap().member;
            counts[guess as usize][actual as usize] += 1.0;
        }
        let total: f64 = counts.iter().flatten().sum();
        let row: Vec<f64> = (0..2).map(|r| counts[r][0] + counts[r][1]).collect();
        let col: Vec<f64> = (0..2).map(|c| counts[0][c] + counts[1][c]).collect();
        let mut chi2 = 0.0;
        for r in 0..2 {
            for c in 0..2 {
                let expected = row[r] * col[c] / total;
                if expected > 0.0 {
                    let diff = counts[r][c] - expected;
                    chi2 += diff * diff / expected;
                }
            }
        }
        // chi-square critical value, df = 1, alpha = 0.01
        assert!(chi2 < 6.634896601021213, "chi2 = {chi2}");
    }

    #[test]
    fn sampling_independent_across_strings() {
        let n = 10_000u32;
        let reg = setup_registry(n, 17).unwrap();
        let lambda = 8.0 * (n as f64).ln();
        let a = reg.committee_members(b"string-a", lambda);
        let b = reg.committee_members(b"string-b", lambda);
        let (mut sa, mut sb, mut sab) = (0.0, 0.0, 0.0);
        for i in 0..n as usize {
            let (x, y) = (a[i] as u8 as f64, b[i] as u8 as f64);
            sa += x;
            sb += y;
            sab += x * y;
        }
        let nf = n as f64;
        let (ma, mb) = (sa / nf, sb / nf);
        let cov = sab / nf - ma * mb;
        let corr = cov / (ma * (1.0 - ma) * mb * (1.0 - mb)).sqrt();
        assert!(corr.abs() < 3.0 / nf.sqrt(), "corr = {corr}");
    }

    #[test]
    fn signatures_bind_signer_and_payload() {
        let reg = setup_registry(4, 9).unwrap();
        let sig = reg.sign(2, b"payload").unwrap();
        assert!(reg.verify_sig(&sig, b"payload"));
        assert!(!reg.verify_sig(&sig, b"payloae"));
        let mut wrong_signer = sig;
        wrong_signer.signer = 3;
        assert!(!reg.verify_sig(&wrong_signer, b"payload"));
    }
}
