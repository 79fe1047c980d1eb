//! Experiment orchestration: seeded Monte-Carlo campaigns over the protocol
//! simulator, aggregate reports with confidence intervals, complexity fits,
//! and trace replay.

pub mod fit;
pub mod sampling;
pub mod stats;

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::{
    chernoff_exponents, coin_success_bound, common_value_lower_bound, derive_params, ParamError,
    Parameters, whp_coin_success_bound,
};
use crate::sim::adversary::AdversarySpec;
use crate::sim::report::TrialReport;
use crate::sim::{self, InputAssignment, Protocol, TrialConfig, TrialError};
use stats::{mean, percentile, wilson_interval};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Trial(#[from] TrialError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Config(String),
}

/// One campaign: a protocol, a parameter point, an adversary, an input rule,
/// and a trial count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    pub n: u32,
    pub epsilon: f64,
    pub d: f64,
    pub full_participation: bool,
    pub adversary: AdversarySpec,
    pub inputs: InputAssignment,
    pub trials: u64,
    pub base_seed: u64,
    pub round_cap: u64,
    pub detail: bool,
}

impl ExperimentConfig {
    pub fn new(protocol: Protocol, n: u32, epsilon: f64, d: f64) -> ExperimentConfig {
        ExperimentConfig {
            protocol,
            n,
            epsilon,
            d,
            full_participation: false,
            adversary: AdversarySpec::UniformRandom,
            inputs: InputAssignment::AllZero,
            trials: 100,
            base_seed: 1,
            round_cap: 64,
            detail: false,
        }
    }

    pub fn params(&self) -> Result<Parameters, ParamError> {
        derive_params(self.n, self.epsilon, self.d, self.full_participation)
    }

    pub fn trial_config(&self) -> Result<TrialConfig, HarnessError> {
        let params = self.params()?;
        let mut cfg = TrialConfig::new(self.protocol, params);
        cfg.inputs = self.inputs;
        cfg.round_cap = self.round_cap;
        cfg.detail = self.detail;
        Ok(cfg)
    }
}

/// Closed-form bounds echoed into every campaign report, straight from the
/// parameter module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundTable {
    pub lambda: f64,
    pub f: u32,
    pub w: u32,
    pub b: u32,
    pub coin_success: Option<f64>,
    pub whp_coin_success: Option<f64>,
    pub common_value_all: f64,
    pub common_value_committee: f64,
    pub chernoff_exponents: Option<[f64; 4]>,
    pub sampling_failure_bounds: Option<[f64; 4]>,
}

impl BoundTable {
    pub fn for_params(p: &Parameters) -> BoundTable {
        let chern = chernoff_exponents(p).ok();
        BoundTable {
            lambda: p.lambda,
            f: p.f,
            w: p.w,
            b: p.b,
            coin_success: coin_success_bound(p.epsilon).ok(),
            whp_coin_success: whp_coin_success_bound(p.d).ok(),
            common_value_all: common_value_lower_bound(p, false),
            common_value_committee: common_value_lower_bound(p, true),
            chernoff_exponents: chern.map(|c| [c.c1, c.c2, c.c3, c.c4]),
            sampling_failure_bounds: chern.map(|c| c.failure_bounds(p.n)),
        }
    }
}

/// Frequency with a Wilson 99% confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreqCI {
    pub count: u64,
    pub trials: u64,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl FreqCI {
    fn new(count: u64, trials: u64) -> FreqCI {
        let (ci_low, ci_high) = wilson_interval(count, trials, 2.576);
        FreqCI {
            count,
            trials,
            rate: if trials == 0 {
                0.0
            } else {
                count as f64 / trials as f64
            },
            ci_low,
            ci_high,
        }
    }
}

/// Violation bookkeeping. `safety_unexplained` counts safety violations in
/// trials with no logged sampling failure; the exit-code contract keys on it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ViolationLedger {
    pub safety: u64,
    pub safety_unexplained: u64,
    pub safety_unexplained_seeds: Vec<u64>,
    pub liveness: u64,
    pub common_core: u64,
    pub common_core_seeds: Vec<u64>,
    pub min_propagation: u64,
    pub validity: u64,
    pub graded_agreement: u64,
    pub replaceability: u64,
    pub assumption1: u64,
    pub no_value_faults: u64,
}

const LEDGER_SEED_CAP: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub config: ExperimentConfig,
    pub bounds: BoundTable,
    pub trials: u64,
    pub unanimous0: FreqCI,
    pub unanimous1: FreqCI,
    pub all_returned: FreqCI,
    pub decided_all: FreqCI,
    pub decided_within_40_rounds: FreqCI,
    pub decided_round0_all: FreqCI,
    /// Trials without any committee-property failure.
    pub clean_trials: u64,
    /// Of the clean trials, how many terminated / held validity (gated
    /// acceptance conditions read these).
    pub clean_all_returned: u64,
    pub clean_decided_all: u64,
    pub mean_words: f64,
    pub mean_duration: f64,
    pub mean_rounds: f64,
    pub p99_rounds: f64,
    pub committee_s_failure_rates: [f64; 4],
    pub committees_observed: u64,
    pub violations: ViolationLedger,
}

/// Per-trial CSV row (one line per trial in `trials.csv`).
#[derive(Debug, Clone, Serialize)]
pub struct CsvRow {
    pub idx: u64,
    pub seed: u64,
    pub unanimous_bit: i8,
    pub all_returned: bool,
    pub decided: u32,
    pub max_decision_round: i64,
    pub words: u64,
    pub duration: u32,
    pub events: u64,
    pub s_failures: u32,
    pub safety_violation: bool,
    pub liveness_violation: bool,
    pub common_core: i64,
    pub hash: String,
}

impl CsvRow {
    pub const HEADER: &'static str = "idx,seed,unanimous_bit,all_returned,decided,max_decision_round,words,duration,events,s_failures,safety_violation,liveness_violation,common_core,hash";

    fn from_report(idx: u64, r: &TrialReport) -> CsvRow {
        CsvRow {
            idx,
            seed: r.seed,
            unanimous_bit: r
                .coin
                .as_ref()
                .and_then(|c| c.unanimous_bit)
                .map_or(-1, |b| b as i8),
            all_returned: r.all_correct_terminal,
            decided: r.agreement.as_ref().map_or(0, |a| a.decided),
            max_decision_round: r
                .agreement
                .as_ref()
                .and_then(|a| a.max_decision_round)
                .map_or(-1, |r| r as i64),
            words: r.words_sent,
            duration: r.duration,
            events: r.events,
            s_failures: r.s_flags.s1_failures
                + r.s_flags.s2_failures
                + r.s_flags.s3_failures
                + r.s_flags.s4_failures,
            safety_violation: r.safety_violation,
            liveness_violation: r.liveness_violation,
            common_core: r.coin.as_ref().map_or(-1, |c| c.common_core_count as i64),
            hash: r.hash(),
        }
    }

    fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.idx,
            self.seed,
            self.unanimous_bit,
            self.all_returned,
            self.decided,
            self.max_decision_round,
            self.words,
            self.duration,
            self.events,
            self.s_failures,
            self.safety_violation,
            self.liveness_violation,
            self.common_core,
            self.hash
        )
    }
}

#[derive(Debug, Default, Clone)]
struct Aggregate {
    trials: u64,
    unanimous0: u64,
    unanimous1: u64,
    all_returned: u64,
    decided_all: u64,
    decided_within_40: u64,
    decided_round0_all: u64,
    clean_trials: u64,
    clean_all_returned: u64,
    clean_decided_all: u64,
    words: Vec<f64>,
    durations: Vec<f64>,
    rounds: Vec<f64>,
    committee_failures: [u64; 4],
    committees: u64,
    ledger: ViolationLedger,
}

impl Aggregate {
    fn add(&mut self, r: &TrialReport) {
        self.trials += 1;
        match r.coin.as_ref().and_then(|c| c.unanimous_bit) {
            Some(0) => self.unanimous0 += 1,
            Some(1) => self.unanimous1 += 1,
            _ => {}
        }
        if r.all_correct_terminal {
            self.all_returned += 1;
        }
        let clean = !r.s_flags.any();
        if clean {
            self.clean_trials += 1;
            if r.all_correct_terminal {
                self.clean_all_returned += 1;
            }
        }
        if let Some(a) = &r.agreement {
            if a.decided_all {
                self.decided_all += 1;
                if a.max_decision_round.is_some_and(|m| m <= 40) {
                    self.decided_within_40 += 1;
                }
                if clean {
                    self.clean_decided_all += 1;
                }
            }
            if a.decided_round0_all && a.decided_all {
                self.decided_round0_all += 1;
            }
            if let Some(m) = a.max_decision_round {
                self.rounds.push(m as f64);
            }
            if a.validity_ok == Some(false) {
                self.ledger.validity += 1;
            }
            if !a.assumption1_ok {
                self.ledger.assumption1 += 1;
            }
        }
        if let Some(c) = &r.coin {
            if c.common_core_gate && (c.common_core_count as f64) < c.common_core_bound {
                self.ledger.common_core += 1;
                if self.ledger.common_core_seeds.len() < LEDGER_SEED_CAP {
                    self.ledger.common_core_seeds.push(r.seed);
                }
            }
            if c.min_propagated == Some(false) {
                self.ledger.min_propagation += 1;
            }
            self.ledger.no_value_faults += c.no_value_faults as u64;
        }
        if let Some(a) = &r.approver {
            if a.validity_ok == Some(false) {
                self.ledger.validity += 1;
            }
            if !a.graded_agreement_ok {
                self.ledger.graded_agreement += 1;
            }
            if !a.replaceability_ok {
                self.ledger.replaceability += 1;
            }
        }
        if r.safety_violation {
            self.ledger.safety += 1;
            if r.unexplained_safety_violation() {
                self.ledger.safety_unexplained += 1;
                if self.ledger.safety_unexplained_seeds.len() < LEDGER_SEED_CAP {
                    self.ledger.safety_unexplained_seeds.push(r.seed);
                }
            }
        }
        if r.liveness_violation {
            self.ledger.liveness += 1;
        }
        self.words.push(r.words_sent as f64);
        self.durations.push(r.duration as f64);
        self.committees += r.committees.len() as u64;
        self.committee_failures[0] += r.s_flags.s1_failures as u64;
        self.committee_failures[1] += r.s_flags.s2_failures as u64;
        self.committee_failures[2] += r.s_flags.s3_failures as u64;
        self.committee_failures[3] += r.s_flags.s4_failures as u64;
    }

    fn merge(mut self, other: Aggregate) -> Aggregate {
        self.trials += other.trials;
        self.unanimous0 += other.unanimous0;
        self.unanimous1 += other.unanimous1;
        self.all_returned += other.all_returned;
        self.decided_all += other.decided_all;
        self.decided_within_40 += other.decided_within_40;
        self.decided_round0_all += other.decided_round0_all;
        self.clean_trials += other.clean_trials;
        self.clean_all_returned += other.clean_all_returned;
        self.clean_decided_all += other.clean_decided_all;
        self.words.extend(other.words);
        self.durations.extend(other.durations);
        self.rounds.extend(other.rounds);
        for k in 0..4 {
            self.committee_failures[k] += other.committee_failures[k];
        }
        self.committees += other.committees;
        let l = &mut self.ledger;
        let o = other.ledger;
        l.safety += o.safety;
        l.safety_unexplained += o.safety_unexplained;
        l.safety_unexplained_seeds.extend(o.safety_unexplained_seeds);
        l.safety_unexplained_seeds.truncate(LEDGER_SEED_CAP);
        l.liveness += o.liveness;
        l.common_core += o.common_core;
        l.common_core_seeds.extend(o.common_core_seeds);
        l.common_core_seeds.truncate(LEDGER_SEED_CAP);
        l.min_propagation += o.min_propagation;
        l.validity += o.validity;
        l.graded_agreement += o.graded_agreement;
        l.replaceability += o.replaceability;
        l.assumption1 += o.assumption1;
        l.no_value_faults += o.no_value_faults;
        self
    }

    fn finish(mut self, config: &ExperimentConfig, params: &Parameters) -> CampaignReport {
        self.ledger.safety_unexplained_seeds.sort_unstable();
        self.ledger.common_core_seeds.sort_unstable();
        let committees = self.committees.max(1);
        CampaignReport {
            config: config.clone(),
            bounds: BoundTable::for_params(params),
            trials: self.trials,
            unanimous0: FreqCI::new(self.unanimous0, self.trials),
            unanimous1: FreqCI::new(self.unanimous1, self.trials),
            all_returned: FreqCI::new(self.all_returned, self.trials),
            decided_all: FreqCI::new(self.decided_all, self.trials),
            decided_within_40_rounds: FreqCI::new(self.decided_within_40, self.trials),
            decided_round0_all: FreqCI::new(self.decided_round0_all, self.trials),
            clean_trials: self.clean_trials,
            clean_all_returned: self.clean_all_returned,
            clean_decided_all: self.clean_decided_all,
            mean_words: mean(&self.words),
            mean_duration: mean(&self.durations),
            mean_rounds: mean(&self.rounds),
            p99_rounds: percentile(&self.rounds, 0.99),
            committee_s_failure_rates: self
                .committee_failures
                .map(|f| f as f64 / committees as f64),
            committees_observed: self.committees,
            violations: self.ledger,
        }
    }
}

/// Runs a seeded campaign, trials in parallel, aggregation order-free.
pub fn run_campaign(config: &ExperimentConfig) -> Result<CampaignReport, HarnessError> {
    let (report, _) = run_campaign_with_rows(config, false)?;
    Ok(report)
}

/// Campaign plus per-trial CSV rows (in trial order).
pub fn run_campaign_with_rows(
    config: &ExperimentConfig,
    want_rows: bool,
) -> Result<(CampaignReport, Vec<CsvRow>), HarnessError> {
    let params = config.params()?;
    let trial_cfg = config.trial_config()?;
    if config.trials == 0 {
        return Ok((Aggregate::default().finish(config, &params), Vec::new()));
    }
    let results: Result<Vec<(Aggregate, Vec<CsvRow>)>, TrialError> = (0..config.trials)
        .into_par_iter()
        .map(|i| {
            let report = sim::run_trial(&trial_cfg, &config.adversary, config.base_seed + i)?;
            let mut agg = Aggregate::default();
            agg.add(&report);
            let rows = if want_rows {
                vec![CsvRow::from_report(i, &report)]
            } else {
                Vec::new()
            };
            Ok((agg, rows))
        })
        .collect();
    let results = results?;
    let mut agg = Aggregate::default();
    let mut rows = Vec::new();
    for (a, mut r) in results {
        agg = agg.merge(a);
        rows.append(&mut r);
    }
    rows.sort_by_key(|r| r.idx);
    Ok((agg.finish(config, &params), rows))
}

/// Re-executes every `*.trace` file under `dir` and aggregates the replayed
/// reports; statistics are recomputable from traces alone.
pub fn replay_campaign(dir: &Path) -> Result<(Vec<TrialReport>, u64), HarnessError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "trace"))
        .collect();
    paths.sort();
    let mut reports = Vec::new();
    let mut hash_mismatches = 0u64;
    for path in paths {
        let trace = sim::trace::read_trace(&path)?;
        let expected = trace.report_hash.clone();
        let report = sim::trace::replay(trace)?;
        if let Some(expected) = expected {
            if expected != report.hash() {
                hash_mismatches += 1;
            }
        }
        reports.push(report);
    }
    Ok((reports, hash_mismatches))
}

pub fn write_campaign_outputs(
    report: &CampaignReport,
    rows: &[CsvRow],
    dir: &Path,
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(dir.join("campaign.json"), json)?;
    let mut csv = std::io::BufWriter::new(std::fs::File::create(dir.join("trials.csv"))?);
    writeln!(csv, "{}", CsvRow::HEADER)?;
    for row in rows {
        writeln!(csv, "{}", row.to_line())?;
    }
    csv.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_trials_is_an_empty_success() {
        let mut cfg = ExperimentConfig::new(Protocol::SharedCoin, 8, 1.0 / 3.0, 0.0);
        cfg.full_participation = true;
        cfg.trials = 0;
        let report = run_campaign(&cfg).unwrap();
        assert_eq!(report.trials, 0);
        assert_eq!(report.unanimous0.count, 0);
        assert_eq!(report.violations.safety, 0);
    }

    #[test]
    fn campaign_is_deterministic() {
        let mut cfg = ExperimentConfig::new(Protocol::SharedCoin, 8, 1.0 / 3.0, 0.0);
        cfg.full_participation = true;
        cfg.trials = 20;
        let (a, rows_a) = run_campaign_with_rows(&cfg, true).unwrap();
        let (b, rows_b) = run_campaign_with_rows(&cfg, true).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert_eq!(rows_a.len(), 20);
        for (x, y) in rows_a.iter().zip(&rows_b) {
            assert_eq!(x.hash, y.hash);
        }
    }

    #[test]
    fn small_coin_campaign_sane() {
        let mut cfg = ExperimentConfig::new(Protocol::SharedCoin, 8, 1.0 / 3.0, 0.0);
        cfg.full_participation = true;
        cfg.trials = 50;
        let report = run_campaign(&cfg).unwrap();
        // f = 0: every trial is unanimous one way or the other
        assert_eq!(
            report.unanimous0.count + report.unanimous1.count,
            report.trials
        );
        assert_eq!(report.all_returned.count, report.trials);
        assert_eq!(report.violations.common_core, 0);
        assert_eq!(report.violations.min_propagation, 0);
        assert!(report.mean_words > 0.0);
    }
}
