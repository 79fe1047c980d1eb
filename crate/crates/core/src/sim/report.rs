//! Per-trial reports: protocol outputs, complexity metrics, committee
//! statistics, and the deterministic per-trial structural checks
//! (common-core counts, minimum propagation, graded agreement, process
//! replaceability).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crypto::ProcessId;
use crate::machine::{AuditCounters, ProcessMachine};
use crate::params::common_value_lower_bound;
use crate::sim::{Protocol, Trial};
use crate::wire::{coin_vrf_input, Role, Stage, StageCtx, Value, ValueSet};

/// One sampled committee with its property flags. `s3`/`s4` are evaluated
/// against the set of processes corrupted at any point during the trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitteeReport {
    pub tag: String,
    pub role: String,
    pub instance: u64,
    pub round: u64,
    pub stage: String,
    pub size: u32,
    pub correct: u32,
    pub byzantine: u32,
    pub s1: bool,
    pub s2: bool,
    pub s3: bool,
    pub s4: bool,
}

impl CommitteeReport {
    pub fn all_hold(&self) -> bool {
        self.s1 && self.s2 && self.s3 && self.s4
    }
}

/// Coin-instrumentation: deterministic counting facts of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoinChecks {
    /// Some(bit) iff every correct process returned this bit.
    pub unanimous_bit: Option<u8>,
    pub returned: u32,
    pub all_returned: bool,
    /// Values received by enough correct processes before their SECOND send.
    pub common_core_count: u32,
    pub common_core_bound: f64,
    /// True when the preconditions of the common-core bound held (phase-one
    /// tables complete; for the committee coin also S1/S2/S4 plus S3 of the
    /// FIRST committee).
    pub common_core_gate: bool,
    pub min_value: u64,
    pub min_owner: ProcessId,
    pub min_was_common: bool,
    /// Some(true/false) when minimum propagation was checkable: the minimum
    /// was common, sizes were in range, and everyone returned.
    pub min_propagated: Option<bool>,
    pub no_value_faults: u32,
}

/// Approver-instrumentation for one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproverChecks {
    /// Distinct input values across correct processes.
    pub correct_input_values: Vec<Value>,
    pub returned: u32,
    pub all_returned: bool,
    /// When all correct inputs equal v: did every returned set equal {v}?
    pub validity_ok: Option<bool>,
    /// No two correct singleton results differ.
    pub graded_agreement_ok: bool,
    /// Smallest pairwise intersection of sampled OK-sender sets.
    pub ok_intersection_min: Option<u32>,
    /// Every correct process broadcast at most once per committee role.
    pub replaceability_ok: bool,
    pub result_histogram: Vec<(String, u32)>,
}

/// Agreement-instrumentation for one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementChecks {
    pub decided: u32,
    pub decided_all: bool,
    pub decisions_agree: bool,
    pub decision_histogram: [u32; 2],
    pub max_decision_round: Option<u64>,
    /// Some(v) when every correct process started with the same input.
    pub unanimous_input: Option<Value>,
    /// With unanimous input v: every correct decision equals v.
    pub validity_ok: Option<bool>,
    /// All correct processes decided in round 0.
    pub decided_round0_all: bool,
    /// Per approver instance, correct processes used at most 2 distinct
    /// input values.
    pub assumption1_ok: bool,
    pub coin_faults: u32,
    pub rounds_completed_max: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SFlagSummary {
    pub s1_failures: u32,
    pub s2_failures: u32,
    pub s3_failures: u32,
    pub s4_failures: u32,
}

impl SFlagSummary {
    pub fn any(&self) -> bool {
        self.s1_failures + self.s2_failures + self.s3_failures + self.s4_failures > 0
    }
}

/// Per-process outputs, captured when `TrialConfig::detail` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetailData {
    pub coin_bits: Option<Vec<Option<u8>>>,
    pub decisions: Option<Vec<Option<u8>>>,
    pub decision_rounds: Option<Vec<Option<u64>>>,
    pub approver_results: Option<Vec<Option<String>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub protocol: Protocol,
    pub n: u32,
    pub seed: u64,
    pub adversary: String,
    pub corrupted: Vec<ProcessId>,
    pub words_sent: u64,
    pub duration: u32,
    pub events: u64,
    pub envelopes: u64,
    pub all_correct_terminal: bool,
    pub liveness_violation: bool,
    pub safety_violation: bool,
    pub protocol_violation: bool,
    pub s_flags: SFlagSummary,
    pub committees: Vec<CommitteeReport>,
    pub coin: Option<CoinChecks>,
    pub approver: Option<ApproverChecks>,
    pub agreement: Option<AgreementChecks>,
    pub audit: AuditCounters,
    pub detail: Option<DetailData>,
}

impl TrialReport {
    /// Stable content hash over the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("report serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// A safety violation not explained by any logged sampling failure.
    pub fn unexplained_safety_violation(&self) -> bool {
        self.safety_violation && !self.s_flags.any()
    }
}

fn value_set_label(set: &ValueSet) -> String {
    let parts: Vec<&str> = set
        .iter()
        .map(|v| match v {
            Value::Zero => "0",
            Value::One => "1",
            Value::Bot => "bot",
        })
        .collect();
    parts.join(",")
}

pub(crate) fn assemble(trial: &mut Trial, adversary_name: &str) -> TrialReport {
    let n = trial.n();
    let params = trial.cfg.params;
    let corrupted: Vec<ProcessId> = trial.corrupted_order.clone();
    let is_correct = |pid: ProcessId| !trial.corrupted[pid as usize];

    // committee statistics against the end-of-trial corrupted set
    let mut committees: Vec<CommitteeReport> = Vec::new();
    {
        let mut infos: Vec<_> = trial.committees.iter().collect();
        infos.sort_by(|a, b| a.string.cmp(&b.string));
        for info in infos {
            let correct = info
                .member_ids()
                .filter(|&pid| !trial.corrupted[pid as usize])
                .count() as u32;
            let byzantine = info.size - correct;
            let (s1, s2) = if params.full_participation {
                (true, true)
            } else {
                (
                    (info.size as f64) <= (1.0 + params.d) * params.lambda,
                    (info.size as f64) >= (1.0 - params.d) * params.lambda,
                )
            };
            committees.push(CommitteeReport {
                tag: info.tag.clone(),
                role: info.role_label.clone(),
                instance: info.ctx.instance,
                round: info.ctx.round,
                stage: format!("{:?}", info.ctx.stage),
                size: info.size,
                correct,
                byzantine,
                s1,
                s2,
                s3: correct >= params.w,
                s4: byzantine <= params.b,
            });
        }
    }
    let s_flags = SFlagSummary {
        s1_failures: committees.iter().filter(|c| !c.s1).count() as u32,
        s2_failures: committees.iter().filter(|c| !c.s2).count() as u32,
        s3_failures: committees.iter().filter(|c| !c.s3).count() as u32,
        s4_failures: committees.iter().filter(|c| !c.s4).count() as u32,
    };

    let mut coin = None;
    let mut approver = None;
    let mut agreement = None;
    let mut safety_violation = false;
    let mut protocol_violation = false;

    match trial.cfg.protocol {
        Protocol::SharedCoin => {
            coin = Some(shared_coin_checks(trial, &is_correct));
        }
        Protocol::WhpCoin => {
            let (checks, sv) = whp_coin_checks(trial, &committees, &is_correct);
            protocol_violation |= sv;
            coin = Some(checks);
        }
        Protocol::Approver => {
            let checks = approver_checks(trial, &is_correct);
            safety_violation |= !checks.graded_agreement_ok
                || checks.validity_ok == Some(false);
            approver = Some(checks);
        }
        Protocol::Agreement => {
            let checks = agreement_checks(trial, &is_correct);
            safety_violation |= !checks.decisions_agree
                || checks.validity_ok == Some(false)
                || !checks.assumption1_ok;
            protocol_violation |= checks.coin_faults > 0;
            agreement = Some(checks);
        }
    }

    // machine-level violation flags
    for (pid, m) in trial.machines.iter().enumerate() {
        if trial.corrupted[pid] {
            continue;
        }
        if let ProcessMachine::Agreement(ba) = m {
            safety_violation |= ba.safety_violation();
            protocol_violation |= ba.protocol_violation();
        }
    }

    let detail = trial.cfg.detail.then(|| detail_data(trial));

    TrialReport {
        protocol: trial.cfg.protocol,
        n,
        seed: trial.seed,
        adversary: adversary_name.to_string(),
        corrupted,
        words_sent: trial.words_sent,
        duration: trial.duration.max(if trial.all_correct_terminal() {
            0
        } else {
            trial.clocks.iter().map(|c| c.depth).max().unwrap_or(0)
        }),
        events: trial.events,
        envelopes: trial.envelopes.len() as u64,
        all_correct_terminal: trial.all_correct_terminal(),
        liveness_violation: trial.liveness_violation,
        safety_violation,
        protocol_violation,
        s_flags,
        committees,
        coin,
        approver,
        agreement,
        audit: trial.audit,
        detail,
    }
}

fn unanimous_bit(bits: impl Iterator<Item = Option<u8>>) -> (Option<u8>, u32, bool) {
    let mut first: Option<u8> = None;
    let mut returned = 0u32;
    let mut all_same = true;
    let mut all_returned = true;
    for b in bits {
        match b {
            Some(bit) => {
                returned += 1;
                match first {
                    None => first = Some(bit),
                    Some(f) if f != bit => all_same = false,
                    _ => {}
                }
            }
            None => all_returned = false,
        }
    }
    let unanimous = if all_same && all_returned { first } else { None };
    (unanimous, returned, all_returned)
}

fn shared_coin_checks(trial: &Trial, is_correct: &dyn Fn(ProcessId) -> bool) -> CoinChecks {
    let n = trial.n();
    let params = &trial.cfg.params;
    let ctx = StageCtx::standalone(trial.cfg.instance, trial.cfg.round);

    let machine = |pid: u32| match &trial.machines[pid as usize] {
        ProcessMachine::SharedCoin(m) => m,
        _ => unreachable!(),
    };

    let (unanimous, returned, all_returned) = unanimous_bit(
        (0..n).filter(|&p| is_correct(p)).map(|p| machine(p).output()),
    );

    // phase-one receipt table: cnt[j] = correct processes that counted j's
    // FIRST before broadcasting their SECOND
    let mut cnt = vec![0u32; n as usize];
    let mut complete = true;
    for pid in (0..n).filter(|&p| is_correct(p)) {
        match machine(pid).first_snapshot() {
            Some(snapshot) => {
                for &j in snapshot {
                    cnt[j as usize] += 1;
                }
            }
            None => complete = false,
        }
    }
    let quorum = params.f + 1;
    let common_core_count = cnt.iter().filter(|&&c| c >= quorum).count() as u32;

    // oracle: global minimum over every process's VRF value
    let (min_owner, min_value) = (0..n)
        .map(|pid| {
            (
                pid,
                trial
                    .registry
                    .vrf_eval(pid, &coin_vrf_input(ctx.instance, ctx.round))
                    .unwrap()
                    .value,
            )
        })
        .min_by_key(|&(pid, v)| (v, pid))
        .unwrap();
    let min_was_common = cnt[min_owner as usize] >= quorum;
    let min_propagated = (min_was_common && all_returned).then(|| {
        (0..n)
            .filter(|&p| is_correct(p))
            .all(|p| machine(p).final_candidate().map(|c| c.value()) == Some(min_value))
    });

    CoinChecks {
        unanimous_bit: unanimous,
        returned,
        all_returned,
        common_core_count,
        common_core_bound: common_value_lower_bound(params, false),
        common_core_gate: complete,
        min_value,
        min_owner,
        min_was_common,
        min_propagated,
        no_value_faults: 0,
    }
}

fn whp_coin_checks(
    trial: &mut Trial,
    committees: &[CommitteeReport],
    is_correct: &dyn Fn(ProcessId) -> bool,
) -> (CoinChecks, bool) {
    let n = trial.n();
    let params = trial.cfg.params;
    let ctx = StageCtx::standalone(trial.cfg.instance, trial.cfg.round);

    let first_info = trial
        .committees
        .get(&trial.registry, params.lambda, Role::CoinFirst, ctx);
    let second_info = trial
        .committees
        .get(&trial.registry, params.lambda, Role::CoinSecond, ctx);

    let machine = |pid: u32| match &trial.machines[pid as usize] {
        ProcessMachine::WhpCoin(m) => m,
        _ => unreachable!(),
    };

    let (unanimous, returned, all_returned) = unanimous_bit(
        (0..n).filter(|&p| is_correct(p)).map(|p| machine(p).output()),
    );
    let no_value_faults = (0..n)
        .filter(|&p| is_correct(p) && machine(p).no_value_fault())
        .count() as u32;

    // receipt table over correct SECOND-committee members
    let mut cnt = vec![0u32; n as usize];
    let mut complete = true;
    for pid in second_info.member_ids().filter(|&p| is_correct(p)) {
        match machine(pid).first_snapshot() {
            Some(snapshot) => {
                for &j in snapshot {
                    cnt[j as usize] += 1;
                }
            }
            None => complete = false,
        }
    }
    let quorum = params.b + 1;
    let common_core_count = first_info
        .member_ids()
        .filter(|&j| cnt[j as usize] >= quorum)
        .count() as u32;

    let committee_flag = |role: &str, which: fn(&CommitteeReport) -> bool| {
        committees
            .iter()
            .find(|c| c.role == role)
            .map(which)
            .unwrap_or(false)
    };
    let s1_first = committee_flag("FIRST", |c| c.s1);
    let s3_first = committee_flag("FIRST", |c| c.s3);
    let s1_second = committee_flag("SECOND", |c| c.s1);
    let s2_second = committee_flag("SECOND", |c| c.s2);
    let s4_second = committee_flag("SECOND", |c| c.s4);
    let gate = complete && s1_first && s3_first && s1_second && s2_second && s4_second;

    // oracle: minimum over the FIRST committee
    let min = first_info
        .member_ids()
        .map(|pid| {
            (
                trial
                    .registry
                    .vrf_eval(pid, &coin_vrf_input(ctx.instance, ctx.round))
                    .unwrap()
                    .value,
                pid,
            )
        })
        .min();
    let (min_value, min_owner) = min.unwrap_or((u64::MAX, u32::MAX));
    let min_was_common = min_owner != u32::MAX && cnt[min_owner as usize] >= quorum;
    let min_propagated = (min_was_common && s1_second && all_returned).then(|| {
        (0..n)
            .filter(|&p| is_correct(p))
            .all(|p| machine(p).final_candidate().map(|c| c.value()) == Some(min_value))
    });

    (
        CoinChecks {
            unanimous_bit: unanimous,
            returned,
            all_returned,
            common_core_count,
            common_core_bound: common_value_lower_bound(&params, true),
            common_core_gate: gate,
            min_value,
            min_owner,
            min_was_common,
            min_propagated,
            no_value_faults,
        },
        no_value_faults > 0,
    )
}

fn approver_checks(trial: &Trial, is_correct: &dyn Fn(ProcessId) -> bool) -> ApproverChecks {
    let n = trial.n();
    let machine = |pid: u32| match &trial.machines[pid as usize] {
        ProcessMachine::Approver(m) => m,
        _ => unreachable!(),
    };

    let mut input_values = ValueSet::default();
    for pid in (0..n).filter(|&p| is_correct(p)) {
        if let Some(v) = machine(pid).input() {
            input_values.insert(v);
        }
    }
    let correct_input_values: Vec<Value> = input_values.iter().collect();

    let mut returned = 0u32;
    let mut all_returned = true;
    let mut singletons = ValueSet::default();
    let mut histogram: std::collections::BTreeMap<String, u32> = Default::default();
    let mut validity_all = true;
    for pid in (0..n).filter(|&p| is_correct(p)) {
        match machine(pid).result() {
            Some(set) => {
                returned += 1;
                *histogram.entry(value_set_label(&set)).or_default() += 1;
                if let Some(v) = set.as_singleton() {
                    singletons.insert(v);
                }
                if let Some(&only) = correct_input_values.first() {
                    if correct_input_values.len() == 1 && set.as_singleton() != Some(only) {
                        validity_all = false;
                    }
                }
            }
            None => all_returned = false,
        }
    }
    let validity_ok = (correct_input_values.len() == 1 && returned > 0).then_some(validity_all);
    let graded_agreement_ok = singletons.len() <= 1;

    // sampled pairwise intersections of OK-sender sets
    let returned_pids: Vec<u32> = (0..n)
        .filter(|&p| is_correct(p) && machine(p).result().is_some())
        .collect();
    let mut ok_intersection_min = None;
    if returned_pids.len() >= 2 {
        let mut h = trial.seed;
        let mut min_inter = u32::MAX;
        for k in 0..16u64 {
            h = crate::harness::stats::mix64(h, k + 1);
            let a = returned_pids[(h % returned_pids.len() as u64) as usize];
            h = crate::harness::stats::mix64(h, k + 17);
            let b = returned_pids[(h % returned_pids.len() as u64) as usize];
            if a == b {
                continue;
            }
            let sa: std::collections::BTreeSet<u32> =
                machine(a).ok_pairs().iter().map(|&(s, _)| s).collect();
            let inter = machine(b)
                .ok_pairs()
                .iter()
                .filter(|&&(s, _)| sa.contains(&s))
                .count() as u32;
            min_inter = min_inter.min(inter);
        }
        if min_inter != u32::MAX {
            ok_intersection_min = Some(min_inter);
        }
    }

    let replaceability_ok = (0..n)
        .filter(|&p| is_correct(p))
        .all(|p| machine(p).sends_per_role().iter().all(|&c| c <= 1));

    ApproverChecks {
        correct_input_values,
        returned,
        all_returned,
        validity_ok,
        graded_agreement_ok,
        ok_intersection_min,
        replaceability_ok,
        result_histogram: histogram.into_iter().collect(),
    }
}

fn agreement_checks(trial: &Trial, is_correct: &dyn Fn(ProcessId) -> bool) -> AgreementChecks {
    let n = trial.n();
    let machine = |pid: u32| match &trial.machines[pid as usize] {
        ProcessMachine::Agreement(m) => m,
        _ => unreachable!(),
    };

    let mut decided = 0u32;
    let mut decided_all = true;
    let mut histogram = [0u32; 2];
    let mut max_round: Option<u64> = None;
    let mut decided_round0_all = true;
    let mut coin_faults = 0u32;
    let mut rounds_max = 0u64;
    for pid in (0..n).filter(|&p| is_correct(p)) {
        let m = machine(pid);
        rounds_max = rounds_max.max(m.round());
        if m.protocol_violation() {
            coin_faults += 1;
        }
        match m.decision() {
            Some(v) => {
                decided += 1;
                histogram[v.byte() as usize] += 1;
                let r = m.decision_round().unwrap();
                max_round = Some(max_round.map_or(r, |m| m.max(r)));
                if r != 0 {
                    decided_round0_all = false;
                }
            }
            None => {
                decided_all = false;
                decided_round0_all = false;
            }
        }
    }
    let decisions_agree = !(histogram[0] > 0 && histogram[1] > 0);

    let mut inputs = ValueSet::default();
    for pid in (0..n).filter(|&p| is_correct(p)) {
        inputs.insert(trial.cfg.inputs.value_for(pid, n, trial.seed));
    }
    let unanimous_input = inputs.as_singleton();
    let validity_ok = unanimous_input.map(|v| {
        (0..n)
            .filter(|&p| is_correct(p))
            .all(|p| machine(p).decision().is_none_or(|d| d == v))
    });

    // at most two distinct correct inputs per approver instance
    let mut per_instance: std::collections::BTreeMap<StageCtx, ValueSet> = Default::default();
    for pid in (0..n).filter(|&p| is_correct(p)) {
        for (ctx, v) in machine(pid).approver_inputs() {
            per_instance.entry(ctx).or_default().insert(v);
        }
    }
    let assumption1_ok = per_instance.values().all(|s| s.len() <= 2);

    AgreementChecks {
        decided,
        decided_all,
        decisions_agree,
        decision_histogram: histogram,
        max_decision_round: max_round,
        unanimous_input,
        validity_ok,
        decided_round0_all: decided_round0_all && decided > 0,
        assumption1_ok,
        coin_faults,
        rounds_completed_max: rounds_max,
    }
}

#[allow(clippy::needless_range_loop)]
fn detail_data(trial: &Trial) -> DetailData {
    let n = trial.n();
    let mut coin_bits = None;
    let mut decisions = None;
    let mut decision_rounds = None;
    let mut approver_results = None;
    match trial.cfg.protocol {
        Protocol::SharedCoin => {
            coin_bits = Some(
                (0..n)
                    .map(|p| match &trial.machines[p as usize] {
                        ProcessMachine::SharedCoin(m) => m.output(),
                        _ => None,
                    })
                    .collect(),
            );
        }
        Protocol::WhpCoin => {
            coin_bits = Some(
                (0..n)
                    .map(|p| match &trial.machines[p as usize] {
                        ProcessMachine::WhpCoin(m) => m.output(),
                        _ => None,
                    })
                    .collect(),
            );
        }
        Protocol::Approver => {
            approver_results = Some(
                (0..n)
                    .map(|p| match &trial.machines[p as usize] {
                        ProcessMachine::Approver(m) => m.result().map(|s| value_set_label(&s)),
                        _ => None,
                    })
                    .collect(),
            );
        }
        Protocol::Agreement => {
            decisions = Some(
                (0..n)
                    .map(|p| match &trial.machines[p as usize] {
                        ProcessMachine::Agreement(m) => m.decision().map(|v| v.byte()),
                        _ => None,
                    })
                    .collect(),
            );
            decision_rounds = Some(
                (0..n)
                    .map(|p| match &trial.machines[p as usize] {
                        ProcessMachine::Agreement(m) => m.decision_round(),
                        _ => None,
                    })
                    .collect(),
            );
        }
    }
    DetailData {
        coin_bits,
        decisions,
        decision_rounds,
        approver_results,
    }
}
