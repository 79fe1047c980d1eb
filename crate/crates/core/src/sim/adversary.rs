//! Scheduling adversaries.
//!
//! An adversary picks one action per event: deliver an in-flight envelope,
//! corrupt a process (within the budget `f`), inject a message from a
//! corrupted sender, drop a corrupted-sender envelope, or pass when it has
//! nothing left to do. Decisions are deterministic in the trial seed.

use std::collections::{BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::ProcessId;
use crate::harness::stats::mix64;
use crate::wire::{MsgKind, Payload, Role, StageCtx, Value};

use super::{Status, View};

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Deliver(u64),
    Corrupt(ProcessId),
    Inject {
        sender: ProcessId,
        receiver: ProcessId,
        payload: Payload,
    },
    Drop(u64),
    Pass,
}

pub trait Adversary {
    fn next_action(&mut self, view: &View) -> Action;
}

/// Named adversary configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AdversarySpec {
    /// Delivers strictly in send order.
    Fifo,
    /// Delivers a uniformly random in-flight envelope.
    UniformRandom,
    /// Starves messages to or from the victim set for as long as anything
    /// else is deliverable.
    TargetedDelay { victims: Vec<ProcessId> },
    /// Corrupts senders of the smallest revealed coin values and delays
    /// their remaining envelopes. It never sees in-flight contents, so it
    /// reacts only to values already delivered somewhere.
    MinValueSuppressor,
    /// Corrupts processes 0..f before anything is delivered and keeps them
    /// silent.
    CrashF,
    /// Corrupts processes 0..f at the start; corrupted members of each init
    /// committee send value 0 to even receivers and 1 to odd receivers.
    Equivocator,
}

impl AdversarySpec {
    pub fn name(&self) -> &'static str {
        match self {
            AdversarySpec::Fifo => "fifo",
            AdversarySpec::UniformRandom => "uniform_random",
            AdversarySpec::TargetedDelay { .. } => "targeted_delay",
            AdversarySpec::MinValueSuppressor => "min_value_suppressor",
            AdversarySpec::CrashF => "crash_f",
            AdversarySpec::Equivocator => "equivocator",
        }
    }

    pub fn parse(name: &str, victims: &[ProcessId]) -> Option<AdversarySpec> {
        match name {
            "fifo" => Some(AdversarySpec::Fifo),
            "uniform_random" => Some(AdversarySpec::UniformRandom),
            "targeted_delay" => Some(AdversarySpec::TargetedDelay {
                victims: victims.to_vec(),
            }),
            "min_value_suppressor" => Some(AdversarySpec::MinValueSuppressor),
            "crash_f" => Some(AdversarySpec::CrashF),
            "equivocator" => Some(AdversarySpec::Equivocator),
            _ => None,
        }
    }

    /// All builtin specs (targeted_delay gets an arbitrary small victim set).
    pub fn all(n: u32) -> Vec<AdversarySpec> {
        vec![
            AdversarySpec::Fifo,
            AdversarySpec::UniformRandom,
            AdversarySpec::TargetedDelay {
                victims: (0..n.min(8) / 2).collect(),
            },
            AdversarySpec::MinValueSuppressor,
            AdversarySpec::CrashF,
            AdversarySpec::Equivocator,
        ]
    }
}

pub fn build(spec: &AdversarySpec, trial_seed: u64) -> Box<dyn Adversary> {
    let seed = mix64(trial_seed, 0xadfe_11ce);
    match spec {
        AdversarySpec::Fifo => Box::new(Fifo::default()),
        AdversarySpec::UniformRandom => Box::new(UniformRandom {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }),
        AdversarySpec::TargetedDelay { victims } => Box::new(TargetedDelay {
            victims: victims.iter().copied().collect(),
            cursor: 0,
            delayed: VecDeque::new(),
        }),
        AdversarySpec::MinValueSuppressor => Box::new(MinValueSuppressor {
            scan: 0,
            best: None,
            suppressed: BTreeSet::new(),
            cursor: 0,
            delayed: VecDeque::new(),
        }),
        AdversarySpec::CrashF => Box::new(CrashF {
            next: 0,
            inner: Fifo::default(),
        }),
        AdversarySpec::Equivocator => Box::new(Equivocator {
            next_corrupt: 0,
            scan: 0,
            handled: BTreeSet::new(),
            pending: VecDeque::new(),
            inner: Fifo::default(),
        }),
    }
}

/// Delivers envelopes in creation order.
#[derive(Default)]
struct Fifo {
    cursor: u64,
}

impl Fifo {
    fn pick(&mut self, view: &View) -> Option<u64> {
        while self.cursor < view.envelope_count() {
            if view.is_in_flight(self.cursor) {
                return Some(self.cursor);
            }
            self.cursor += 1;
        }
        None
    }
}

impl Adversary for Fifo {
    fn next_action(&mut self, view: &View) -> Action {
        match self.pick(view) {
            Some(id) => Action::Deliver(id),
            None => Action::Pass,
        }
    }
}

struct UniformRandom {
    rng: ChaCha8Rng,
}

impl Adversary for UniformRandom {
    fn next_action(&mut self, view: &View) -> Action {
        let len = view.in_flight_len();
        if len == 0 {
            return Action::Pass;
        }
        Action::Deliver(view.in_flight_at(self.rng.gen_range(0..len)))
    }
}

struct TargetedDelay {
    victims: BTreeSet<ProcessId>,
    cursor: u64,
    delayed: VecDeque<u64>,
}

impl Adversary for TargetedDelay {
    fn next_action(&mut self, view: &View) -> Action {
        while self.cursor < view.envelope_count() {
            let id = self.cursor;
            if !view.is_in_flight(id) {
                self.cursor += 1;
                continue;
            }
            let meta = view.meta(id).unwrap();
            if self.victims.contains(&meta.sender) || self.victims.contains(&meta.receiver) {
                self.delayed.push_back(id);
                self.cursor += 1;
                continue;
            }
            return Action::Deliver(id);
        }
        while let Some(id) = self.delayed.pop_front() {
            if view.is_in_flight(id) {
                return Action::Deliver(id);
            }
        }
        Action::Pass
    }
}

/// Watches delivered coin FIRST payloads, corrupts the sender of each newly
/// revealed minimum while budget lasts, and starves envelopes from
/// suppressed senders until nothing else remains.
struct MinValueSuppressor {
    scan: u64,
    best: Option<u64>,
    suppressed: BTreeSet<ProcessId>,
    cursor: u64,
    delayed: VecDeque<u64>,
}

impl Adversary for MinValueSuppressor {
    fn next_action(&mut self, view: &View) -> Action {
        // learn values from envelopes delivered since the last scan
        while self.scan < view.envelope_count() {
            let id = self.scan;
            self.scan += 1;
            let Some(meta) = view.meta(id) else { continue };
            if meta.status != Status::Delivered
                || !matches!(meta.kind, MsgKind::CoinFirst | MsgKind::WhpFirst)
            {
                continue;
            }
            let Some(payload) = view.delivered_payload(id) else { continue };
            let candidate = match payload {
                Payload::CoinFirst { candidate, .. } => candidate,
                Payload::WhpFirst { candidate, .. } => candidate,
                _ => continue,
            };
            let better = self.best.is_none_or(|b| candidate.value() < b);
            if better {
                self.best = Some(candidate.value());
                if !view.is_corrupted(candidate.owner) && view.corruption_budget_left() > 0 {
                    self.suppressed.insert(candidate.owner);
                    return Action::Corrupt(candidate.owner);
                }
            }
        }
        // deliver around suppressed senders first
        while self.cursor < view.envelope_count() {
            let id = self.cursor;
            if !view.is_in_flight(id) {
                self.cursor += 1;
                continue;
            }
            let meta = view.meta(id).unwrap();
            if self.suppressed.contains(&meta.sender) {
                self.delayed.push_back(id);
                self.cursor += 1;
                continue;
            }
            return Action::Deliver(id);
        }
        while let Some(id) = self.delayed.pop_front() {
            if view.is_in_flight(id) {
                return Action::Deliver(id);
            }
        }
        Action::Pass
    }
}

/// Corrupts 0..f immediately; corrupted processes stay silent.
struct CrashF {
    next: u32,
    inner: Fifo,
}

impl Adversary for CrashF {
    fn next_action(&mut self, view: &View) -> Action {
        if self.next < view.params().f {
            let pid = self.next;
            self.next += 1;
            return Action::Corrupt(pid);
        }
        self.inner.next_action(view)
    }
}

/// Corrupts 0..f immediately and makes every corrupted init-committee member
/// equivocate: value 0 to even receivers, value 1 to odd receivers.
struct Equivocator {
    next_corrupt: u32,
    scan: u64,
    handled: BTreeSet<StageCtx>,
    pending: VecDeque<(ProcessId, ProcessId, Payload)>,
    inner: Fifo,
}

impl Adversary for Equivocator {
    fn next_action(&mut self, view: &View) -> Action {
        if self.next_corrupt < view.params().f {
            let pid = self.next_corrupt;
            self.next_corrupt += 1;
            return Action::Corrupt(pid);
        }
        // discover init phases as their first correct messages appear
        while self.scan < view.envelope_count() {
            let id = self.scan;
            self.scan += 1;
            let Some(meta) = view.meta(id) else { continue };
            if meta.kind != MsgKind::Init || !self.handled.insert(meta.ctx) {
                continue;
            }
            for pid in 0..view.params().f {
                let Some(sample) = view.corrupted_sample(pid, Role::Init, meta.ctx) else {
                    continue;
                };
                if !sample.member {
                    continue;
                }
                for receiver in 0..view.n() {
                    let value = if receiver % 2 == 0 { Value::Zero } else { Value::One };
                    self.pending.push_back((
                        pid,
                        receiver,
                        Payload::Init {
                            ctx: meta.ctx,
                            value,
                            sender_sample: sample,
                        },
                    ));
                }
            }
        }
        if let Some((sender, receiver, payload)) = self.pending.pop_front() {
            return Action::Inject {
                sender,
                receiver,
                payload,
            };
        }
        self.inner.next_action(view)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::derive_params;
    use crate::sim::{run_trial, Protocol, TrialConfig};

    #[test]
    fn uniform_random_seeds_differ() {
        let params = derive_params(6, 1.0 / 3.0, 0.0, true).unwrap();
        let cfg = TrialConfig::new(Protocol::SharedCoin, params);
        let a = run_trial(&cfg, &AdversarySpec::UniformRandom, 1).unwrap();
        let b = run_trial(&cfg, &AdversarySpec::UniformRandom, 2).unwrap();
        // different seeds give different delivery orders, hence different
        // registries and report hashes
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn crash_f_corrupts_exactly_f_and_coin_still_terminates() {
        let params = derive_params(12, 0.2, 0.0, true).unwrap();
        assert_eq!(params.f, 1);
        let cfg = TrialConfig::new(Protocol::SharedCoin, params);
        let report = run_trial(&cfg, &AdversarySpec::CrashF, 5).unwrap();
        assert_eq!(report.corrupted, vec![0]);
        assert!(report.all_correct_terminal);
        assert!(!report.liveness_violation);
    }

    #[test]
    fn targeted_delay_still_delivers_eventually() {
        let params = derive_params(8, 1.0 / 3.0, 0.0, true).unwrap();
        let cfg = TrialConfig::new(Protocol::SharedCoin, params);
        let spec = AdversarySpec::TargetedDelay { victims: vec![0, 1] };
        let report = run_trial(&cfg, &spec, 3).unwrap();
        assert!(report.all_correct_terminal);
        assert!(!report.liveness_violation);
    }

    #[test]
    fn min_value_suppressor_corrupts_only_within_budget() {
        let params = derive_params(12, 0.2, 0.0, true).unwrap();
        let cfg = TrialConfig::new(Protocol::SharedCoin, params);
        let report = run_trial(&cfg, &AdversarySpec::MinValueSuppressor, 11).unwrap();
        assert!(report.corrupted.len() <= params.f as usize);
        assert!(report.all_correct_terminal);
    }
}
