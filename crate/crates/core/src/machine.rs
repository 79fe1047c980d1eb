//! Shared plumbing for the protocol state machines: sender sets, committee
//! lookup cache, audit counters, and the machine dispatch enum the simulator
//! drives.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agreement::BaMachine;
use crate::approver::ApproverMachine;
use crate::coin::CoinMachine;
use crate::crypto::{ProcessId, Registry};
use crate::params::Parameters;
use crate::whp_coin::WhpCoinMachine;
use crate::wire::{committee_string, Payload, Role, StageCtx, Value, ValueSet};

/// Distinct-sender set over process ids below `n`, with O(1) insert.
#[derive(Debug, Clone)]
pub struct IdSet {
    bits: Vec<u64>,
    count: u32,
}

impl IdSet {
    pub fn new(n: u32) -> IdSet {
        IdSet {
            bits: vec![0; (n as usize + 63) / 64],
            count: 0,
        }
    }

    /// Inserts `id`; returns false if it was already present.
    pub fn insert(&mut self, id: ProcessId) -> bool {
        let (word, bit) = (id as usize / 64, id as usize % 64);
        let mask = 1u64 << bit;
        if self.bits[word] & mask != 0 {
            return false;
        }
        self.bits[word] |= mask;
        self.count += 1;
        true
    }

    pub fn contains(&self, id: ProcessId) -> bool {
        let (word, bit) = (id as usize / 64, id as usize % 64);
        self.bits.get(word).is_some_and(|w| w & (1 << bit) != 0)
    }

    pub fn count(&self) -> u32 {
        self.count
    }

    /// Sorted member list; used for instrumentation snapshots.
    pub fn ids(&self) -> Vec<ProcessId> {
        let mut out = Vec::with_capacity(self.count as usize);
        for (w, &word) in self.bits.iter().enumerate() {
            let mut word = word;
            while word != 0 {
                let bit = word.trailing_zeros();
                out.push((w * 64) as u32 + bit);
                word &= word - 1;
            }
        }
        out
    }
}

/// One sampled committee: the full membership vector (oracle side) plus its
/// identity for reports.
#[derive(Debug)]
pub struct CommitteeInfo {
    pub tag: String,
    pub role_label: String,
    pub ctx: StageCtx,
    pub string: Vec<u8>,
    pub members: Vec<bool>,
    pub size: u32,
}

impl CommitteeInfo {
    pub fn member_ids(&self) -> impl Iterator<Item = ProcessId> + '_ {
        self.members
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| i as u32)
    }
}

/// Lazily computed committee memberships for one trial, keyed by the
/// committee string. Machines consult it for their own membership bit; the
/// report assembler reads back every committee the trial touched.
#[derive(Debug, Default)]
pub struct CommitteeCache {
    map: HashMap<Vec<u8>, Arc<CommitteeInfo>>,
}

impl CommitteeCache {
    pub fn get(
        &mut self,
        registry: &Registry,
        lambda: f64,
        role: Role,
        ctx: StageCtx,
    ) -> Arc<CommitteeInfo> {
        let string = committee_string(role, ctx);
        if let Some(info) = self.map.get(&string) {
            return info.clone();
        }
        let members = registry.committee_members(&string, lambda);
        let size = members.iter().filter(|&&m| m).count() as u32;
        let role_label = role_tag(role);
        let tag = format!(
            "{}@i{}r{}{:?}",
            role_label, ctx.instance, ctx.round, ctx.stage
        );
        let info = Arc::new(CommitteeInfo {
            tag,
            role_label,
            ctx,
            string: string.clone(),
            members,
            size,
        });
        self.map.insert(string, info.clone());
        info
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<CommitteeInfo>> {
        self.map.values()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

fn role_tag(role: Role) -> String {
    match role {
        Role::CoinFirst => "FIRST".into(),
        Role::CoinSecond => "SECOND".into(),
        Role::Init => "INIT".into(),
        Role::Echo(v) => format!("ECHO.{}", v.byte()),
        Role::Ok => "OK".into(),
    }
}

/// Per-trial counters for messages that were dropped or ignored. Validation
/// failures never abort a run; they land here.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditCounters {
    pub invalid_vrf: u64,
    pub invalid_sample: u64,
    pub non_member_sender: u64,
    pub invalid_signature: u64,
    pub invalid_ok_proof: u64,
    pub duplicate_sender: u64,
    pub stale_or_unroutable: u64,
    pub wrong_domain: u64,
}

impl AuditCounters {
    pub fn merge(&mut self, other: &AuditCounters) {
        self.invalid_vrf += other.invalid_vrf;
        self.invalid_sample += other.invalid_sample;
        self.non_member_sender += other.non_member_sender;
        self.invalid_signature += other.invalid_signature;
        self.invalid_ok_proof += other.invalid_ok_proof;
        self.duplicate_sender += other.duplicate_sender;
        self.stale_or_unroutable += other.stale_or_unroutable;
        self.wrong_domain += other.wrong_domain;
    }
}

/// Everything a machine needs from its host to take a step.
pub struct MachineCtx<'a> {
    pub me: ProcessId,
    pub registry: &'a Registry,
    pub params: &'a Parameters,
    pub committees: &'a mut CommitteeCache,
    pub audit: &'a mut AuditCounters,
}

impl MachineCtx<'_> {
    /// Membership bit of `pid` in the committee for (role, ctx).
    pub fn is_member(&mut self, pid: ProcessId, role: Role, ctx: StageCtx) -> bool {
        self.committees
            .get(self.registry, self.params.lambda, role, ctx)
            .members[pid as usize]
    }
}

/// Local completions surfaced by a machine step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MachineEvent {
    CoinReturned { ctx: StageCtx, bit: u8 },
    /// Threshold reached while the candidate slot was still empty; surfaced
    /// as a fault instead of fabricating a bit.
    CoinNoValue { ctx: StageCtx },
    ApproverReturned { ctx: StageCtx, values: ValueSet },
    Decided { value: Value, round: u64 },
}

/// Result of one machine step: messages to broadcast plus local events.
#[derive(Debug, Default)]
pub struct StepOut {
    pub broadcasts: Vec<Payload>,
    pub events: Vec<MachineEvent>,
}

impl StepOut {
    pub fn none() -> StepOut {
        StepOut::default()
    }

    pub fn absorb(&mut self, mut other: StepOut) {
        self.broadcasts.append(&mut other.broadcasts);
        self.events.append(&mut other.events);
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum MachineError {
    #[error("protocol instance already started")]
    AlreadyStarted,
    #[error("input {0:?} outside the accepted domain")]
    BadInput(Value),
    #[error("protocol requires an input value")]
    MissingInput,
}

/// One process's protocol instance, dispatched by experiment kind.
#[derive(Debug)]
pub enum ProcessMachine {
    SharedCoin(CoinMachine),
    WhpCoin(WhpCoinMachine),
    Approver(ApproverMachine),
    Agreement(BaMachine),
}

impl ProcessMachine {
    pub fn start(
        &mut self,
        input: Option<Value>,
        mctx: &mut MachineCtx,
    ) -> Result<StepOut, MachineError> {
        match self {
            ProcessMachine::SharedCoin(m) => m.start(mctx),
            ProcessMachine::WhpCoin(m) => m.start(mctx),
            ProcessMachine::Approver(m) => m.start(input.ok_or(MachineError::MissingInput)?, mctx),
            ProcessMachine::Agreement(m) => m.start(input.ok_or(MachineError::MissingInput)?, mctx),
        }
    }

    pub fn on_payload(&mut self, sender: ProcessId, payload: &Payload, mctx: &mut MachineCtx) -> StepOut {
        match self {
            ProcessMachine::SharedCoin(m) => m.on_payload(sender, payload, mctx),
            ProcessMachine::WhpCoin(m) => m.on_payload(sender, payload, mctx),
            ProcessMachine::Approver(m) => m.on_payload(sender, payload, mctx),
            ProcessMachine::Agreement(m) => m.on_payload(sender, payload, mctx),
        }
    }

    /// True once the process has produced its final output for the trial.
    pub fn is_terminal(&self) -> bool {
        match self {
            ProcessMachine::SharedCoin(m) => m.output().is_some(),
            ProcessMachine::WhpCoin(m) => m.is_terminal(),
            ProcessMachine::Approver(m) => m.result().is_some(),
            ProcessMachine::Agreement(m) => m.decision().is_some(),
        }
    }
}
