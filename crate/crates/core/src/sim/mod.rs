//! Deterministic discrete-event asynchronous network with a pluggable
//! scheduling adversary.
//!
//! A trial drives one protocol instance across `n` process state machines.
//! The adversary picks every delivery, may corrupt up to `f` processes, and
//! controls the sends of corrupted processes by injecting envelopes. It can
//! read metadata of every envelope but never the payload of an in-flight
//! message from a correct sender, and it cannot drop or alter anything a
//! process sent while it was still correct.
//!
//! Trials are deterministic in (config, adversary, seed): identical runs
//! produce byte-identical reports.

pub mod adversary;
pub mod clock;
pub mod report;
pub mod trace;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agreement::BaMachine;
use crate::approver::ApproverMachine;
use crate::coin::CoinMachine;
use crate::crypto::{setup_registry, ProcessId, Registry, SampleProof, Signature, VrfOutput};
use crate::machine::{
    AuditCounters, CommitteeCache, MachineCtx, MachineEvent, ProcessMachine, StepOut,
};
use crate::params::Parameters;
use crate::whp_coin::WhpCoinMachine;
use crate::wire::{
    committee_string, echo_sign_bytes, MsgKind, Payload, Role, Stage, StageCtx, Value,
};

use self::adversary::{Action, Adversary, AdversarySpec};
use self::clock::{ProcClock, SparseClock};
use self::report::TrialReport;
use self::trace::TraceWriter;

/// Which protocol a trial runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    SharedCoin,
    WhpCoin,
    Approver,
    Agreement,
}

/// How per-process input values are assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputAssignment {
    AllZero,
    AllOne,
    AllBot,
    SplitZeroOne,
    SplitZeroBot,
    SplitOneBot,
    /// Seeded pseudorandom binary inputs.
    Random,
    /// Three distinct values; rejected for every protocol (kept to exercise
    /// the at-most-two-values validation).
    ThreeWay,
}

impl InputAssignment {
    pub fn value_for(self, pid: ProcessId, n: u32, seed: u64) -> Value {
        match self {
            InputAssignment::AllZero => Value::Zero,
            InputAssignment::AllOne => Value::One,
            InputAssignment::AllBot => Value::Bot,
            InputAssignment::SplitZeroOne => {
                if pid < n / 2 {
                    Value::Zero
                } else {
                    Value::One
                }
            }
            InputAssignment::SplitZeroBot => {
                if pid < n / 2 {
                    Value::Zero
                } else {
                    Value::Bot
                }
            }
            InputAssignment::SplitOneBot => {
                if pid < n / 2 {
                    Value::One
                } else {
                    Value::Bot
                }
            }
            InputAssignment::Random => {
                let h = crate::harness::stats::mix64(seed ^ 0x9e37_79b9_7f4a_7c15, pid as u64);
                Value::from_bit((h & 1) as u8)
            }
            InputAssignment::ThreeWay => match pid % 3 {
                0 => Value::Zero,
                1 => Value::One,
                _ => Value::Bot,
            },
        }
    }

    fn binary_only(self) -> bool {
        matches!(
            self,
            InputAssignment::AllZero
                | InputAssignment::AllOne
                | InputAssignment::SplitZeroOne
                | InputAssignment::Random
        )
    }

    fn distinct_values(self) -> usize {
        match self {
            InputAssignment::AllZero | InputAssignment::AllOne | InputAssignment::AllBot => 1,
            InputAssignment::ThreeWay => 3,
            _ => 2,
        }
    }
}

/// Full description of one trial, minus the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub protocol: Protocol,
    pub params: Parameters,
    pub inputs: InputAssignment,
    /// Namespace for committee strings; distinct concurrent instances must
    /// differ here.
    pub instance: u64,
    /// Round tag for standalone coin trials.
    pub round: u64,
    /// Agreement rounds after which a process gives up.
    pub round_cap: u64,
    /// Event budget = factor x expected message count.
    pub budget_factor: u64,
    /// Keep delivering after all correct processes finished, so phase
    /// tables complete (coin trials).
    pub run_to_quiescence: bool,
    /// Capture per-process outputs in the report.
    pub detail: bool,
}

impl TrialConfig {
    pub fn new(protocol: Protocol, params: Parameters) -> TrialConfig {
        TrialConfig {
            protocol,
            params,
            inputs: InputAssignment::AllZero,
            instance: 0,
            round: 0,
            round_cap: 64,
            budget_factor: 10,
            run_to_quiescence: matches!(protocol, Protocol::SharedCoin | Protocol::WhpCoin),
            detail: false,
        }
    }

    /// Expected envelope count, the base of the event budget.
    pub fn expected_messages(&self) -> u64 {
        let n = self.params.n as u64;
        let lam = self.params.lambda.ceil() as u64 + 1;
        match self.protocol {
            Protocol::SharedCoin => 2 * n * n,
            Protocol::WhpCoin => 2 * lam * n,
            Protocol::Approver => 5 * lam * n,
            Protocol::Agreement => 12 * lam * n * self.round_cap.max(1),
        }
    }

    fn validate(&self) -> Result<(), TrialError> {
        match self.protocol {
            Protocol::Agreement => {
                if !self.inputs.binary_only() {
                    return Err(TrialError::InvalidInputRule(
                        "agreement inputs must be binary".into(),
                    ));
                }
            }
            Protocol::Approver => {
                if self.inputs.distinct_values() > 2 {
                    return Err(TrialError::InvalidInputRule(
                        "correct processes may invoke the approver with at most 2 distinct values"
                            .into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TrialError {
    #[error("invalid input rule: {0}")]
    InvalidInputRule(String),
    #[error("adversary bug: {0}")]
    AdversaryBug(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    InFlight,
    Delivered,
    Dropped,
}

/// Shared per-broadcast data; the `n` envelopes of one broadcast point here.
#[derive(Debug)]
pub struct Template {
    pub sender: ProcessId,
    pub payload: Arc<Payload>,
    pub kind: MsgKind,
    pub ctx: StageCtx,
    pub words: u32,
    pub stamp: Arc<SparseClock>,
    pub depth: u32,
    pub valid: bool,
    pub sender_corrupted_at_send: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct Envelope {
    pub template: u32,
    pub receiver: ProcessId,
    pub status: Status,
}

/// Envelope metadata visible to the adversary.
#[derive(Debug, Clone, Copy)]
pub struct EnvelopeMeta {
    pub id: u64,
    pub sender: ProcessId,
    pub receiver: ProcessId,
    pub kind: MsgKind,
    pub ctx: StageCtx,
    pub words: u32,
    pub status: Status,
    pub sender_was_corrupted: bool,
}

pub struct Trial {
    pub(crate) cfg: TrialConfig,
    pub(crate) seed: u64,
    pub(crate) registry: Registry,
    pub(crate) machines: Vec<ProcessMachine>,
    pub(crate) corrupted: Vec<bool>,
    pub(crate) corrupted_order: Vec<ProcessId>,
    pub(crate) clocks: Vec<ProcClock>,
    pub(crate) templates: Vec<Template>,
    pub(crate) envelopes: Vec<Envelope>,
    in_flight: Vec<u64>,
    in_flight_pos: Vec<u32>, // env id -> pool index + 1
    pub(crate) committees: CommitteeCache,
    pub(crate) audit: AuditCounters,
    pub(crate) words_sent: u64,
    pub(crate) events: u64,
    budget: u64,
    max_depth_delivered: u32,
    pub(crate) duration: u32,
    terminal: Vec<bool>,
    remaining_correct_nonterminal: u32,
    pub(crate) liveness_violation: bool,
    trace: Option<TraceWriter>,
}

impl Trial {
    fn new(cfg: &TrialConfig, seed: u64, trace: Option<TraceWriter>) -> Result<Trial, TrialError> {
        cfg.validate()?;
        let n = cfg.params.n;
        let registry = setup_registry(n, seed).expect("n >= 4");
        let machines = (0..n)
            .map(|pid| {
                let ctx = StageCtx::standalone(cfg.instance, cfg.round);
                match cfg.protocol {
                    Protocol::SharedCoin => ProcessMachine::SharedCoin(CoinMachine::new(
                        pid,
                        ctx,
                        n,
                        cfg.params.f,
                    )),
                    Protocol::WhpCoin => {
                        ProcessMachine::WhpCoin(WhpCoinMachine::new(pid, ctx, n))
                    }
                    Protocol::Approver => {
                        ProcessMachine::Approver(ApproverMachine::new(pid, ctx, n))
                    }
                    Protocol::Agreement => ProcessMachine::Agreement(BaMachine::new(
                        pid,
                        cfg.instance,
                        n,
                        cfg.round_cap,
                    )),
                }
            })
            .collect();
        let budget = cfg
            .budget_factor
            .saturating_mul(cfg.expected_messages() + (cfg.params.f as u64 + 1) * n as u64);
        Ok(Trial {
            cfg: cfg.clone(),
            seed,
            registry,
            machines,
            corrupted: vec![false; n as usize],
            corrupted_order: Vec::new(),
            clocks: (0..n).map(|_| ProcClock::default()).collect(),
            templates: Vec::new(),
            envelopes: Vec::new(),
            in_flight: Vec::new(),
            in_flight_pos: Vec::new(),
            committees: CommitteeCache::default(),
            audit: AuditCounters::default(),
            words_sent: 0,
            events: 0,
            budget,
            max_depth_delivered: 0,
            duration: 0,
            terminal: vec![false; n as usize],
            remaining_correct_nonterminal: n,
            liveness_violation: false,
            trace,
        })
    }

    pub fn n(&self) -> u32 {
        self.cfg.params.n
    }

    fn mctx(&mut self, me: ProcessId) -> MachineCtx<'_> {
        MachineCtx {
            me,
            registry: &self.registry,
            params: &self.cfg.params,
            committees: &mut self.committees,
            audit: &mut self.audit,
        }
    }

    fn start_all(&mut self) {
        for pid in 0..self.n() {
            let input = match self.cfg.protocol {
                Protocol::SharedCoin | Protocol::WhpCoin => None,
                _ => Some(self.cfg.inputs.value_for(pid, self.n(), self.seed)),
            };
            let machine = &mut self.machines[pid as usize];
            // split borrows: machine step needs the rest of the trial
            let step = {
                let mut mctx = MachineCtx {
                    me: pid,
                    registry: &self.registry,
                    params: &self.cfg.params,
                    committees: &mut self.committees,
                    audit: &mut self.audit,
                };
                machine
                    .start(input, &mut mctx)
                    .expect("fresh machines start once")
            };
            self.absorb_step(pid, step);
        }
    }

    fn absorb_step(&mut self, pid: ProcessId, step: StepOut) {
        for payload in step.broadcasts {
            self.broadcast(pid, payload);
        }
        for event in step.events {
            self.on_machine_event(pid, event);
        }
        if !self.terminal[pid as usize]
            && !self.corrupted[pid as usize]
            && self.machines[pid as usize].is_terminal()
        {
            self.terminal[pid as usize] = true;
            self.remaining_correct_nonterminal -= 1;
            self.duration = self.max_depth_delivered;
        }
    }

    fn on_machine_event(&mut self, _pid: ProcessId, _event: MachineEvent) {
        // Terminal bookkeeping happens in absorb_step; events are also
        // visible to tests through machine accessors.
    }

    /// Creates the n envelopes of one broadcast.
    fn broadcast(&mut self, sender: ProcessId, payload: Payload) {
        let (stamp, depth) = self.clocks[sender as usize].stamp_send(sender);
        let valid = validate_payload(
            &payload,
            sender,
            &self.registry,
            &self.cfg.params,
            &mut self.committees,
            &mut self.audit,
        );
        debug_assert!(valid, "correct machines only emit valid payloads");
        let corrupted = self.corrupted[sender as usize];
        if !corrupted {
            self.words_sent += payload.word_cost() as u64 * self.n() as u64;
        }
        self.push_template_envelopes(sender, payload, stamp, depth, valid, corrupted, None);
    }

    fn push_template_envelopes(
        &mut self,
        sender: ProcessId,
        payload: Payload,
        stamp: Arc<SparseClock>,
        depth: u32,
        valid: bool,
        sender_corrupted: bool,
        single_receiver: Option<ProcessId>,
    ) {
        let template_id = self.templates.len() as u32;
        self.templates.push(Template {
            sender,
            kind: payload.kind(),
            ctx: payload.ctx(),
            words: payload.word_cost(),
            payload: Arc::new(payload),
            stamp,
            depth,
            valid,
            sender_corrupted_at_send: sender_corrupted,
        });
        let receivers: Vec<ProcessId> = match single_receiver {
            Some(r) => vec![r],
            None => (0..self.n()).collect(),
        };
        for r in receivers {
            let id = self.envelopes.len() as u64;
            self.envelopes.push(Envelope {
                template: template_id,
                receiver: r,
                status: Status::InFlight,
            });
            self.in_flight_pos.push(self.in_flight.len() as u32 + 1);
            self.in_flight.push(id);
        }
    }

    fn pool_remove(&mut self, id: u64) {
        let pos = self.in_flight_pos[id as usize] as usize - 1;
        let last = *self.in_flight.last().unwrap();
        self.in_flight.swap_remove(pos);
        if pos < self.in_flight.len() {
            self.in_flight_pos[last as usize] = pos as u32 + 1;
        }
        self.in_flight_pos[id as usize] = 0;
    }

    pub fn is_in_flight(&self, id: u64) -> bool {
        (id as usize) < self.in_flight_pos.len() && self.in_flight_pos[id as usize] != 0
    }

    pub fn meta(&self, id: u64) -> Option<EnvelopeMeta> {
        let env = self.envelopes.get(id as usize)?;
        let t = &self.templates[env.template as usize];
        Some(EnvelopeMeta {
            id,
            sender: t.sender,
            receiver: env.receiver,
            kind: t.kind,
            ctx: t.ctx,
            words: t.words,
            status: env.status,
            sender_was_corrupted: t.sender_corrupted_at_send,
        })
    }

    fn apply(&mut self, action: Action) -> Result<(), TrialError> {
        match action {
            Action::Deliver(id) => self.apply_deliver(id),
            Action::Corrupt(pid) => self.apply_corrupt(pid),
            Action::Inject {
                sender,
                receiver,
                payload,
            } => self.apply_inject(sender, receiver, payload),
            Action::Drop(id) => self.apply_drop(id),
            Action::Pass => {
                if self.in_flight.is_empty() {
                    Ok(())
                } else {
                    Err(TrialError::AdversaryBug(
                        "pass while envelopes are in flight".into(),
                    ))
                }
            }
        }
    }

    fn apply_deliver(&mut self, id: u64) -> Result<(), TrialError> {
        if !self.is_in_flight(id) {
            return Err(TrialError::AdversaryBug(format!(
                "deliver of envelope {id} that is not in flight"
            )));
        }
        self.pool_remove(id);
        let env = self.envelopes[id as usize];
        self.envelopes[id as usize].status = Status::Delivered;
        let (stamp, depth, valid, sender) = {
            let t = &self.templates[env.template as usize];
            (t.stamp.clone(), t.depth, t.valid, t.sender)
        };
        if let Some(w) = &mut self.trace {
            let t = &self.templates[env.template as usize];
            w.deliver(self.events, id, t, env.receiver);
        }
        let receiver = env.receiver;
        self.clocks[receiver as usize].on_receive(&stamp, depth);
        self.max_depth_delivered = self.max_depth_delivered.max(depth);
        if self.corrupted[receiver as usize] || !valid {
            return Ok(());
        }
        let step = {
            let machine = &mut self.machines[receiver as usize];
            let mut mctx = MachineCtx {
                me: receiver,
                registry: &self.registry,
                params: &self.cfg.params,
                committees: &mut self.committees,
                audit: &mut self.audit,
            };
            machine.on_payload(sender, &self.templates[env.template as usize].payload.clone(), &mut mctx)
        };
        self.absorb_step(receiver, step);
        Ok(())
    }

    fn apply_corrupt(&mut self, pid: ProcessId) -> Result<(), TrialError> {
        if pid >= self.n() {
            return Err(TrialError::AdversaryBug(format!("corrupt of unknown {pid}")));
        }
        if self.corrupted[pid as usize] {
            return Err(TrialError::AdversaryBug(format!("{pid} already corrupted")));
        }
        if self.corrupted_order.len() as u32 >= self.cfg.params.f {
            return Err(TrialError::AdversaryBug(format!(
                "corruption budget f = {} exhausted",
                self.cfg.params.f
            )));
        }
        self.corrupted[pid as usize] = true;
        self.corrupted_order.push(pid);
        if !self.terminal[pid as usize] {
            self.remaining_correct_nonterminal -= 1;
        }
        if let Some(w) = &mut self.trace {
            w.corrupt(self.events, pid);
        }
        Ok(())
    }

    fn apply_inject(
        &mut self,
        sender: ProcessId,
        receiver: ProcessId,
        payload: Payload,
    ) -> Result<(), TrialError> {
        if sender >= self.n() || receiver >= self.n() {
            return Err(TrialError::AdversaryBug("inject with unknown process".into()));
        }
        if !self.corrupted[sender as usize] {
            return Err(TrialError::AdversaryBug(format!(
                "inject from uncorrupted sender {sender}"
            )));
        }
        let (stamp, depth) = self.clocks[sender as usize].stamp_send(sender);
        let valid = validate_payload(
            &payload,
            sender,
            &self.registry,
            &self.cfg.params,
            &mut self.committees,
            &mut self.audit,
        );
        if let Some(w) = &mut self.trace {
            w.inject(self.events, sender, receiver, &payload);
        }
        // Byzantine words are never counted.
        self.push_template_envelopes(sender, payload, stamp, depth, valid, true, Some(receiver));
        Ok(())
    }

    fn apply_drop(&mut self, id: u64) -> Result<(), TrialError> {
        if !self.is_in_flight(id) {
            return Err(TrialError::AdversaryBug(format!(
                "drop of envelope {id} that is not in flight"
            )));
        }
        let env = self.envelopes[id as usize];
        if !self.templates[env.template as usize].sender_corrupted_at_send {
            return Err(TrialError::AdversaryBug(
                "drop of an envelope sent by a correct process".into(),
            ));
        }
        self.pool_remove(id);
        self.envelopes[id as usize].status = Status::Dropped;
        if let Some(w) = &mut self.trace {
            w.drop(self.events, id);
        }
        Ok(())
    }

    fn all_correct_terminal(&self) -> bool {
        self.remaining_correct_nonterminal == 0
    }
}

/// Confined adversary interface over a trial.
///
/// Payload contents are reachable only for delivered envelopes and through
/// the corrupted-process accessors; there is no way to read an in-flight
/// correct message.
pub struct View<'a> {
    t: &'a Trial,
}

impl<'a> View<'a> {
    pub fn n(&self) -> u32 {
        self.t.n()
    }

    pub fn params(&self) -> &Parameters {
        &self.t.cfg.params
    }

    pub fn protocol(&self) -> Protocol {
        self.t.cfg.protocol
    }

    pub fn events(&self) -> u64 {
        self.t.events
    }

    pub fn is_corrupted(&self, pid: ProcessId) -> bool {
        self.t.corrupted.get(pid as usize).copied().unwrap_or(false)
    }

    pub fn corruption_budget_left(&self) -> u32 {
        self.t.cfg.params.f - self.t.corrupted_order.len() as u32
    }

    pub fn envelope_count(&self) -> u64 {
        self.t.envelopes.len() as u64
    }

    pub fn meta(&self, id: u64) -> Option<EnvelopeMeta> {
        self.t.meta(id)
    }

    pub fn in_flight_len(&self) -> usize {
        self.t.in_flight.len()
    }

    pub fn in_flight_at(&self, idx: usize) -> u64 {
        self.t.in_flight[idx]
    }

    pub fn is_in_flight(&self, id: u64) -> bool {
        self.t.is_in_flight(id)
    }

    /// Full payload of a **delivered** envelope; `None` while in flight.
    pub fn delivered_payload(&self, id: u64) -> Option<&'a Payload> {
        let env = self.t.envelopes.get(id as usize)?;
        if env.status != Status::Delivered {
            return None;
        }
        Some(&self.t.templates[env.template as usize].payload)
    }

    /// VRF evaluation with a corrupted process's key.
    pub fn corrupted_vrf(&self, pid: ProcessId, input: &[u8]) -> Option<VrfOutput> {
        if !self.is_corrupted(pid) {
            return None;
        }
        self.t.registry.vrf_eval(pid, input).ok()
    }

    /// Committee self-sampling with a corrupted process's key.
    pub fn corrupted_sample(&self, pid: ProcessId, role: Role, ctx: StageCtx) -> Option<SampleProof> {
        if !self.is_corrupted(pid) {
            return None;
        }
        let s = committee_string(role, ctx);
        self.t.registry.sample(pid, &s, self.t.cfg.params.lambda).ok()
    }

    /// Signature with a corrupted process's key.
    pub fn corrupted_sign(&self, pid: ProcessId, payload: &[u8]) -> Option<Signature> {
        if !self.is_corrupted(pid) {
            return None;
        }
        self.t.registry.sign(pid, payload).ok()
    }

    /// Internal state of a corrupted process.
    pub fn corrupted_machine(&self, pid: ProcessId) -> Option<&'a ProcessMachine> {
        if !self.is_corrupted(pid) {
            return None;
        }
        self.t.machines.get(pid as usize)
    }

    /// Signed echo bytes helper for crafting Byzantine echoes.
    pub fn echo_bytes(&self, ctx: StageCtx, value: Value) -> Vec<u8> {
        echo_sign_bytes(ctx, value)
    }
}

/// Validates one payload against the crypto oracles; audit counters record
/// the reason for a rejection. Receivers never see rejected messages.
pub fn validate_payload(
    payload: &Payload,
    sender: ProcessId,
    registry: &Registry,
    params: &Parameters,
    committees: &mut CommitteeCache,
    audit: &mut AuditCounters,
) -> bool {
    let ctx = payload.ctx();
    let coin_input = |ctx: StageCtx| crate::wire::coin_vrf_input(ctx.instance, ctx.round);
    let check_sample =
        |committees: &mut CommitteeCache, audit: &mut AuditCounters, role: Role, pid: ProcessId, proof: &SampleProof| {
            let info = committees.get(registry, params.lambda, role, ctx);
            if !info.members[pid as usize] {
                audit.non_member_sender += 1;
                return false;
            }
            let s = committee_string(role, ctx);
            if !registry.committee_val(&s, params.lambda, pid, proof) {
                audit.invalid_sample += 1;
                return false;
            }
            true
        };
    match payload {
        Payload::CoinFirst { candidate, .. } => {
            if candidate.owner != sender {
                audit.invalid_vrf += 1;
                return false;
            }
            if !registry.vrf_verify(candidate.owner, &coin_input(ctx), &candidate.vrf) {
                audit.invalid_vrf += 1;
                return false;
            }
            true
        }
        Payload::CoinSecond { candidate, .. } => {
            if !registry.vrf_verify(candidate.owner, &coin_input(ctx), &candidate.vrf) {
                audit.invalid_vrf += 1;
                return false;
            }
            true
        }
        Payload::WhpFirst {
            candidate,
            sender_sample,
            ..
        } => {
            if candidate.owner != sender {
                audit.invalid_vrf += 1;
                return false;
            }
            if !registry.vrf_verify(candidate.owner, &coin_input(ctx), &candidate.vrf) {
                audit.invalid_vrf += 1;
                return false;
            }
            check_sample(committees, audit, Role::CoinFirst, sender, sender_sample)
        }
        Payload::WhpSecond {
            candidate,
            owner_sample,
            sender_sample,
            ..
        } => {
            if !registry.vrf_verify(candidate.owner, &coin_input(ctx), &candidate.vrf) {
                audit.invalid_vrf += 1;
                return false;
            }
            // the carried minimum must come from a FIRST-committee member
            if !check_sample(committees, audit, Role::CoinFirst, candidate.owner, owner_sample) {
                return false;
            }
            check_sample(committees, audit, Role::CoinSecond, sender, sender_sample)
        }
        Payload::Init {
            value: _,
            sender_sample,
            ..
        } => check_sample(committees, audit, Role::Init, sender, sender_sample),
        Payload::Echo {
            value,
            sender_sample,
            signature,
            ..
        } => {
            if !check_sample(committees, audit, Role::Echo(*value), sender, sender_sample) {
                return false;
            }
            if signature.signer != sender
                || !registry.verify_sig(signature, &echo_sign_bytes(ctx, *value))
            {
                audit.invalid_signature += 1;
                return false;
            }
            true
        }
        Payload::ApOk {
            value,
            sender_sample,
            endorsements,
            ..
        } => {
            if !check_sample(committees, audit, Role::Ok, sender, sender_sample) {
                return false;
            }
            if endorsements.len() != params.w as usize {
                audit.invalid_ok_proof += 1;
                return false;
            }
            let mut seen = crate::machine::IdSet::new(params.n);
            let echo_bytes = echo_sign_bytes(ctx, *value);
            let echo_string = committee_string(Role::Echo(*value), ctx);
            for e in endorsements {
                if !seen.insert(e.endorser)
                    || !registry.committee_val(&echo_string, params.lambda, e.endorser, &e.committee)
                    || e.signature.signer != e.endorser
                    || !registry.verify_sig(&e.signature, &echo_bytes)
                {
                    audit.invalid_ok_proof += 1;
                    return false;
                }
            }
            true
        }
    }
}

/// Runs one trial to completion and assembles its report.
pub fn run_trial(
    cfg: &TrialConfig,
    spec: &AdversarySpec,
    seed: u64,
) -> Result<TrialReport, TrialError> {
    run_trial_inner(cfg, &mut adversary::build(spec, seed), spec.name(), seed, None)
}

/// Like [`run_trial`], writing a replayable trace to `path`.
pub fn run_trial_traced(
    cfg: &TrialConfig,
    spec: &AdversarySpec,
    seed: u64,
    path: &std::path::Path,
) -> Result<TrialReport, TrialError> {
    let writer = TraceWriter::create(path, cfg, spec, seed).map_err(|e| TrialError::Io(e.to_string()))?;
    let report = run_trial_inner(cfg, &mut adversary::build(spec, seed), spec.name(), seed, Some(writer))?;
    trace::append_hash(path, &report.hash()).map_err(|e| TrialError::Io(e.to_string()))?;
    Ok(report)
}

pub(crate) fn run_trial_inner(
    cfg: &TrialConfig,
    adversary: &mut Box<dyn Adversary>,
    adversary_name: &str,
    seed: u64,
    trace: Option<TraceWriter>,
) -> Result<TrialReport, TrialError> {
    let mut trial = Trial::new(cfg, seed, trace)?;
    trial.start_all();
    loop {
        if trial.all_correct_terminal() && (!cfg.run_to_quiescence || trial.in_flight.is_empty()) {
            break;
        }
        if trial.events >= trial.budget {
            trial.liveness_violation = !trial.all_correct_terminal();
            break;
        }
        let action = adversary.next_action(&View { t: &trial });
        if matches!(action, Action::Pass) && trial.in_flight.is_empty() {
            // quiescent: nothing in flight and the adversary has nothing to
            // add, so no further progress is possible
            trial.liveness_violation = !trial.all_correct_terminal();
            if let Some(w) = &mut trial.trace {
                w.pass(trial.events);
            }
            break;
        }
        trial.apply(action)?;
        trial.events += 1;
    }
    if !trial.all_correct_terminal() {
        trial.liveness_violation = true;
    }
    if let Some(w) = &mut trial.trace {
        w.finish().map_err(|e| TrialError::Io(e.to_string()))?;
    }
    Ok(report::assemble(&mut trial, adversary_name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::derive_params;

    fn full_cfg(n: u32, protocol: Protocol) -> TrialConfig {
        let params = derive_params(n, 1.0 / 3.0, 0.0, true).unwrap();
        TrialConfig::new(protocol, params)
    }

    #[test]
    fn shared_coin_benign_trial_has_duration_two() {
        // two causal message layers: FIRST then SECOND
        let cfg = full_cfg(4, Protocol::SharedCoin);
        let report = run_trial(&cfg, &AdversarySpec::Fifo, 1).unwrap();
        assert_eq!(report.duration, 2);
        assert!(report.all_correct_terminal);
        assert!(!report.liveness_violation);
        // 4 processes x (FIRST + SECOND) x 4 receivers x 2 words
        assert_eq!(report.words_sent, 4 * 2 * 4 * 2);
    }

    #[test]
    fn deterministic_reports() {
        let cfg = full_cfg(5, Protocol::SharedCoin);
        let a = run_trial(&cfg, &AdversarySpec::UniformRandom, 7).unwrap();
        let b = run_trial(&cfg, &AdversarySpec::UniformRandom, 7).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = run_trial(&cfg, &AdversarySpec::UniformRandom, 8).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn zero_budget_flags_liveness() {
        let mut cfg = full_cfg(4, Protocol::SharedCoin);
        cfg.budget_factor = 0;
        let report = run_trial(&cfg, &AdversarySpec::Fifo, 1).unwrap();
        assert!(report.liveness_violation);
        assert!(!report.all_correct_terminal);
    }

    #[test]
    fn illegal_actions_abort_with_adversary_bug() {
        struct Outlaw(u32);
        impl Adversary for Outlaw {
            fn next_action(&mut self, _v: &View) -> Action {
                self.0 += 1;
                match self.0 {
                    1 => Action::Deliver(0),
                    2 => Action::Deliver(0), // second delivery of same id
                    _ => Action::Pass,
                }
            }
        }
        let cfg = full_cfg(4, Protocol::SharedCoin);
        let mut adv: Box<dyn Adversary> = Box::new(Outlaw(0));
        let err = run_trial_inner(&cfg, &mut adv, "outlaw", 1, None).unwrap_err();
        assert!(matches!(err, TrialError::AdversaryBug(_)));

        // corruption beyond budget: f = 0 in full participation at eps = 1/3
        struct Corruptor;
        impl Adversary for Corruptor {
            fn next_action(&mut self, _v: &View) -> Action {
                Action::Corrupt(0)
            }
        }
        let mut adv: Box<dyn Adversary> = Box::new(Corruptor);
        let err = run_trial_inner(&cfg, &mut adv, "corruptor", 1, None).unwrap_err();
        assert!(matches!(err, TrialError::AdversaryBug(_)));
    }

    #[test]
    fn in_flight_payloads_unreadable() {
        struct Peeker {
            checked: bool,
        }
        impl Adversary for Peeker {
            fn next_action(&mut self, v: &View) -> Action {
                if !self.checked {
                    self.checked = true;
                    // every envelope is still in flight: no payload readable
                    for id in 0..v.envelope_count() {
                        assert!(v.delivered_payload(id).is_none());
                        assert_eq!(v.meta(id).unwrap().status, Status::InFlight);
                    }
                    // and no crypto accessor works on uncorrupted processes
                    assert!(v.corrupted_vrf(0, b"x").is_none());
                    assert!(v
                        .corrupted_sample(0, Role::CoinFirst, StageCtx::standalone(0, 0))
                        .is_none());
                    assert!(v.corrupted_sign(0, b"x").is_none());
                    assert!(v.corrupted_machine(0).is_none());
                }
                if v.in_flight_len() > 0 {
                    let id = v.in_flight_at(0);
                    // after delivery the payload becomes visible
                    Action::Deliver(id)
                } else {
                    Action::Pass
                }
            }
        }
        let cfg = full_cfg(4, Protocol::SharedCoin);
        let mut adv: Box<dyn Adversary> = Box::new(Peeker { checked: false });
        let report = run_trial_inner(&cfg, &mut adv, "peeker", 3, None).unwrap();
        assert!(report.all_correct_terminal);
    }

    #[test]
    fn input_rules_validated() {
        let params = derive_params(64, 0.2, 0.0, true).unwrap();
        let mut cfg = TrialConfig::new(Protocol::Agreement, params);
        cfg.inputs = InputAssignment::SplitZeroBot;
        assert!(matches!(
            run_trial(&cfg, &AdversarySpec::Fifo, 1),
            Err(TrialError::InvalidInputRule(_))
        ));
        let mut cfg = TrialConfig::new(Protocol::Approver, params);
        cfg.inputs = InputAssignment::ThreeWay;
        assert!(matches!(
            run_trial(&cfg, &AdversarySpec::Fifo, 1),
            Err(TrialError::InvalidInputRule(_))
        ));
    }
}
