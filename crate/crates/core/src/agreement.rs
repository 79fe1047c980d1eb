//! Binary Byzantine agreement round loop.
//!
//! Each round: approve the current estimate; set the proposal to the
//! singleton result or bot; flip the committee coin; approve the proposal;
//! then decide on a non-bot singleton, adopt the coin on an all-bot result,
//! or adopt the non-bot member of a mixed result. The coin is invoked
//! immediately when the first approver returns, on local state alone, so no
//! invocation causally depends on another process's coin progress.
//!
//! A process keeps participating for one full round after it decides (so
//! slower processes still find live committees), then halts.

use std::collections::BTreeMap;

use crate::approver::ApproverMachine;
use crate::crypto::ProcessId;
use crate::machine::{MachineCtx, MachineError, MachineEvent, StepOut};
use crate::whp_coin::WhpCoinMachine;
use crate::wire::{Payload, Stage, StageCtx, Value, ValueSet};

#[derive(Debug)]
enum Sub {
    Approver(ApproverMachine),
    Coin(WhpCoinMachine),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Completed {
    Values(ValueSet),
    Bit(u8),
    NoValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Awaiting {
    FirstApprove,
    Coin,
    SecondApprove,
}

#[derive(Debug)]
pub struct BaMachine {
    me: ProcessId,
    n: u32,
    instance: u64,
    round_cap: u64,
    started: bool,
    halted: bool,
    est: Value,
    propose: Option<Value>,
    decision: Option<Value>,
    decision_round: Option<u64>,
    round: u64,
    awaiting: Awaiting,
    coin_bit: Option<u8>,
    subs: BTreeMap<StageCtx, Sub>,
    completed: BTreeMap<StageCtx, Completed>,
    safety_violation: bool,
    protocol_violation: bool,
    round_capped: bool,
}

impl BaMachine {
    pub fn new(me: ProcessId, instance: u64, n: u32, round_cap: u64) -> BaMachine {
        BaMachine {
            me,
            n,
            instance,
            round_cap,
            started: false,
            halted: false,
            est: Value::Zero,
            propose: None,
            decision: None,
            decision_round: None,
            round: 0,
            awaiting: Awaiting::FirstApprove,
            coin_bit: None,
            subs: BTreeMap::new(),
            completed: BTreeMap::new(),
            safety_violation: false,
            protocol_violation: false,
            round_capped: false,
        }
    }

    fn stage_ctx(&self, round: u64, stage: Stage) -> StageCtx {
        StageCtx {
            instance: self.instance,
            round,
            stage,
        }
    }

    pub fn start(&mut self, v: Value, mctx: &mut MachineCtx) -> Result<StepOut, MachineError> {
        if self.started {
            return Err(MachineError::AlreadyStarted);
        }
        if v == Value::Bot {
            return Err(MachineError::BadInput(v));
        }
        self.started = true;
        self.est = v;
        let mut out = StepOut::none();
        self.start_first_approve(&mut out, mctx);
        self.pump(&mut out, mctx);
        Ok(out)
    }

    pub fn on_payload(
        &mut self,
        sender: ProcessId,
        payload: &Payload,
        mctx: &mut MachineCtx,
    ) -> StepOut {
        let ctx = payload.ctx();
        if ctx.instance != self.instance
            || ctx.stage == Stage::Standalone
            || ctx.round >= self.round_cap
        {
            mctx.audit.stale_or_unroutable += 1;
            return StepOut::none();
        }
        let me = self.me;
        let n = self.n;
        let sub = self.subs.entry(ctx).or_insert_with(|| match ctx.stage {
            Stage::Coin => Sub::Coin(WhpCoinMachine::new(me, ctx, n)),
            _ => Sub::Approver(ApproverMachine::new(me, ctx, n)),
        });
        let step = match sub {
            Sub::Approver(a) => a.on_payload(sender, payload, mctx),
            Sub::Coin(c) => c.on_payload(sender, payload, mctx),
        };
        let mut out = StepOut {
            broadcasts: step.broadcasts,
            events: Vec::new(),
        };
        self.record_sub_events(step.events);
        self.pump(&mut out, mctx);
        out
    }

    fn record_sub_events(&mut self, events: Vec<MachineEvent>) {
        for e in events {
            match e {
                MachineEvent::ApproverReturned { ctx, values } => {
                    self.completed.insert(ctx, Completed::Values(values));
                }
                MachineEvent::CoinReturned { ctx, bit } => {
                    self.completed.insert(ctx, Completed::Bit(bit));
                }
                MachineEvent::CoinNoValue { ctx } => {
                    self.completed.insert(ctx, Completed::NoValue);
                }
                MachineEvent::Decided { .. } => {}
            }
        }
    }

    fn start_first_approve(&mut self, out: &mut StepOut, mctx: &mut MachineCtx) {
        let ctx = self.stage_ctx(self.round, Stage::FirstApprove);
        let est = self.est;
        self.start_approver(ctx, est, out, mctx);
        self.awaiting = Awaiting::FirstApprove;
    }

    fn start_approver(
        &mut self,
        ctx: StageCtx,
        input: Value,
        out: &mut StepOut,
        mctx: &mut MachineCtx,
    ) {
        let me = self.me;
        let n = self.n;
        let sub = self
            .subs
            .entry(ctx)
            .or_insert_with(|| Sub::Approver(ApproverMachine::new(me, ctx, n)));
        if let Sub::Approver(a) = sub {
            let step = a.start(input, mctx).expect("stage started once per round");
            out.broadcasts.extend(step.broadcasts);
            self.record_sub_events(step.events);
        }
    }

    fn start_coin(&mut self, ctx: StageCtx, out: &mut StepOut, mctx: &mut MachineCtx) {
        let me = self.me;
        let n = self.n;
        let sub = self
            .subs
            .entry(ctx)
            .or_insert_with(|| Sub::Coin(WhpCoinMachine::new(me, ctx, n)));
        if let Sub::Coin(c) = sub {
            let step = c.start(mctx).expect("coin started once per round");
            out.broadcasts.extend(step.broadcasts);
            self.record_sub_events(step.events);
        }
    }

    /// Advances the round pipeline as far as buffered completions allow.
    fn pump(&mut self, out: &mut StepOut, mctx: &mut MachineCtx) {
        while self.started && !self.halted {
            match self.awaiting {
                Awaiting::FirstApprove => {
                    let ctx = self.stage_ctx(self.round, Stage::FirstApprove);
                    let Some(Completed::Values(vals)) = self.completed.get(&ctx).copied() else {
                        break;
                    };
                    self.propose = Some(match vals.as_singleton() {
                        Some(Value::Bot) => {
                            // unreachable when estimates stay binary
                            self.protocol_violation = true;
                            Value::Bot
                        }
                        Some(v) => v,
                        None => Value::Bot,
                    });
                    self.coin_bit = None;
                    let cctx = self.stage_ctx(self.round, Stage::Coin);
                    self.start_coin(cctx, out, mctx);
                    self.awaiting = Awaiting::Coin;
                }
                Awaiting::Coin => {
                    let ctx = self.stage_ctx(self.round, Stage::Coin);
                    match self.completed.get(&ctx).copied() {
                        Some(Completed::Bit(b)) => {
                            self.coin_bit = Some(b);
                        }
                        Some(Completed::NoValue) => {
                            self.protocol_violation = true;
                            self.coin_bit = None;
                        }
                        _ => break,
                    }
                    let actx = self.stage_ctx(self.round, Stage::SecondApprove);
                    let propose = self.propose.expect("set when first approve returned");
                    self.start_approver(actx, propose, out, mctx);
                    self.awaiting = Awaiting::SecondApprove;
                }
                Awaiting::SecondApprove => {
                    let ctx = self.stage_ctx(self.round, Stage::SecondApprove);
                    let Some(Completed::Values(props)) = self.completed.get(&ctx).copied() else {
                        break;
                    };
                    self.finish_round(props, out);
                    if self.halted {
                        break;
                    }
                    self.start_first_approve(out, mctx);
                }
            }
        }
    }

    fn finish_round(&mut self, props: ValueSet, out: &mut StepOut) {
        let non_bot: Vec<Value> = props.iter().filter(|&v| v != Value::Bot).collect();
        if non_bot.len() >= 2 {
            // two distinct non-bot values: graded agreement was violated
            self.safety_violation = true;
        }
        match props.as_singleton() {
            Some(Value::Bot) => match self.coin_bit {
                Some(b) => self.est = Value::from_bit(b),
                None => {
                    // coin faulted and the fallback is needed: cannot proceed
                    self.protocol_violation = true;
                    self.halted = true;
                    return;
                }
            },
            Some(v) => {
                self.est = v;
                if self.decision.is_none() {
                    self.decision = Some(v);
                    self.decision_round = Some(self.round);
                    out.events.push(MachineEvent::Decided {
                        value: v,
                        round: self.round,
                    });
                }
            }
            None => {
                if let Some(&v) = non_bot.first() {
                    self.est = v;
                } else {
                    self.protocol_violation = true;
                }
            }
        }
        // one full helper round after deciding, then stop
        if let Some(dr) = self.decision_round {
            if self.round > dr {
                self.halted = true;
                return;
            }
        }
        self.round += 1;
        if self.round >= self.round_cap {
            self.round_capped = true;
            self.halted = true;
        }
    }

    pub fn decision(&self) -> Option<Value> {
        self.decision
    }

    pub fn decision_round(&self) -> Option<u64> {
        self.decision_round
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn estimate(&self) -> Value {
        self.est
    }

    pub fn halted(&self) -> bool {
        self.halted
    }

    pub fn safety_violation(&self) -> bool {
        self.safety_violation
    }

    pub fn protocol_violation(&self) -> bool {
        self.protocol_violation
    }

    pub fn round_capped(&self) -> bool {
        self.round_capped
    }

    /// Inputs handed to each approver stage this process started, for the
    /// two-distinct-values audit.
    pub fn approver_inputs(&self) -> Vec<(StageCtx, Value)> {
        self.subs
            .iter()
            .filter_map(|(ctx, sub)| match sub {
                Sub::Approver(a) => a.input().map(|v| (*ctx, v)),
                _ => None,
            })
            .collect()
    }
}
