//! Three-phase committee-based graded broadcast (INIT / ECHO / OK).
//!
//! INIT committee members broadcast their input. A value seen from B+1
//! distinct INIT senders is echoed by the members of that value's own echo
//! committee, signed. The first value to collect W echoes is OK'd by OK
//! committee members, carrying the W signed echoes as proof; each process
//! returns the set of values among the first W valid OK senders.
//!
//! Per-value echo committees keep process replaceability: a correct process
//! broadcasts at most one message in each committee role.

use crate::crypto::ProcessId;
use crate::machine::{IdSet, MachineCtx, MachineError, MachineEvent, StepOut};
use crate::wire::{
    committee_string, echo_sign_bytes, Endorsement, Payload, Role, StageCtx, Value, ValueSet,
};

const VALUES: [Value; 3] = [Value::Zero, Value::One, Value::Bot];

#[derive(Debug)]
pub struct ApproverMachine {
    ctx: StageCtx,
    me: ProcessId,
    started: bool,
    input: Option<Value>,
    init_senders: [IdSet; 3],
    echo_senders: [IdSet; 3],
    /// Earliest W valid echoes per value, kept for OK proofs.
    endorsements: [Vec<Endorsement>; 3],
    echoed: [bool; 3],
    ok_sent: bool,
    ok_senders: IdSet,
    /// First W distinct OK senders with their values, in arrival order.
    ok_pairs: Vec<(ProcessId, Value)>,
    result: Option<ValueSet>,
    /// Role-send counters; replaceability demands each stays <= 1.
    sends_per_role: [u32; 3],
}

impl ApproverMachine {
    pub fn new(me: ProcessId, ctx: StageCtx, n: u32) -> ApproverMachine {
        ApproverMachine {
            ctx,
            me,
            started: false,
            input: None,
            init_senders: [IdSet::new(n), IdSet::new(n), IdSet::new(n)],
            echo_senders: [IdSet::new(n), IdSet::new(n), IdSet::new(n)],
            endorsements: [Vec::new(), Vec::new(), Vec::new()],
            echoed: [false; 3],
            ok_sent: false,
            ok_senders: IdSet::new(n),
            ok_pairs: Vec::new(),
            result: None,
            sends_per_role: [0; 3],
        }
    }

    pub fn start(&mut self, input: Value, mctx: &mut MachineCtx) -> Result<StepOut, MachineError> {
        if self.started {
            return Err(MachineError::AlreadyStarted);
        }
        self.started = true;
        self.input = Some(input);
        let mut out = StepOut::none();
        if mctx.is_member(self.me, Role::Init, self.ctx) {
            let string = committee_string(Role::Init, self.ctx);
            let sender_sample = mctx
                .registry
                .sample(self.me, &string, mctx.params.lambda)
                .expect("own id is registered");
            self.sends_per_role[0] += 1;
            out.broadcasts.push(Payload::Init {
                ctx: self.ctx,
                value: input,
                sender_sample,
            });
        }
        out.absorb(self.fire_pending(mctx));
        Ok(out)
    }

    pub fn on_payload(
        &mut self,
        sender: ProcessId,
        payload: &Payload,
        mctx: &mut MachineCtx,
    ) -> StepOut {
        if payload.ctx() != self.ctx {
            mctx.audit.stale_or_unroutable += 1;
            return StepOut::none();
        }
        match payload {
            Payload::Init { value, .. } => {
                if self.init_senders[*value as usize].insert(sender) {
                    self.fire_pending(mctx)
                } else {
                    mctx.audit.duplicate_sender += 1;
                    StepOut::none()
                }
            }
            Payload::Echo {
                value,
                sender_sample,
                signature,
                ..
            } => {
                let v = *value as usize;
                if self.echo_senders[v].insert(sender) {
                    if self.endorsements[v].len() < mctx.params.w as usize {
                        self.endorsements[v].push(Endorsement {
                            endorser: sender,
                            committee: *sender_sample,
                            signature: *signature,
                        });
                    }
                    self.fire_pending(mctx)
                } else {
                    mctx.audit.duplicate_sender += 1;
                    StepOut::none()
                }
            }
            Payload::ApOk { value, .. } => {
                if self.ok_senders.insert(sender) {
                    if self.ok_pairs.len() < mctx.params.w as usize {
                        self.ok_pairs.push((sender, *value));
                    }
                    self.fire_pending(mctx)
                } else {
                    // a sender's second OK is ignored, not slashed
                    mctx.audit.duplicate_sender += 1;
                    StepOut::none()
                }
            }
            _ => {
                mctx.audit.stale_or_unroutable += 1;
                StepOut::none()
            }
        }
    }

    /// Fires every enabled threshold step. Nothing is sent or returned before
    /// the local invocation; `start` re-invokes this to flush thresholds that
    /// were crossed while listening.
    fn fire_pending(&mut self, mctx: &mut MachineCtx) -> StepOut {
        let mut out = StepOut::none();
        if !self.started {
            return out;
        }
        let b1 = mctx.params.b + 1;
        let w = mctx.params.w;

        for value in VALUES {
            let v = value as usize;
            if !self.echoed[v]
                && self.init_senders[v].count() >= b1
                && mctx.is_member(self.me, Role::Echo(value), self.ctx)
            {
                self.echoed[v] = true;
                self.sends_per_role[1] += 1;
                let string = committee_string(Role::Echo(value), self.ctx);
                let sender_sample = mctx
                    .registry
                    .sample(self.me, &string, mctx.params.lambda)
                    .expect("own id is registered");
                let signature = mctx
                    .registry
                    .sign(self.me, &echo_sign_bytes(self.ctx, value))
                    .expect("own id is registered");
                out.broadcasts.push(Payload::Echo {
                    ctx: self.ctx,
                    value,
                    sender_sample,
                    signature,
                });
            }
        }

        if !self.ok_sent {
            for value in VALUES {
                let v = value as usize;
                if self.echo_senders[v].count() >= w
                    && mctx.is_member(self.me, Role::Ok, self.ctx)
                {
                    self.ok_sent = true;
                    self.sends_per_role[2] += 1;
                    let string = committee_string(Role::Ok, self.ctx);
                    let sender_sample = mctx
                        .registry
                        .sample(self.me, &string, mctx.params.lambda)
                        .expect("own id is registered");
                    out.broadcasts.push(Payload::ApOk {
                        ctx: self.ctx,
                        value,
                        sender_sample,
                        endorsements: self.endorsements[v].clone(),
                    });
                    break;
                }
            }
        }

        if self.result.is_none() && self.ok_pairs.len() >= w as usize {
            let mut set = ValueSet::default();
            for &(_, v) in &self.ok_pairs {
                set.insert(v);
            }
            self.result = Some(set);
            out.events.push(MachineEvent::ApproverReturned {
                ctx: self.ctx,
                values: set,
            });
        }
        out
    }

    pub fn result(&self) -> Option<ValueSet> {
        self.result
    }

    /// The W (sender, value) pairs behind the result.
    pub fn ok_pairs(&self) -> &[(ProcessId, Value)] {
        &self.ok_pairs
    }

    pub fn input(&self) -> Option<Value> {
        self.input
    }

    /// Broadcast counts per committee role (INIT, ECHO, OK); process
    /// replaceability requires each to stay at most one.
    pub fn sends_per_role(&self) -> [u32; 3] {
        self.sends_per_role
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{setup_registry, Registry};
    use crate::machine::{AuditCounters, CommitteeCache};
    use crate::params::{derive_params, Parameters};

    struct Host {
        registry: Registry,
        params: Parameters,
        cache: CommitteeCache,
        audit: AuditCounters,
    }

    impl Host {
        // n = 8 full participation: everyone in every committee, W = 8 - f,
        // B = f, echo threshold B + 1.
        fn full(n: u32, f_eps: f64, seed: u64) -> Host {
            Host {
                registry: setup_registry(n, seed).unwrap(),
                params: derive_params(n, f_eps, 0.0, true).unwrap(),
                cache: CommitteeCache::default(),
                audit: AuditCounters::default(),
            }
        }

        fn ctx(&mut self, me: ProcessId) -> MachineCtx<'_> {
            MachineCtx {
                me,
                registry: &self.registry,
                params: &self.params,
                committees: &mut self.cache,
                audit: &mut self.audit,
            }
        }
    }

    fn init_payload(host: &Host, ctx: StageCtx, sender: ProcessId, value: Value) -> Payload {
        let string = committee_string(Role::Init, ctx);
        Payload::Init {
            ctx,
            value,
            sender_sample: host.registry.sample(sender, &string, host.params.lambda).unwrap(),
        }
    }

    fn echo_payload(host: &Host, ctx: StageCtx, sender: ProcessId, value: Value) -> Payload {
        let string = committee_string(Role::Echo(value), ctx);
        Payload::Echo {
            ctx,
            value,
            sender_sample: host.registry.sample(sender, &string, host.params.lambda).unwrap(),
            signature: host
                .registry
                .sign(sender, &echo_sign_bytes(ctx, value))
                .unwrap(),
        }
    }

    #[test]
    fn echo_requires_strictly_more_than_b_inits() {
        // eps = 0.2, n = 8 full participation: f = 1, B = 1, threshold 2.
        let mut host = Host::full(8, 0.2, 1);
        assert_eq!(host.params.b, 1);
        let ctx = StageCtx::standalone(0, 0);
        let mut m = ApproverMachine::new(0, ctx, 8);
        m.start(Value::One, &mut host.ctx(0)).unwrap();

        // B inits: no echo yet
        let p = init_payload(&host, ctx, 1, Value::Zero);
        let out = m.on_payload(1, &p, &mut host.ctx(0));
        assert!(out.broadcasts.is_empty());

        // B+1-th init triggers exactly one echo, even with more inits after
        let p = init_payload(&host, ctx, 2, Value::Zero);
        let out = m.on_payload(2, &p, &mut host.ctx(0));
        assert_eq!(out.broadcasts.len(), 1);
        assert!(matches!(out.broadcasts[0], Payload::Echo { value: Value::Zero, .. }));

        let p = init_payload(&host, ctx, 3, Value::Zero);
        let out = m.on_payload(3, &p, &mut host.ctx(0));
        assert!(out.broadcasts.is_empty());
        assert_eq!(m.sends_per_role()[1], 1);
    }

    #[test]
    fn echoes_both_values_when_sampled_into_both_committees() {
        // full participation: member of every value's echo committee
        let mut host = Host::full(8, 0.2, 2);
        let ctx = StageCtx::standalone(0, 0);
        let mut m = ApproverMachine::new(0, ctx, 8);
        m.start(Value::Zero, &mut host.ctx(0)).unwrap();

        let mut echoes = Vec::new();
        for (i, v) in [(1u32, Value::Zero), (2, Value::Zero), (3, Value::Bot), (4, Value::Bot)] {
            let p = init_payload(&host, ctx, i, v);
            echoes.extend(m.on_payload(i, &p, &mut host.ctx(0)).broadcasts);
        }
        // one echo per value committee, two total
        assert_eq!(echoes.len(), 2);
        assert!(matches!(echoes[0], Payload::Echo { value: Value::Zero, .. }));
        assert!(matches!(echoes[1], Payload::Echo { value: Value::Bot, .. }));
    }

    #[test]
    fn first_value_to_w_echoes_wins_ok_and_ok_is_single_shot() {
        let mut host = Host::full(8, 0.2, 3);
        let ctx = StageCtx::standalone(0, 0);
        let w = host.params.w; // 7
        let mut m = ApproverMachine::new(0, ctx, 8);
        m.start(Value::Zero, &mut host.ctx(0)).unwrap();

        // W echoes for Zero, then W echoes for Bot
        let mut oks = Vec::new();
        for sender in 0..w {
            let p = echo_payload(&host, ctx, sender, Value::Zero);
            oks.extend(m.on_payload(sender, &p, &mut host.ctx(0)).broadcasts);
        }
        for sender in 0..w {
            let p = echo_payload(&host, ctx, sender, Value::Bot);
            oks.extend(m.on_payload(sender, &p, &mut host.ctx(0)).broadcasts);
        }
        assert_eq!(oks.len(), 1, "only the first value triggers OK");
        match &oks[0] {
            Payload::ApOk {
                value,
                endorsements,
                ..
            } => {
                assert_eq!(*value, Value::Zero);
                assert_eq!(endorsements.len(), w as usize);
                // OK word cost is W + 3
                assert_eq!(oks[0].word_cost(), w + 3);
            }
            other => panic!("expected OK, got {other:?}"),
        }
        assert_eq!(m.sends_per_role()[2], 1);
    }

    #[test]
    fn returns_set_of_first_w_ok_values() {
        let mut host = Host::full(8, 0.2, 4);
        let ctx = StageCtx::standalone(0, 0);
        let w = host.params.w as u32;
        let mut m = ApproverMachine::new(0, ctx, 8);
        m.start(Value::Zero, &mut host.ctx(0)).unwrap();

        let ok_string = committee_string(Role::Ok, ctx);
        let mut returned = Vec::new();
        for sender in 0..w {
            let value = if sender % 2 == 0 { Value::Zero } else { Value::Bot };
            let p = Payload::ApOk {
                ctx,
                value,
                sender_sample: host
                    .registry
                    .sample(sender, &ok_string, host.params.lambda)
                    .unwrap(),
                endorsements: Vec::new(),
            };
            returned.extend(m.on_payload(sender, &p, &mut host.ctx(0)).events);
        }
        assert_eq!(returned.len(), 1);
        let set = m.result().unwrap();
        assert_eq!(set.len(), 2);
        let vals: Vec<_> = set.iter().collect();
        assert_eq!(vals, vec![Value::Zero, Value::Bot]);

        // late OK from a new sender does not change the result
        let p = Payload::ApOk {
            ctx,
            value: Value::One,
            sender_sample: host.registry.sample(w, &ok_string, host.params.lambda).unwrap(),
            endorsements: Vec::new(),
        };
        m.on_payload(w, &p, &mut host.ctx(0));
        assert_eq!(m.result().unwrap(), set);
    }

    #[test]
    fn ok_equivocation_by_sender_ignored() {
        let mut host = Host::full(8, 0.2, 5);
        let ctx = StageCtx::standalone(0, 0);
        let mut m = ApproverMachine::new(0, ctx, 8);
        m.start(Value::Zero, &mut host.ctx(0)).unwrap();
        let ok_string = committee_string(Role::Ok, ctx);
        let mk = |value| Payload::ApOk {
            ctx,
            value,
            sender_sample: host.registry.sample(1, &ok_string, host.params.lambda).unwrap(),
            endorsements: Vec::new(),
        };
        m.on_payload(1, &mk(Value::Zero), &mut host.ctx(0));
        let before = host.audit.duplicate_sender;
        m.on_payload(1, &mk(Value::One), &mut host.ctx(0));
        assert_eq!(host.audit.duplicate_sender, before + 1);
        assert_eq!(m.ok_pairs(), &[(1, Value::Zero)]);
    }

    #[test]
    fn passive_completion_buffers_until_start() {
        let mut host = Host::full(8, 0.2, 6);
        let ctx = StageCtx::standalone(0, 0);
        let w = host.params.w as u32;
        let mut m = ApproverMachine::new(0, ctx, 8);
        let ok_string = committee_string(Role::Ok, ctx);
        for sender in 0..w {
            let p = Payload::ApOk {
                ctx,
                value: Value::One,
                sender_sample: host
                    .registry
                    .sample(sender, &ok_string, host.params.lambda)
                    .unwrap(),
                endorsements: Vec::new(),
            };
            let out = m.on_payload(sender, &p, &mut host.ctx(0));
            assert!(out.events.is_empty(), "no return before start");
        }
        assert_eq!(m.result(), None);
        let out = m.start(Value::One, &mut host.ctx(0)).unwrap();
        assert!(out
            .events
            .iter()
            .any(|e| matches!(e, MachineEvent::ApproverReturned { .. })));
        assert_eq!(m.result().unwrap().as_singleton(), Some(Value::One));
    }
}
