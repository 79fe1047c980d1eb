//! All-to-all two-phase VRF shared coin.
//!
//! Every process broadcasts its VRF evaluation of the round, waits for
//! `n - f` FIRST values, broadcasts the minimum it holds, waits for `n - f`
//! SECOND values, and returns the least significant bit of the minimum.
//!
//! Message validity (VRF proofs, sender/owner binding) is checked by the
//! simulator before a payload reaches the machine; the machine handles
//! deduplication, threshold bookkeeping, and minimum propagation.

use crate::crypto::ProcessId;
use crate::machine::{IdSet, MachineCtx, MachineError, MachineEvent, StepOut};
use crate::wire::{coin_vrf_input, Candidate, Payload, StageCtx};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoinPhase {
    Init,
    FirstSent,
    SecondSent,
    Done,
}

#[derive(Debug)]
pub struct CoinMachine {
    ctx: StageCtx,
    me: ProcessId,
    threshold: u32,
    started: bool,
    vi: Option<Candidate>,
    first_set: IdSet,
    second_set: IdSet,
    second_sent: bool,
    output: Option<u8>,
    // instrumentation snapshots
    first_snapshot: Option<Vec<ProcessId>>,
    vi_final: Option<Candidate>,
}

impl CoinMachine {
    pub fn new(me: ProcessId, ctx: StageCtx, n: u32, f: u32) -> CoinMachine {
        CoinMachine {
            ctx,
            me,
            threshold: n - f,
            started: false,
            vi: None,
            first_set: IdSet::new(n),
            second_set: IdSet::new(n),
            second_sent: false,
            output: None,
            first_snapshot: None,
            vi_final: None,
        }
    }

    pub fn start(&mut self, mctx: &mut MachineCtx) -> Result<StepOut, MachineError> {
        if self.started {
            return Err(MachineError::AlreadyStarted);
        }
        self.started = true;
        let vrf = mctx
            .registry
            .vrf_eval(self.me, &coin_vrf_input(self.ctx.instance, self.ctx.round))
            .expect("own id is registered");
        let candidate = Candidate {
            owner: self.me,
            vrf,
        };
        self.vi = Some(candidate);
        Ok(StepOut {
            broadcasts: vec![Payload::CoinFirst {
                ctx: self.ctx,
                candidate,
            }],
            events: Vec::new(),
        })
    }

    pub fn on_payload(
        &mut self,
        sender: ProcessId,
        payload: &Payload,
        mctx: &mut MachineCtx,
    ) -> StepOut {
        if !self.started || payload.ctx() != self.ctx {
            mctx.audit.stale_or_unroutable += 1;
            return StepOut::none();
        }
        match payload {
            Payload::CoinFirst { candidate, .. } => self.on_first(sender, *candidate, mctx),
            Payload::CoinSecond { candidate, .. } => self.on_second(sender, *candidate, mctx),
            _ => {
                mctx.audit.stale_or_unroutable += 1;
                StepOut::none()
            }
        }
    }

    fn min_update(&mut self, candidate: Candidate) {
        match self.vi {
            Some(cur) if cur.key() <= candidate.key() => {}
            _ => self.vi = Some(candidate),
        }
    }

    fn on_first(
        &mut self,
        sender: ProcessId,
        candidate: Candidate,
        mctx: &mut MachineCtx,
    ) -> StepOut {
        if !self.first_set.insert(sender) {
            mctx.audit.duplicate_sender += 1;
            return StepOut::none();
        }
        self.min_update(candidate);
        // Output is single-shot, but sets keep growing and the SECOND
        // broadcast still fires after a late threshold crossing: the
        // phase-one table of every correct process must eventually complete.
        if self.first_set.count() == self.threshold && !self.second_sent {
            self.second_sent = true;
            self.first_snapshot = Some(self.first_set.ids());
            let vi = self.vi.expect("threshold > 0 inserts set a candidate");
            return StepOut {
                broadcasts: vec![Payload::CoinSecond {
                    ctx: self.ctx,
                    candidate: vi,
                }],
                events: Vec::new(),
            };
        }
        StepOut::none()
    }

    fn on_second(
        &mut self,
        sender: ProcessId,
        candidate: Candidate,
        mctx: &mut MachineCtx,
    ) -> StepOut {
        if !self.second_set.insert(sender) {
            mctx.audit.duplicate_sender += 1;
            return StepOut::none();
        }
        self.min_update(candidate);
        if self.second_set.count() == self.threshold && self.output.is_none() {
            let vi = self.vi.expect("threshold > 0 inserts set a candidate");
            self.output = Some(vi.lsb());
            self.vi_final = Some(vi);
            return StepOut {
                broadcasts: Vec::new(),
                events: vec![MachineEvent::CoinReturned {
                    ctx: self.ctx,
                    bit: vi.lsb(),
                }],
            };
        }
        StepOut::none()
    }

    pub fn output(&self) -> Option<u8> {
        self.output
    }

    pub fn phase(&self) -> CoinPhase {
        if self.output.is_some() {
            CoinPhase::Done
        } else if self.second_sent {
            CoinPhase::SecondSent
        } else if self.started {
            CoinPhase::FirstSent
        } else {
            CoinPhase::Init
        }
    }

    /// FIRST senders counted before this process broadcast its SECOND.
    pub fn first_snapshot(&self) -> Option<&[ProcessId]> {
        self.first_snapshot.as_deref()
    }

    /// Minimum candidate held when the output was produced.
    pub fn final_candidate(&self) -> Option<Candidate> {
        self.vi_final
    }

    pub fn current_candidate(&self) -> Option<Candidate> {
        self.vi
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{setup_registry, Registry};
    use crate::machine::{AuditCounters, CommitteeCache};
    use crate::params::derive_params;
    use crate::params::Parameters;

    fn mctx<'a>(
        me: ProcessId,
        registry: &'a Registry,
        params: &'a Parameters,
        cache: &'a mut CommitteeCache,
        audit: &'a mut AuditCounters,
    ) -> MachineCtx<'a> {
        MachineCtx {
            me,
            registry,
            params,
            committees: cache,
            audit,
        }
    }

    fn candidate(registry: &Registry, ctx: StageCtx, owner: ProcessId) -> Candidate {
        Candidate {
            owner,
            vrf: registry
                .vrf_eval(owner, &coin_vrf_input(ctx.instance, ctx.round))
                .unwrap(),
        }
    }

    #[test]
    fn full_exchange_outputs_global_min_lsb() {
        // n = 4, f = 0: drive four machines by hand with full delivery.
        let n = 4;
        let registry = setup_registry(n, 42).unwrap();
        let params = derive_params(n, 1.0 / 3.0, 0.0, true).unwrap();
        let ctx = StageCtx::standalone(0, 0);
        let mut cache = CommitteeCache::default();
        let mut audit = AuditCounters::default();

        let mut machines: Vec<CoinMachine> =
            (0..n).map(|i| CoinMachine::new(i, ctx, n, 0)).collect();
        let mut firsts = Vec::new();
        for (i, m) in machines.iter_mut().enumerate() {
            let mut c = mctx(i as u32, &registry, &params, &mut cache, &mut audit);
            let out = m.start(&mut c).unwrap();
            assert_eq!(out.broadcasts.len(), 1);
            assert_eq!(out.broadcasts[0].word_cost(), 2);
            firsts.push((i as u32, out.broadcasts[0].clone()));
        }
        // everyone's initial candidate is its own VRF value
        for (i, m) in machines.iter().enumerate() {
            assert_eq!(
                m.current_candidate().unwrap().vrf,
                registry
                    .vrf_eval(i as u32, &coin_vrf_input(0, 0))
                    .unwrap()
            );
        }

        // deliver all FIRSTs everywhere; the n-th triggers exactly one SECOND
        let mut seconds = Vec::new();
        for (recv, m) in machines.iter_mut().enumerate() {
            let mut sent = 0;
            for (sender, p) in &firsts {
                let mut c = mctx(recv as u32, &registry, &params, &mut cache, &mut audit);
                let out = m.on_payload(*sender, p, &mut c);
                sent += out.broadcasts.len();
                for b in out.broadcasts {
                    seconds.push((recv as u32, b));
                }
            }
            assert_eq!(sent, 1, "exactly one SECOND per process");
        }

        for (recv, m) in machines.iter_mut().enumerate() {
            for (sender, p) in &seconds {
                let mut c = mctx(recv as u32, &registry, &params, &mut cache, &mut audit);
                let out = m.on_payload(*sender, p, &mut c);
                for e in out.events {
                    assert!(matches!(e, MachineEvent::CoinReturned { .. }));
                }
            }
        }

        // brute-force oracle: global minimum over the registry
        let global_min = (0..n)
            .map(|i| registry.vrf_eval(i, &coin_vrf_input(0, 0)).unwrap().value)
            .min()
            .unwrap();
        for m in &machines {
            let out = m.output().unwrap();
            assert!(out == 0 || out == 1);
            assert_eq!(out, (global_min & 1) as u8);
            assert_eq!(m.final_candidate().unwrap().value(), global_min);
            assert_eq!(m.first_snapshot().unwrap().len(), 4);
        }
    }

    #[test]
    fn threshold_fires_once_and_duplicates_ignored() {
        let n = 4;
        let registry = setup_registry(n, 7).unwrap();
        let params = derive_params(n, 1.0 / 3.0, 0.0, true).unwrap();
        let ctx = StageCtx::standalone(0, 0);
        let mut cache = CommitteeCache::default();
        let mut audit = AuditCounters::default();

        let mut m = CoinMachine::new(0, ctx, n, 1); // threshold 3
        {
            let mut c = mctx(0, &registry, &params, &mut cache, &mut audit);
            m.start(&mut c).unwrap();
            assert!(matches!(m.start(&mut c), Err(MachineError::AlreadyStarted)));
        }
        let mut total_broadcasts = 0;
        for sender in 0..4u32 {
            let p = Payload::CoinFirst {
                ctx,
                candidate: candidate(&registry, ctx, sender),
            };
            let mut c = mctx(0, &registry, &params, &mut cache, &mut audit);
            total_broadcasts += m.on_payload(sender, &p, &mut c).broadcasts.len();
        }
        // fires at the 3rd distinct sender, not again at the 4th
        assert_eq!(total_broadcasts, 1);

        // duplicate sender ignored
        let p = Payload::CoinFirst {
            ctx,
            candidate: candidate(&registry, ctx, 2),
        };
        let before = audit.duplicate_sender;
        let mut c = mctx(0, &registry, &params, &mut cache, &mut audit);
        m.on_payload(2, &p, &mut c);
        assert_eq!(audit.duplicate_sender, before + 1);
        assert_eq!(m.first_set.count(), 4);
    }

    #[test]
    fn output_in_binary_domain() {
        let n = 5;
        let registry = setup_registry(n, 9).unwrap();
        let params = derive_params(n, 1.0 / 3.0, 0.0, true).unwrap();
        let ctx = StageCtx::standalone(0, 3);
        let mut cache = CommitteeCache::default();
        let mut audit = AuditCounters::default();
        let mut m = CoinMachine::new(0, ctx, n, 0);
        {
            let mut c = mctx(0, &registry, &params, &mut cache, &mut audit);
            m.start(&mut c).unwrap();
        }
        for sender in 0..n {
            let p = Payload::CoinSecond {
                ctx,
                candidate: candidate(&registry, ctx, sender),
            };
            let mut c = mctx(0, &registry, &params, &mut cache, &mut audit);
            m.on_payload(sender, &p, &mut c);
        }
        let bit = m.output().unwrap();
        assert!(bit == 0 || bit == 1);
    }
}
