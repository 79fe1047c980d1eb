//! Protocol values, message payloads, committee-string encoding, and word
//! accounting.
//!
//! A word holds one signature, one VRF output, or one value from a finite
//! domain. Costs per message type:
//!
//! | message            | layout                                         | words |
//! |--------------------|------------------------------------------------|-------|
//! | coin FIRST/SECOND  | tag/round + VRF output                         | 2     |
//! | whp FIRST/SECOND   | tag/round + VRF output + committee proof       | 3     |
//! | INIT               | tag/instance + value + committee proof         | 3     |
//! | ECHO               | INIT layout + signature                        | 4     |
//! | OK                 | tag + value + committee proof + W endorsements | W + 3 |

use serde::{Deserialize, Serialize};

use crate::crypto::{ProcessId, SampleProof, Signature, VrfOutput};

/// Binary-or-bot protocol value, canonically ordered 0 < 1 < bot.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum Value {
    Zero = 0,
    One = 1,
    Bot = 2,
}

impl Value {
    pub fn from_bit(bit: u8) -> Value {
        if bit == 0 {
            Value::Zero
        } else {
            Value::One
        }
    }

    pub fn byte(self) -> u8 {
        self as u8
    }

    pub fn from_byte(b: u8) -> Option<Value> {
        match b {
            0 => Some(Value::Zero),
            1 => Some(Value::One),
            2 => Some(Value::Bot),
            _ => None,
        }
    }

    pub fn as_bit(self) -> Option<u8> {
        match self {
            Value::Zero => Some(0),
            Value::One => Some(1),
            Value::Bot => None,
        }
    }
}

/// A small set of values, kept in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValueSet {
    present: [bool; 3],
}

impl ValueSet {
    pub fn singleton(v: Value) -> ValueSet {
        let mut s = ValueSet::default();
        s.insert(v);
        s
    }

    pub fn insert(&mut self, v: Value) {
        self.present[v as usize] = true;
    }

    pub fn contains(&self, v: Value) -> bool {
        self.present[v as usize]
    }

    pub fn len(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values in canonical order (0, 1, bot).
    pub fn iter(&self) -> impl Iterator<Item = Value> + '_ {
        [Value::Zero, Value::One, Value::Bot]
            .into_iter()
            .filter(|&v| self.contains(v))
    }

    /// The single element, if this is a singleton.
    pub fn as_singleton(&self) -> Option<Value> {
        if self.len() == 1 {
            self.iter().next()
        } else {
            None
        }
    }
}

/// A coin candidate: some process's VRF output for the round, carried with
/// its proof so receivers can validate it. Ordered by (value, owner) so ties
/// resolve identically everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub owner: ProcessId,
    pub vrf: VrfOutput,
}

impl Candidate {
    pub fn value(&self) -> u64 {
        self.vrf.value
    }

    pub fn key(&self) -> (u64, ProcessId) {
        (self.vrf.value, self.owner)
    }

    pub fn lsb(&self) -> u8 {
        (self.vrf.value & 1) as u8
    }
}

/// Sub-protocol addressing inside one simulation: which agreement instance,
/// round, and pipeline stage a message belongs to.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct StageCtx {
    pub instance: u64,
    pub round: u64,
    pub stage: Stage,
}

/// Pipeline stage within an agreement round. `Standalone` is used when a
/// coin or approver runs outside the agreement loop.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum Stage {
    Standalone,
    FirstApprove,
    Coin,
    SecondApprove,
}

impl Stage {
    /// Tag suffix folded into committee strings so each stage of each round
    /// samples fresh committees.
    fn suffix(self) -> &'static str {
        match self {
            Stage::Standalone => "",
            Stage::FirstApprove => "/a1",
            Stage::Coin => "/c",
            Stage::SecondApprove => "/a2",
        }
    }
}

/// Committee roles, mapping to the base strings FIRST / SECOND / INIT /
/// (ECHO, v) / OK.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    CoinFirst,
    CoinSecond,
    Init,
    Echo(Value),
    Ok,
}

impl Role {
    fn tag(self) -> &'static str {
        match self {
            Role::CoinFirst => "FIRST",
            Role::CoinSecond => "SECOND",
            Role::Init => "INIT",
            Role::Echo(_) => "ECHO",
            Role::Ok => "OK",
        }
    }

    fn value_byte(self) -> Option<u8> {
        match self {
            Role::Echo(v) => Some(v.byte()),
            _ => None,
        }
    }
}

/// Byte encoding of a committee-sampling string:
/// 1-byte tag length, UTF-8 tag (role tag plus stage suffix), 8-byte
/// big-endian instance id, 8-byte big-endian round, then one value byte for
/// per-value echo committees. Fixed so traces are portable.
pub fn committee_string(role: Role, ctx: StageCtx) -> Vec<u8> {
    let tag = format!("{}{}", role.tag(), ctx.stage.suffix());
    let mut out = Vec::with_capacity(1 + tag.len() + 17);
    out.push(tag.len() as u8);
    out.extend_from_slice(tag.as_bytes());
    out.extend_from_slice(&ctx.instance.to_be_bytes());
    out.extend_from_slice(&ctx.round.to_be_bytes());
    if let Some(v) = role.value_byte() {
        out.push(v);
    }
    out
}

/// VRF input for the coin value of a round. Shared by the all-to-all coin
/// and the committee coin so the degenerate mode is bit-compatible.
pub fn coin_vrf_input(instance: u64, round: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(22);
    out.push(4);
    out.extend_from_slice(b"COIN");
    out.extend_from_slice(&instance.to_be_bytes());
    out.extend_from_slice(&round.to_be_bytes());
    out
}

/// Canonical bytes signed by echo-committee members for (ECHO, v); the
/// committee string already binds instance, round, stage, and value.
pub fn echo_sign_bytes(ctx: StageCtx, value: Value) -> Vec<u8> {
    committee_string(Role::Echo(value), ctx)
}

/// One (ECHO, v) endorsement inside an OK proof: the echoer's id, its echo
/// committee proof, and its signature over the echo bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endorsement {
    pub endorser: ProcessId,
    pub committee: SampleProof,
    pub signature: Signature,
}

/// Typed protocol message payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    /// All-to-all coin, phase 1. The candidate is the sender's own VRF
    /// output for the round.
    CoinFirst { ctx: StageCtx, candidate: Candidate },
    /// All-to-all coin, phase 2: the minimum candidate seen in phase 1.
    CoinSecond { ctx: StageCtx, candidate: Candidate },
    /// Committee coin, phase 1: own VRF output plus FIRST-committee proof.
    WhpFirst {
        ctx: StageCtx,
        candidate: Candidate,
        sender_sample: SampleProof,
    },
    /// Committee coin, phase 2: minimum candidate (with its owner's
    /// FIRST-committee proof) plus the sender's SECOND-committee proof.
    WhpSecond {
        ctx: StageCtx,
        candidate: Candidate,
        owner_sample: SampleProof,
        sender_sample: SampleProof,
    },
    /// Approver phase 1.
    Init {
        ctx: StageCtx,
        value: Value,
        sender_sample: SampleProof,
    },
    /// Approver phase 2, signed.
    Echo {
        ctx: StageCtx,
        value: Value,
        sender_sample: SampleProof,
        signature: Signature,
    },
    /// Approver phase 3, carrying W endorsements as proof of validity.
    ApOk {
        ctx: StageCtx,
        value: Value,
        sender_sample: SampleProof,
        endorsements: Vec<Endorsement>,
    },
}

/// Coarse message kind exposed to the adversary as metadata.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum MsgKind {
    CoinFirst,
    CoinSecond,
    WhpFirst,
    WhpSecond,
    Init,
    Echo,
    ApOk,
}

impl Payload {
    pub fn ctx(&self) -> StageCtx {
        match self {
            Payload::CoinFirst { ctx, .. }
            | Payload::CoinSecond { ctx, .. }
            | Payload::WhpFirst { ctx, .. }
            | Payload::WhpSecond { ctx, .. }
            | Payload::Init { ctx, .. }
            | Payload::Echo { ctx, .. }
            | Payload::ApOk { ctx, .. } => *ctx,
        }
    }

    pub fn kind(&self) -> MsgKind {
        match self {
            Payload::CoinFirst { .. } => MsgKind::CoinFirst,
            Payload::CoinSecond { .. } => MsgKind::CoinSecond,
            Payload::WhpFirst { .. } => MsgKind::WhpFirst,
            Payload::WhpSecond { .. } => MsgKind::WhpSecond,
            Payload::Init { .. } => MsgKind::Init,
            Payload::Echo { .. } => MsgKind::Echo,
            Payload::ApOk { .. } => MsgKind::ApOk,
        }
    }

    /// Exact word cost per the accounting table above.
    pub fn word_cost(&self) -> u32 {
        match self {
            Payload::CoinFirst { .. } | Payload::CoinSecond { .. } => 2,
            Payload::WhpFirst { .. } | Payload::WhpSecond { .. } => 3,
            Payload::Init { .. } => 3,
            Payload::Echo { .. } => 4,
            Payload::ApOk { endorsements, .. } => endorsements.len() as u32 + 3,
        }
    }
}

impl StageCtx {
    pub fn standalone(instance: u64, round: u64) -> StageCtx {
        StageCtx {
            instance,
            round,
            stage: Stage::Standalone,
        }
    }
}
