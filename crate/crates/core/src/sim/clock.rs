//! Sparse vector clocks for happens-before tracking, with lazy per-process
//! merging.
//!
//! Only processes that send messages ever get a nonzero component, so clocks
//! stay committee-sized. Receipt pushes the incoming stamp onto a pending
//! list; the merge happens when the process next sends (or when a test
//! materializes the clock). The causal-chain-length metric is maintained
//! separately as a scalar depth, so idle listeners cost O(1) per delivery.

use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::crypto::ProcessId;

/// Vector clock storing only nonzero components, sorted by process id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SparseClock {
    entries: Vec<(ProcessId, u64)>,
}

impl SparseClock {
    pub fn new() -> SparseClock {
        SparseClock::default()
    }

    pub fn get(&self, pid: ProcessId) -> u64 {
        match self.entries.binary_search_by_key(&pid, |e| e.0) {
            Ok(i) => self.entries[i].1,
            Err(_) => 0,
        }
    }

    pub fn bump(&mut self, pid: ProcessId) {
        match self.entries.binary_search_by_key(&pid, |e| e.0) {
            Ok(i) => self.entries[i].1 += 1,
            Err(i) => self.entries.insert(i, (pid, 1)),
        }
    }

    /// Pointwise maximum.
    pub fn merge(&mut self, other: &SparseClock) {
        if other.entries.is_empty() {
            return;
        }
        if self.entries.is_empty() {
            self.entries = other.entries.clone();
            return;
        }
        let mut merged = Vec::with_capacity(self.entries.len().max(other.entries.len()));
        let (mut i, mut j) = (0, 0);
        while i < self.entries.len() && j < other.entries.len() {
            let (a, b) = (self.entries[i], other.entries[j]);
            match a.0.cmp(&b.0) {
                std::cmp::Ordering::Less => {
                    merged.push(a);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    merged.push(b);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    merged.push((a.0, a.1.max(b.1)));
                    i += 1;
                    j += 1;
                }
            }
        }
        merged.extend_from_slice(&self.entries[i..]);
        merged.extend_from_slice(&other.entries[j..]);
        self.entries = merged;
    }

    /// True iff every component of `other` is <= the matching component here.
    pub fn dominates(&self, other: &SparseClock) -> bool {
        other.entries.iter().all(|&(pid, c)| self.get(pid) >= c)
    }

    pub fn concurrent_with(&self, other: &SparseClock) -> bool {
        !self.dominates(other) && !other.dominates(self)
    }

    pub fn entries(&self) -> &[(ProcessId, u64)] {
        &self.entries
    }

    /// Short stable digest for trace lines.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for &(pid, c) in &self.entries {
            hasher.update(pid.to_be_bytes());
            hasher.update(c.to_be_bytes());
        }
        hex::encode(&hasher.finalize()[..8])
    }
}

/// One process's clock state, merged lazily.
#[derive(Debug, Default)]
pub struct ProcClock {
    base: SparseClock,
    pending: Vec<Arc<SparseClock>>,
    /// Longest chain of causally related messages ending at this process.
    pub depth: u32,
}

impl ProcClock {
    pub fn on_receive(&mut self, stamp: &Arc<SparseClock>, depth: u32) {
        self.pending.push(stamp.clone());
        self.depth = self.depth.max(depth);
    }

    pub fn materialize(&mut self) -> &SparseClock {
        for stamp in self.pending.drain(..) {
            self.base.merge(&stamp);
        }
        &self.base
    }

    /// Produces the stamp for a send event: merges pending receipts, bumps
    /// the sender's own component, and returns the snapshot with the depth
    /// of the new message.
    pub fn stamp_send(&mut self, me: ProcessId) -> (Arc<SparseClock>, u32) {
        self.materialize();
        self.base.bump(me);
        (Arc::new(self.base.clone()), self.depth + 1)
    }
}
