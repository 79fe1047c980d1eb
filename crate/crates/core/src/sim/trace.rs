//! Line-delimited trial traces and replay.
//!
//! A trace fixes every adversary action of one trial, so the trial can be
//! re-executed without the original adversary. Layout:
//!
//! ```text
//! # {header json: config, adversary, seed}
//! D <event> <msg_id> <sender> <receiver> <kind> <words> <clock_digest>
//! C <event> <pid>
//! I <event> <sender> <receiver> <payload json>
//! X <event> <msg_id>
//! P <event>
//! H <report hash>
//! ```

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::crypto::ProcessId;
use crate::wire::Payload;

use super::adversary::{Action, Adversary, AdversarySpec};
use super::{run_trial_inner, Template, TrialConfig, TrialError, View};
use crate::sim::report::TrialReport;

#[derive(Debug, Serialize, Deserialize)]
struct TraceHeader {
    config: TrialConfig,
    adversary: AdversarySpec,
    seed: u64,
}

pub struct TraceWriter {
    out: BufWriter<File>,
}

impl TraceWriter {
    pub fn create(
        path: &Path,
        cfg: &TrialConfig,
        adversary: &AdversarySpec,
        seed: u64,
    ) -> std::io::Result<TraceWriter> {
        let mut out = BufWriter::new(File::create(path)?);
        let header = TraceHeader {
            config: cfg.clone(),
            adversary: adversary.clone(),
            seed,
        };
        writeln!(out, "# {}", serde_json::to_string(&header).unwrap())?;
        Ok(TraceWriter { out })
    }

    pub fn deliver(&mut self, event: u64, id: u64, template: &Template, receiver: ProcessId) {
        let _ = writeln!(
            self.out,
            "D {event} {id} {} {receiver} {:?} {} {}",
            template.sender,
            template.kind,
            template.words,
            template.stamp.digest(),
        );
    }

    pub fn corrupt(&mut self, event: u64, pid: ProcessId) {
        let _ = writeln!(self.out, "C {event} {pid}");
    }

    pub fn inject(&mut self, event: u64, sender: ProcessId, receiver: ProcessId, payload: &Payload) {
        let _ = writeln!(
            self.out,
            "I {event} {sender} {receiver} {}",
            serde_json::to_string(payload).unwrap()
        );
    }

    pub fn drop(&mut self, event: u64, id: u64) {
        let _ = writeln!(self.out, "X {event} {id}");
    }

    pub fn pass(&mut self, event: u64) {
        let _ = writeln!(self.out, "P {event}");
    }

    pub fn finish(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }
}

/// Appends the final report hash, closing the determinism loop.
pub fn append_hash(path: &Path, hash: &str) -> std::io::Result<()> {
    let mut f = OpenOptions::new().append(true).open(path)?;
    writeln!(f, "H {hash}")
}

#[derive(Debug)]
pub struct TraceFile {
    pub config: TrialConfig,
    pub adversary: AdversarySpec,
    pub seed: u64,
    pub actions: Vec<Action>,
    pub report_hash: Option<String>,
}

pub fn read_trace(path: &Path) -> Result<TraceFile, TrialError> {
    let file = File::open(path).map_err(|e| TrialError::Io(e.to_string()))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| TrialError::Io("empty trace".into()))?
        .map_err(|e| TrialError::Io(e.to_string()))?;
    let header: TraceHeader = serde_json::from_str(
        header_line
            .strip_prefix("# ")
            .ok_or_else(|| TrialError::Io("missing trace header".into()))?,
    )
    .map_err(|e| TrialError::Io(format!("bad trace header: {e}")))?;

    let mut actions = Vec::new();
    let mut report_hash = None;
    for line in lines {
        let line = line.map_err(|e| TrialError::Io(e.to_string()))?;
        let mut parts = line.splitn(5, ' ');
        let op = parts.next().unwrap_or("");
        match op {
            "D" => {
                let _event = parts.next();
                let id: u64 = parse(parts.next())?;
                actions.push(Action::Deliver(id));
            }
            "C" => {
                let _event = parts.next();
                let pid: ProcessId = parse(parts.next())?;
                actions.push(Action::Corrupt(pid));
            }
            "I" => {
                let _event = parts.next();
                let sender: ProcessId = parse(parts.next())?;
                let receiver: ProcessId = parse(parts.next())?;
                let payload: Payload = serde_json::from_str(
                    parts.next().ok_or_else(|| TrialError::Io("bad inject".into()))?,
                )
                .map_err(|e| TrialError::Io(format!("bad inject payload: {e}")))?;
                actions.push(Action::Inject {
                    sender,
                    receiver,
                    payload,
                });
            }
            "X" => {
                let _event = parts.next();
                let id: u64 = parse(parts.next())?;
                actions.push(Action::Drop(id));
            }
            "P" => actions.push(Action::Pass),
            "H" => {
                report_hash = parts.next().map(|s| s.to_string());
            }
            "" => {}
            other => return Err(TrialError::Io(format!("unknown trace op {other:?}"))),
        }
    }
    Ok(TraceFile {
        config: header.config,
        adversary: header.adversary,
        seed: header.seed,
        actions,
        report_hash,
    })
}

fn parse<T: std::str::FromStr>(s: Option<&str>) -> Result<T, TrialError> {
    s.and_then(|s| s.split_whitespace().next())
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| TrialError::Io("malformed trace line".into()))
}

/// Adversary that re-issues a recorded action sequence.
struct ReplayAdversary {
    actions: std::vec::IntoIter<Action>,
}

impl Adversary for ReplayAdversary {
    fn next_action(&mut self, _view: &View) -> Action {
        self.actions.next().unwrap_or(Action::Pass)
    }
}

/// Re-executes a recorded trial and returns its report.
pub fn replay(trace: TraceFile) -> Result<TrialReport, TrialError> {
    let mut adv: Box<dyn Adversary> = Box::new(ReplayAdversary {
        actions: trace.actions.into_iter(),
    });
    run_trial_inner(
        &trace.config,
        &mut adv,
        &format!("replay:{}", trace.adversary.name()),
        trace.seed,
        None,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::derive_params;
    use crate::sim::{run_trial_traced, Protocol};

    #[test]
    fn trace_roundtrip_reproduces_report_hash() {
        let dir = std::env::temp_dir().join("basim-trace-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t1.trace");

        let params = derive_params(6, 1.0 / 3.0, 0.0, true).unwrap();
        let cfg = TrialConfig::new(Protocol::SharedCoin, params);
        let original = run_trial_traced(&cfg, &AdversarySpec::UniformRandom, 99, &path).unwrap();

        let trace = read_trace(&path).unwrap();
        assert_eq!(trace.seed, 99);
        assert_eq!(trace.report_hash.as_deref(), Some(original.hash().as_str()));
        let replayed = replay(trace).unwrap();
        assert_eq!(replayed.hash(), original.hash());
        std::fs::remove_file(&path).ok();
    }
}
