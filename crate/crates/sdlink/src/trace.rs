//! The execution log: everything that happened in one run, in order, plus
//! the initial configuration it happened from. Traces are the interchange
//! format between the simulator, the checker, and the command line — they
//! serialize as a single JSON document and deserialize back losslessly.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::machine::ConfigSnapshot;
use crate::packet::{AltBit, Direction, Payload, Token};
use crate::sim::SchedulerPolicy;

/// Current trace document version.
pub const TRACE_VERSION: u32 = 1;

/// One recorded happening. `step` is the event's ordinal in the log.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Event {
    pub step: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Everything the harness can observe. Packet events name the channel they
/// happened on; `seq` numbers application sends uniquely within a run and
/// never travels on the wire.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    /// The application handed a message to the sender.
    AppSend { seq: u32, token: Token },
    /// A packet entered a channel.
    PacketSent { dir: Direction, payload: Payload, ab: AltBit },
    /// A packet left a channel into its destination process.
    PacketDelivered { dir: Direction, payload: Payload, ab: AltBit },
    /// The adversary removed a packet in flight.
    PacketLost { dir: Direction, payload: Payload, ab: AltBit },
    /// An overflowing send cost this packet its place.
    PacketEvicted { dir: Direction, payload: Payload, ab: AltBit },
    /// The receiver released a message to the application.
    MsgDelivered { token: Token },
    /// The receiver consumed a synchronization marker silently.
    SynchroDropped,
    /// The sender reported a completed send to the application.
    AckDelivered { token: Token },
    /// The receiver's counting queue was emptied.
    QueueReset,
}

/// Capacity parameters echoed into the trace header.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct TraceParams {
    pub c: u32,
}

/// One complete execution record.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Trace {
    pub version: u32,
    pub params: TraceParams,
    pub policy: SchedulerPolicy,
    /// The seed the scheduler drew from, when it drew from one.
    pub seed: Option<u64>,
    pub config_init: ConfigSnapshot,
    pub events: Vec<Event>,
    /// True when the run ended with every requested send acknowledged and
    /// both channels empty.
    pub quiescent: bool,
}

/// Trace file and parse failures.
#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace does not parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("trace version {found} is not supported (expected {TRACE_VERSION})")]
    Version { found: u32 },
}

impl Trace {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("traces always serialize");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Trace, TraceError> {
        let t: Trace = serde_json::from_str(s)?;
        if t.version != TRACE_VERSION {
            return Err(TraceError::Version { found: t.version });
        }
        Ok(t)
    }

    pub fn read(path: &Path) -> Result<Trace, TraceError> {
        Trace::from_json(&fs::read_to_string(path)?)
    }

    /// Write via a temporary file in the target directory, then rename, so
    /// a trace file is never observed half-written.
    pub fn write(&self, path: &Path) -> Result<(), TraceError> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
        let mut tmp = match dir {
            Some(d) => tempfile::NamedTempFile::new_in(d)?,
            None => tempfile::NamedTempFile::new_in(".")?,
        };
        tmp.write_all(self.to_json().as_bytes())?;
        tmp.persist(path).map_err(|e| e.error)?;
        Ok(())
    }

    /// Tokens of application sends, in order.
    pub fn sent_tokens(&self) -> Vec<Token> {
        self.events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::AppSend { token, .. } => Some(token.clone()),
                _ => None,
            })
            .collect()
    }

    /// Tokens of deliveries to the application, in order.
    pub fn delivered_tokens(&self) -> Vec<Token> {
        self.events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::MsgDelivered { token } => Some(token.clone()),
                _ => None,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::{clean_config, Configuration, Sdl};
    use crate::packet::ProtocolParams;

    fn tiny_trace() -> Trace {
        let cfg: Configuration<Sdl> = clean_config(ProtocolParams::new(1));
        Trace {
            version: TRACE_VERSION,
            params: TraceParams { c: 1 },
            policy: SchedulerPolicy::LockStep,
            seed: None,
            config_init: cfg.snapshot(),
            events: vec![
                Event { step: 0, kind: EventKind::AppSend { seq: 0, token: Token::new("A") } },
                Event {
                    step: 1,
                    kind: EventKind::PacketSent {
                        dir: Direction::Data,
                        payload: Payload::Synchro,
                        ab: AltBit(true),
                    },
                },
                Event { step: 2, kind: EventKind::SynchroDropped },
            ],
            quiescent: false,
        }
    }

    #[test]
    fn json_roundtrip_is_lossless() {
        let t = tiny_trace();
        let back = Trace::from_json(&t.to_json()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn event_json_is_flat_and_tagged() {
        let t = tiny_trace();
        let doc: serde_json::Value = serde_json::from_str(&t.to_json()).unwrap();
        let ev = &doc["events"][0];
        assert_eq!(ev["step"], 0);
        assert_eq!(ev["kind"], "app_send");
        assert_eq!(ev["seq"], 0);
        assert_eq!(ev["token"], "A");
        let sent = &doc["events"][1];
        assert_eq!(sent["kind"], "packet_sent");
        assert_eq!(sent["dir"], "data");
        assert_eq!(sent["payload"]["kind"], "synchro");
        assert_eq!(sent["ab"], true);
    }

    #[test]
    fn unsupported_version_is_rejected() {
        let mut t = tiny_trace();
        t.version = 99;
        let err = Trace::from_json(&t.to_json()).unwrap_err();
        assert!(matches!(err, TraceError::Version { found: 99 }));
    }

    #[test]
    fn write_then_read_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        let t = tiny_trace();
        t.write(&path).unwrap();
        assert_eq!(Trace::read(&path).unwrap(), t);
    }

    #[test]
    fn projections_pull_tokens_in_order() {
        let mut t = tiny_trace();
        t.events.push(Event { step: 3, kind: EventKind::MsgDelivered { token: Token::new("A") } });
        assert_eq!(t.sent_tokens(), vec![Token::new("A")]);
        assert_eq!(t.delivered_tokens(), vec![Token::new("A")]);
    }
}
