//! Self-stabilizing data-link simulation and checking.
//!
//! This crate models a sender and a receiver joined by two lossy,
//! duplicating, reordering channels of known capacity, where *any* starting
//! state is fair game — channels may hold ghost packets and both endpoints
//! may wake up mid-conversation with corrupted counters. On top of the
//! protocol machines it provides:
//!
//! * a deterministic single-step simulator with pluggable schedulers and a
//!   JSON trace format ([`sim`], [`trace`]),
//! * curated worst-case starting states ([`scenario`]),
//! * a checker for the bounded loss / duplication / creation / reordering
//!   properties and the strict delivery shape ([`checker`]),
//! * a brute-force oracle that exhaustively enumerates small instances and
//!   cross-checks the other components ([`oracle`]).
//!
//! Two protocol machines are included: the flooding data-link protocol
//! ([`machine::Sdl`]) and a plain alternating-bit baseline
//! ([`machine::Abp`]) that demonstrates why flooding and counting are
//! necessary under corrupted starts.

pub mod abp;
pub mod channel;
pub mod checker;
pub mod machine;
pub mod oracle;
pub mod packet;
pub mod scenario;
pub mod sdl;
pub mod sim;
pub mod trace;

pub use channel::{Channel, ChannelChoice};
pub use checker::{check_trace, CheckReport, SpecBounds, Verdict};
pub use machine::{arbitrary_config, clean_config, Abp, ConfigSnapshot, Configuration, DataLink, Sdl};
pub use packet::{AckPacket, AltBit, DataPacket, Direction, Payload, ProtocolParams, Token};
pub use scenario::{run_scenario, ScenarioId};
pub use sim::{replay, run, RunOutcome, SchedulerPolicy, SimStep};
pub use trace::{Event, EventKind, Trace};
