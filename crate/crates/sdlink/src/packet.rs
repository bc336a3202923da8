//! Wire-level vocabulary: tokens, payloads, alternating bit, packets, and the
//! protocol parameters everything else is derived from.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// An application-level message body. Tokens are opaque byte strings; the
/// harness that feeds a run is responsible for making them distinct when it
/// wants distinguishable messages.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(Arc<str>);

impl Token {
    pub fn new(s: impl AsRef<str>) -> Self {
        Token(Arc::from(s.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl From<&str> for Token {
    fn from(s: &str) -> Self {
        Token::new(s)
    }
}

/// What a data packet carries: either the out-of-band synchronization marker
/// or an application token. The marker is its own variant, so no application
/// token can ever collide with it.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Synchro,
    App { token: Token },
}

impl Payload {
    pub fn app(token: impl Into<Token>) -> Self {
        Payload::App { token: token.into() }
    }

    pub fn is_synchro(&self) -> bool {
        matches!(self, Payload::Synchro)
    }

    pub fn token(&self) -> Option<&Token> {
        match self {
            Payload::Synchro => None,
            Payload::App { token } => Some(token),
        }
    }
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payload::Synchro => f.write_str("<synchro>"),
            Payload::App { token } => write!(f, "{token}"),
        }
    }
}

/// The alternating bit attached to every packet.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AltBit(pub bool);

impl AltBit {
    pub fn flipped(self) -> AltBit {
        AltBit(!self.0)
    }
}

impl fmt::Display for AltBit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.0 { "1" } else { "0" })
    }
}

/// Direction of a wire event, used in traces.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Sender-to-receiver channel.
    Data,
    /// Receiver-to-sender channel.
    Ack,
}

/// A packet on the sender-to-receiver channel.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct DataPacket {
    pub payload: Payload,
    pub ab: AltBit,
}

/// A packet on the receiver-to-sender channel: an echo of the data packet it
/// acknowledges.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct AckPacket {
    pub payload: Payload,
    pub ab: AltBit,
}

impl AckPacket {
    /// The acknowledgment echoing `pkt`.
    pub fn echoing(pkt: &DataPacket) -> Self {
        AckPacket { payload: pkt.payload.clone(), ab: pkt.ab }
    }
}

/// Protocol parameters. Everything is derived from the channel capacity `c`.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct ProtocolParams {
    c: u32,
}

impl ProtocolParams {
    /// Panics if `c` is zero; the protocol is defined for capacity >= 1.
    pub fn new(c: u32) -> Self {
        assert!(c >= 1, "channel capacity must be at least 1");
        ProtocolParams { c }
    }

    /// Channel capacity.
    pub fn c(&self) -> u32 {
        self.c
    }

    /// Matching acknowledgments the sender collects before it considers one
    /// repeated payload done: 3c + 2.
    pub fn ack_threshold(&self) -> u32 {
        3 * self.c + 2
    }

    /// Copies of one (payload, bit) pair the receiver counts before it acts
    /// on it: c + 1.
    pub fn delivery_threshold(&self) -> u32 {
        self.c + 1
    }

    /// Data packets a fault-free lock-step delivery costs per application
    /// message: one full round of acknowledgments for the synchronization
    /// marker plus one for the payload.
    pub fn packets_per_message(&self) -> u32 {
        2 * self.ack_threshold()
    }
}
