//! Textbook stop-and-wait alternating-bit machines, used as the negative
//! control: no copy counting, no synchronization marker, a single matching
//! acknowledgment completes a send. Correct on a clean start, demonstrably
//! unsafe when channels start with ghost packets under both bit values.
//!
//! The shapes deliberately mirror [`crate::sdl`] so the two protocols are
//! interchangeable behind one trait.

use serde::{Deserialize, Serialize};

use crate::packet::{AckPacket, AltBit, DataPacket, Payload, ProtocolParams, Token};

/// ABP sender: either idle, or repeating `(pending, ab)` until one echo
/// matches.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct AbpSenderState {
    pub ab: AltBit,
    /// The token in flight; `None` when idle.
    pub pending: Option<Token>,
}

impl AbpSenderState {
    pub fn idle(ab: AltBit) -> Self {
        AbpSenderState { ab, pending: None }
    }

    pub fn is_idle(&self) -> bool {
        self.pending.is_none()
    }

    /// Accept an application send. The bit is not flipped here: it flips
    /// when the acknowledgment arrives, so consecutive messages alternate.
    pub fn begin_send(&self, m: &Token) -> AbpSenderState {
        assert!(self.is_idle(), "begin_send on a busy sender");
        AbpSenderState { ab: self.ab, pending: Some(m.clone()) }
    }

    pub fn current_packet(&self) -> DataPacket {
        let token = self.pending.clone().expect("current_packet on an idle sender");
        DataPacket { payload: Payload::App { token }, ab: self.ab }
    }

    /// Account for one acknowledgment poll: a single matching echo completes
    /// the send and flips the bit for the next one.
    pub fn absorb_poll(
        &self,
        _params: &ProtocolParams,
        polled: Option<&AckPacket>,
    ) -> (AbpSenderState, Option<Token>) {
        assert!(!self.is_idle(), "absorb_poll on an idle sender");
        let expected = self.current_packet();
        if let Some(ack) = polled {
            if ack.payload == expected.payload && ack.ab == expected.ab {
                let done = self.pending.clone();
                return (AbpSenderState { ab: self.ab.flipped(), pending: None }, done);
            }
        }
        (self.clone(), None)
    }
}

/// ABP receiver: delivers the first packet whose bit differs from the last
/// delivered one, and acknowledges everything.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct AbpReceiverState {
    pub last_delivered: AltBit,
}

impl AbpReceiverState {
    pub fn fresh(last_delivered: AltBit) -> Self {
        AbpReceiverState { last_delivered }
    }

    pub fn on_packet(
        &self,
        _params: &ProtocolParams,
        pkt: &DataPacket,
    ) -> (AbpReceiverState, Option<Token>, AckPacket) {
        let mut delivered = None;
        let mut next = *self;
        if pkt.ab != self.last_delivered {
            if let Payload::App { token } = &pkt.payload {
                delivered = Some(token.clone());
            }
            next.last_delivered = pkt.ab;
        }
        (next, delivered, AckPacket::echoing(pkt))
    }
}
