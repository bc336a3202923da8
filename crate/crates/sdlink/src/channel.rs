//! Bounded, non-FIFO, lossy channels.
//!
//! A channel is a multiset of at most `capacity` packets. Nothing about
//! ordering is promised: every receive names which resident packet it takes
//! (or takes none), every overflowing send names a victim, and spontaneous
//! loss names its target. All nondeterminism is externalized through
//! [`ChannelChoice`] so schedulers can sample it and the explorer can
//! enumerate it.
//!
//! Residents are kept in a canonical order — sorted by packet value, ties
//! broken by insertion sequence — so an index means the same thing to every
//! consumer of the same state.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One resolved nondeterministic channel decision.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(tag = "choice", rename_all = "snake_case")]
pub enum ChannelChoice {
    /// Receive the resident at this canonical index.
    DeliverIndex { index: usize },
    /// Receive nothing (a null receive).
    DeliverNull,
    /// On overflow, drop the resident at this canonical index to make room.
    EvictIndex { index: usize },
    /// On overflow, drop the incoming packet itself.
    EvictIncoming,
    /// Spontaneously lose the resident at this canonical index.
    LoseIndex { index: usize },
}

/// Raised by [`Channel::with_ghosts`] when the initial contents would exceed
/// the capacity bound.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("channel holds at most {capacity} packets, got {offered}")]
pub struct OverCapacity {
    pub capacity: usize,
    pub offered: usize,
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
struct Slot<P> {
    packet: P,
    seq: u64,
}

/// A c-bounded multiset of in-flight packets of one wire kind.
///
/// The type parameter pins the wire kind, so a data channel cannot be handed
/// an acknowledgment or vice versa.
#[derive(Clone, Debug)]
pub struct Channel<P> {
    capacity: usize,
    slots: Vec<Slot<P>>,
    next_seq: u64,
}

// Equality is the observable state: capacity and the packet multiset. The
// arrival stamps that disambiguate duplicates internally are not part of it,
// so two channels that hold the same packets compare equal regardless of
// which duplicate arrived first.
impl<P: PartialEq> PartialEq for Channel<P> {
    fn eq(&self, other: &Self) -> bool {
        self.capacity == other.capacity
            && self.slots.len() == other.slots.len()
            && self.slots.iter().zip(&other.slots).all(|(a, b)| a.packet == b.packet)
    }
}

impl<P: Eq> Eq for Channel<P> {}

impl<P: std::hash::Hash> std::hash::Hash for Channel<P> {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.capacity.hash(state);
        self.slots.len().hash(state);
        for slot in &self.slots {
            slot.packet.hash(state);
        }
    }
}

impl<P: Clone + Ord> Channel<P> {
    pub fn empty(capacity: u32) -> Self {
        assert!(capacity >= 1, "channel capacity must be at least 1");
        Channel { capacity: capacity as usize, slots: Vec::new(), next_seq: 0 }
    }

    /// A channel pre-loaded with leftover packets from before time zero.
    pub fn with_ghosts(capacity: u32, ghosts: Vec<P>) -> Result<Self, OverCapacity> {
        let mut ch = Channel::empty(capacity);
        if ghosts.len() > ch.capacity {
            return Err(OverCapacity { capacity: ch.capacity, offered: ghosts.len() });
        }
        for g in ghosts {
            ch.insert(g);
        }
        Ok(ch)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.slots.len() == self.capacity
    }

    /// Residents in canonical order.
    pub fn packets(&self) -> impl Iterator<Item = &P> {
        self.slots.iter().map(|s| &s.packet)
    }

    /// Canonical index of some resident equal to `packet`, if any.
    pub fn index_of(&self, packet: &P) -> Option<usize> {
        self.slots.iter().position(|s| s.packet == *packet)
    }

    fn insert(&mut self, packet: P) {
        let seq = self.next_seq;
        self.next_seq += 1;
        let key = (packet.clone(), seq);
        let pos = self
            .slots
            .partition_point(|s| (s.packet.clone(), s.seq) < key);
        self.slots.insert(pos, Slot { packet, seq });
    }

    /// Put `packet` in flight. A full channel must be told what to drop:
    /// `eviction` is required exactly when the channel is full, and the
    /// dropped packet (which may be the incoming one) is returned.
    pub fn send(&mut self, packet: P, eviction: Option<ChannelChoice>) -> Option<P> {
        if !self.is_full() {
            assert!(
                eviction.is_none(),
                "eviction choice supplied to a channel that is not full"
            );
            self.insert(packet);
            return None;
        }
        match eviction.expect("send into a full channel requires an eviction choice") {
            ChannelChoice::EvictIncoming => Some(packet),
            ChannelChoice::EvictIndex { index } => {
                let victim = self.slots.remove(index).packet;
                self.insert(packet);
                Some(victim)
            }
            other => panic!("not an eviction choice: {other:?}"),
        }
    }

    /// Execute a receive operation. `DeliverNull` models the receive that
    /// returns nothing; `DeliverIndex` removes and returns that resident.
    pub fn take(&mut self, choice: ChannelChoice) -> Option<P> {
        match choice {
            ChannelChoice::DeliverNull => None,
            ChannelChoice::DeliverIndex { index } => Some(self.slots.remove(index).packet),
            other => panic!("not a receive choice: {other:?}"),
        }
    }

    /// Spontaneously lose the resident at `index`.
    pub fn lose(&mut self, index: usize) -> P {
        self.slots.remove(index).packet
    }
}
