//! The stabilizing data-link machines: a sender that floods each payload
//! until it has collected `3c + 2` matching acknowledgments, and a receiver
//! that acts on a (payload, bit) pair only after counting `c + 1` copies.
//!
//! Every application message is preceded by a synchronization marker sent
//! under the opposite bit, so the marker absorbs whatever bit state the
//! receiver happens to be in and the payload itself is never the one that
//! gets sacrificed.
//!
//! All transitions are pure: they take a state by reference and return the
//! successor. The simulator, the explorer, and the tests all drive the same
//! functions.

use serde::{Deserialize, Serialize};

use crate::packet::{AckPacket, AltBit, DataPacket, Payload, ProtocolParams, Token};

// ---------------------------------------------------------------------------
// Sender
// ---------------------------------------------------------------------------

/// Where the sender is within one application send.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SenderPhase {
    /// Between sends; nothing in flight.
    Idle,
    /// Flooding the synchronization marker under the current bit.
    Synchro,
    /// Flooding the pending token under the current bit.
    Payload,
}

/// Sender process state.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct SenderState {
    pub phase: SenderPhase,
    pub ab: AltBit,
    /// Matching acknowledgments collected in the current phase.
    pub ack_count: u32,
    /// The token being carried; `None` exactly when idle.
    pub pending: Option<Token>,
}

impl SenderState {
    pub fn idle(ab: AltBit) -> Self {
        SenderState { phase: SenderPhase::Idle, ab, ack_count: 0, pending: None }
    }

    pub fn is_idle(&self) -> bool {
        self.phase == SenderPhase::Idle
    }

    /// Accept an application send request. The bit flips immediately: the
    /// synchronization marker travels under the flipped bit and the payload
    /// under the bit after that.
    ///
    /// Panics if the sender is mid-send; the application interface is
    /// blocking.
    pub fn begin_send(&self, m: &Token) -> SenderState {
        assert!(self.is_idle(), "begin_send on a busy sender");
        SenderState {
            phase: SenderPhase::Synchro,
            ab: self.ab.flipped(),
            ack_count: 0,
            pending: Some(m.clone()),
        }
    }

    /// The packet the current phase repeats on the wire.
    ///
    /// Panics when idle; an idle sender has nothing to say.
    pub fn current_packet(&self) -> DataPacket {
        let payload = match self.phase {
            SenderPhase::Idle => panic!("current_packet on an idle sender"),
            SenderPhase::Synchro => Payload::Synchro,
            SenderPhase::Payload => Payload::App {
                token: self.pending.clone().expect("payload phase with no pending token"),
            },
        };
        DataPacket { payload, ab: self.ab }
    }

    /// Process the result of one acknowledgment poll. A poll that returned
    /// nothing, or an echo of some other (payload, bit), changes nothing; a
    /// matching echo counts toward the `3c + 2` threshold. Crossing the
    /// threshold ends the phase: the marker phase rolls into the payload
    /// phase under the flipped bit, and the payload phase completes the send,
    /// returning the token to hand back to the application.
    ///
    /// Panics when idle.
    pub fn absorb_poll(
        &self,
        params: &ProtocolParams,
        polled: Option<&AckPacket>,
    ) -> (SenderState, Option<Token>) {
        assert!(!self.is_idle(), "absorb_poll on an idle sender");
        let expected = self.current_packet();
        let mut next = self.clone();
        if let Some(ack) = polled {
            if ack.payload == expected.payload && ack.ab == expected.ab {
                next.ack_count += 1;
            }
        }
        if next.ack_count < params.ack_threshold() {
            return (next, None);
        }
        match self.phase {
            SenderPhase::Synchro => {
                next.phase = SenderPhase::Payload;
                next.ab = next.ab.flipped();
                next.ack_count = 0;
                (next, None)
            }
            SenderPhase::Payload => {
                let done = next.pending.take().expect("payload phase with no pending token");
                next.phase = SenderPhase::Idle;
                next.ack_count = 0;
                (next, Some(done))
            }
            SenderPhase::Idle => unreachable!(),
        }
    }

    /// One iteration of the flooding loop: emit the current packet, then
    /// account for one poll. Returned as (successor, emitted packet,
    /// completed token). The emission is decided before the threshold is
    /// re-tested, matching the loop order send / poll / re-test.
    pub fn tick(
        &self,
        params: &ProtocolParams,
        polled: Option<&AckPacket>,
    ) -> (SenderState, DataPacket, Option<Token>) {
        let emitted = self.current_packet();
        let (next, done) = self.absorb_poll(params, polled);
        (next, emitted, done)
    }
}

// ---------------------------------------------------------------------------
// Receiver queue
// ---------------------------------------------------------------------------

/// One counted (payload, bit) pair.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct QueueEntry {
    pub payload: Payload,
    pub ab: AltBit,
    pub count: u32,
}

/// The receiver's bounded counting queue.
///
/// Holds at most `c + 1` entries, most recently touched first. Touching a
/// key promotes it to the front; a fresh key on a full queue evicts the
/// back entry. Counts saturate at `c + 1`.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReceiverQueue {
    entries: Vec<QueueEntry>,
}

impl ReceiverQueue {
    pub fn new() -> Self {
        ReceiverQueue::default()
    }

    /// Build a queue from explicit entries, front first. Used for priming
    /// initial configurations; enforces the structural invariants.
    pub fn from_entries(entries: Vec<QueueEntry>, params: &ProtocolParams) -> Self {
        assert!(
            entries.len() <= params.delivery_threshold() as usize,
            "queue holds at most c + 1 entries"
        );
        for e in &entries {
            assert!(e.count <= params.delivery_threshold(), "queue counts stay within c + 1");
        }
        let mut keys: Vec<_> = entries.iter().map(|e| (e.payload.clone(), e.ab)).collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), entries.len(), "queue keys must be distinct");
        ReceiverQueue { entries }
    }

    pub fn entries(&self) -> &[QueueEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Bump the counter for `(payload, ab)` and return its new value.
    ///
    /// A known key is promoted to the front; an unknown key is inserted at
    /// the front with its counter starting from zero before the bump, and if
    /// the queue is already at `c + 1` entries the least recently touched
    /// one is dropped to make room.
    pub fn touch(&mut self, payload: &Payload, ab: AltBit, params: &ProtocolParams) -> u32 {
        let cap = params.delivery_threshold() as usize;
        let entry = match self.entries.iter().position(|e| e.payload == *payload && e.ab == ab) {
            Some(pos) => self.entries.remove(pos),
            None => {
                if self.entries.len() == cap {
                    self.entries.pop();
                }
                QueueEntry { payload: payload.clone(), ab, count: 0 }
            }
        };
        let mut entry = entry;
        entry.count = (entry.count + 1).min(params.delivery_threshold());
        let count = entry.count;
        self.entries.insert(0, entry);
        count
    }
}

// ---------------------------------------------------------------------------
// Receiver
// ---------------------------------------------------------------------------

/// Receiver process state.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct ReceiverState {
    pub last_delivered: AltBit,
    pub queue: ReceiverQueue,
}

impl ReceiverState {
    pub fn fresh(last_delivered: AltBit) -> Self {
        ReceiverState { last_delivered, queue: ReceiverQueue::new() }
    }
}

/// What the receiver did with a packet, beyond acknowledging it.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum ReceiverAction {
    /// The packet's count crossed the threshold under a fresh bit and its
    /// token went up to the application.
    Delivered(Token),
    /// The synchronization marker crossed the threshold under a fresh bit
    /// and was consumed silently.
    DroppedSynchro,
    /// Counted (or ignored as a stale bit) — nothing reached the application.
    NoAction,
}

impl ReceiverState {
    /// Handle one arriving data packet. Total over all states and packets.
    ///
    /// The count for the packet's (payload, bit) pair is bumped; on reaching
    /// `c + 1` the pair is acted on — delivered, or silently dropped if it is
    /// the synchronization marker, and only if its bit differs from the bit
    /// of the last action — and the whole queue is reset either way. Every
    /// packet is acknowledged, acted on or not.
    pub fn on_packet(
        &self,
        params: &ProtocolParams,
        pkt: &DataPacket,
    ) -> (ReceiverState, ReceiverAction, AckPacket) {
        let mut next = self.clone();
        let count = next.queue.touch(&pkt.payload, pkt.ab, params);
        let mut action = ReceiverAction::NoAction;
        if count >= params.delivery_threshold() {
            if next.last_delivered != pkt.ab {
                action = match &pkt.payload {
                    Payload::App { token } => ReceiverAction::Delivered(token.clone()),
                    Payload::Synchro => ReceiverAction::DroppedSynchro,
                };
                next.last_delivered = pkt.ab;
            }
            next.queue.clear();
        }
        (next, action, AckPacket::echoing(pkt))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ProtocolParams {
        ProtocolParams::new(1)
    }

    fn tok(s: &str) -> Token {
        Token::new(s)
    }

    // -- sender ------------------------------------------------------------

    #[test]
    fn begin_send_flips_bit_and_enters_marker_phase() {
        let s = SenderState::idle(AltBit(false));
        let s2 = s.begin_send(&tok("A"));
        assert_eq!(s2.phase, SenderPhase::Synchro);
        assert_eq!(s2.ab, AltBit(true));
        assert_eq!(s2.ack_count, 0);
        assert_eq!(s2.pending, Some(tok("A")));
        // Source state untouched.
        assert!(s.is_idle());
    }

    #[test]
    #[should_panic(expected = "busy sender")]
    fn begin_send_requires_idle() {
        let s = SenderState::idle(AltBit(false)).begin_send(&tok("A"));
        s.begin_send(&tok("B"));
    }

    #[test]
    fn marker_phase_repeats_marker_under_current_bit() {
        let s = SenderState::idle(AltBit(false)).begin_send(&tok("A"));
        assert_eq!(
            s.current_packet(),
            DataPacket { payload: Payload::Synchro, ab: AltBit(true) }
        );
    }

    #[test]
    fn mismatched_or_missing_acks_do_not_count() {
        let p = params();
        let s = SenderState::idle(AltBit(false)).begin_send(&tok("A"));
        let (s1, _) = s.absorb_poll(&p, None);
        assert_eq!(s1.ack_count, 0);
        // Right payload, wrong bit.
        let wrong_bit = AckPacket { payload: Payload::Synchro, ab: AltBit(false) };
        let (s2, _) = s1.absorb_poll(&p, Some(&wrong_bit));
        assert_eq!(s2.ack_count, 0);
        // Right bit, wrong payload.
        let wrong_payload = AckPacket { payload: Payload::app("A"), ab: AltBit(true) };
        let (s3, _) = s2.absorb_poll(&p, Some(&wrong_payload));
        assert_eq!(s3.ack_count, 0);
    }

    #[test]
    fn wrong_bit_ack_in_payload_phase_still_emits() {
        let p = params();
        let s = SenderState {
            phase: SenderPhase::Payload,
            ab: AltBit(false),
            ack_count: 3,
            pending: Some(tok("A")),
        };
        let wrong_bit = AckPacket { payload: Payload::app("A"), ab: AltBit(true) };
        let (next, emitted, done) = s.tick(&p, Some(&wrong_bit));
        assert_eq!(next.ack_count, 3);
        assert_eq!(next.phase, SenderPhase::Payload);
        assert_eq!(emitted, DataPacket { payload: Payload::app("A"), ab: AltBit(false) });
        assert_eq!(done, None);
    }

    #[test]
    fn marker_threshold_rolls_into_payload_phase() {
        // c = 1: threshold 5. Four acks in, the fifth flips the phase.
        let p = params();
        let s = SenderState {
            phase: SenderPhase::Synchro,
            ab: AltBit(true),
            ack_count: 4,
            pending: Some(tok("A")),
        };
        let matching = AckPacket { payload: Payload::Synchro, ab: AltBit(true) };
        let (next, emitted, done) = s.tick(&p, Some(&matching));
        assert_eq!(emitted, DataPacket { payload: Payload::Synchro, ab: AltBit(true) });
        assert_eq!(next.phase, SenderPhase::Payload);
        assert_eq!(next.ab, AltBit(false));
        assert_eq!(next.ack_count, 0);
        assert_eq!(done, None);
    }

    #[test]
    fn payload_threshold_completes_the_send() {
        let p = params();
        let s = SenderState {
            phase: SenderPhase::Payload,
            ab: AltBit(false),
            ack_count: 4,
            pending: Some(tok("A")),
        };
        let matching = AckPacket { payload: Payload::app("A"), ab: AltBit(false) };
        let (next, _, done) = s.tick(&p, Some(&matching));
        assert!(next.is_idle());
        assert_eq!(next.ab, AltBit(false));
        assert_eq!(next.pending, None);
        assert_eq!(done, Some(tok("A")));
    }

    #[test]
    fn full_send_needs_exactly_two_threshold_rounds() {
        // Drive a lone sender with always-matching acks and count emissions.
        let p = params();
        let mut s = SenderState::idle(AltBit(false)).begin_send(&tok("A"));
        let mut emitted = 0u32;
        let mut completions = Vec::new();
        while !s.is_idle() {
            let ack = AckPacket::echoing(&s.current_packet());
            let (next, _pkt, done) = s.tick(&p, Some(&ack));
            emitted += 1;
            completions.extend(done);
            s = next;
            assert!(emitted <= 100, "sender failed to terminate");
        }
        assert_eq!(emitted, p.packets_per_message());
        assert_eq!(completions, vec![tok("A")]);
    }

    #[test]
    #[should_panic(expected = "idle sender")]
    fn tick_requires_an_active_phase() {
        let p = params();
        let s = SenderState::idle(AltBit(false));
        s.tick(&p, None);
    }

    // -- queue ---------------------------------------------------------------

    #[test]
    fn fresh_key_enters_at_front_counting_from_zero() {
        let p = params();
        let mut q = ReceiverQueue::new();
        let count = q.touch(&Payload::app("A"), AltBit(true), &p);
        assert_eq!(count, 1);
        assert_eq!(q.entries().len(), 1);
        assert_eq!(q.entries()[0].count, 1);
    }

    #[test]
    fn full_queue_evicts_least_recently_touched() {
        // c = 1: at most two entries.
        let p = params();
        let mut q = ReceiverQueue::from_entries(
            vec![
                QueueEntry { payload: Payload::app("A"), ab: AltBit(true), count: 1 },
                QueueEntry { payload: Payload::app("B"), ab: AltBit(false), count: 2 },
            ],
            &p,
        );
        q.touch(&Payload::app("C"), AltBit(true), &p);
        let keys: Vec<_> = q.entries().iter().map(|e| (e.payload.clone(), e.ab)).collect();
        assert_eq!(
            keys,
            vec![
                (Payload::app("C"), AltBit(true)),
                (Payload::app("A"), AltBit(true)),
            ]
        );
        assert_eq!(q.entries()[0].count, 1);
    }

    #[test]
    fn touching_a_known_key_promotes_it() {
        let p = ProtocolParams::new(2);
        let mut q = ReceiverQueue::from_entries(
            vec![
                QueueEntry { payload: Payload::app("A"), ab: AltBit(true), count: 1 },
                QueueEntry { payload: Payload::app("B"), ab: AltBit(false), count: 1 },
            ],
            &p,
        );
        q.touch(&Payload::app("B"), AltBit(false), &p);
        let keys: Vec<_> = q.entries().iter().map(|e| (e.payload.clone(), e.ab)).collect();
        assert_eq!(
            keys,
            vec![
                (Payload::app("B"), AltBit(false)),
                (Payload::app("A"), AltBit(true)),
            ]
        );
        assert_eq!(q.entries()[0].count, 2);
    }

    #[test]
    fn counts_saturate_at_threshold() {
        let p = params();
        let mut q = ReceiverQueue::new();
        for _ in 0..10 {
            q.touch(&Payload::app("A"), AltBit(true), &p);
        }
        assert_eq!(q.entries()[0].count, p.delivery_threshold());
    }

    // -- receiver ------------------------------------------------------------

    #[test]
    fn first_copy_only_counts_and_acks() {
        let p = params();
        let r = ReceiverState::fresh(AltBit(false));
        let pkt = DataPacket { payload: Payload::app("A"), ab: AltBit(true) };
        let (r2, action, ack) = r.on_packet(&p, &pkt);
        assert_eq!(action, ReceiverAction::NoAction);
        assert_eq!(ack, AckPacket { payload: Payload::app("A"), ab: AltBit(true) });
        assert_eq!(r2.queue.entries().len(), 1);
        assert_eq!(r2.last_delivered, AltBit(false));
    }

    #[test]
    fn threshold_with_fresh_bit_delivers_and_resets() {
        let p = params();
        let r = ReceiverState {
            last_delivered: AltBit(false),
            queue: ReceiverQueue::from_entries(
                vec![QueueEntry { payload: Payload::app("A"), ab: AltBit(true), count: 1 }],
                &p,
            ),
        };
        let pkt = DataPacket { payload: Payload::app("A"), ab: AltBit(true) };
        let (r2, action, _) = r.on_packet(&p, &pkt);
        assert_eq!(action, ReceiverAction::Delivered(tok("A")));
        assert_eq!(r2.last_delivered, AltBit(true));
        assert!(r2.queue.is_empty());
    }

    #[test]
    fn threshold_with_stale_bit_resets_without_delivering() {
        let p = params();
        let r = ReceiverState {
            last_delivered: AltBit(true),
            queue: ReceiverQueue::from_entries(
                vec![QueueEntry { payload: Payload::Synchro, ab: AltBit(true), count: 1 }],
                &p,
            ),
        };
        let pkt = DataPacket { payload: Payload::Synchro, ab: AltBit(true) };
        let (r2, action, ack) = r.on_packet(&p, &pkt);
        assert_eq!(action, ReceiverAction::NoAction);
        assert_eq!(r2.last_delivered, AltBit(true));
        assert!(r2.queue.is_empty());
        // Still acknowledged.
        assert_eq!(ack, AckPacket { payload: Payload::Synchro, ab: AltBit(true) });

        // Same shape with an application payload: stale bit suppresses the
        // delivery but not the reset.
        let r = ReceiverState {
            last_delivered: AltBit(true),
            queue: ReceiverQueue::from_entries(
                vec![QueueEntry { payload: Payload::app("A"), ab: AltBit(true), count: 1 }],
                &p,
            ),
        };
        let pkt = DataPacket { payload: Payload::app("A"), ab: AltBit(true) };
        let (r2, action, _) = r.on_packet(&p, &pkt);
        assert_eq!(action, ReceiverAction::NoAction);
        assert!(r2.queue.is_empty());
    }

    #[test]
    fn marker_at_threshold_is_dropped_not_delivered() {
        let p = params();
        let r = ReceiverState {
            last_delivered: AltBit(false),
            queue: ReceiverQueue::from_entries(
                vec![QueueEntry { payload: Payload::Synchro, ab: AltBit(true), count: 1 }],
                &p,
            ),
        };
        let pkt = DataPacket { payload: Payload::Synchro, ab: AltBit(true) };
        let (r2, action, _) = r.on_packet(&p, &pkt);
        assert_eq!(action, ReceiverAction::DroppedSynchro);
        assert_eq!(r2.last_delivered, AltBit(true));
        assert!(r2.queue.is_empty());
    }

    #[test]
    fn preloaded_saturated_count_fires_on_next_copy() {
        let p = params();
        let r = ReceiverState {
            last_delivered: AltBit(false),
            queue: ReceiverQueue::from_entries(
                vec![QueueEntry { payload: Payload::app("g"), ab: AltBit(true), count: 2 }],
                &p,
            ),
        };
        let pkt = DataPacket { payload: Payload::app("g"), ab: AltBit(true) };
        let (_, action, _) = r.on_packet(&p, &pkt);
        assert_eq!(action, ReceiverAction::Delivered(tok("g")));
    }
}
