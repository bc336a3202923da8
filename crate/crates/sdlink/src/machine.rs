//! The common shape of a stop-and-wait data-link protocol, so the simulator,
//! the trace checker, and the exhaustive explorer can drive the counting
//! protocol and the plain alternating-bit baseline through one interface.
//!
//! A [`Configuration`] is the complete global state: both process states and
//! both directed channels. Everything needed to continue an execution is in
//! it — which is what makes arbitrary initialization meaningful.

use std::collections::BTreeSet;
use std::fmt::Debug;
use std::hash::Hash;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::abp::{AbpReceiverState, AbpSenderState};
use crate::channel::Channel;
use crate::packet::{AckPacket, AltBit, DataPacket, Payload, ProtocolParams, Token};
use crate::sdl::{QueueEntry, ReceiverAction, ReceiverQueue, ReceiverState, SenderPhase, SenderState};

/// A two-process data-link protocol: a sender that floods packets and
/// absorbs acknowledgment polls, and a receiver that turns packets into
/// deliveries and echoes.
///
/// Implementations are zero-sized markers; all state lives in the associated
/// types. Transitions must be pure.
pub trait DataLink: Copy + Clone + Eq + Hash + Debug + Send + Sync + 'static {
    /// Short stable name, used on the command line and in trace headers.
    const NAME: &'static str;

    type Sender: Clone + PartialEq + Eq + Hash + Debug + Send + Sync;
    type Receiver: Clone + PartialEq + Eq + Hash + Debug + Send + Sync;

    fn sender_is_idle(s: &Self::Sender) -> bool;
    /// The token the sender is currently carrying, if any.
    fn pending_token(s: &Self::Sender) -> Option<&Token>;
    fn begin_send(s: &Self::Sender, m: &Token) -> Self::Sender;
    fn current_packet(s: &Self::Sender) -> DataPacket;
    fn absorb_poll(
        s: &Self::Sender,
        params: &ProtocolParams,
        polled: Option<&AckPacket>,
    ) -> (Self::Sender, Option<Token>);
    fn on_packet(
        r: &Self::Receiver,
        params: &ProtocolParams,
        pkt: &DataPacket,
    ) -> (Self::Receiver, ReceiverAction, AckPacket);
    /// Number of counted entries the receiver is holding (0 for machines
    /// without a counting queue). Used to observe queue resets.
    fn receiver_queue_len(r: &Self::Receiver) -> usize;

    fn clean_sender() -> Self::Sender;
    fn clean_receiver() -> Self::Receiver;

    /// Draw a syntactically valid sender state.
    fn arbitrary_sender(
        rng: &mut impl Rng,
        alphabet: &[Token],
        params: &ProtocolParams,
    ) -> Self::Sender;
    /// Draw a syntactically valid receiver state. `sender_mid_send` is true
    /// when the paired sender was generated mid-send; see the notes on
    /// [`arbitrary_config`] for why the receiver generator wants to know.
    fn arbitrary_receiver(
        rng: &mut impl Rng,
        alphabet: &[Token],
        params: &ProtocolParams,
        sender_mid_send: bool,
    ) -> Self::Receiver;

    /// Every valid sender state over a bounded token alphabet.
    fn enumerate_senders(alphabet: &[Token], params: &ProtocolParams) -> Vec<Self::Sender>;
    /// Every valid receiver state over a bounded token alphabet.
    fn enumerate_receivers(alphabet: &[Token], params: &ProtocolParams) -> Vec<Self::Receiver>;

    fn snapshot(cfg: &Configuration<Self>) -> ConfigSnapshot;
    /// Rebuild a configuration from a snapshot; `None` if the snapshot
    /// belongs to the other protocol.
    fn from_snapshot(snap: &ConfigSnapshot) -> Option<Configuration<Self>>;
}

/// Complete global state of one protocol instance.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Configuration<P: DataLink> {
    pub sender: P::Sender,
    pub receiver: P::Receiver,
    /// Sender-to-receiver channel.
    pub chan_data: Channel<DataPacket>,
    /// Receiver-to-sender channel.
    pub chan_ack: Channel<AckPacket>,
    pub params: ProtocolParams,
}

impl<P: DataLink> Configuration<P> {
    pub fn snapshot(&self) -> ConfigSnapshot {
        P::snapshot(self)
    }
}

/// Serializable image of a [`Configuration`], tagged by protocol. Channel
/// contents are listed in canonical order.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "snake_case")]
pub enum ConfigSnapshot {
    Sdl {
        c: u32,
        sender: SenderState,
        receiver: ReceiverState,
        chan_data: Vec<DataPacket>,
        chan_ack: Vec<AckPacket>,
    },
    Abp {
        c: u32,
        sender: AbpSenderState,
        receiver: AbpReceiverState,
        chan_data: Vec<DataPacket>,
        chan_ack: Vec<AckPacket>,
    },
}

impl ConfigSnapshot {
    pub fn protocol_name(&self) -> &'static str {
        match self {
            ConfigSnapshot::Sdl { .. } => Sdl::NAME,
            ConfigSnapshot::Abp { .. } => Abp::NAME,
        }
    }

    pub fn capacity(&self) -> u32 {
        match self {
            ConfigSnapshot::Sdl { c, .. } | ConfigSnapshot::Abp { c, .. } => *c,
        }
    }
}

/// A clean start: idle sender, fresh receiver, empty channels. The two
/// processes begin in bit agreement such that the first send is delivered.
pub fn clean_config<P: DataLink>(params: ProtocolParams) -> Configuration<P> {
    Configuration {
        sender: P::clean_sender(),
        receiver: P::clean_receiver(),
        chan_data: Channel::empty(params.c()),
        chan_ack: Channel::empty(params.c()),
        params,
    }
}

/// An adversarially corrupted start: process states drawn from the full
/// valid state space and up to `c` ghost packets per channel, deterministic
/// in the generator.
///
/// One correlation is imposed rather than drawn freely. When the sender
/// starts mid-send, its in-flight token was never requested in this
/// execution, yet it will be flooded and typically delivered — that delivery
/// legitimately occupies the one foreign-prefix slot the delivered sequence
/// is allowed. A receiver whose queue *additionally* holds an
/// application-payload entry primed to fire under a fresh bit could then
/// deliver a second foreign token, and no protocol can tell these two
/// corruptions apart. So when (and only when) the sender starts mid-send,
/// primed application entries in the receiver queue are pinned to the bit
/// that cannot fire. Ghost packets in the channels and marker entries in the
/// queue remain unconstrained, and an idle-sender start is drawn from the
/// full space.
pub fn arbitrary_config<P: DataLink>(
    rng: &mut impl Rng,
    alphabet: &[Token],
    params: ProtocolParams,
) -> Configuration<P> {
    assert!(!alphabet.is_empty(), "ghost alphabet must be non-empty");
    let sender = P::arbitrary_sender(rng, alphabet, &params);
    let mid = !P::sender_is_idle(&sender);
    let receiver = P::arbitrary_receiver(rng, alphabet, &params, mid);
    let data_ghosts = arbitrary_packets(rng, alphabet, &params, P::NAME == Abp::NAME)
        .into_iter()
        .map(|(payload, ab)| DataPacket { payload, ab })
        .collect();
    let ack_ghosts = arbitrary_packets(rng, alphabet, &params, P::NAME == Abp::NAME)
        .into_iter()
        .map(|(payload, ab)| AckPacket { payload, ab })
        .collect();
    Configuration {
        sender,
        receiver,
        chan_data: Channel::with_ghosts(params.c(), data_ghosts)
            .expect("generator respects channel capacity"),
        chan_ack: Channel::with_ghosts(params.c(), ack_ghosts)
            .expect("generator respects channel capacity"),
        params,
    }
}

/// Up to `c` random (payload, bit) pairs. The baseline never uses the
/// synchronization marker, so its ghosts are application payloads only.
fn arbitrary_packets(
    rng: &mut impl Rng,
    alphabet: &[Token],
    params: &ProtocolParams,
    app_only: bool,
) -> Vec<(Payload, AltBit)> {
    let n = rng.gen_range(0..=params.c());
    (0..n)
        .map(|_| {
            let payload = if !app_only && rng.gen_ratio(1, (alphabet.len() + 1) as u32) {
                Payload::Synchro
            } else {
                Payload::App { token: alphabet.choose(rng).unwrap().clone() }
            };
            (payload, AltBit(rng.gen()))
        })
        .collect()
}

fn arbitrary_token(rng: &mut impl Rng, alphabet: &[Token]) -> Token {
    alphabet.choose(rng).unwrap().clone()
}

// ---------------------------------------------------------------------------
// The counting protocol
// ---------------------------------------------------------------------------

/// Marker for the counting protocol: `3c+2` acknowledgments per phase, a
/// synchronization-marker phase before every payload, `c+1` copies to act.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct Sdl;

impl DataLink for Sdl {
    const NAME: &'static str = "sdl";

    type Sender = SenderState;
    type Receiver = ReceiverState;

    fn sender_is_idle(s: &SenderState) -> bool {
        s.is_idle()
    }

    fn pending_token(s: &SenderState) -> Option<&Token> {
        s.pending.as_ref()
    }

    fn begin_send(s: &SenderState, m: &Token) -> SenderState {
        s.begin_send(m)
    }

    fn current_packet(s: &SenderState) -> DataPacket {
        s.current_packet()
    }

    fn absorb_poll(
        s: &SenderState,
        params: &ProtocolParams,
        polled: Option<&AckPacket>,
    ) -> (SenderState, Option<Token>) {
        s.absorb_poll(params, polled)
    }

    fn on_packet(
        r: &ReceiverState,
        params: &ProtocolParams,
        pkt: &DataPacket,
    ) -> (ReceiverState, ReceiverAction, AckPacket) {
        r.on_packet(params, pkt)
    }

    fn receiver_queue_len(r: &ReceiverState) -> usize {
        r.queue.entries().len()
    }

    fn clean_sender() -> SenderState {
        SenderState::idle(AltBit(false))
    }

    fn clean_receiver() -> ReceiverState {
        ReceiverState::fresh(AltBit(false))
    }

    fn arbitrary_sender(
        rng: &mut impl Rng,
        alphabet: &[Token],
        params: &ProtocolParams,
    ) -> SenderState {
        let ab = AltBit(rng.gen());
        match [SenderPhase::Idle, SenderPhase::Synchro, SenderPhase::Payload]
            .choose(rng)
            .unwrap()
        {
            SenderPhase::Idle => SenderState::idle(ab),
            phase => SenderState {
                phase: *phase,
                ab,
                ack_count: rng.gen_range(0..params.ack_threshold()),
                pending: Some(arbitrary_token(rng, alphabet)),
            },
        }
    }

    fn arbitrary_receiver(
        rng: &mut impl Rng,
        alphabet: &[Token],
        params: &ProtocolParams,
        sender_mid_send: bool,
    ) -> ReceiverState {
        let last_delivered = AltBit(rng.gen());
        // Candidate queue keys. Marker entries may sit under either bit;
        // application entries are free only when the sender starts idle (see
        // `arbitrary_config`).
        let mut pool: Vec<(Payload, AltBit)> =
            vec![(Payload::Synchro, AltBit(false)), (Payload::Synchro, AltBit(true))];
        for t in alphabet {
            if sender_mid_send {
                pool.push((Payload::App { token: t.clone() }, last_delivered));
            } else {
                pool.push((Payload::App { token: t.clone() }, AltBit(false)));
                pool.push((Payload::App { token: t.clone() }, AltBit(true)));
            }
        }
        pool.shuffle(rng);
        let max_len = (params.delivery_threshold() as usize).min(pool.len());
        let len = rng.gen_range(0..=max_len);
        let entries = pool
            .into_iter()
            .take(len)
            .map(|(payload, ab)| QueueEntry {
                payload,
                ab,
                count: rng.gen_range(0..=params.delivery_threshold()),
            })
            .collect();
        ReceiverState {
            last_delivered,
            queue: ReceiverQueue::from_entries(entries, params),
        }
    }

    fn enumerate_senders(alphabet: &[Token], params: &ProtocolParams) -> Vec<SenderState> {
        let mut out = Vec::new();
        for ab in [AltBit(false), AltBit(true)] {
            out.push(SenderState::idle(ab));
        }
        for phase in [SenderPhase::Synchro, SenderPhase::Payload] {
            for ab in [AltBit(false), AltBit(true)] {
                for ack_count in 0..params.ack_threshold() {
                    for t in alphabet {
                        out.push(SenderState {
                            phase,
                            ab,
                            ack_count,
                            pending: Some(t.clone()),
                        });
                    }
                }
            }
        }
        out
    }

    fn enumerate_receivers(alphabet: &[Token], params: &ProtocolParams) -> Vec<ReceiverState> {
        let keys = wire_values(alphabet);
        let mut queues: Vec<Vec<QueueEntry>> = Vec::new();
        let mut partial: Vec<QueueEntry> = Vec::new();
        enumerate_queues(&keys, params, &mut partial, &mut queues);
        let mut out = Vec::new();
        for ld in [AltBit(false), AltBit(true)] {
            for q in &queues {
                out.push(ReceiverState {
                    last_delivered: ld,
                    queue: ReceiverQueue::from_entries(q.clone(), params),
                });
            }
        }
        out
    }

    fn snapshot(cfg: &Configuration<Self>) -> ConfigSnapshot {
        ConfigSnapshot::Sdl {
            c: cfg.params.c(),
            sender: cfg.sender.clone(),
            receiver: cfg.receiver.clone(),
            chan_data: cfg.chan_data.packets().cloned().collect(),
            chan_ack: cfg.chan_ack.packets().cloned().collect(),
        }
    }

    fn from_snapshot(snap: &ConfigSnapshot) -> Option<Configuration<Self>> {
        match snap {
            ConfigSnapshot::Sdl { c, sender, receiver, chan_data, chan_ack } => {
                let params = ProtocolParams::new(*c);
                Some(Configuration {
                    sender: sender.clone(),
                    receiver: receiver.clone(),
                    chan_data: Channel::with_ghosts(*c, chan_data.clone()).ok()?,
                    chan_ack: Channel::with_ghosts(*c, chan_ack.clone()).ok()?,
                    params,
                })
            }
            ConfigSnapshot::Abp { .. } => None,
        }
    }
}

/// All (payload, bit) wire values over an alphabet, in a stable order.
pub fn wire_values(alphabet: &[Token]) -> Vec<(Payload, AltBit)> {
    let mut payloads = vec![Payload::Synchro];
    payloads.extend(alphabet.iter().map(|t| Payload::App { token: t.clone() }));
    let mut out = Vec::new();
    for p in payloads {
        for ab in [AltBit(false), AltBit(true)] {
            out.push((p.clone(), ab));
        }
    }
    out
}

/// All ordered queues of distinct keys, length ≤ c+1, each count in
/// [0, c+1].
fn enumerate_queues(
    keys: &[(Payload, AltBit)],
    params: &ProtocolParams,
    partial: &mut Vec<QueueEntry>,
    out: &mut Vec<Vec<QueueEntry>>,
) {
    out.push(partial.clone());
    if partial.len() == params.delivery_threshold() as usize {
        return;
    }
    let used: BTreeSet<_> =
        partial.iter().map(|e| (e.payload.clone(), e.ab)).collect();
    for (payload, ab) in keys {
        if used.contains(&(payload.clone(), *ab)) {
            continue;
        }
        for count in 0..=params.delivery_threshold() {
            partial.push(QueueEntry { payload: payload.clone(), ab: *ab, count });
            enumerate_queues(keys, params, partial, out);
            partial.pop();
        }
    }
}

// ---------------------------------------------------------------------------
// The alternating-bit baseline
// ---------------------------------------------------------------------------

/// Marker for the plain alternating-bit baseline: one matching
/// acknowledgment completes a send, one fresh-bit packet delivers.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct Abp;

impl DataLink for Abp {
    const NAME: &'static str = "abp";

    type Sender = AbpSenderState;
    type Receiver = AbpReceiverState;

    fn sender_is_idle(s: &AbpSenderState) -> bool {
        s.is_idle()
    }

    fn pending_token(s: &AbpSenderState) -> Option<&Token> {
        s.pending.as_ref()
    }

    fn begin_send(s: &AbpSenderState, m: &Token) -> AbpSenderState {
        s.begin_send(m)
    }

    fn current_packet(s: &AbpSenderState) -> DataPacket {
        s.current_packet()
    }

    fn absorb_poll(
        s: &AbpSenderState,
        params: &ProtocolParams,
        polled: Option<&AckPacket>,
    ) -> (AbpSenderState, Option<Token>) {
        s.absorb_poll(params, polled)
    }

    fn on_packet(
        r: &AbpReceiverState,
        params: &ProtocolParams,
        pkt: &DataPacket,
    ) -> (AbpReceiverState, ReceiverAction, AckPacket) {
        let (next, delivered, ack) = r.on_packet(params, pkt);
        let action = match delivered {
            Some(token) => ReceiverAction::Delivered(token),
            None => ReceiverAction::NoAction,
        };
        (next, action, ack)
    }

    fn receiver_queue_len(_r: &AbpReceiverState) -> usize {
        0
    }

    fn clean_sender() -> AbpSenderState {
        AbpSenderState::idle(AltBit(true))
    }

    fn clean_receiver() -> AbpReceiverState {
        AbpReceiverState::fresh(AltBit(false))
    }

    fn arbitrary_sender(
        rng: &mut impl Rng,
        alphabet: &[Token],
        _params: &ProtocolParams,
    ) -> AbpSenderState {
        AbpSenderState {
            ab: AltBit(rng.gen()),
            pending: if rng.gen() { Some(arbitrary_token(rng, alphabet)) } else { None },
        }
    }

    fn arbitrary_receiver(
        rng: &mut impl Rng,
        _alphabet: &[Token],
        _params: &ProtocolParams,
        _sender_mid_send: bool,
    ) -> AbpReceiverState {
        AbpReceiverState { last_delivered: AltBit(rng.gen()) }
    }

    fn enumerate_senders(alphabet: &[Token], _params: &ProtocolParams) -> Vec<AbpSenderState> {
        let mut out = Vec::new();
        for ab in [AltBit(false), AltBit(true)] {
            out.push(AbpSenderState { ab, pending: None });
            for t in alphabet {
                out.push(AbpSenderState { ab, pending: Some(t.clone()) });
            }
        }
        out
    }

    fn enumerate_receivers(_alphabet: &[Token], _params: &ProtocolParams) -> Vec<AbpReceiverState> {
        vec![
            AbpReceiverState { last_delivered: AltBit(false) },
            AbpReceiverState { last_delivered: AltBit(true) },
        ]
    }

    fn snapshot(cfg: &Configuration<Self>) -> ConfigSnapshot {
        ConfigSnapshot::Abp {
            c: cfg.params.c(),
            sender: cfg.sender.clone(),
            receiver: cfg.receiver,
            chan_data: cfg.chan_data.packets().cloned().collect(),
            chan_ack: cfg.chan_ack.packets().cloned().collect(),
        }
    }

    fn from_snapshot(snap: &ConfigSnapshot) -> Option<Configuration<Self>> {
        match snap {
            ConfigSnapshot::Abp { c, sender, receiver, chan_data, chan_ack } => {
                let params = ProtocolParams::new(*c);
                Some(Configuration {
                    sender: sender.clone(),
                    receiver: *receiver,
                    chan_data: Channel::with_ghosts(*c, chan_data.clone()).ok()?,
                    chan_ack: Channel::with_ghosts(*c, chan_ack.clone()).ok()?,
                    params,
                })
            }
            ConfigSnapshot::Sdl { .. } => None,
        }
    }
}
