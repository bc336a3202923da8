//! The execution engine: one global step at a time, every nondeterministic
//! decision reified as data.
//!
//! A [`SimStep`] is a single scheduled operation — an application send, one
//! sender loop iteration's send or poll half, one receiver reception, or an
//! adversary move. [`apply_step`] is the only function that mutates a
//! configuration, and it is shared verbatim by the schedulers here and by
//! the exhaustive explorer, so there is exactly one transition semantics in
//! the codebase.
//!
//! Schedulers turn a policy into a step sequence: `LockStep` is the
//! deterministic no-fault round-robin, `RandomFair` samples adversarial
//! behavior from a seeded generator under a patience bound that discharges
//! weak fairness, and `Scripted` replays a fixed step list.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelChoice;
use crate::machine::{Configuration, DataLink};
use crate::packet::{AckPacket, AltBit, DataPacket, Direction, Payload, Token};
use crate::sdl::ReceiverAction;
use crate::trace::{Event, EventKind, Trace, TraceParams, TRACE_VERSION};

// ---------------------------------------------------------------------------
// Step vocabulary
// ---------------------------------------------------------------------------

/// What a receive operation takes from a channel.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(tag = "take", rename_all = "snake_case")]
pub enum TakeChoice {
    /// The resident at this canonical index.
    Index { index: usize },
    /// Nothing — the null receive.
    Null,
}

/// What an overflowing send sacrifices.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(tag = "victim", rename_all = "snake_case")]
pub enum EvictChoice {
    /// The resident at this canonical index.
    Resident { index: usize },
    /// The packet being sent.
    Incoming,
}

impl EvictChoice {
    fn to_channel(self) -> ChannelChoice {
        match self {
            EvictChoice::Resident { index } => ChannelChoice::EvictIndex { index },
            EvictChoice::Incoming => ChannelChoice::EvictIncoming,
        }
    }
}

/// One schedulable operation. Eviction fields must be present exactly when
/// the target channel is full (and the step actually inserts a packet).
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum SimStep {
    /// Hand the next application message to the sender.
    AppSend,
    /// The sender emits its current packet into the data channel.
    SenderSend { evict: Option<EvictChoice> },
    /// The sender polls the ack channel and accounts for the result.
    SenderPoll { take: TakeChoice },
    /// The receiver takes from the data channel; a non-null take is
    /// processed and echoed into the ack channel.
    ReceiverRecv { take: TakeChoice, ack_evict: Option<EvictChoice> },
    /// The adversary removes a data packet in flight.
    LoseData { index: usize },
    /// The adversary removes an ack packet in flight.
    LoseAck { index: usize },
    /// An idle sender polls the ack channel and discards what it finds.
    DrainAck { index: usize },
}

/// A step that cannot be applied to the current configuration.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum StepError {
    #[error("application send while the sender is busy")]
    SenderBusy,
    #[error("no application messages remain")]
    NoMessages,
    #[error("sender operation requires an active send")]
    SenderIdle,
    #[error("drain requires an idle sender")]
    DrainWhileActive,
    #[error("index {index} out of range ({len} packets in flight)")]
    BadIndex { index: usize, len: usize },
    #[error("eviction choice must be supplied exactly when the channel is full")]
    EvictionMismatch,
}

/// Harness-side bookkeeping that travels alongside the configuration: the
/// messages not yet handed to the sender, the next send's sequence number,
/// and whether the sender is still working off a send inherited from before
/// time zero (whose completion is not reported to the application, because
/// no application requested it).
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Cursor {
    pub pending: VecDeque<Token>,
    pub next_seq: u32,
    pub inherited_active: bool,
}

impl Cursor {
    pub fn new(app_messages: &[Token], sender_starts_mid_send: bool) -> Self {
        Cursor {
            pending: app_messages.iter().cloned().collect(),
            next_seq: 0,
            inherited_active: sender_starts_mid_send,
        }
    }
}

/// Nothing left to do: no messages waiting, sender idle, channels empty.
pub fn is_quiescent<P: DataLink>(cfg: &Configuration<P>, cur: &Cursor) -> bool {
    cur.pending.is_empty()
        && P::sender_is_idle(&cfg.sender)
        && cfg.chan_data.is_empty()
        && cfg.chan_ack.is_empty()
}

fn check_index(index: usize, len: usize) -> Result<(), StepError> {
    if index < len {
        Ok(())
    } else {
        Err(StepError::BadIndex { index, len })
    }
}

fn check_eviction(evict: Option<EvictChoice>, len: usize, full: bool) -> Result<(), StepError> {
    match evict {
        None if full => Err(StepError::EvictionMismatch),
        Some(_) if !full => Err(StepError::EvictionMismatch),
        Some(EvictChoice::Resident { index }) => check_index(index, len),
        _ => Ok(()),
    }
}

// ---------------------------------------------------------------------------
// The one transition function
// ---------------------------------------------------------------------------

/// Apply one step to the configuration, emitting an [`EventKind`] for every
/// observable effect, in a fixed order per step. Invalid steps leave the
/// configuration untouched and report why.
pub fn apply_step<P: DataLink>(
    cfg: &mut Configuration<P>,
    cur: &mut Cursor,
    step: &SimStep,
    emit: &mut dyn FnMut(EventKind),
) -> Result<(), StepError> {
    match *step {
        SimStep::AppSend => {
            if !P::sender_is_idle(&cfg.sender) {
                return Err(StepError::SenderBusy);
            }
            let m = cur.pending.pop_front().ok_or(StepError::NoMessages)?;
            cfg.sender = P::begin_send(&cfg.sender, &m);
            emit(EventKind::AppSend { seq: cur.next_seq, token: m });
            cur.next_seq += 1;
        }

        SimStep::SenderSend { evict } => {
            if P::sender_is_idle(&cfg.sender) {
                return Err(StepError::SenderIdle);
            }
            check_eviction(evict, cfg.chan_data.len(), cfg.chan_data.is_full())?;
            let pkt = P::current_packet(&cfg.sender);
            let victim = cfg.chan_data.send(pkt.clone(), evict.map(EvictChoice::to_channel));
            emit(EventKind::PacketSent {
                dir: Direction::Data,
                payload: pkt.payload,
                ab: pkt.ab,
            });
            if let Some(v) = victim {
                emit(EventKind::PacketEvicted {
                    dir: Direction::Data,
                    payload: v.payload,
                    ab: v.ab,
                });
            }
        }

        SimStep::SenderPoll { take } => {
            if P::sender_is_idle(&cfg.sender) {
                return Err(StepError::SenderIdle);
            }
            let polled = match take {
                TakeChoice::Null => None,
                TakeChoice::Index { index } => {
                    check_index(index, cfg.chan_ack.len())?;
                    cfg.chan_ack.take(ChannelChoice::DeliverIndex { index })
                }
            };
            if let Some(ack) = &polled {
                emit(EventKind::PacketDelivered {
                    dir: Direction::Ack,
                    payload: ack.payload.clone(),
                    ab: ack.ab,
                });
            }
            let (next, done) = P::absorb_poll(&cfg.sender, &cfg.params, polled.as_ref());
            cfg.sender = next;
            if let Some(token) = done {
                if cur.inherited_active {
                    cur.inherited_active = false;
                } else {
                    emit(EventKind::AckDelivered { token });
                }
            }
        }

        SimStep::ReceiverRecv { take, ack_evict } => {
            let pkt = match take {
                TakeChoice::Null => None,
                TakeChoice::Index { index } => {
                    check_index(index, cfg.chan_data.len())?;
                    // Validate the echo's eviction before touching anything.
                    check_eviction(ack_evict, cfg.chan_ack.len(), cfg.chan_ack.is_full())?;
                    cfg.chan_data.take(ChannelChoice::DeliverIndex { index })
                }
            };
            let Some(pkt) = pkt else {
                return Ok(());
            };
            emit(EventKind::PacketDelivered {
                dir: Direction::Data,
                payload: pkt.payload.clone(),
                ab: pkt.ab,
            });
            let queue_was_nonempty = P::receiver_queue_len(&cfg.receiver) > 0;
            let (next, action, ack) = P::on_packet(&cfg.receiver, &cfg.params, &pkt);
            let queue_now_empty = P::receiver_queue_len(&next) == 0;
            cfg.receiver = next;
            match action {
                ReceiverAction::Delivered(token) => emit(EventKind::MsgDelivered { token }),
                ReceiverAction::DroppedSynchro => emit(EventKind::SynchroDropped),
                ReceiverAction::NoAction => {}
            }
            if queue_was_nonempty && queue_now_empty {
                emit(EventKind::QueueReset);
            }
            let victim = cfg.chan_ack.send(ack.clone(), ack_evict.map(EvictChoice::to_channel));
            emit(EventKind::PacketSent {
                dir: Direction::Ack,
                payload: ack.payload,
                ab: ack.ab,
            });
            if let Some(v) = victim {
                emit(EventKind::PacketEvicted {
                    dir: Direction::Ack,
                    payload: v.payload,
                    ab: v.ab,
                });
            }
        }

        SimStep::LoseData { index } => {
            check_index(index, cfg.chan_data.len())?;
            let p = cfg.chan_data.lose(index);
            emit(EventKind::PacketLost { dir: Direction::Data, payload: p.payload, ab: p.ab });
        }

        SimStep::LoseAck { index } => {
            check_index(index, cfg.chan_ack.len())?;
            let p = cfg.chan_ack.lose(index);
            emit(EventKind::PacketLost { dir: Direction::Ack, payload: p.payload, ab: p.ab });
        }

        SimStep::DrainAck { index } => {
            if !P::sender_is_idle(&cfg.sender) {
                return Err(StepError::DrainWhileActive);
            }
            check_index(index, cfg.chan_ack.len())?;
            let p = cfg
                .chan_ack
                .take(ChannelChoice::DeliverIndex { index })
                .expect("index checked");
            // The sender received it and, having nothing in flight, ignored
            // it.
            emit(EventKind::PacketDelivered { dir: Direction::Ack, payload: p.payload, ab: p.ab });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Scheduling policies
// ---------------------------------------------------------------------------

/// How steps get chosen. Serialized into every trace header.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchedulerPolicy {
    /// Deterministic fault-free rounds: every data packet is received
    /// before the next is sent, every ack is polled as soon as it exists.
    LockStep,
    /// Seeded adversarial sampling. `p_deliver` is the chance a poll or
    /// receive takes a packet instead of returning null; `p_lose` weights
    /// spontaneous losses relative to protocol steps; `patience` bounds how
    /// many times a (payload, bit) kind may be sent without a delivery
    /// before one is forced — the finite-run reading of weak fairness.
    RandomFair { seed: u64, p_deliver: f64, p_lose: f64, patience: u32 },
    /// Replay exactly these steps, then stop.
    Scripted { steps: Vec<SimStep> },
}

impl SchedulerPolicy {
    /// The stock adversarial policy for a given capacity.
    pub fn random_fair(seed: u64, c: u32) -> Self {
        SchedulerPolicy::RandomFair {
            seed,
            p_deliver: 0.6,
            p_lose: 0.1,
            patience: default_patience(c),
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            SchedulerPolicy::RandomFair { seed, .. } => Some(*seed),
            _ => None,
        }
    }
}

/// Patience default: enough resends to outlast every counting threshold.
pub fn default_patience(c: u32) -> u32 {
    4 * c + 4
}

enum Scheduler {
    LockStep,
    Random(Box<RandomScheduler>),
    Scripted { steps: Vec<SimStep>, cursor: usize },
}

impl Scheduler {
    fn new(policy: &SchedulerPolicy) -> Self {
        match policy {
            SchedulerPolicy::LockStep => Scheduler::LockStep,
            SchedulerPolicy::RandomFair { seed, p_deliver, p_lose, patience } => {
                assert!(*p_deliver > 0.0 && *p_deliver <= 1.0, "p_deliver must be in (0, 1]");
                assert!(*p_lose >= 0.0 && *p_lose < 1.0, "p_lose must be in [0, 1)");
                assert!(*patience >= 1, "patience must be at least 1");
                Scheduler::Random(Box::new(RandomScheduler {
                    rng: ChaCha8Rng::seed_from_u64(*seed),
                    p_deliver: *p_deliver,
                    p_lose: *p_lose,
                    patience: *patience,
                    data_age: BTreeMap::new(),
                    ack_age: BTreeMap::new(),
                }))
            }
            SchedulerPolicy::Scripted { steps } => {
                Scheduler::Scripted { steps: steps.clone(), cursor: 0 }
            }
        }
    }

    fn next_step<P: DataLink>(&mut self, cfg: &Configuration<P>, cur: &Cursor) -> Option<SimStep> {
        match self {
            Scheduler::LockStep => Some(lockstep_step(cfg, cur)),
            Scheduler::Random(r) => Some(r.next_step(cfg, cur)),
            Scheduler::Scripted { steps, cursor } => {
                let step = steps.get(*cursor).copied();
                *cursor += 1;
                step
            }
        }
    }

    fn observe(&mut self, new_events: &[Event]) {
        if let Scheduler::Random(r) = self {
            r.observe(new_events);
        }
    }
}

/// The deterministic fault-free round: drain data, then acks, then let the
/// sender speak, then start the next message. From a clean configuration
/// the resulting cadence is send, receive+echo, poll — three steps per
/// packet on the wire.
fn lockstep_step<P: DataLink>(cfg: &Configuration<P>, cur: &Cursor) -> SimStep {
    if !cfg.chan_data.is_empty() {
        let ack_evict =
            if cfg.chan_ack.is_full() { Some(EvictChoice::Resident { index: 0 }) } else { None };
        return SimStep::ReceiverRecv { take: TakeChoice::Index { index: 0 }, ack_evict };
    }
    if !cfg.chan_ack.is_empty() {
        return if P::sender_is_idle(&cfg.sender) {
            SimStep::DrainAck { index: 0 }
        } else {
            SimStep::SenderPoll { take: TakeChoice::Index { index: 0 } }
        };
    }
    if !P::sender_is_idle(&cfg.sender) {
        return SimStep::SenderSend { evict: None };
    }
    assert!(!cur.pending.is_empty(), "scheduler invoked on a quiescent configuration");
    SimStep::AppSend
}

struct RandomScheduler {
    rng: ChaCha8Rng,
    p_deliver: f64,
    p_lose: f64,
    patience: u32,
    /// Sends since the last delivery, per (payload, bit) kind, per channel.
    data_age: BTreeMap<(Payload, AltBit), u32>,
    ack_age: BTreeMap<(Payload, AltBit), u32>,
}

impl RandomScheduler {
    fn next_step<P: DataLink>(&mut self, cfg: &Configuration<P>, cur: &Cursor) -> SimStep {
        if let Some(step) = self.forced_delivery(cfg) {
            return step;
        }
        let idle = P::sender_is_idle(&cfg.sender);
        if idle && !cur.pending.is_empty() {
            return SimStep::AppSend;
        }
        if idle {
            // Nothing left to send: consume leftovers until quiescent.
            if !cfg.chan_data.is_empty() {
                let index = self.rng.gen_range(0..cfg.chan_data.len());
                let ack_evict = self.ack_eviction(cfg);
                return SimStep::ReceiverRecv { take: TakeChoice::Index { index }, ack_evict };
            }
            if !cfg.chan_ack.is_empty() {
                let index = self.rng.gen_range(0..cfg.chan_ack.len());
                return SimStep::DrainAck { index };
            }
            unreachable!("scheduler invoked on a quiescent configuration");
        }

        #[derive(Clone, Copy)]
        enum Pick {
            Send,
            Poll,
            Recv,
            LoseData,
            LoseAck,
        }
        let mut menu: Vec<(f64, Pick)> =
            vec![(1.0, Pick::Send), (1.0, Pick::Poll), (1.0, Pick::Recv)];
        if !cfg.chan_data.is_empty() && self.p_lose > 0.0 {
            menu.push((self.p_lose, Pick::LoseData));
        }
        if !cfg.chan_ack.is_empty() && self.p_lose > 0.0 {
            menu.push((self.p_lose, Pick::LoseAck));
        }
        let total: f64 = menu.iter().map(|(w, _)| w).sum();
        let mut x = self.rng.gen::<f64>() * total;
        let mut picked = menu[menu.len() - 1].1;
        for (w, p) in &menu {
            if x < *w {
                picked = *p;
                break;
            }
            x -= w;
        }

        match picked {
            Pick::Send => {
                let evict = if cfg.chan_data.is_full() {
                    let k = self.rng.gen_range(0..=cfg.chan_data.len());
                    Some(if k == cfg.chan_data.len() {
                        EvictChoice::Incoming
                    } else {
                        EvictChoice::Resident { index: k }
                    })
                } else {
                    None
                };
                SimStep::SenderSend { evict }
            }
            Pick::Poll => {
                let take = if !cfg.chan_ack.is_empty() && self.rng.gen_bool(self.p_deliver) {
                    TakeChoice::Index { index: self.rng.gen_range(0..cfg.chan_ack.len()) }
                } else {
                    TakeChoice::Null
                };
                SimStep::SenderPoll { take }
            }
            Pick::Recv => {
                if !cfg.chan_data.is_empty() && self.rng.gen_bool(self.p_deliver) {
                    let index = self.rng.gen_range(0..cfg.chan_data.len());
                    let ack_evict = self.ack_eviction(cfg);
                    SimStep::ReceiverRecv { take: TakeChoice::Index { index }, ack_evict }
                } else {
                    SimStep::ReceiverRecv { take: TakeChoice::Null, ack_evict: None }
                }
            }
            Pick::LoseData => {
                SimStep::LoseData { index: self.rng.gen_range(0..cfg.chan_data.len()) }
            }
            Pick::LoseAck => {
                SimStep::LoseAck { index: self.rng.gen_range(0..cfg.chan_ack.len()) }
            }
        }
    }

    /// A kind that has been sent `patience` times without a delivery and is
    /// actually in flight gets delivered now.
    fn forced_delivery<P: DataLink>(&mut self, cfg: &Configuration<P>) -> Option<SimStep> {
        let patience = self.patience;
        let data_kind = self
            .data_age
            .iter()
            .find(|(_, age)| **age >= patience)
            .map(|(k, _)| k.clone());
        if let Some((payload, ab)) = data_kind {
            if let Some(index) = cfg.chan_data.index_of(&DataPacket { payload, ab }) {
                let ack_evict = self.ack_eviction(cfg);
                return Some(SimStep::ReceiverRecv {
                    take: TakeChoice::Index { index },
                    ack_evict,
                });
            }
        }
        let ack_kind = self
            .ack_age
            .iter()
            .find(|(_, age)| **age >= patience)
            .map(|(k, _)| k.clone());
        if let Some((payload, ab)) = ack_kind {
            if let Some(index) = cfg.chan_ack.index_of(&AckPacket { payload, ab }) {
                return Some(if P::sender_is_idle(&cfg.sender) {
                    SimStep::DrainAck { index }
                } else {
                    SimStep::SenderPoll { take: TakeChoice::Index { index } }
                });
            }
        }
        None
    }

    fn ack_eviction<P: DataLink>(&mut self, cfg: &Configuration<P>) -> Option<EvictChoice> {
        if cfg.chan_ack.is_full() {
            let k = self.rng.gen_range(0..=cfg.chan_ack.len());
            Some(if k == cfg.chan_ack.len() {
                EvictChoice::Incoming
            } else {
                EvictChoice::Resident { index: k }
            })
        } else {
            None
        }
    }

    fn observe(&mut self, new_events: &[Event]) {
        for e in new_events {
            match &e.kind {
                EventKind::PacketSent { dir, payload, ab } => {
                    let map = match dir {
                        Direction::Data => &mut self.data_age,
                        Direction::Ack => &mut self.ack_age,
                    };
                    *map.entry((payload.clone(), *ab)).or_insert(0) += 1;
                }
                EventKind::PacketDelivered { dir, payload, ab } => {
                    let map = match dir {
                        Direction::Data => &mut self.data_age,
                        Direction::Ack => &mut self.ack_age,
                    };
                    map.remove(&(payload.clone(), *ab));
                }
                _ => {}
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Running and replaying
// ---------------------------------------------------------------------------

/// A finished run: the trace, the state it ended in, and the steps that were
/// applied (useful for turning a run into a script).
#[derive(Debug)]
pub struct RunOutcome<P: DataLink> {
    pub trace: Trace,
    pub final_config: Configuration<P>,
    pub steps: Vec<SimStep>,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("scripted step {at} cannot be applied: {source}")]
    Step { at: u64, source: StepError },
}

/// Execute until quiescence, the step budget, or the end of a script.
///
/// Application tokens must be pairwise distinct — they are the observer's
/// identities for sent messages.
pub fn run<P: DataLink>(
    init: &Configuration<P>,
    policy: &SchedulerPolicy,
    app_messages: &[Token],
    max_steps: u64,
) -> Result<RunOutcome<P>, RunError> {
    let distinct: BTreeSet<_> = app_messages.iter().collect();
    assert_eq!(distinct.len(), app_messages.len(), "application tokens must be distinct");
    assert!(max_steps > 0, "step budget must be positive");

    let mut cfg = init.clone();
    let mut cur = Cursor::new(app_messages, !P::sender_is_idle(&init.sender));
    let mut scheduler = Scheduler::new(policy);
    let mut events: Vec<Event> = Vec::new();
    let mut steps: Vec<SimStep> = Vec::new();

    while !is_quiescent(&cfg, &cur) && (steps.len() as u64) < max_steps {
        let Some(step) = scheduler.next_step(&cfg, &cur) else {
            break;
        };
        let before = events.len();
        apply_step(&mut cfg, &mut cur, &step, &mut |kind| {
            let at = events.len() as u64;
            events.push(Event { step: at, kind });
        })
        .map_err(|source| RunError::Step { at: steps.len() as u64, source })?;
        scheduler.observe(&events[before..]);
        steps.push(step);
    }

    let quiescent = is_quiescent(&cfg, &cur);
    Ok(RunOutcome {
        trace: Trace {
            version: TRACE_VERSION,
            params: TraceParams { c: init.params.c() },
            policy: policy.clone(),
            seed: policy.seed(),
            config_init: init.snapshot(),
            events,
            quiescent,
        },
        final_config: cfg,
        steps,
    })
}

/// Replaying a log against a different history than the one that produced
/// it.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("event {at}: {source}")]
    Step { at: usize, source: StepError },
    #[error("event {at} cannot start a step (it only occurs inside one)")]
    UnexpectedEvent { at: usize },
    #[error("event {at} names a packet that is not in flight")]
    UnknownPacket { at: usize },
    #[error("event {at} diverges from what replay produces")]
    Mismatch { at: usize },
}

/// Reconstruct the final configuration from an initial one and its event
/// log, verifying along the way that the log is exactly what the transition
/// functions emit. This is the event/state-consistency check: a trace is
/// not merely a description of a run, it *is* the run.
pub fn replay<P: DataLink>(
    init: &Configuration<P>,
    events: &[Event],
) -> Result<Configuration<P>, ReplayError> {
    let mut cfg = init.clone();
    let tokens: Vec<Token> = events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::AppSend { token, .. } => Some(token.clone()),
            _ => None,
        })
        .collect();
    let mut cur = Cursor::new(&tokens, !P::sender_is_idle(&init.sender));

    let mut i = 0;
    while i < events.len() {
        let step = derive_step(&cfg, events, i)?;
        let mut emitted: Vec<EventKind> = Vec::new();
        apply_step(&mut cfg, &mut cur, &step, &mut |kind| emitted.push(kind))
            .map_err(|source| ReplayError::Step { at: i, source })?;
        if emitted.is_empty() {
            // A no-op step can never be derived from a log position.
            return Err(ReplayError::Mismatch { at: i });
        }
        for kind in emitted {
            match events.get(i) {
                Some(e) if e.kind == kind => i += 1,
                _ => return Err(ReplayError::Mismatch { at: i }),
            }
        }
    }
    Ok(cfg)
}

/// Work out which step produced the event at `at`, given the current
/// reconstruction of the configuration.
fn derive_step<P: DataLink>(
    cfg: &Configuration<P>,
    events: &[Event],
    at: usize,
) -> Result<SimStep, ReplayError> {
    match &events[at].kind {
        EventKind::AppSend { .. } => Ok(SimStep::AppSend),

        EventKind::PacketSent { dir: Direction::Data, .. } => {
            let evict = match events.get(at + 1).map(|e| &e.kind) {
                Some(EventKind::PacketEvicted { dir: Direction::Data, payload, ab }) => {
                    Some(eviction_for(
                        &cfg.chan_data,
                        &P::current_packet(&cfg.sender),
                        &DataPacket { payload: payload.clone(), ab: *ab },
                        at + 1,
                    )?)
                }
                _ => None,
            };
            Ok(SimStep::SenderSend { evict })
        }

        EventKind::PacketDelivered { dir: Direction::Data, payload, ab } => {
            let pkt = DataPacket { payload: payload.clone(), ab: *ab };
            let index =
                cfg.chan_data.index_of(&pkt).ok_or(ReplayError::UnknownPacket { at })?;
            // The echo follows at most two receiver events later; if it
            // evicted something, that event names the victim.
            let mut j = at + 1;
            while let Some(e) = events.get(j) {
                match &e.kind {
                    EventKind::MsgDelivered { .. }
                    | EventKind::SynchroDropped
                    | EventKind::QueueReset => j += 1,
                    _ => break,
                }
            }
            let ack_evict = match (events.get(j).map(|e| &e.kind), events.get(j + 1).map(|e| &e.kind))
            {
                (
                    Some(EventKind::PacketSent { dir: Direction::Ack, payload, ab }),
                    Some(EventKind::PacketEvicted { dir: Direction::Ack, payload: vp, ab: vab }),
                ) => Some(eviction_for(
                    &cfg.chan_ack,
                    &AckPacket { payload: payload.clone(), ab: *ab },
                    &AckPacket { payload: vp.clone(), ab: *vab },
                    j + 1,
                )?),
                _ => None,
            };
            Ok(SimStep::ReceiverRecv { take: TakeChoice::Index { index }, ack_evict })
        }

        EventKind::PacketDelivered { dir: Direction::Ack, payload, ab } => {
            let ack = AckPacket { payload: payload.clone(), ab: *ab };
            let index = cfg.chan_ack.index_of(&ack).ok_or(ReplayError::UnknownPacket { at })?;
            if P::sender_is_idle(&cfg.sender) {
                Ok(SimStep::DrainAck { index })
            } else {
                Ok(SimStep::SenderPoll { take: TakeChoice::Index { index } })
            }
        }

        EventKind::PacketLost { dir, payload, ab } => match dir {
            Direction::Data => {
                let pkt = DataPacket { payload: payload.clone(), ab: *ab };
                let index =
                    cfg.chan_data.index_of(&pkt).ok_or(ReplayError::UnknownPacket { at })?;
                Ok(SimStep::LoseData { index })
            }
            Direction::Ack => {
                let pkt = AckPacket { payload: payload.clone(), ab: *ab };
                let index =
                    cfg.chan_ack.index_of(&pkt).ok_or(ReplayError::UnknownPacket { at })?;
                Ok(SimStep::LoseAck { index })
            }
        },

        _ => Err(ReplayError::UnexpectedEvent { at }),
    }
}

/// Turn a logged eviction into a choice: the incoming packet if the victim
/// matches it, otherwise the canonical index of an equal resident. Either
/// way the resulting multiset is the one the log describes.
fn eviction_for<Pkt: Clone + Ord>(
    chan: &crate::channel::Channel<Pkt>,
    incoming: &Pkt,
    victim: &Pkt,
    at: usize,
) -> Result<EvictChoice, ReplayError> {
    if victim == incoming {
        Ok(EvictChoice::Incoming)
    } else {
        let index = chan.index_of(victim).ok_or(ReplayError::UnknownPacket { at })?;
        Ok(EvictChoice::Resident { index })
    }
}
