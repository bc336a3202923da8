//! Brute-force ground truth at desk scale.
//!
//! Two independent instruments live here:
//!
//! * [`explore`] — exhaustive breadth-first enumeration of every adversary
//!   decision (delivery picks, overflow victims, losses) from every legal
//!   starting state, checking a safety surrogate at each reachable state.
//!   The successor relation is [`crate::sim::apply_step`] itself, driven by
//!   enumerated steps, so there is no second transition semantics to trust.
//! * [`evaluate_formula`] — literal quantifier expansion of the four
//!   delivery properties on tiny sequences, with exhaustive block-boundary
//!   enumeration for the star parse. It deliberately shares no code with
//!   the checker's decision procedures; the two are cross-checked over all
//!   small instances.
//!
//! The safety surrogate accepted at every state: the deliveries so far must
//! be a prefix of one of `S`, `P·S`, `x·S`, or `x·P·S`, where `S` is the
//! application sends so far in order, `P` is the token the sender was
//! already working on at time zero (if it started mid-send — that send was
//! never requested, so it is credited separately), and `x` is one arbitrary
//! leading token. Anything outside that envelope is a violation, reported
//! with a shortest replayable schedule.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::machine::{clean_config, wire_values, Abp, ConfigSnapshot, Configuration, DataLink};
use crate::packet::{AckPacket, AltBit, DataPacket, Payload, ProtocolParams, Token};
use crate::sim::{apply_step, Cursor, EvictChoice, SimStep, TakeChoice};
use crate::trace::EventKind;

// ---------------------------------------------------------------------------
// Parameters and report
// ---------------------------------------------------------------------------

/// Which starting states to enumerate.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// The single clean configuration.
    CleanOnly,
    /// Every configuration satisfying the state-type invariants over the
    /// token alphabet: all senders, all receivers, all channel multisets.
    AllValidConfigurations,
}

#[derive(Clone, Debug)]
pub struct ExploreParams {
    pub c: u32,
    /// Messages the application will send, in order (at most two).
    pub app_messages: Vec<Token>,
    /// Tokens corrupted state may mention (at most two). The stock choice
    /// is the application tokens plus one fresh ghost, capped at two, so
    /// both colliding and non-colliding ghosts are covered.
    pub token_alphabet: Vec<Token>,
    pub init_mode: InitMode,
    /// Stop after this many breadth-first layers and report partial.
    pub depth_bound: Option<u32>,
    /// Expand layers on parallel workers. Visited counts are identical to
    /// the sequential mode; only wall time differs.
    pub parallel: bool,
    /// How many violation witnesses to reconstruct (0 = count only, which
    /// also skips parent bookkeeping entirely).
    pub max_witnesses: usize,
}

impl ExploreParams {
    pub fn new(c: u32, app_messages: Vec<Token>, init_mode: InitMode) -> Self {
        let token_alphabet = default_alphabet(&app_messages);
        ExploreParams {
            c,
            app_messages,
            token_alphabet,
            init_mode,
            depth_bound: None,
            parallel: false,
            max_witnesses: 4,
        }
    }
}

/// The application tokens plus one fresh ghost, capped at two tokens.
pub fn default_alphabet(app_messages: &[Token]) -> Vec<Token> {
    let mut out: Vec<Token> = app_messages.to_vec();
    if out.len() < 2 {
        let fresh = ["g", "h"]
            .iter()
            .map(Token::new)
            .find(|t| !out.contains(t))
            .expect("two candidates cannot both collide with fewer than two tokens");
        out.push(fresh);
    }
    out.truncate(2);
    out
}

/// One safety violation with a shortest schedule that reproduces it.
#[derive(Clone, Debug, Serialize)]
pub struct Violation {
    /// The starting state, replayable via the snapshot.
    pub root: ConfigSnapshot,
    /// Steps from the root to the violating state, in order.
    pub steps: Vec<SimStep>,
    /// Application sends made along the path.
    pub sent: Vec<Token>,
    /// Deliveries observed along the path — the sequence that broke the
    /// envelope.
    pub delivered: Vec<Token>,
    /// Breadth-first depth at which the violation was found.
    pub depth: u32,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExploreReport {
    /// Number of distinct (configuration, observer) states reached.
    pub visited: u64,
    /// Number of starting states enumerated.
    pub roots: u64,
    /// Deepest completed breadth-first layer.
    pub depth: u32,
    /// Total violating states found (each counted once, never expanded).
    pub violations_found: u64,
    /// Reconstructed witnesses, up to the configured cap.
    pub witnesses: Vec<Violation>,
    /// True if the depth bound cut exploration short.
    pub partial: bool,
}

impl ExploreReport {
    pub fn exhausted_clean(&self) -> bool {
        !self.partial && self.violations_found == 0
    }
}

// ---------------------------------------------------------------------------
// State space: tables, codec, observer
// ---------------------------------------------------------------------------

/// The observer riding along with each explored state: what was sent, what
/// was delivered, and the credit for a send inherited from time zero.
#[derive(Clone, PartialEq, Eq, Debug)]
struct Observer {
    /// Token id of the root's in-progress send, if the root was mid-send.
    inherited: Option<u8>,
    /// Application sends so far (a prefix of `app_messages`).
    sent: u8,
    /// Delivered token ids, in order.
    delivered: Vec<u8>,
}

/// Precomputed enumeration tables for one protocol instance. Sender and
/// receiver states are keyed by their index in the exhaustive enumeration,
/// which doubles as the canonical encoding: every state reachable from an
/// enumerated state is itself enumerated (completions land on the canonical
/// idle state, queue updates stay within bounds).
struct Space<P: DataLink> {
    params: ProtocolParams,
    app_messages: Vec<Token>,
    /// All distinct tokens states may mention.
    dict: Vec<Token>,
    /// Application messages as dict ids.
    app_ids: Vec<u8>,
    senders: Vec<P::Sender>,
    receivers: Vec<P::Receiver>,
    sender_ids: HashMap<P::Sender, u32>,
    receiver_ids: HashMap<P::Receiver, u32>,
    /// Every (payload, bit) a corrupted channel may hold.
    wire: Vec<(Payload, AltBit)>,
    /// Every channel multiset of size ≤ c, as indices into `wire`.
    channel_fills: Vec<Vec<usize>>,
}

impl<P: DataLink> Space<P> {
    fn new(params: &ExploreParams) -> Self {
        let proto = ProtocolParams::new(params.c);
        assert!(params.app_messages.len() <= 2, "at most two application messages");
        assert!(params.token_alphabet.len() <= 2, "at most two alphabet tokens");
        let mut distinct = std::collections::BTreeSet::new();
        for t in &params.app_messages {
            assert!(distinct.insert(t.clone()), "application tokens must be distinct");
        }

        let mut dict: Vec<Token> = params
            .app_messages
            .iter()
            .chain(&params.token_alphabet)
            .cloned()
            .collect();
        dict.sort();
        dict.dedup();
        assert!(dict.len() < u8::MAX as usize);
        let app_ids =
            params.app_messages.iter().map(|t| token_id(&dict, t)).collect();

        let senders = P::enumerate_senders(&dict, &proto);
        let receivers = P::enumerate_receivers(&dict, &proto);
        assert!(senders.len() < u16::MAX as usize && receivers.len() < u16::MAX as usize);
        let sender_ids =
            senders.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect();
        let receiver_ids =
            receivers.iter().enumerate().map(|(i, r)| (r.clone(), i as u32)).collect();

        let mut wire = wire_values(&dict);
        if P::NAME == Abp::NAME {
            // The baseline never sends markers; its ghosts are plain
            // application payloads.
            wire.retain(|(p, _)| !p.is_synchro());
        }
        let channel_fills = multisets(wire.len(), proto.c() as usize);

        Space {
            params: proto,
            app_messages: params.app_messages.clone(),
            dict,
            app_ids,
            senders,
            receivers,
            sender_ids,
            receiver_ids,
            wire,
            channel_fills,
        }
    }

    fn root_count(&self, mode: InitMode) -> u64 {
        match mode {
            InitMode::CleanOnly => 1,
            InitMode::AllValidConfigurations => {
                self.senders.len() as u64
                    * self.receivers.len() as u64
                    * (self.channel_fills.len() as u64).pow(2)
            }
        }
    }

    /// Regenerate root number `idx` (mixed-radix over the tables).
    fn root(&self, mode: InitMode, idx: u64) -> (Configuration<P>, Observer) {
        let cfg = match mode {
            InitMode::CleanOnly => {
                assert_eq!(idx, 0);
                clean_config::<P>(self.params)
            }
            InitMode::AllValidConfigurations => {
                let mut i = idx;
                let si = (i % self.senders.len() as u64) as usize;
                i /= self.senders.len() as u64;
                let ri = (i % self.receivers.len() as u64) as usize;
                i /= self.receivers.len() as u64;
                let di = (i % self.channel_fills.len() as u64) as usize;
                i /= self.channel_fills.len() as u64;
                let ai = i as usize;
                assert!(ai < self.channel_fills.len());
                Configuration {
                    sender: self.senders[si].clone(),
                    receiver: self.receivers[ri].clone(),
                    chan_data: crate::channel::Channel::with_ghosts(
                        self.params.c(),
                        self.channel_fills[di]
                            .iter()
                            .map(|&w| {
                                let (p, ab) = &self.wire[w];
                                DataPacket { payload: p.clone(), ab: *ab }
                            })
                            .collect(),
                    )
                    .expect("fill fits capacity"),
                    chan_ack: crate::channel::Channel::with_ghosts(
                        self.params.c(),
                        self.channel_fills[ai]
                            .iter()
                            .map(|&w| {
                                let (p, ab) = &self.wire[w];
                                AckPacket { payload: p.clone(), ab: *ab }
                            })
                            .collect(),
                    )
                    .expect("fill fits capacity"),
                    params: self.params,
                }
            }
        };
        let inherited = if P::sender_is_idle(&cfg.sender) {
            None
        } else {
            P::pending_token(&cfg.sender).map(|t| token_id(&self.dict, t))
        };
        (cfg, Observer { inherited, sent: 0, delivered: Vec::new() })
    }

    // -- codec ---------------------------------------------------------------

    fn encode(&self, cfg: &Configuration<P>, obs: &Observer) -> Key {
        let mut b = Vec::with_capacity(24);
        let si = self.sender_ids[&cfg.sender];
        let ri = self.receiver_ids[&cfg.receiver];
        b.extend_from_slice(&(si as u16).to_le_bytes());
        b.extend_from_slice(&(ri as u16).to_le_bytes());
        for chan_packed in [
            cfg.chan_data.packets().map(|p| self.pack_wire(&p.payload, p.ab)).collect::<Vec<_>>(),
            cfg.chan_ack.packets().map(|p| self.pack_wire(&p.payload, p.ab)).collect::<Vec<_>>(),
        ] {
            b.push(chan_packed.len() as u8);
            b.extend_from_slice(&chan_packed);
        }
        b.push(obs.inherited.map_or(0xFF, |t| t));
        b.push(obs.sent);
        b.push(obs.delivered.len() as u8);
        b.extend_from_slice(&obs.delivered);
        Key::from_bytes(&b)
    }

    fn decode(&self, key: &Key) -> (Configuration<P>, Observer) {
        let b = key.bytes();
        let si = u16::from_le_bytes([b[0], b[1]]) as usize;
        let ri = u16::from_le_bytes([b[2], b[3]]) as usize;
        let mut at = 4;
        let mut chans: [Vec<u8>; 2] = [Vec::new(), Vec::new()];
        for chan in &mut chans {
            let n = b[at] as usize;
            *chan = b[at + 1..at + 1 + n].to_vec();
            at += 1 + n;
        }
        let inherited = match b[at] {
            0xFF => None,
            t => Some(t),
        };
        let sent = b[at + 1];
        let rn = b[at + 2] as usize;
        let delivered = b[at + 3..at + 3 + rn].to_vec();

        let cfg = Configuration {
            sender: self.senders[si].clone(),
            receiver: self.receivers[ri].clone(),
            chan_data: crate::channel::Channel::with_ghosts(
                self.params.c(),
                chans[0]
                    .iter()
                    .map(|&w| {
                        let (p, ab) = self.unpack_wire(w);
                        DataPacket { payload: p, ab }
                    })
                    .collect(),
            )
            .expect("decoded fill fits"),
            chan_ack: crate::channel::Channel::with_ghosts(
                self.params.c(),
                chans[1]
                    .iter()
                    .map(|&w| {
                        let (p, ab) = self.unpack_wire(w);
                        AckPacket { payload: p, ab }
                    })
                    .collect(),
            )
            .expect("decoded fill fits"),
            params: self.params,
        };
        (cfg, Observer { inherited, sent, delivered })
    }

    fn pack_wire(&self, payload: &Payload, ab: AltBit) -> u8 {
        let code = match payload {
            Payload::Synchro => 0,
            Payload::App { token } => 1 + token_id(&self.dict, token),
        };
        (code << 1) | ab.0 as u8
    }

    fn unpack_wire(&self, w: u8) -> (Payload, AltBit) {
        let ab = AltBit(w & 1 == 1);
        let code = w >> 1;
        let payload = if code == 0 {
            Payload::Synchro
        } else {
            Payload::app(self.dict[(code - 1) as usize].clone())
        };
        (payload, ab)
    }

    // -- safety ---------------------------------------------------------------

    /// Deliveries must form a prefix of S, P·S, x·S, or x·P·S (see the
    /// module doc).
    fn is_safe(&self, obs: &Observer) -> bool {
        let r = &obs.delivered[..];
        if r.is_empty() {
            return true;
        }
        let s = &self.app_ids[..obs.sent as usize];
        let accepts = |r: &[u8]| -> bool {
            is_prefix(r, None, s) || matches!(obs.inherited, Some(p) if is_prefix(r, Some(p), s))
        };
        accepts(r) || accepts(&r[1..])
    }

    // -- successor generation ----------------------------------------------------

    fn successors(&self, cfg: &Configuration<P>, obs: &Observer) -> Vec<SimStep> {
        let mut out = Vec::with_capacity(8);
        let idle = P::sender_is_idle(&cfg.sender);
        if idle && (obs.sent as usize) < self.app_messages.len() {
            out.push(SimStep::AppSend);
        }
        if !idle {
            if cfg.chan_data.is_full() {
                // Evicting the incoming packet changes nothing; evicting
                // equal residents is one choice.
                for i in distinct_indices(cfg.chan_data.packets()) {
                    out.push(SimStep::SenderSend {
                        evict: Some(EvictChoice::Resident { index: i }),
                    });
                }
            } else {
                out.push(SimStep::SenderSend { evict: None });
            }
            for i in distinct_indices(cfg.chan_ack.packets()) {
                out.push(SimStep::SenderPoll { take: TakeChoice::Index { index: i } });
            }
        }
        for i in distinct_indices(cfg.chan_data.packets()) {
            if cfg.chan_ack.is_full() {
                for j in distinct_indices(cfg.chan_ack.packets()) {
                    out.push(SimStep::ReceiverRecv {
                        take: TakeChoice::Index { index: i },
                        ack_evict: Some(EvictChoice::Resident { index: j }),
                    });
                }
                out.push(SimStep::ReceiverRecv {
                    take: TakeChoice::Index { index: i },
                    ack_evict: Some(EvictChoice::Incoming),
                });
            } else {
                out.push(SimStep::ReceiverRecv {
                    take: TakeChoice::Index { index: i },
                    ack_evict: None,
                });
            }
        }
        for i in distinct_indices(cfg.chan_data.packets()) {
            out.push(SimStep::LoseData { index: i });
        }
        for i in distinct_indices(cfg.chan_ack.packets()) {
            out.push(SimStep::LoseAck { index: i });
        }
        // An idle sender consuming an ack discards it, which the loss step
        // already covers, so polls are only enumerated for active senders
        // and null takes (pure self-loops) not at all.
        out
    }

    /// Apply one enumerated step, updating a copy of the observer.
    fn apply(
        &self,
        cfg: &mut Configuration<P>,
        obs: &mut Observer,
        step: &SimStep,
    ) {
        let mut cur = Cursor {
            pending: self.app_messages[obs.sent as usize..].iter().cloned().collect(),
            next_seq: obs.sent as u32,
            inherited_active: false,
        };
        let dict = &self.dict;
        let mut sent = 0u8;
        let mut delivered: Vec<u8> = Vec::new();
        apply_step(cfg, &mut cur, step, &mut |kind| match kind {
            EventKind::AppSend { .. } => sent += 1,
            EventKind::MsgDelivered { token } => delivered.push(token_id(dict, &token)),
            _ => {}
        })
        .expect("enumerated step is applicable");
        obs.sent += sent;
        obs.delivered.extend_from_slice(&delivered);
    }
}

fn token_id(dict: &[Token], t: &Token) -> u8 {
    dict.iter().position(|d| d == t).expect("token in dictionary") as u8
}

/// Is `r` a prefix of `head? · s` (ids)?
fn is_prefix(r: &[u8], head: Option<u8>, s: &[u8]) -> bool {
    let mut r = r;
    if let Some(h) = head {
        match r.split_first() {
            None => return true,
            Some((first, rest)) if *first == h => r = rest,
            Some(_) => return false,
        }
    }
    r.len() <= s.len() && r == &s[..r.len()]
}

/// All multisets of size 0..=max over `values` indices, each in
/// non-decreasing order.
fn multisets(values: usize, max: usize) -> Vec<Vec<usize>> {
    fn rec(out: &mut Vec<Vec<usize>>, cur: &mut Vec<usize>, values: usize, max: usize, from: usize) {
        out.push(cur.clone());
        if cur.len() == max {
            return;
        }
        for v in from..values {
            cur.push(v);
            rec(out, cur, values, max, v);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut out, &mut Vec::new(), values, max, 0);
    out
}

/// Indices of the first occurrence of each distinct packet, in canonical
/// order. Equal packets are interchangeable, so one representative each.
fn distinct_indices<'a, T: PartialEq + 'a>(packets: impl Iterator<Item = &'a T>) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev: Option<&T> = None;
    for (i, p) in packets.enumerate() {
        if prev != Some(p) {
            out.push(i);
        }
        prev = Some(p);
    }
    out
}

// ---------------------------------------------------------------------------
// Compact dedup keys
// ---------------------------------------------------------------------------

const KEY_INLINE: usize = 23;

/// Canonical state encoding, inlined when it fits (it does for every
/// desk-scale instance) so the visited set carries no per-key heap
/// allocation.
#[derive(Clone, PartialEq, Eq, Hash)]
enum Key {
    Inline { len: u8, buf: [u8; KEY_INLINE] },
    Heap(Box<[u8]>),
}

impl Key {
    fn from_bytes(b: &[u8]) -> Key {
        if b.len() <= KEY_INLINE {
            let mut buf = [0u8; KEY_INLINE];
            buf[..b.len()].copy_from_slice(b);
            Key::Inline { len: b.len() as u8, buf }
        } else {
            Key::Heap(b.into())
        }
    }

    fn bytes(&self) -> &[u8] {
        match self {
            Key::Inline { len, buf } => &buf[..*len as usize],
            Key::Heap(b) => b,
        }
    }
}

// ---------------------------------------------------------------------------
// Step packing (for parent chains)
// ---------------------------------------------------------------------------

fn pack_step(s: &SimStep) -> u16 {
    let (op, a, b): (u16, u16, u16) = match *s {
        SimStep::AppSend => (0, 0, 0),
        SimStep::SenderSend { evict: None } => (1, 0, 0),
        SimStep::SenderSend { evict: Some(EvictChoice::Resident { index }) } => {
            (1, 1, index as u16)
        }
        SimStep::SenderSend { evict: Some(EvictChoice::Incoming) } => (1, 2, 0),
        SimStep::SenderPoll { take: TakeChoice::Index { index } } => (2, 0, index as u16),
        SimStep::SenderPoll { take: TakeChoice::Null } => (2, 1, 0),
        SimStep::ReceiverRecv { take: TakeChoice::Index { index }, ack_evict } => {
            let e = match ack_evict {
                None => 0,
                Some(EvictChoice::Incoming) => 1,
                Some(EvictChoice::Resident { index }) => 2 + index as u16,
            };
            (3, index as u16, e)
        }
        SimStep::ReceiverRecv { take: TakeChoice::Null, .. } => (3, 0x1F, 0),
        SimStep::LoseData { index } => (4, 0, index as u16),
        SimStep::LoseAck { index } => (5, 0, index as u16),
        SimStep::DrainAck { index } => (6, 0, index as u16),
    };
    debug_assert!(a < 32 && b < 64);
    op << 11 | a << 6 | b
}

fn unpack_step(w: u16) -> SimStep {
    let (op, a, b) = (w >> 11, (w >> 6) & 0x1F, w & 0x3F);
    match op {
        0 => SimStep::AppSend,
        1 => SimStep::SenderSend {
            evict: match a {
                0 => None,
                1 => Some(EvictChoice::Resident { index: b as usize }),
                _ => Some(EvictChoice::Incoming),
            },
        },
        2 => SimStep::SenderPoll {
            take: if a == 0 { TakeChoice::Index { index: b as usize } } else { TakeChoice::Null },
        },
        3 => {
            if a == 0x1F {
                SimStep::ReceiverRecv { take: TakeChoice::Null, ack_evict: None }
            } else {
                SimStep::ReceiverRecv {
                    take: TakeChoice::Index { index: a as usize },
                    ack_evict: match b {
                        0 => None,
                        1 => Some(EvictChoice::Incoming),
                        e => Some(EvictChoice::Resident { index: (e - 2) as usize }),
                    },
                }
            }
        }
        4 => SimStep::LoseData { index: b as usize },
        5 => SimStep::LoseAck { index: b as usize },
        _ => SimStep::DrainAck { index: b as usize },
    }
}

// ---------------------------------------------------------------------------
// Breadth-first exploration
// ---------------------------------------------------------------------------

/// Back-pointer record for witness reconstruction. `parent == u32::MAX`
/// marks a root.
struct Node {
    parent: u32,
    root: u32,
    step: u16,
}

struct Candidate {
    key: Key,
    parent: u32,
    step: u16,
    safe: bool,
}

/// Exhaustively enumerate reachable states and check the safety surrogate
/// everywhere. See the module doc for the envelope and [`ExploreParams`]
/// for scale limits (desk scale: c = 1, at most two tokens, at most two
/// messages — the state count grows steeply with all three).
pub fn explore<P: DataLink>(params: &ExploreParams) -> ExploreReport {
    let space = Space::<P>::new(params);
    let track_parents = params.max_witnesses > 0;
    let root_count = space.root_count(params.init_mode);

    let mut visited: HashMap<Key, ()> = HashMap::new();
    let mut nodes: Vec<Node> = Vec::new();
    // (key, node index) pairs still to expand.
    let mut frontier: Vec<(Key, u32)> = Vec::with_capacity(root_count as usize);

    for idx in 0..root_count {
        let (cfg, obs) = space.root(params.init_mode, idx);
        let key = space.encode(&cfg, &obs);
        let prev = visited.insert(key.clone(), ());
        assert!(prev.is_none(), "enumerated roots are pairwise distinct");
        let node = nodes.len() as u32;
        if track_parents {
            nodes.push(Node { parent: u32::MAX, root: idx as u32, step: 0 });
        }
        frontier.push((key, node));
    }

    let mut violations_found = 0u64;
    let mut witnesses: Vec<Violation> = Vec::new();
    let mut depth = 0u32;
    let mut partial = false;

    while !frontier.is_empty() {
        if let Some(bound) = params.depth_bound {
            if depth >= bound {
                partial = true;
                break;
            }
        }

        let expand = |chunk: &[(Key, u32)]| -> Vec<Candidate> {
            let mut out = Vec::with_capacity(chunk.len() * 4);
            for (key, node) in chunk {
                let (cfg, obs) = space.decode(key);
                for step in space.successors(&cfg, &obs) {
                    let mut next_cfg = cfg.clone();
                    let mut next_obs = obs.clone();
                    space.apply(&mut next_cfg, &mut next_obs, &step);
                    out.push(Candidate {
                        key: space.encode(&next_cfg, &next_obs),
                        parent: *node,
                        step: pack_step(&step),
                        safe: space.is_safe(&next_obs),
                    });
                }
            }
            out
        };

        let candidate_chunks: Vec<Vec<Candidate>> = if params.parallel {
            frontier.par_chunks(1024).map(expand).collect()
        } else {
            frontier.chunks(1024).map(expand).collect()
        };

        // Sequential merge in deterministic order: frontier order times
        // menu order, so parallel and sequential runs agree exactly.
        let mut next_frontier = Vec::new();
        for cand in candidate_chunks.into_iter().flatten() {
            if visited.contains_key(&cand.key) {
                continue;
            }
            visited.insert(cand.key.clone(), ());
            let node = nodes.len() as u32;
            if track_parents {
                nodes.push(Node {
                    parent: cand.parent,
                    root: nodes[cand.parent as usize].root,
                    step: cand.step,
                });
            }
            if cand.safe {
                next_frontier.push((cand.key, node));
            } else {
                violations_found += 1;
                if witnesses.len() < params.max_witnesses {
                    witnesses.push(build_witness(
                        &space,
                        params.init_mode,
                        &nodes,
                        node,
                        &cand.key,
                        depth + 1,
                    ));
                }
            }
        }
        frontier = next_frontier;
        depth += 1;
    }

    ExploreReport {
        visited: visited.len() as u64,
        roots: root_count,
        depth,
        violations_found,
        witnesses,
        partial,
    }
}

fn build_witness<P: DataLink>(
    space: &Space<P>,
    mode: InitMode,
    nodes: &[Node],
    node: u32,
    key: &Key,
    depth: u32,
) -> Violation {
    let mut steps = Vec::new();
    let mut at = node;
    while nodes[at as usize].parent != u32::MAX {
        steps.push(unpack_step(nodes[at as usize].step));
        at = nodes[at as usize].parent;
    }
    steps.reverse();
    let root_idx = nodes[at as usize].root as u64;
    let (root_cfg, _) = space.root(mode, root_idx);
    let (_, obs) = space.decode(key);
    Violation {
        root: root_cfg.snapshot(),
        steps,
        sent: space.app_messages[..obs.sent as usize].to_vec(),
        delivered: obs
            .delivered
            .iter()
            .map(|&id| space.dict[id as usize].clone())
            .collect(),
        depth,
    }
}

// ---------------------------------------------------------------------------
// Literal formula evaluation
// ---------------------------------------------------------------------------

/// The four bounded delivery properties.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Property {
    Loss,
    Duplication,
    Creation,
    Reordering,
}

impl Property {
    pub const ALL: [Property; 4] =
        [Property::Loss, Property::Duplication, Property::Creation, Property::Reordering];
}

/// Evaluate one property by direct expansion of its defining quantifiers.
/// Intentionally naive: every existential is a loop, the star parse tries
/// every block boundary. Sequences are capped to keep the expansion small.
pub fn evaluate_formula(prop: Property, s: &[Token], r: &[Token], bound: u32) -> bool {
    assert!(s.len() <= 6 && r.len() <= 6, "formula evaluation is for tiny sequences");
    match prop {
        Property::Loss => (0..=bound as usize).any(|a| {
            (a.min(s.len())..s.len()).all(|i| r.iter().any(|x| *x == s[i]))
        }),
        Property::Duplication => (0..=bound as usize).any(|b| {
            let prefix = &r[..b.min(r.len())];
            s.iter().all(|m| {
                let copies = r.iter().filter(|x| *x == m).count();
                copies <= 1 || prefix.iter().any(|x| x == m)
            })
        }),
        Property::Creation => (0..=bound as usize).any(|c| {
            let prefix = &r[..c.min(r.len())];
            r.iter().all(|m| s.iter().any(|x| x == m) || prefix.iter().any(|x| x == m))
        }),
        Property::Reordering => {
            (0..=bound as usize).any(|d| star_blocks(s, &r[d.min(r.len())..]))
        }
    }
}

/// Does `r` split into consecutive blocks r = B0 B1 … Bn with Bi = s[i]^ki,
/// ki ≥ 0? Tries every boundary recursively.
fn star_blocks(s: &[Token], r: &[Token]) -> bool {
    match s.split_first() {
        None => r.is_empty(),
        Some((head, rest)) => (0..=r.len()).any(|k| {
            r[..k].iter().all(|x| x == head) && star_blocks(rest, &r[k..])
        }),
    }
}
