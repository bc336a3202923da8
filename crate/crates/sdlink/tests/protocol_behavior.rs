//! End-to-end behavioral contrasts between the flooding protocol and the
//! alternating-bit baseline under corrupted starting states.

use sdlink::abp::{AbpReceiverState, AbpSenderState};
use sdlink::channel::Channel;
use sdlink::checker::{check_trace, SpecBounds, Verdict};
use sdlink::machine::{Abp, Configuration, Sdl};
use sdlink::packet::{AckPacket, AltBit, DataPacket, Payload, ProtocolParams, Token};
use sdlink::sdl::{QueueEntry, ReceiverQueue, ReceiverState, SenderPhase, SenderState};
use sdlink::sim::{run, EvictChoice, SchedulerPolicy, SimStep, TakeChoice};

fn toks(names: &[&str]) -> Vec<Token> {
    names.iter().map(Token::new).collect()
}

/// One ghost acknowledgment that happens to match the sender's next packet
/// makes the baseline mark a message as done without it ever crossing: the
/// message is silently skipped. The flooding threshold (3c + 2 distinct
/// acks against at most c ghosts) is exactly what rules this out.
#[test]
fn a_single_ghost_ack_makes_the_baseline_skip_a_message() {
    let params = ProtocolParams::new(1);
    let init: Configuration<Abp> = Configuration {
        sender: AbpSenderState { ab: AltBit(true), pending: None },
        receiver: AbpReceiverState { last_delivered: AltBit(false) },
        chan_data: Channel::empty(params.c()),
        chan_ack: Channel::with_ghosts(
            params.c(),
            vec![AckPacket { payload: Payload::app("m1"), ab: AltBit(true) }],
        )
        .unwrap(),
        params,
    };

    let steps = vec![
        SimStep::AppSend,
        // The ghost ack matches (m1, true): the sender believes m1 arrived.
        SimStep::SenderPoll { take: TakeChoice::Index { index: 0 } },
        SimStep::AppSend,
        SimStep::SenderSend { evict: None },
        // (m2, false) lands on last_delivered == false: echoed, not delivered.
        SimStep::ReceiverRecv { take: TakeChoice::Index { index: 0 }, ack_evict: None },
        SimStep::SenderPoll { take: TakeChoice::Index { index: 0 } },
    ];
    let out = run(&init, &SchedulerPolicy::Scripted { steps }, &toks(&["m1", "m2"]), 100)
        .expect("script applies");

    assert!(out.trace.quiescent);
    assert_eq!(out.trace.sent_tokens(), toks(&["m1", "m2"]));
    assert_eq!(out.trace.delivered_tokens(), Vec::<Token>::new());

    // Both sends were acknowledged, so the checker holds the run
    // responsible for them — and loss fails at every small bound.
    let report = check_trace(&out.trace, &SpecBounds { alpha: 1, ..SpecBounds::default() });
    assert_eq!(report.loss.verdict, Verdict::Fail);
    assert_eq!(report.combined.verdict, Verdict::Fail);
}

/// The flooding protocol absorbing a ghost ack that *matches* its current
/// packet: the count advances by one, but the 3c + 2 threshold is sized so
/// that the at-most-c ghosts a channel can hold never complete a send on
/// their own. Nothing is skipped and delivery stays exact.
#[test]
fn the_flooding_protocol_absorbs_a_matching_ghost_ack() {
    let params = ProtocolParams::new(1);
    let mut init = sdlink::machine::clean_config::<Sdl>(params);
    // A clean start floods markers under the flipped bit (true); this ghost
    // matches those packets exactly.
    init.chan_ack = Channel::with_ghosts(
        params.c(),
        vec![AckPacket { payload: Payload::Synchro, ab: AltBit(true) }],
    )
    .unwrap();

    let triple = |steps: &mut Vec<SimStep>, n: usize| {
        for _ in 0..n {
            steps.push(SimStep::SenderSend { evict: None });
            steps.push(SimStep::ReceiverRecv {
                take: TakeChoice::Index { index: 0 },
                ack_evict: None,
            });
            steps.push(SimStep::SenderPoll { take: TakeChoice::Index { index: 0 } });
        }
    };
    let mut steps = vec![
        SimStep::AppSend,
        // The ghost is polled first and counts toward the marker flood…
        SimStep::SenderPoll { take: TakeChoice::Index { index: 0 } },
    ];
    // …so four more echoed acks finish the marker phase instead of five,
    // then each message needs its usual remaining rounds.
    triple(&mut steps, 4);
    triple(&mut steps, 5);
    steps.push(SimStep::AppSend);
    triple(&mut steps, 10);

    let out = run(&init, &SchedulerPolicy::Scripted { steps }, &toks(&["m1", "m2"]), 100)
        .expect("script applies");
    assert!(out.trace.quiescent);
    assert_eq!(out.trace.delivered_tokens(), toks(&["m1", "m2"]));

    let report = check_trace(&out.trace, &SpecBounds::default());
    assert_eq!(report.overall(), Verdict::Pass);
}

/// Worst legal corruption: the sender wakes up mid-send carrying a token
/// nobody asked for, *and* the receiver's counting queue is one copy away
/// from firing on a second foreign token. Both cross before the first real
/// message: deliveries gain a two-token foreign prefix, which is exactly
/// why freshly requested traffic is only guaranteed a one-token allowance
/// after the system has stabilized once.
#[test]
fn a_mid_send_start_with_a_primed_queue_delivers_two_foreign_tokens() {
    let params = ProtocolParams::new(1);
    let init: Configuration<Sdl> = Configuration {
        sender: SenderState {
            phase: SenderPhase::Payload,
            ab: AltBit(false),
            ack_count: 0,
            pending: Some(Token::new("z")),
        },
        receiver: ReceiverState {
            last_delivered: AltBit(false),
            queue: ReceiverQueue::from_entries(
                vec![QueueEntry {
                    payload: Payload::app("y"),
                    ab: AltBit(true),
                    count: params.c(),
                }],
                &params,
            ),
        },
        chan_data: Channel::with_ghosts(
            params.c(),
            vec![DataPacket { payload: Payload::app("y"), ab: AltBit(true) }],
        )
        .unwrap(),
        chan_ack: Channel::empty(params.c()),
        params,
    };

    let out = run(&init, &SchedulerPolicy::LockStep, &toks(&["m0"]), 10_000)
        .expect("lockstep run");

    assert!(out.trace.quiescent);
    assert_eq!(out.trace.sent_tokens(), toks(&["m0"]));
    assert_eq!(out.trace.delivered_tokens(), toks(&["y", "z", "m0"]));

    // Two foreign tokens exceed the one-token allowance, so the strict
    // shape fails; the bounded properties still classify the run.
    let report = check_trace(&out.trace, &SpecBounds::default());
    assert_eq!(report.combined.verdict, Verdict::Fail);
    assert_eq!(report.creation.verdict, Verdict::Fail);
    assert_eq!(report.loss.verdict, Verdict::Pass);
}

/// The inherited mid-send token is finished for protocol reasons but was
/// never requested in this run, so its completion must not surface as an
/// acknowledgment to the application.
#[test]
fn an_inherited_send_completes_without_an_app_acknowledgment() {
    let params = ProtocolParams::new(1);
    let init: Configuration<Sdl> = Configuration {
        sender: SenderState {
            phase: SenderPhase::Synchro,
            ab: AltBit(true),
            ack_count: 0,
            pending: Some(Token::new("z")),
        },
        receiver: ReceiverState {
            last_delivered: AltBit(false),
            queue: ReceiverQueue::from_entries(vec![], &params),
        },
        chan_data: Channel::empty(params.c()),
        chan_ack: Channel::empty(params.c()),
        params,
    };

    let out = run(&init, &SchedulerPolicy::LockStep, &toks(&["m0"]), 10_000)
        .expect("lockstep run");
    assert!(out.trace.quiescent);

    let acked: Vec<Token> = out
        .trace
        .events
        .iter()
        .filter_map(|e| match &e.kind {
            sdlink::trace::EventKind::AckDelivered { token } => Some(token.clone()),
            _ => None,
        })
        .collect();
    assert_eq!(acked, toks(&["m0"]), "only the requested message is acknowledged");
}

/// Tampering with a recorded schedule cannot silently pass replay: an
/// eviction claim that contradicts the configuration is rejected.
#[test]
fn contradictory_eviction_claims_are_rejected() {
    let params = ProtocolParams::new(1);
    let init = sdlink::machine::clean_config::<Sdl>(params);
    let steps = vec![
        SimStep::AppSend,
        // The data channel is empty; numbering a resident victim is absurd.
        SimStep::SenderSend { evict: Some(EvictChoice::Resident { index: 0 }) },
    ];
    let err = run(&init, &SchedulerPolicy::Scripted { steps }, &toks(&["m0"]), 100)
        .expect_err("bogus eviction");
    assert!(err.to_string().contains("step 1"), "{err}");
}
