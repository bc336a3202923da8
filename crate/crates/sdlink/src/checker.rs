//! Post-hoc trace checking: project a trace to the sent sequence S and the
//! delivered sequence R, then decide the four bounded delivery properties
//! and the combined characterization.
//!
//! Conventions used throughout: `W^j` below means the prefix of W of length
//! j, and `W_i` means W with its first i elements removed. All properties
//! are decided by direct evaluation of their defining quantifiers:
//!
//! * loss(α): ∃a ≤ α such that every required element of S_a appears
//!   somewhere in R;
//! * duplication(β): ∃b ≤ β such that every sent token delivered more than
//!   once appears in R^b;
//! * creation(γ): ∃c ≤ γ such that every delivered-but-never-sent token
//!   appears in R^c;
//! * reordering(δ): ∃d ≤ δ such that R_d parses as m0^k0 m1^k1 … following
//!   S's order with every k ≥ 0;
//! * combined: R = S, or R = S with exactly one extra token in front.
//!
//! The duplication and loss readings are deliberately literal; see the
//! doc comments on [`check_duplication`] and [`check_loss`] for where a
//! stricter reading would differ.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::packet::Token;
use crate::trace::{EventKind, Trace};

// ---------------------------------------------------------------------------
// Verdicts and projections
// ---------------------------------------------------------------------------

/// Outcome of one property check. `Unknown` means the trace did not run to
/// quiescence, so properties quantifying over complete runs cannot be
/// decided.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Unknown,
}

/// The four bounds under which a trace is judged.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct SpecBounds {
    pub alpha: u32,
    pub beta: u32,
    pub gamma: u32,
    pub delta: u32,
}

impl Default for SpecBounds {
    /// The protocol's advertised operating point.
    fn default() -> Self {
        SpecBounds { alpha: 0, beta: 1, gamma: 1, delta: 1 }
    }
}

/// Where an occurrence came from: an application send (with its sequence
/// number) or a delivery (with its event step).
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(tag = "origin", rename_all = "snake_case")]
pub enum Origin {
    AppSent { seq: u32 },
    DeliveredAt { step: u64 },
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Occurrence {
    pub token: Token,
    pub origin: Origin,
}

/// An ordered sequence of message occurrences (S or R).
#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MsgSequence(pub Vec<Occurrence>);

impl MsgSequence {
    pub fn tokens(&self) -> Vec<Token> {
        self.0.iter().map(|o| o.token.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Extract (S, R) from a trace: S is the application sends in order, R the
/// deliveries in order. Dropped markers are not deliveries and do not
/// appear in R.
pub fn project(trace: &Trace) -> (MsgSequence, MsgSequence) {
    let mut s = Vec::new();
    let mut r = Vec::new();
    for e in &trace.events {
        match &e.kind {
            EventKind::AppSend { seq, token } => {
                s.push(Occurrence { token: token.clone(), origin: Origin::AppSent { seq: *seq } });
            }
            EventKind::MsgDelivered { token } => {
                r.push(Occurrence {
                    token: token.clone(),
                    origin: Origin::DeliveredAt { step: e.step },
                });
            }
            _ => {}
        }
    }
    (MsgSequence(s), MsgSequence(r))
}

// ---------------------------------------------------------------------------
// The four properties, decided on bare token sequences
// ---------------------------------------------------------------------------

/// ∃a ≤ α: every element of S with its first a elements dropped appears
/// somewhere in R.
///
/// The formula only asks for membership *somewhere* in R, not after the
/// suffix begins; that looseness is intentional and matched by the
/// brute-force evaluator.
pub fn check_loss(s: &[Token], r: &[Token], alpha: u32) -> bool {
    check_loss_required(s, r, alpha, |_| true)
}

/// As [`check_loss`], but only elements selected by `required` must appear.
/// On finite runs the obligation extends only to messages whose send was
/// acknowledged; the filter expresses that.
pub fn check_loss_required(
    s: &[Token],
    r: &[Token],
    alpha: u32,
    required: impl Fn(usize) -> bool,
) -> bool {
    (0..=alpha as usize).any(|a| {
        s.iter()
            .enumerate()
            .skip(a)
            .all(|(i, m)| !required(i) || r.contains(m))
    })
}

/// ∃b ≤ β: every sent token that occurs more than once in R lies within
/// R's first b elements.
///
/// Read literally, a token whose *first* occurrence is early enough
/// satisfies the bound even if later duplicates appear arbitrarily deep;
/// the stronger end-to-end shape is checked separately by [`check_sdl_shape`].
pub fn check_duplication(s: &[Token], r: &[Token], beta: u32) -> bool {
    (0..=beta as usize).any(|b| {
        let prefix = &r[..b.min(r.len())];
        s.iter()
            .all(|m| r.iter().filter(|x| *x == m).count() <= 1 || prefix.contains(m))
    })
}

/// ∃c ≤ γ: every token delivered but never sent lies within R's first c
/// elements.
pub fn check_creation(s: &[Token], r: &[Token], gamma: u32) -> bool {
    (0..=gamma as usize).any(|c| {
        let prefix = &r[..c.min(r.len())];
        r.iter().all(|m| s.contains(m) || prefix.contains(m))
    })
}

/// ∃d ≤ δ: R with its first d elements dropped parses as
/// m0^k0 m1^k1 … mn^kn in S's order, each k ≥ 0.
pub fn check_reordering(s: &[Token], r: &[Token], delta: u32) -> bool {
    (0..=delta as usize).any(|d| star_parse(s, &r[d.min(r.len())..]))
}

/// Does `r` parse as s[0]^k0 s[1]^k1 … with every k ≥ 0? Dynamic program
/// over (position in r, position in s); handles token collisions between
/// blocks exactly, with no greedy commitment.
fn star_parse(s: &[Token], r: &[Token]) -> bool {
    let n = r.len();
    // dp[i] == true ⇔ r[i..] parses as s[j]^* s[j+1]^* …, for the current j.
    // Start at j = |s|, where only the empty remainder parses.
    let mut dp = vec![false; n + 1];
    dp[n] = true;
    for token in s.iter().rev() {
        let mut next = vec![false; n + 1];
        next[n] = dp[n];
        for i in (0..n).rev() {
            next[i] = dp[i] || (r[i] == *token && next[i + 1]);
        }
        dp = next;
    }
    dp[0]
}

/// The combined characterization: R equals S exactly, or R equals S with
/// exactly one extra token prepended.
pub fn check_sdl_shape(s: &[Token], r: &[Token]) -> bool {
    r == s || (r.len() == s.len() + 1 && r[1..] == *s)
}

// ---------------------------------------------------------------------------
// Trace-level report
// ---------------------------------------------------------------------------

/// One property's outcome: the verdict, the least bound value that
/// satisfied it (when it passed), and a human-readable note.
#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub struct PropertyReport {
    pub verdict: Verdict,
    pub witness_bound: Option<u32>,
    pub detail: String,
}

impl PropertyReport {
    fn unknown(detail: &str) -> Self {
        PropertyReport { verdict: Verdict::Unknown, witness_bound: None, detail: detail.into() }
    }

    fn decided(bound: u32, ok: impl Fn(u32) -> bool, detail: String) -> Self {
        match (0..=bound).find(|b| ok(*b)) {
            Some(b) => PropertyReport { verdict: Verdict::Pass, witness_bound: Some(b), detail },
            None => PropertyReport { verdict: Verdict::Fail, witness_bound: None, detail },
        }
    }
}

/// The full verdict over one trace.
#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub struct CheckReport {
    pub bounds: SpecBounds,
    pub quiescent: bool,
    pub s: Vec<Token>,
    pub r: Vec<Token>,
    pub loss: PropertyReport,
    pub duplication: PropertyReport,
    pub creation: PropertyReport,
    pub reordering: PropertyReport,
    pub combined: PropertyReport,
}

impl CheckReport {
    /// Worst verdict across all properties: Fail beats Unknown beats Pass.
    pub fn overall(&self) -> Verdict {
        let all = [&self.loss, &self.duplication, &self.creation, &self.reordering, &self.combined];
        if all.iter().any(|p| p.verdict == Verdict::Fail) {
            Verdict::Fail
        } else if all.iter().any(|p| p.verdict == Verdict::Unknown) {
            Verdict::Unknown
        } else {
            Verdict::Pass
        }
    }

    /// One line per property, for terminal output.
    pub fn render(&self) -> String {
        let line = |name: &str, p: &PropertyReport| {
            let verdict = match p.verdict {
                Verdict::Pass => "pass",
                Verdict::Fail => "FAIL",
                Verdict::Unknown => "unknown",
            };
            let bound = match p.witness_bound {
                Some(b) => format!(" (bound {b})"),
                None => String::new(),
            };
            format!("{name:<12} {verdict}{bound} — {}\n", p.detail)
        };
        let mut out = String::new();
        out.push_str(&format!("S = {:?}\n", render_tokens(&self.s)));
        out.push_str(&format!("R = {:?}\n", render_tokens(&self.r)));
        out.push_str(&line("loss", &self.loss));
        out.push_str(&line("duplication", &self.duplication));
        out.push_str(&line("creation", &self.creation));
        out.push_str(&line("reordering", &self.reordering));
        out.push_str(&line("combined", &self.combined));
        out
    }
}

fn render_tokens(tokens: &[Token]) -> Vec<&str> {
    tokens.iter().map(|t| t.as_str()).collect()
}

/// Decide all properties of a trace under the given bounds.
///
/// Non-quiescent traces leave loss and the combined shape undecidable
/// (messages may still be in flight), so those come back `Unknown`;
/// duplication, creation and reordering are prefix-closed and are decided
/// on what was observed.
pub fn check_trace(trace: &Trace, bounds: &SpecBounds) -> CheckReport {
    let (s_seq, r_seq) = project(trace);
    let s = s_seq.tokens();
    let r = r_seq.tokens();

    let acked: BTreeSet<Token> = trace
        .events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::AckDelivered { token } => Some(token.clone()),
            _ => None,
        })
        .collect();

    let duplication = {
        let dups: Vec<&Token> = s
            .iter()
            .filter(|m| r.iter().filter(|x| x == m).count() > 1)
            .collect();
        let detail = if dups.is_empty() {
            "no sent token delivered more than once".to_string()
        } else {
            format!("multiply delivered: {:?}", dups.iter().map(|t| t.as_str()).collect::<Vec<_>>())
        };
        PropertyReport::decided(bounds.beta, |b| check_duplication(&s, &r, b), detail)
    };

    let creation = {
        let ghosts: Vec<String> = r
            .iter()
            .enumerate()
            .filter(|(_, m)| !s.contains(m))
            .map(|(i, m)| format!("{} at R position {}", m.as_str(), i + 1))
            .collect();
        let detail = if ghosts.is_empty() {
            "every delivery was sent".to_string()
        } else {
            format!("unsent deliveries: {}", ghosts.join(", "))
        };
        PropertyReport::decided(bounds.gamma, |c| check_creation(&s, &r, c), detail)
    };

    let reordering = PropertyReport::decided(
        bounds.delta,
        |d| check_reordering(&s, &r, d),
        "order compared against the send sequence".to_string(),
    );

    let (loss, combined) = if trace.quiescent {
        let required: Vec<bool> = s_seq
            .0
            .iter()
            .map(|o| acked.contains(&o.token))
            .collect();
        let loss = PropertyReport::decided(
            bounds.alpha,
            |a| check_loss_required(&s, &r, a, |i| required[i]),
            format!("{} of {} sends acknowledged", required.iter().filter(|x| **x).count(), s.len()),
        );
        let combined = if check_sdl_shape(&s, &r) {
            let detail = if r.len() == s.len() {
                "R = S".to_string()
            } else {
                format!("R = S with {:?} prepended", r[0].as_str())
            };
            PropertyReport { verdict: Verdict::Pass, witness_bound: None, detail }
        } else {
            PropertyReport {
                verdict: Verdict::Fail,
                witness_bound: None,
                detail: "R is neither S nor S with one token prepended".to_string(),
            }
        };
        (loss, combined)
    } else {
        (
            PropertyReport::unknown("trace not quiescent; sends may still be in flight"),
            PropertyReport::unknown("trace not quiescent"),
        )
    };

    // The combined shape subsumes the four properties at their advertised
    // bounds whenever sends are pairwise distinct (the harness guarantees
    // that).
    if combined.verdict == Verdict::Pass {
        let distinct: BTreeSet<&Token> = s.iter().collect();
        if distinct.len() == s.len() {
            debug_assert!(
                check_loss(&s, &r, 0)
                    && check_duplication(&s, &r, 1)
                    && check_creation(&s, &r, 1)
                    && check_reordering(&s, &r, 1),
                "combined shape must imply the four properties at (0,1,1,1)"
            );
        }
    }

    CheckReport {
        bounds: *bounds,
        quiescent: trace.quiescent,
        s,
        r,
        loss,
        duplication,
        creation,
        reordering,
        combined,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::{clean_config, Sdl};
    use crate::packet::ProtocolParams;
    use crate::scenario::{run_scenario, ScenarioId};
    use crate::sim::{run, SchedulerPolicy};
    use proptest::prelude::*;

    fn toks(names: &[&str]) -> Vec<Token> {
        names.iter().map(Token::new).collect()
    }

    // -- loss ---------------------------------------------------------------

    #[test]
    fn loss_holds_when_everything_is_delivered() {
        assert!(check_loss(&toks(&["A", "B"]), &toks(&["A", "B"]), 0));
    }

    #[test]
    fn loss_excuses_exactly_the_dropped_prefix() {
        let s = toks(&["A", "B"]);
        let r = toks(&["B"]);
        assert!(check_loss(&s, &r, 1));
        assert!(!check_loss(&s, &r, 0));
    }

    #[test]
    fn loss_is_vacuous_on_an_empty_send_sequence() {
        assert!(check_loss(&[], &toks(&["g"]), 0));
        assert!(check_loss(&[], &[], 0));
    }

    #[test]
    fn loss_looks_anywhere_in_r_not_only_past_the_cut() {
        // B was delivered before the surviving suffix begins; the literal
        // formula accepts that.
        let s = toks(&["A", "B"]);
        let r = toks(&["B", "A"]);
        assert!(check_loss(&s, &r, 0));
    }

    // -- duplication ----------------------------------------------------------

    #[test]
    fn duplication_passes_when_nothing_repeats() {
        assert!(check_duplication(&toks(&["A", "B"]), &toks(&["g", "A", "B"]), 1));
        assert!(check_duplication(&toks(&["A", "B"]), &toks(&["g", "A", "B"]), 0));
    }

    #[test]
    fn duplicate_must_sit_in_the_allowed_prefix() {
        let s = toks(&["g", "B"]);
        let r = toks(&["g", "g", "B"]);
        assert!(check_duplication(&s, &r, 1));
        assert!(!check_duplication(&s, &r, 0));
    }

    #[test]
    fn late_duplicate_passes_when_its_first_occurrence_is_in_the_prefix() {
        // The literal formula asks only that the repeated token be *in*
        // the prefix; a second copy deep in the suffix does not refute it.
        let s = toks(&["A", "B"]);
        let r = toks(&["A", "B", "A"]);
        assert!(check_duplication(&s, &r, 1));
        assert!(!check_duplication(&s, &r, 0));
    }

    // -- creation -------------------------------------------------------------

    #[test]
    fn unsent_delivery_needs_a_wide_enough_prefix() {
        let s = toks(&["A"]);
        let r = toks(&["g", "A"]);
        assert!(check_creation(&s, &r, 1));
        assert!(!check_creation(&s, &r, 0));
    }

    #[test]
    fn creation_is_free_when_r_equals_s() {
        let s = toks(&["A", "B"]);
        assert!(check_creation(&s, &s.clone(), 0));
    }

    #[test]
    fn ghost_outside_the_prefix_fails() {
        let s = toks(&["A"]);
        let r = toks(&["A", "g"]);
        assert!(!check_creation(&s, &r, 1));
    }

    // -- reordering -----------------------------------------------------------

    #[test]
    fn in_order_delivery_parses_directly() {
        let s = toks(&["A", "B"]);
        assert!(check_reordering(&s, &s.clone(), 0));
    }

    #[test]
    fn prepended_ghost_needs_one_drop() {
        let s = toks(&["A", "B"]);
        let r = toks(&["g", "A", "B"]);
        assert!(!check_reordering(&s, &r, 0));
        assert!(check_reordering(&s, &r, 1));
    }

    #[test]
    fn swapped_pair_needs_one_drop() {
        let s = toks(&["A", "B"]);
        let r = toks(&["B", "A"]);
        assert!(!check_reordering(&s, &r, 0));
        // Dropping B leaves [A], which parses as A^1 B^0.
        assert!(check_reordering(&s, &r, 1));
    }

    #[test]
    fn star_parse_handles_repeats_and_collisions() {
        assert!(star_parse(&toks(&["A"]), &toks(&["A", "A", "A"])));
        assert!(star_parse(&toks(&["A", "B"]), &[]));
        assert!(star_parse(&toks(&["A", "B", "A"]), &toks(&["A", "A", "A"])));
        assert!(!star_parse(&toks(&["A", "B"]), &toks(&["B", "A"])));
        // The tight reordering shape: delivered [m1, g] against sent [m1, g].
        assert!(star_parse(&toks(&["m1", "g"]), &toks(&["m1", "g"])));
        assert!(!star_parse(&toks(&["m1", "g"]), &toks(&["g", "m1", "g"])));
    }

    // -- combined shape ---------------------------------------------------------

    #[test]
    fn combined_shape_accepts_exact_and_one_prepend() {
        let s = toks(&["A", "B", "C"]);
        assert!(check_sdl_shape(&s, &s.clone()));
        assert!(check_sdl_shape(&toks(&["A", "B"]), &toks(&["g", "A", "B"])));
        assert!(!check_sdl_shape(&toks(&["A", "B", "C"]), &toks(&["A", "B"])));
        assert!(!check_sdl_shape(&toks(&["A"]), &toks(&["g", "h", "A"])));
    }

    // -- trace-level --------------------------------------------------------------

    #[test]
    fn clean_run_report_passes_everything() {
        let init = clean_config::<Sdl>(ProtocolParams::new(1));
        let msgs = toks(&["A", "B"]);
        let out = run(&init, &SchedulerPolicy::LockStep, &msgs, 10_000).unwrap();
        let report = check_trace(&out.trace, &SpecBounds::default());
        assert_eq!(report.overall(), Verdict::Pass);
        assert_eq!(report.s, msgs);
        assert_eq!(report.r, msgs);
        assert_eq!(report.loss.witness_bound, Some(0));
    }

    #[test]
    fn non_quiescent_trace_is_unknown_on_loss_and_combined() {
        let init = clean_config::<Sdl>(ProtocolParams::new(1));
        let msgs = toks(&["A"]);
        // Too small a budget to finish.
        let out = run(&init, &SchedulerPolicy::LockStep, &msgs, 3).unwrap();
        assert!(!out.trace.quiescent);
        let report = check_trace(&out.trace, &SpecBounds::default());
        assert_eq!(report.loss.verdict, Verdict::Unknown);
        assert_eq!(report.combined.verdict, Verdict::Unknown);
        assert_eq!(report.overall(), Verdict::Unknown);
    }

    #[test]
    fn scenario_reports_match_their_design() {
        let ghost = check_trace(&run_scenario(ScenarioId::GhostTight), &SpecBounds::default());
        assert_eq!(ghost.overall(), Verdict::Pass);
        assert_eq!(ghost.creation.witness_bound, Some(1));

        let dup = check_trace(&run_scenario(ScenarioId::DupTight), &SpecBounds::default());
        assert_eq!(dup.overall(), Verdict::Pass);
        assert_eq!(dup.duplication.witness_bound, Some(1));

        let reorder = check_trace(&run_scenario(ScenarioId::ReorderTight), &SpecBounds::default());
        assert_eq!(reorder.overall(), Verdict::Pass);
        assert_eq!(reorder.reordering.witness_bound, Some(1));

        let abp = check_trace(&run_scenario(ScenarioId::AbpFail), &SpecBounds::default());
        assert_eq!(abp.overall(), Verdict::Fail);
        assert_eq!(abp.creation.verdict, Verdict::Fail);
        assert_eq!(abp.combined.verdict, Verdict::Fail);
    }

    #[test]
    fn empty_trace_passes_vacuously() {
        let init = clean_config::<Sdl>(ProtocolParams::new(1));
        let out = run(&init, &SchedulerPolicy::LockStep, &[], 100).unwrap();
        let report = check_trace(&out.trace, &SpecBounds::default());
        assert_eq!(report.overall(), Verdict::Pass);
    }

    // -- properties ------------------------------------------------------------

    fn token_seq(max_len: usize) -> impl Strategy<Value = Vec<Token>> {
        proptest::collection::vec(prop_oneof![Just(Token::new("A")), Just(Token::new("B"))], 0..=max_len)
    }

    proptest! {
        #[test]
        fn checks_are_monotone_in_their_bound(
            s in token_seq(4),
            r in token_seq(4),
            bound in 0u32..3,
        ) {
            prop_assert!(!check_loss(&s, &r, bound) || check_loss(&s, &r, bound + 1));
            prop_assert!(!check_duplication(&s, &r, bound) || check_duplication(&s, &r, bound + 1));
            prop_assert!(!check_creation(&s, &r, bound) || check_creation(&s, &r, bound + 1));
            prop_assert!(!check_reordering(&s, &r, bound) || check_reordering(&s, &r, bound + 1));
        }

        #[test]
        fn combined_shape_implies_the_four_properties(
            s in proptest::collection::vec(0usize..4, 0..=3),
            prepend in proptest::option::of(prop_oneof![Just(Token::new("A")), Just(Token::new("x"))]),
        ) {
            // Build S with distinct tokens, R = S or x·S.
            let names = ["A", "B", "C", "D"];
            let mut seen = std::collections::BTreeSet::new();
            let s: Vec<Token> =
                s.into_iter().filter(|i| seen.insert(*i)).map(|i| Token::new(names[i])).collect();
            let mut r = s.clone();
            if let Some(x) = prepend {
                r.insert(0, x);
            }
            prop_assert!(check_sdl_shape(&s, &r));
            prop_assert!(check_loss(&s, &r, 0));
            prop_assert!(check_duplication(&s, &r, 1));
            prop_assert!(check_creation(&s, &r, 1));
            prop_assert!(check_reordering(&s, &r, 1));
        }
    }
}
