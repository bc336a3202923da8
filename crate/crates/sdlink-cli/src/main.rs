//! Command-line front end for the data-link simulator.
//!
//! Three subcommands:
//!
//! * `run` — execute one or many simulation runs (or a named scenario) and
//!   write trace documents,
//! * `check` — evaluate a trace document against the bounded delivery
//!   properties,
//! * `exhaustive` — enumerate every reachable state of a small instance
//!   and report safety violations.
//!
//! Exit codes are a stable contract: 0 all checks pass, 1 property
//! violation, 2 usage or parse error, 3 non-quiescent run or partial
//! exploration.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use sdlink::checker::{check_trace, SpecBounds, Verdict};
use sdlink::machine::{arbitrary_config, clean_config, Abp, Configuration, DataLink, Sdl};
use sdlink::oracle::{default_alphabet, explore, ExploreParams, ExploreReport, InitMode};
use sdlink::packet::{ProtocolParams, Token};
use sdlink::scenario::{run_scenario, ScenarioId};
use sdlink::sim::{default_patience, run, SchedulerPolicy};
use sdlink::trace::Trace;

const EXIT_PASS: u8 = 0;
const EXIT_VIOLATION: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_INCOMPLETE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "sdlink",
    version,
    about = "Simulate and check a self-stabilizing data-link protocol on bounded lossy channels"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run simulations and write trace documents.
    Run(RunArgs),
    /// Check a trace document against the bounded delivery properties.
    Check(CheckArgs),
    /// Exhaustively explore a small instance and report safety violations.
    Exhaustive(ExhaustiveArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProtocolArg {
    /// The flooding data-link protocol.
    Sdl,
    /// The alternating-bit baseline.
    Abp,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    /// Seeded adversarial scheduler with a fairness patience bound.
    Random,
    /// Deterministic send → receive → ack cadence (packet counting).
    Lockstep,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InitArg {
    /// Idle sender, fresh receiver, empty channels.
    Clean,
    /// Seeded corrupted state: ghost packets, primed counters.
    Arbitrary,
}

#[derive(Args)]
struct RunArgs {
    /// Channel capacity c (≥ 1).
    #[arg(long, short)]
    capacity: Option<u32>,
    /// Single seed for the scheduler (and the corrupted init, if any).
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Seed range `A..B` (end exclusive), one run per seed.
    #[arg(long, value_parser = parse_seed_range)]
    seeds: Option<std::ops::Range<u64>>,
    /// Number of application messages (tokens msg00, msg01, …).
    #[arg(long, short)]
    messages: Option<usize>,
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    /// Probability that the scheduler delivers rather than drops a pick.
    #[arg(long)]
    p_deliver: Option<f64>,
    /// Probability weight of spontaneous packet loss.
    #[arg(long)]
    p_lose: Option<f64>,
    /// Fairness bound: a packet this old is delivered next.
    #[arg(long)]
    patience: Option<u32>,
    #[arg(long, value_enum)]
    init: Option<InitArg>,
    #[arg(long, value_enum)]
    protocol: Option<ProtocolArg>,
    /// Run a named worst-case scenario instead (overrides capacity,
    /// messages, policy, and init).
    #[arg(long, value_parser = parse_scenario)]
    scenario: Option<ScenarioId>,
    /// Step budget (default 200·(6c+4)·messages).
    #[arg(long)]
    max_steps: Option<u64>,
    /// Directory for trace files (required for seed ranges; single runs
    /// print to stdout without it).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    /// Trace document to check.
    trace: PathBuf,
    /// Loss bound α.
    #[arg(long, default_value_t = 0)]
    alpha: u32,
    /// Duplication bound β.
    #[arg(long, default_value_t = 1)]
    beta: u32,
    /// Creation bound γ.
    #[arg(long, default_value_t = 1)]
    gamma: u32,
    /// Reordering bound δ.
    #[arg(long, default_value_t = 1)]
    delta: u32,
}

#[derive(Args)]
struct ExhaustiveArgs {
    /// Channel capacity c (desk scale: keep at 1 for the full sweep).
    #[arg(long, short, default_value_t = 1)]
    capacity: u32,
    /// Number of application messages (tokens msg00, msg01, …; at most 2).
    #[arg(long, short, default_value_t = 1)]
    messages: usize,
    /// Starting states: the clean one, or all valid configurations.
    #[arg(long, value_enum, default_value_t = ExhaustiveInitArg::All)]
    init: ExhaustiveInitArg,
    #[arg(long, value_enum, default_value_t = ProtocolArg::Sdl)]
    protocol: ProtocolArg,
    /// Stop after this many breadth-first layers (reports partial).
    #[arg(long)]
    depth: Option<u32>,
    /// Expand layers on one worker instead of in parallel.
    #[arg(long)]
    sequential: bool,
    /// Cap on reconstructed violation witnesses.
    #[arg(long, default_value_t = 4)]
    max_witnesses: usize,
    /// Where to write witnesses when violations are found.
    #[arg(long, default_value = "witnesses.json")]
    witness_out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExhaustiveInitArg {
    Clean,
    All,
}

fn parse_seed_range(s: &str) -> Result<std::ops::Range<u64>, String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("expected A..B (end exclusive), got `{s}`"))?;
    let a: u64 = a.trim().parse().map_err(|e| format!("bad range start: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("bad range end: {e}"))?;
    if a >= b {
        return Err(format!("empty seed range {a}..{b}"));
    }
    Ok(a..b)
}

fn parse_scenario(s: &str) -> Result<ScenarioId, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse(); // clap itself exits 2 on usage errors
    let result = match cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Check(args) => cmd_check(args),
        Cmd::Exhaustive(args) => cmd_exhaustive(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

fn cmd_run(args: RunArgs) -> Result<u8> {
    if let Some(id) = args.scenario {
        return run_scenario_cmd(&args, id);
    }

    let capacity = args.capacity.unwrap_or(1);
    if capacity == 0 {
        bail!("--capacity must be at least 1");
    }
    let messages = args.messages.unwrap_or(5);
    let msgs = message_tokens(messages);
    let max_steps = args
        .max_steps
        .unwrap_or_else(|| 200 * (6 * capacity as u64 + 4) * messages.max(1) as u64);

    let seeds: Vec<u64> = match (&args.seed, &args.seeds) {
        (Some(s), None) => vec![*s],
        (None, Some(r)) => r.clone().collect(),
        (None, None) => vec![0],
        (Some(_), Some(_)) => unreachable!("clap conflict"),
    };
    if seeds.len() > 1 && args.out.is_none() {
        bail!("--out DIR is required when running more than one seed");
    }
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
    }

    let protocol = args.protocol.unwrap_or(ProtocolArg::Sdl);
    let policy_arg = args.policy.unwrap_or(PolicyArg::Random);
    let init_arg = args.init.unwrap_or(InitArg::Clean);

    // One line per seed, printed in seed order regardless of worker order.
    let lines: Result<Vec<(String, bool)>> = seeds
        .par_iter()
        .map(|&seed| {
            let policy = match policy_arg {
                PolicyArg::Lockstep => SchedulerPolicy::LockStep,
                PolicyArg::Random => SchedulerPolicy::RandomFair {
                    seed,
                    p_deliver: args.p_deliver.unwrap_or(0.6),
                    p_lose: args.p_lose.unwrap_or(0.1),
                    patience: args.patience.unwrap_or_else(|| default_patience(capacity)),
                },
            };
            let trace = match protocol {
                ProtocolArg::Sdl => {
                    run_one::<Sdl>(capacity, seed, init_arg, &policy, &msgs, max_steps)?
                }
                ProtocolArg::Abp => {
                    run_one::<Abp>(capacity, seed, init_arg, &policy, &msgs, max_steps)?
                }
            };
            let quiescent = trace.quiescent;
            let mut line = format!(
                "seed {seed}: {} in {} events, sent {} delivered {}",
                if quiescent { "quiescent" } else { "NOT QUIESCENT" },
                trace.events.len(),
                trace.sent_tokens().len(),
                trace.delivered_tokens().len(),
            );
            if let Some(dir) = &args.out {
                let path = dir.join(format!("run-c{capacity}-s{seed}.json"));
                trace.write(&path).with_context(|| format!("writing {}", path.display()))?;
                line.push_str(&format!(" -> {}", path.display()));
            } else {
                line = trace.to_json();
            }
            Ok((line, quiescent))
        })
        .collect();
    let lines = lines?;

    let mut all_quiescent = true;
    for (line, quiescent) in &lines {
        println!("{line}");
        all_quiescent &= quiescent;
    }
    Ok(if all_quiescent { EXIT_PASS } else { EXIT_INCOMPLETE })
}

fn run_one<P: DataLink>(
    capacity: u32,
    seed: u64,
    init: InitArg,
    policy: &SchedulerPolicy,
    msgs: &[Token],
    max_steps: u64,
) -> Result<Trace> {
    let params = ProtocolParams::new(capacity);
    let config: Configuration<P> = match init {
        InitArg::Clean => clean_config(params),
        InitArg::Arbitrary => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            arbitrary_config(&mut rng, &ghost_alphabet(), params)
        }
    };
    let outcome = run(&config, policy, msgs, max_steps)
        .with_context(|| format!("seed {seed} schedule failed to apply"))?;
    Ok(outcome.trace)
}

fn run_scenario_cmd(args: &RunArgs, id: ScenarioId) -> Result<u8> {
    let scenario_protocol =
        if id == ScenarioId::AbpFail { ProtocolArg::Abp } else { ProtocolArg::Sdl };
    if let Some(p) = args.protocol {
        if p != scenario_protocol {
            bail!("scenario {id} belongs to the other protocol");
        }
    }
    let trace = run_scenario(id);
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        let path = dir.join(format!("{id}.json"));
        trace.write(&path).with_context(|| format!("writing {}", path.display()))?;
        println!(
            "scenario {id}: {} events, sent {} delivered {} -> {}",
            trace.events.len(),
            trace.sent_tokens().len(),
            trace.delivered_tokens().len(),
            path.display()
        );
    } else {
        println!("{}", trace.to_json());
    }
    Ok(EXIT_PASS)
}

fn message_tokens(n: usize) -> Vec<Token> {
    (0..n).map(|i| Token::new(format!("msg{i:02}"))).collect()
}

/// Ghost tokens for corrupted starts, disjoint from `msgNN` message names.
fn ghost_alphabet() -> Vec<Token> {
    vec![Token::new("g0"), Token::new("g1")]
}

// ---------------------------------------------------------------------------
// check
// ---------------------------------------------------------------------------

fn cmd_check(args: CheckArgs) -> Result<u8> {
    let trace = match Trace::read(&args.trace) {
        Ok(t) => t,
        Err(e) => {
            // Parse and I/O problems are usage errors with a location.
            eprintln!("error: {}: {e}", args.trace.display());
            return Ok(EXIT_USAGE);
        }
    };
    let bounds = SpecBounds {
        alpha: args.alpha,
        beta: args.beta,
        gamma: args.gamma,
        delta: args.delta,
    };
    let report = check_trace(&trace, &bounds);
    print!("{}", report.render());
    Ok(match report.overall() {
        Verdict::Pass => EXIT_PASS,
        Verdict::Fail => EXIT_VIOLATION,
        Verdict::Unknown => EXIT_INCOMPLETE,
    })
}

// ---------------------------------------------------------------------------
// exhaustive
// ---------------------------------------------------------------------------

fn cmd_exhaustive(args: ExhaustiveArgs) -> Result<u8> {
    if args.capacity == 0 {
        bail!("--capacity must be at least 1");
    }
    if args.messages > 2 {
        bail!("exhaustive exploration supports at most 2 messages");
    }
    let msgs = message_tokens(args.messages);
    let mut params = ExploreParams::new(
        args.capacity,
        msgs,
        match args.init {
            ExhaustiveInitArg::Clean => InitMode::CleanOnly,
            ExhaustiveInitArg::All => InitMode::AllValidConfigurations,
        },
    );
    params.token_alphabet = default_alphabet(&params.app_messages);
    params.depth_bound = args.depth;
    params.parallel = !args.sequential;
    params.max_witnesses = args.max_witnesses;

    let report = match args.protocol {
        ProtocolArg::Sdl => explore::<Sdl>(&params),
        ProtocolArg::Abp => explore::<Abp>(&params),
    };
    print_explore_report(&report);

    if !report.witnesses.is_empty() {
        let doc = serde_json::to_string_pretty(&report.witnesses)
            .expect("witnesses serialize")
            + "\n";
        std::fs::write(&args.witness_out, doc)
            .with_context(|| format!("writing {}", args.witness_out.display()))?;
        println!("witnesses -> {}", args.witness_out.display());
    }

    Ok(if report.violations_found > 0 {
        EXIT_VIOLATION
    } else if report.partial {
        EXIT_INCOMPLETE
    } else {
        EXIT_PASS
    })
}

fn print_explore_report(report: &ExploreReport) {
    println!(
        "explored {} states from {} starting states, depth {}{}",
        report.visited,
        report.roots,
        report.depth,
        if report.partial { " (partial: depth bound hit)" } else { "" }
    );
    if report.violations_found == 0 {
        println!("no safety violations");
    } else {
        println!(
            "{} safety violations; first witnesses:",
            report.violations_found
        );
        for w in &report.witnesses {
            println!(
                "  depth {}: sent {:?} but delivered {:?} after {} steps",
                w.depth,
                w.sent.iter().map(|t| t.as_str()).collect::<Vec<_>>(),
                w.delivered.iter().map(|t| t.as_str()).collect::<Vec<_>>(),
                w.steps.len()
            );
        }
    }
}
