//! Built-in scenario battery run across a seed sweep.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::book::PeerStatus;
use crate::sim::{
    run_simulation, Action, ForgeMode, ForgedEvent, ScenarioSpec, ScriptedAction, SimConfig,
    SimReport, SIM_EPOCH_MS,
};
use crate::trace::{verify_trace, TraceRecord};

pub const SCENARIOS: [&str; 8] = [
    "happy_path",
    "control",
    "duplicate_join",
    "replay",
    "impersonation",
    "spam",
    "rate_limit",
    "rate_limit_off",
];

fn step(at_ms: u64, actor: &str, action: Action) -> ScriptedAction {
    ScriptedAction {
        at_ms,
        actor: actor.to_string(),
        action,
    }
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn join(at_ms: u64, actor: &str, targets: &[&str]) -> ScriptedAction {
    step(
        at_ms,
        actor,
        Action::Join {
            targets: names(targets),
        },
    )
}

/// Upper bound on how long an honest join takes to settle.
fn settle_ms(base: &SimConfig) -> u64 {
    base.latency_ms.1 * 6 + base.protocol.batch_wait_range_ms.1 + 1_000
}

/// Rate-limit scenarios: limit `L` per window for every sender.
pub const RATE_LIMIT: u32 = 5;
const SPAM_PER_WINDOW: u64 = 20;

/// Builds the config for one battery scenario from a base config.
pub fn scenario_config(name: &str, base: &SimConfig, seed: u64) -> Option<SimConfig> {
    let mut cfg = base.clone();
    cfg.seed = seed;
    cfg.clock_skew_ms.clear();
    let settle = settle_ms(base);
    let timeout = base.protocol.book.timeout_connected_ms;
    let (scenario, peers, duration) = match name {
        "happy_path" => (
            ScenarioSpec::with_actions(vec![join(100, "peer0", &["peer1"])]),
            2,
            (3 * timeout).max(100 + settle + 20_000),
        ),
        "control" => (
            ScenarioSpec::with_actions(vec![
                join(100, "peer0", &["peer1", "peer2"]),
                join(150, "peer3", &["peer1"]),
                join(200 + settle, "peer4", &["peer0", "peer3"]),
            ]),
            5,
            2 * settle + 20_000,
        ),
        "duplicate_join" => {
            let second = 100 + settle;
            (
                ScenarioSpec::with_actions(vec![
                    join(100, "peer0", &["peer1"]),
                    step(
                        second,
                        "peer0",
                        Action::DuplicateJoin {
                            targets: names(&["peer2"]),
                        },
                    ),
                ]),
                3,
                second + settle + 5_000,
            )
        }
        "replay" => {
            // the first captured message is peer0's ConnectionInit at t=100
            let at = 100 + base.protocol.entrypoint.max_clock_skew_past_ms + 1_000;
            (
                ScenarioSpec {
                    adversaries: names(&["eve"]),
                    actions: vec![
                        join(100, "peer0", &["peer1"]),
                        step(
                            at,
                            "eve",
                            Action::Replay {
                                captured_event_index: 0,
                                to: None,
                            },
                        ),
                    ],
                },
                2,
                at + 1_000,
            )
        }
        "impersonation" => {
            let mut actions = vec![join(100, "peer0", &["peer1"])];
            let mut at = 100 + settle;
            for mode in [ForgeMode::RewriteSender, ForgeMode::CorruptSignature] {
                for payload in [ForgedEvent::ConnectionInit, ForgedEvent::KeepAlive] {
                    actions.push(step(
                        at,
                        "eve",
                        Action::Impersonate {
                            victim: "peer0".into(),
                            to: "peer1".into(),
                            mode,
                            payload,
                        },
                    ));
                    at += 10;
                }
            }
            (
                ScenarioSpec {
                    adversaries: names(&["eve"]),
                    actions,
                },
                2,
                at + 1_000,
            )
        }
        "spam" => {
            let count = 20;
            let interval = base.protocol.batch_wait_range_ms.1 + base.latency_ms.1 * 2 + 10;
            (
                ScenarioSpec {
                    adversaries: names(&["mallory"]),
                    actions: vec![step(
                        100,
                        "mallory",
                        Action::Spam {
                            target: "peer0".into(),
                            count,
                            interval_ms: interval,
                            fresh_identities: true,
                        },
                    )],
                },
                1,
                100 + interval * u64::from(count) + settle,
            )
        }
        "rate_limit" | "rate_limit_off" => {
            let ep = &mut cfg.protocol.entrypoint;
            ep.rate_limiter_enabled = name == "rate_limit";
            ep.rate_limit_connected = RATE_LIMIT;
            ep.rate_limit_unconnected = RATE_LIMIT;
            let window = ep.rate_window_ms;
            let interval = (window / SPAM_PER_WINDOW).max(1);
            let count = (SPAM_PER_WINDOW * 3) as u32;
            (
                ScenarioSpec {
                    adversaries: names(&["mallory"]),
                    actions: vec![step(
                        window,
                        "mallory",
                        Action::Spam {
                            target: "peer0".into(),
                            count,
                            interval_ms: interval,
                            fresh_identities: false,
                        },
                    )],
                },
                1,
                window + interval * u64::from(count) + 1_000,
            )
        }
        _ => return None,
    };
    cfg.scenario = scenario;
    cfg.num_honest_peers = peers;
    cfg.duration_ms = duration;
    Some(cfg)
}

/// Accepted (non-rejected) events per `(receiver, sender, window index)`,
/// windows aligned to multiples of `window_ms` on the receivers' clock.
pub fn accepted_per_window(
    report: &SimReport,
    window_ms: u64,
) -> BTreeMap<(String, String, u64), u64> {
    let mut counts = BTreeMap::new();
    for rec in report.records() {
        if let TraceRecord::Handled {
            t,
            peer,
            sender: Some(sender),
            outcome,
            ..
        } = rec
        {
            if !outcome.starts_with("rejected") {
                *counts
                    .entry((peer, sender, (SIM_EPOCH_MS + t) / window_ms))
                    .or_default() += 1;
            }
        }
    }
    counts
}

fn handled_from<'a>(
    records: &'a [TraceRecord],
    origin_name: &'a str,
) -> impl Iterator<Item = &'a str> + 'a {
    records.iter().filter_map(move |r| match r {
        TraceRecord::Handled {
            origin, outcome, ..
        } if origin == origin_name => Some(outcome.as_str()),
        _ => None,
    })
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn duplicate_removals(records: &[TraceRecord]) -> Vec<(u64, &str, &str)> {
    records
        .iter()
        .filter_map(|r| match r {
            TraceRecord::Transition {
                t,
                peer,
                subject,
                to: None,
                cause,
                ..
            } if cause == "DuplicateEvidence" => Some((*t, peer.as_str(), subject.as_str())),
            _ => None,
        })
        .collect()
}

fn mutual(report: &SimReport, a: &str, b: &str) -> Result<(), String> {
    for (x, y) in [(a, b), (b, a)] {
        let entry = report.entry_of(x, y);
        ensure(
            entry.is_some_and(|e| e.status == PeerStatus::Connected && e.connected_at.is_some()),
            || format!("{x} does not hold {y} as Connected at the end"),
        )?;
    }
    Ok(())
}

/// Checks a finished run of scenario `name`.
pub fn check(name: &str, cfg: &SimConfig, report: &SimReport) -> Result<(), String> {
    verify_trace(&report.trace).map_err(|e| format!("trace check failed: {e}"))?;
    ensure(report.messages.conserved(), || {
        format!("message counts do not add up: {:?}", report.messages)
    })?;
    let records = report.records();
    match name {
        "happy_path" => mutual(report, "peer0", "peer1"),
        "control" => {
            ensure(duplicate_removals(&records).is_empty(), || {
                "an honest peer was removed as a duplicate".to_string()
            })?;
            for (a, b) in [
                ("peer0", "peer1"),
                ("peer0", "peer2"),
                ("peer3", "peer1"),
                ("peer4", "peer0"),
                ("peer4", "peer3"),
            ] {
                mutual(report, a, b)?;
            }
            Ok(())
        }
        "duplicate_join" => {
            let second = cfg.scenario.actions[1].at_ms;
            let alerted = records.iter().any(|r| {
                matches!(r, TraceRecord::Broadcast { t, peer, event }
                    if peer == "peer1" && event == "AlreadyConnected" && *t >= second)
            });
            ensure(alerted, || {
                "peer1 never broadcast AlreadyConnected".to_string()
            })?;
            ensure(
                duplicate_removals(&records)
                    .iter()
                    .all(|(t, _, _)| *t >= second),
                || "duplicate removed before the second join".to_string(),
            )?;
            ensure(report.uniqueness_verdict, || {
                "uniqueness verdict is false".to_string()
            })?;
            for p in ["peer1", "peer2"] {
                ensure(report.status_of(p, "peer0").is_none(), || {
                    format!("{p} still holds the duplicate")
                })?;
            }
            Ok(())
        }
        "replay" => {
            let outcomes: Vec<_> = handled_from(&records, "eve").collect();
            ensure(!outcomes.is_empty(), || {
                "replay was never delivered".to_string()
            })?;
            ensure(
                outcomes.iter().all(|o| *o == "rejected:StaleTimestamp"),
                || format!("replay outcomes {outcomes:?}"),
            )
        }
        "impersonation" => {
            let outcomes: Vec<_> = handled_from(&records, "eve").collect();
            ensure(outcomes.len() == 4, || {
                format!("expected 4 forged deliveries, saw {}", outcomes.len())
            })?;
            ensure(
                outcomes.iter().all(|o| *o == "rejected:BadSignature"),
                || format!("forged envelope reached a handler: {outcomes:?}"),
            )
        }
        "spam" => {
            let victim = &report.peer("peer0").stats;
            let attacker = report.attacker_iterations("mallory") as f64;
            let verify = victim.pow_verify_hashes as f64;
            let d = cfg.protocol.pow_difficulty as i32;
            ensure(verify > 0.0, || "victim verified no proofs".to_string())?;
            ensure(attacker >= verify * 2f64.powi(d - 1), || {
                format!("attacker work {attacker} vs verification {verify} at difficulty {d}")
            })
        }
        "rate_limit" => {
            let window = cfg.protocol.entrypoint.rate_window_ms;
            let counts = accepted_per_window(report, window);
            ensure(counts.values().all(|&n| n <= u64::from(RATE_LIMIT)), || {
                format!("a window exceeded the limit: {counts:?}")
            })?;
            let limited = report
                .counters
                .rejected
                .get("RateLimited")
                .copied()
                .unwrap_or(0);
            let expected = (SPAM_PER_WINDOW - u64::from(RATE_LIMIT)) * 2;
            ensure(limited >= expected, || {
                format!("only {limited} RateLimited rejections")
            })
        }
        "rate_limit_off" => {
            let limited = report
                .counters
                .rejected
                .get("RateLimited")
                .copied()
                .unwrap_or(0);
            ensure(limited == 0, || {
                format!("{limited} RateLimited rejections with the limiter off")
            })
        }
        other => Err(format!("unknown scenario {other:?}")),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioOutcome {
    pub scenario: String,
    pub seed: u64,
    pub result: Result<(), String>,
    pub trace_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteReport {
    pub seeds: Vec<u64>,
    pub lint: Vec<String>,
    pub outcomes: Vec<ScenarioOutcome>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.result.is_ok())
    }

    pub fn failures(&self) -> impl Iterator<Item = &ScenarioOutcome> {
        self.outcomes.iter().filter(|o| o.result.is_err())
    }

    /// Scenario rows by seed columns, `ok` or `FAIL`.
    pub fn matrix(&self) -> String {
        let width = SCENARIOS.iter().map(|s| s.len()).max().unwrap_or(8);
        let mut out = String::new();
        let _ = write!(out, "{:width$}", "scenario");
        for seed in &self.seeds {
            let _ = write!(out, " {seed:>5}");
        }
        out.push('\n');
        for scenario in SCENARIOS {
            let _ = write!(out, "{scenario:width$}");
            for seed in &self.seeds {
                let cell = self
                    .outcomes
                    .iter()
                    .find(|o| o.scenario == scenario && o.seed == *seed)
                    .map_or("-", |o| if o.result.is_ok() { "ok" } else { "FAIL" });
                let _ = write!(out, " {cell:>5}");
            }
            out.push('\n');
        }
        out
    }
}

/// Runs every battery scenario for every seed.
pub fn run_suite(base: &SimConfig, seeds: &[u64]) -> SuiteReport {
    let mut outcomes = Vec::new();
    for scenario in SCENARIOS {
        for &seed in seeds {
            let cfg = scenario_config(scenario, base, seed).expect("known scenario");
            let (result, trace_hash) = match run_simulation(&cfg) {
                Ok(report) => (check(scenario, &cfg, &report), report.trace_hash),
                Err(e) => (Err(format!("config error: {e}")), String::new()),
            };
            outcomes.push(ScenarioOutcome {
                scenario: scenario.to_string(),
                seed,
                result,
                trace_hash,
            });
        }
    }
    SuiteReport {
        seeds: seeds.to_vec(),
        lint: base.protocol.lint(),
        outcomes,
    }
}
