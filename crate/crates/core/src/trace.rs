//! Line-delimited JSON trace records and the offline trace checker.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::book::{is_legal_transition, PeerStatus};
use crate::engine::Cause;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerInfo {
    pub name: String,
    pub address: String,
    pub honest: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    Header {
        seed: u64,
        duration_ms: u64,
        peers: Vec<PeerInfo>,
    },
    Handled {
        t: u64,
        peer: String,
        origin: String,
        sender: Option<String>,
        event: Option<String>,
        outcome: String,
        actions: usize,
    },
    Transition {
        t: u64,
        peer: String,
        subject: String,
        from: Option<String>,
        to: Option<String>,
        cause: String,
    },
    BatchArmed {
        t: u64,
        peer: String,
        deadline_ms: u64,
    },
    /// The armed batch was dropped because nobody was left waiting.
    BatchCleared {
        t: u64,
        peer: String,
    },
    Challenge {
        t: u64,
        peer: String,
        recipients: usize,
    },
    Solved {
        t: u64,
        peer: String,
        issuer: String,
        iterations: u64,
        success: bool,
    },
    Broadcast {
        t: u64,
        peer: String,
        event: String,
    },
    Script {
        t: u64,
        actor: String,
        action: String,
        detail: String,
    },
    End {
        t: u64,
        uniqueness_verdict: bool,
        duplicates: Vec<String>,
    },
}

impl TraceRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("trace records always serialize")
    }
}

/// SHA-256 over the trace lines, each terminated by `\n`, as lowercase hex.
pub fn trace_hash<S: AsRef<str>>(lines: &[S]) -> String {
    let mut hasher = Sha256::new();
    for line in lines {
        hasher.update(line.as_ref().as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceError {
    /// The file is not a complete trace.
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    /// The trace is complete but breaks a protocol invariant.
    #[error("line {line}: {message}")]
    Violation { line: usize, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TraceSummary {
    pub records: usize,
    pub transitions: usize,
    pub challenges: usize,
    pub uniqueness_verdict: bool,
}

fn parse_status(s: &Option<String>, line: usize) -> Result<Option<PeerStatus>, TraceError> {
    match s {
        None => Ok(None),
        Some(name) => PeerStatus::from_name(name)
            .map(Some)
            .ok_or_else(|| TraceError::Malformed {
                line,
                message: format!("unknown status {name:?}"),
            }),
    }
}

/// Re-checks a trace offline: transition legality and continuity, the
/// batching discipline, and the final uniqueness verdict.
pub fn verify_trace<S: AsRef<str>>(lines: &[S]) -> Result<TraceSummary, TraceError> {
    let mut summary = TraceSummary::default();
    let mut honest: BTreeMap<String, String> = BTreeMap::new();
    let mut name_of: HashMap<String, String> = HashMap::new();
    let mut books: BTreeMap<String, BTreeMap<String, PeerStatus>> = BTreeMap::new();
    let mut armed: HashMap<String, usize> = HashMap::new();
    let mut duplicates: BTreeSet<String> = BTreeSet::new();
    let mut crashed: BTreeSet<String> = BTreeSet::new();
    let mut saw_header = false;
    let mut end = None;

    for (i, raw) in lines.iter().enumerate() {
        let line = i + 1;
        let raw = raw.as_ref();
        if raw.trim().is_empty() {
            continue;
        }
        if end.is_some() {
            return Err(TraceError::Malformed {
                line,
                message: "record after end".into(),
            });
        }
        let record: TraceRecord = serde_json::from_str(raw).map_err(|e| TraceError::Malformed {
            line,
            message: e.to_string(),
        })?;
        summary.records += 1;
        if !saw_header && !matches!(record, TraceRecord::Header { .. }) {
            return Err(TraceError::Malformed {
                line,
                message: "trace must start with a header".into(),
            });
        }
        if matches!(record, TraceRecord::Challenge { .. }) {
            summary.challenges += 1;
        }
        match record {
            TraceRecord::Header { peers, .. } => {
                if saw_header {
                    return Err(TraceError::Malformed {
                        line,
                        message: "duplicate header".into(),
                    });
                }
                saw_header = true;
                for p in peers {
                    name_of.insert(p.name.clone(), p.address.clone());
                    if p.honest {
                        honest.insert(p.name, p.address);
                    }
                }
            }
            TraceRecord::Transition {
                peer,
                subject,
                from,
                to,
                cause,
                ..
            } => {
                summary.transitions += 1;
                let from = parse_status(&from, line)?;
                let to = parse_status(&to, line)?;
                let cause = Cause::from_name(&cause).ok_or_else(|| TraceError::Malformed {
                    line,
                    message: format!("unknown cause {cause:?}"),
                })?;
                let book = books.entry(peer.clone()).or_default();
                let current = book.get(&subject).copied();
                if current != from {
                    return Err(TraceError::Violation {
                        line,
                        message: format!(
                            "{peer}: transition claims {subject} was {from:?} but it was {current:?}"
                        ),
                    });
                }
                match to {
                    Some(to) => {
                        if !is_legal_transition(from, to) {
                            return Err(TraceError::Violation {
                                line,
                                message: format!(
                                    "{peer}: illegal transition {from:?} -> {to:?} for {subject}"
                                ),
                            });
                        }
                        let required = match from {
                            Some(PeerStatus::WantsToConnect) => Some(Cause::ProofVerified),
                            Some(PeerStatus::Connecting) => Some(Cause::KeepAlive),
                            _ => None,
                        };
                        if to == PeerStatus::Connected && required.is_some_and(|c| c != cause) {
                            return Err(TraceError::Violation {
                                line,
                                message: format!(
                                    "{peer}: {subject} became Connected via {cause:?}"
                                ),
                            });
                        }
                        book.insert(subject, to);
                    }
                    None => {
                        if from.is_none() {
                            return Err(TraceError::Violation {
                                line,
                                message: format!("{peer}: removal of absent {subject}"),
                            });
                        }
                        book.remove(&subject);
                    }
                }
            }
            TraceRecord::BatchArmed { peer, .. } => {
                let n = armed.entry(peer.clone()).or_default();
                if *n > 0 {
                    return Err(TraceError::Violation {
                        line,
                        message: format!("{peer}: batch armed twice without a challenge"),
                    });
                }
                *n += 1;
            }
            TraceRecord::Challenge { peer, .. } | TraceRecord::BatchCleared { peer, .. } => {
                let n = armed.entry(peer.clone()).or_default();
                if *n == 0 {
                    return Err(TraceError::Violation {
                        line,
                        message: format!("{peer}: batch consumed without being armed"),
                    });
                }
                *n -= 1;
            }
            TraceRecord::Script { actor, action, .. } => match action.as_str() {
                "duplicate_join" => {
                    let address = name_of.get(&actor).ok_or_else(|| TraceError::Malformed {
                        line,
                        message: format!("unknown actor {actor:?}"),
                    })?;
                    duplicates.insert(address.clone());
                }
                "crash" => {
                    crashed.insert(actor);
                }
                _ => {}
            },
            TraceRecord::Handled { .. }
            | TraceRecord::Solved { .. }
            | TraceRecord::Broadcast { .. } => {}
            TraceRecord::End {
                uniqueness_verdict, ..
            } => end = Some((line, uniqueness_verdict)),
        }
    }

    let Some((line, claimed)) = end else {
        return Err(TraceError::Malformed {
            line: lines.len(),
            message: "trace is truncated: no end record".into(),
        });
    };
    let recomputed = honest.iter().all(|(name, address)| {
        crashed.contains(name)
            || duplicates.contains(address)
            || books
                .get(name)
                .is_none_or(|book| duplicates.iter().all(|d| !book.contains_key(d)))
    });
    if recomputed != claimed {
        return Err(TraceError::Violation {
            line,
            message: format!(
                "end record claims uniqueness_verdict={claimed}, trace implies {recomputed}"
            ),
        });
    }
    summary.uniqueness_verdict = recomputed;
    Ok(summary)
}
