use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

use crate::book::PeerStatus;
use crate::engine::EngineStats;
use crate::trace::TraceRecord;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BookSnapshot {
    pub address: String,
    pub name: Option<String>,
    pub status: PeerStatus,
    pub connected_at: Option<u64>,
    pub last_event: String,
    pub last_event_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PeerReport {
    pub name: String,
    pub address: String,
    pub honest: bool,
    /// For sybils: the adversary that owns this identity.
    pub owner: Option<String>,
    pub crashed: bool,
    pub stats: EngineStats,
    pub book: Vec<BookSnapshot>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub accepted: u64,
    pub rejected: BTreeMap<String, u64>,
    pub broadcasts: u64,
    pub disconnects: u64,
    pub challenges_generated: u64,
    pub pow_iterations_total: u64,
    pub pow_verify_hashes: u64,
}

impl Counters {
    pub(crate) fn add(&mut self, stats: &EngineStats) {
        self.accepted += stats.accepted;
        for (reason, n) in &stats.rejected {
            *self.rejected.entry(reason.name().to_string()).or_default() += n;
        }
        self.broadcasts += stats.broadcasts;
        self.disconnects += stats.disconnects;
        self.challenges_generated += stats.challenges_generated;
        self.pow_iterations_total += stats.pow_iterations_total;
        self.pow_verify_hashes += stats.pow_verify_hashes;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MessageCounters {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
}

impl MessageCounters {
    pub fn conserved(&self) -> bool {
        self.sent == self.delivered + self.dropped + self.in_flight
    }
}

/// One message as it left its origin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CaptureInfo {
    pub index: usize,
    pub t: u64,
    pub origin: String,
    pub to: String,
    pub event: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub seed: u64,
    pub duration_ms: u64,
    pub peers: BTreeMap<String, PeerReport>,
    pub counters: Counters,
    pub messages: MessageCounters,
    pub uniqueness_verdict: bool,
    pub duplicates: Vec<String>,
    pub lint: Vec<String>,
    pub trace_hash: String,
    #[serde(skip)]
    pub trace: Vec<String>,
    #[serde(skip)]
    pub captures: Vec<CaptureInfo>,
}

impl SimReport {
    pub fn peer(&self, name: &str) -> &PeerReport {
        self.peers
            .get(name)
            .unwrap_or_else(|| panic!("no peer named {name:?}"))
    }

    /// Status of `subject` in `peer`'s final book.
    pub fn status_of(&self, peer: &str, subject: &str) -> Option<PeerStatus> {
        let address = &self.peer(subject).address;
        self.peer(peer)
            .book
            .iter()
            .find(|e| &e.address == address)
            .map(|e| e.status)
    }

    pub fn entry_of(&self, peer: &str, subject: &str) -> Option<&BookSnapshot> {
        let address = &self.peer(subject).address;
        self.peer(peer).book.iter().find(|e| &e.address == address)
    }

    pub fn records(&self) -> Vec<TraceRecord> {
        self.trace
            .iter()
            .map(|l| serde_json::from_str(l).expect("own trace lines parse"))
            .collect()
    }

    /// Sum of proof-of-work iterations spent by `name` and its sybils.
    pub fn attacker_iterations(&self, name: &str) -> u64 {
        self.peers
            .values()
            .filter(|p| p.name == name || p.owner.as_deref() == Some(name))
            .map(|p| p.stats.pow_iterations_total)
            .sum()
    }

    pub fn trace_text(&self) -> String {
        let mut out = String::with_capacity(self.trace.iter().map(|l| l.len() + 1).sum());
        for line in &self.trace {
            out.push_str(line);
            out.push('\n');
        }
        out
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `trace.jsonl` and `report.json` into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("trace.jsonl"), self.trace_text())?;
        fs::write(dir.join("report.json"), self.summary_json() + "\n")?;
        Ok(())
    }
}
