//! Per-peer connection registry with timestamp-based expiry.
//!
//! Every public operation that reads or writes the book first sweeps out
//! entries whose `last_event` is older than the timeout for their status.
//! Methods take `&mut self`, so exclusive access for the duration of an
//! operation (sweep included) is enforced by the borrow checker; hosts that
//! share a book across threads wrap it in a mutex.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identity::PeerAddress;
use crate::wire::Envelope;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PeerStatus {
    Connected,
    WantsToConnect,
    Connecting,
}

impl PeerStatus {
    pub fn name(self) -> &'static str {
        match self {
            PeerStatus::Connected => "Connected",
            PeerStatus::WantsToConnect => "WantsToConnect",
            PeerStatus::Connecting => "Connecting",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [
            PeerStatus::Connected,
            PeerStatus::WantsToConnect,
            PeerStatus::Connecting,
        ]
        .into_iter()
        .find(|s| s.name() == name)
    }
}

impl fmt::Display for PeerStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The lifecycle relation. Same-status upserts refresh `last_event`.
pub fn is_legal_transition(from: Option<PeerStatus>, to: PeerStatus) -> bool {
    use PeerStatus::*;
    matches!(
        (from, to),
        (None, WantsToConnect)
            | (None, Connecting)
            | (Some(WantsToConnect), Connected)
            | (Some(Connecting), Connected)
            | (Some(Connected), Connected)
            | (Some(WantsToConnect), WantsToConnect)
            | (Some(Connecting), Connecting)
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BookEntry {
    pub status: PeerStatus,
    pub last_event: Envelope,
    pub connected_at: Option<u64>,
}

impl BookEntry {
    pub fn last_event_bytes(&self) -> Vec<u8> {
        self.last_event.to_bytes()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BookConfig {
    pub timeout_connected_ms: u64,
    pub timeout_wants_to_connect_ms: u64,
    pub timeout_connecting_ms: u64,
}

impl Default for BookConfig {
    fn default() -> Self {
        Self {
            timeout_connected_ms: 15_000,
            timeout_wants_to_connect_ms: 30_000,
            timeout_connecting_ms: 30_000,
        }
    }
}

impl BookConfig {
    pub fn timeout(&self, status: PeerStatus) -> u64 {
        match status {
            PeerStatus::Connected => self.timeout_connected_ms,
            PeerStatus::WantsToConnect => self.timeout_wants_to_connect_ms,
            PeerStatus::Connecting => self.timeout_connecting_ms,
        }
    }

    pub fn validate(&self, prefix: &str) -> Result<()> {
        for (key, value) in [
            ("timeout_connected_ms", self.timeout_connected_ms),
            (
                "timeout_wants_to_connect_ms",
                self.timeout_wants_to_connect_ms,
            ),
            ("timeout_connecting_ms", self.timeout_connecting_ms),
        ] {
            if value == 0 {
                return Err(Error::config(format!("{prefix}{key}"), "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ConnectionBook {
    cfg: BookConfig,
    entries: BTreeMap<PeerAddress, BookEntry>,
}

impl ConnectionBook {
    pub fn new(cfg: BookConfig) -> Self {
        Self {
            cfg,
            entries: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &BookConfig {
        &self.cfg
    }

    fn is_expired(&self, entry: &BookEntry, now_ms: u64) -> bool {
        let age = now_ms.saturating_sub(entry.last_event.timestamp_ms);
        age > self.cfg.timeout(entry.status)
    }

    /// Removes every entry whose age exceeds its status timeout. An entry
    /// exactly at the timeout is kept.
    pub fn sweep_expired(&mut self, now_ms: u64) -> Vec<(PeerAddress, PeerStatus)> {
        let expired: Vec<_> = self
            .entries
            .iter()
            .filter(|(_, e)| self.is_expired(e, now_ms))
            .map(|(p, e)| (*p, e.status))
            .collect();
        for (peer, _) in &expired {
            self.entries.remove(peer);
        }
        expired
    }

    /// Inserts or updates `peer`. Returns the previous status.
    pub fn upsert(
        &mut self,
        peer: PeerAddress,
        status: PeerStatus,
        last_event: Envelope,
        now_ms: u64,
    ) -> Result<Option<PeerStatus>> {
        self.sweep_expired(now_ms);
        let previous = self.entries.get(&peer).map(|e| e.status);
        if !is_legal_transition(previous, status) {
            return Err(Error::IllegalTransition {
                from: previous,
                to: status,
            });
        }
        let connected_at = match (previous, status) {
            (_, s) if s != PeerStatus::Connected => None,
            (Some(PeerStatus::Connected), _) => self.entries[&peer].connected_at,
            _ => Some(now_ms),
        };
        self.entries.insert(
            peer,
            BookEntry {
                status,
                last_event,
                connected_at,
            },
        );
        Ok(previous)
    }

    pub fn get(&mut self, peer: &PeerAddress, now_ms: u64) -> Option<&BookEntry> {
        self.sweep_expired(now_ms);
        self.entries.get(peer)
    }

    pub fn status(&mut self, peer: &PeerAddress, now_ms: u64) -> Option<PeerStatus> {
        self.get(peer, now_ms).map(|e| e.status)
    }

    pub fn remove(&mut self, peer: &PeerAddress) -> bool {
        self.entries.remove(peer).is_some()
    }

    /// Live entries with `status`, sorted by address.
    pub fn peers_with_status(
        &mut self,
        status: PeerStatus,
        now_ms: u64,
    ) -> Vec<(PeerAddress, BookEntry)> {
        self.sweep_expired(now_ms);
        self.entries
            .iter()
            .filter(|(_, e)| e.status == status)
            .map(|(p, e)| (*p, e.clone()))
            .collect()
    }

    /// Read-only view without sweeping, for snapshots and reports.
    pub fn entries(&self) -> impl Iterator<Item = (&PeerAddress, &BookEntry)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
