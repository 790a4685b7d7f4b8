//! Receive-side gate every envelope passes before a handler sees it:
//! rate limit, then timestamp window, then signature.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identity::PeerAddress;
use crate::wire::Envelope;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EntrypointConfig {
    pub max_clock_skew_past_ms: u64,
    pub max_clock_skew_future_ms: u64,
    /// Events per window for senders we are Connected to.
    pub rate_limit_connected: u32,
    /// Events per window for everyone else.
    pub rate_limit_unconnected: u32,
    pub rate_window_ms: u64,
    pub rate_limiter_enabled: bool,
}

impl Default for EntrypointConfig {
    fn default() -> Self {
        Self {
            max_clock_skew_past_ms: 30_000,
            max_clock_skew_future_ms: 5_000,
            rate_limit_connected: 100,
            rate_limit_unconnected: 20,
            rate_window_ms: 1_000,
            rate_limiter_enabled: true,
        }
    }
}

impl EntrypointConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if self.max_clock_skew_past_ms == 0 {
            return Err(Error::config(
                format!("{prefix}max_clock_skew_past_ms"),
                "must be positive",
            ));
        }
        if self.max_clock_skew_future_ms == 0 {
            return Err(Error::config(
                format!("{prefix}max_clock_skew_future_ms"),
                "must be positive",
            ));
        }
        if self.rate_limiter_enabled {
            if self.rate_window_ms == 0 {
                return Err(Error::config(
                    format!("{prefix}rate_window_ms"),
                    "must be positive",
                ));
            }
            if self.rate_limit_connected == 0 {
                return Err(Error::config(
                    format!("{prefix}rate_limit_connected"),
                    "must be positive",
                ));
            }
            if self.rate_limit_unconnected == 0 {
                return Err(Error::config(
                    format!("{prefix}rate_limit_unconnected"),
                    "must be positive",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RejectReason {
    RateLimited,
    StaleTimestamp,
    FutureTimestamp,
    BadSignature,
    MalformedPayload,
}

impl RejectReason {
    pub const ALL: [RejectReason; 5] = [
        RejectReason::RateLimited,
        RejectReason::StaleTimestamp,
        RejectReason::FutureTimestamp,
        RejectReason::BadSignature,
        RejectReason::MalformedPayload,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RejectReason::RateLimited => "RateLimited",
            RejectReason::StaleTimestamp => "StaleTimestamp",
            RejectReason::FutureTimestamp => "FutureTimestamp",
            RejectReason::BadSignature => "BadSignature",
            RejectReason::MalformedPayload => "MalformedPayload",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accepted,
    Rejected(RejectReason),
}

/// Fixed-window arrival counters keyed by sender.
///
/// Windows are aligned to multiples of `rate_window_ms` on the receiver's
/// clock, so "window k" is `[k * w, (k + 1) * w)`. An entry whose window has
/// closed is pruned before any decision.
#[derive(Debug, Clone, Default)]
pub struct RateLimiterState {
    counters: HashMap<PeerAddress, (u64, u32)>,
}

impl RateLimiterState {
    pub fn new() -> Self {
        Self::default()
    }

    fn prune(&mut self, window_start: u64) {
        self.counters.retain(|_, (start, _)| *start >= window_start);
    }

    /// Counts one arrival and reports whether it is within `limit`.
    pub fn admit(&mut self, sender: PeerAddress, now_ms: u64, window_ms: u64, limit: u32) -> bool {
        let window_start = now_ms - now_ms % window_ms;
        self.prune(window_start);
        let entry = self.counters.entry(sender).or_insert((window_start, 0));
        entry.1 = entry.1.saturating_add(1);
        entry.1 <= limit
    }

    pub fn tracked_senders(&self) -> usize {
        self.counters.len()
    }
}

pub fn validate_envelope(
    state: &mut RateLimiterState,
    cfg: &EntrypointConfig,
    env: &Envelope,
    now_ms: u64,
    sender_is_connected: bool,
) -> Verdict {
    if cfg.rate_limiter_enabled {
        let limit = if sender_is_connected {
            cfg.rate_limit_connected
        } else {
            cfg.rate_limit_unconnected
        };
        if !state.admit(env.sender, now_ms, cfg.rate_window_ms, limit) {
            return Verdict::Rejected(RejectReason::RateLimited);
        }
    }
    if let Some(reason) = timestamp_problem(cfg, env.timestamp_ms, now_ms) {
        return Verdict::Rejected(reason);
    }
    if !env.has_valid_signature() {
        return Verdict::Rejected(RejectReason::BadSignature);
    }
    Verdict::Accepted
}

/// Applies the freshness window to an arbitrary timestamp.
pub fn timestamp_problem(
    cfg: &EntrypointConfig,
    timestamp_ms: u64,
    now_ms: u64,
) -> Option<RejectReason> {
    if timestamp_ms < now_ms.saturating_sub(cfg.max_clock_skew_past_ms) {
        Some(RejectReason::StaleTimestamp)
    } else if timestamp_ms > now_ms.saturating_add(cfg.max_clock_skew_future_ms) {
        Some(RejectReason::FutureTimestamp)
    } else {
        None
    }
}
