//! The per-peer connection state machine.
//!
//! An [`Engine`] owns one identity, its [`ConnectionBook`] and its
//! entrypoint limiter. Hosts feed it envelopes through [`Engine::dispatch`]
//! (or raw bytes through [`Engine::receive`]) and timer ticks through
//! [`Engine::on_tick`]; every call returns the [`OutboundAction`]s the host
//! must carry out. The engine never touches a transport or a clock.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::book::{BookConfig, BookEntry, ConnectionBook, PeerStatus};
use crate::entrypoint::{self, EntrypointConfig, RateLimiterState, RejectReason, Verdict};
use crate::error::{Error, Result};
use crate::identity::{Keypair, PeerAddress};
use crate::pow::{self, PowChallenge, SolveOutcome, MAX_DIFFICULTY};
use crate::wire::{same_peer_set, Envelope, EventPayload, EventTag};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub entrypoint: EntrypointConfig,
    pub book: BookConfig,
    pub challenge_size_bytes: usize,
    pub pow_difficulty: u32,
    pub pow_max_iterations: u64,
    /// Inclusive `[min, max]` wait before a batched challenge goes out.
    pub batch_wait_range_ms: (u64, u64),
    pub requirement_freshness_ms: u64,
    pub keepalive_interval_ms: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            entrypoint: EntrypointConfig::default(),
            book: BookConfig::default(),
            challenge_size_bytes: 32,
            pow_difficulty: 8,
            pow_max_iterations: 1 << 20,
            batch_wait_range_ms: (0, 5_000),
            requirement_freshness_ms: 30_000,
            keepalive_interval_ms: 5_000,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        self.entrypoint.validate(&format!("{prefix}entrypoint."))?;
        self.book.validate(&format!("{prefix}book."))?;
        if self.challenge_size_bytes == 0 {
            return Err(Error::config(
                format!("{prefix}challenge_size_bytes"),
                "must be at least 1",
            ));
        }
        if self.pow_difficulty > MAX_DIFFICULTY {
            return Err(Error::config(
                format!("{prefix}pow_difficulty"),
                format!("must be at most {MAX_DIFFICULTY}"),
            ));
        }
        if self.pow_max_iterations == 0 {
            return Err(Error::config(
                format!("{prefix}pow_max_iterations"),
                "must be positive",
            ));
        }
        let (lo, hi) = self.batch_wait_range_ms;
        if lo > hi {
            return Err(Error::config(
                format!("{prefix}batch_wait_range_ms"),
                format!("min {lo} exceeds max {hi}"),
            ));
        }
        if self.requirement_freshness_ms == 0 {
            return Err(Error::config(
                format!("{prefix}requirement_freshness_ms"),
                "must be positive",
            ));
        }
        if self.keepalive_interval_ms == 0 {
            return Err(Error::config(
                format!("{prefix}keepalive_interval_ms"),
                "must be positive",
            ));
        }
        Ok(())
    }

    /// Settings that are valid but make the protocol misbehave.
    pub fn lint(&self) -> Vec<String> {
        let mut warnings = Vec::new();
        if self.keepalive_interval_ms >= self.book.timeout_connected_ms {
            warnings.push(format!(
                "keepalive_interval_ms ({}) is not below book.timeout_connected_ms ({}): \
                 connected peers will expire between KeepAlives",
                self.keepalive_interval_ms, self.book.timeout_connected_ms
            ));
        }
        if self.entrypoint.max_clock_skew_past_ms <= self.keepalive_interval_ms {
            warnings.push(format!(
                "entrypoint.max_clock_skew_past_ms ({}) is not above keepalive_interval_ms ({}): \
                 KeepAlive evidence will be stale before it is replaced",
                self.entrypoint.max_clock_skew_past_ms, self.keepalive_interval_ms
            ));
        }
        if self.batch_wait_range_ms.1 >= self.book.timeout_wants_to_connect_ms {
            warnings.push(format!(
                "batch_wait_range_ms max ({}) is not below book.timeout_wants_to_connect_ms ({}): \
                 joiners can expire before their challenge is sent",
                self.batch_wait_range_ms.1, self.book.timeout_wants_to_connect_ms
            ));
        }
        warnings
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutboundAction {
    Send {
        to: PeerAddress,
        envelope: Envelope,
    },
    /// Fan-out to the whole network. Only NewPeer and AlreadyConnected.
    Broadcast {
        envelope: Envelope,
    },
    /// Drop the transport-level link to `peer`. No message is sent.
    Disconnect {
        peer: PeerAddress,
    },
}

/// Why a validated event produced no state change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Note {
    NotTargeted,
    AlreadyInBook,
    SenderNotListed,
    MalformedEmbedded,
    BadEmbeddedSignature,
    UnknownPeer,
    NoRecordedTargets,
    NoDuplicate,
    UnexpectedStatus,
    OutOfOrder,
    SolverExhausted,
    RequirementExpired,
    ForeignRequirement,
    InvalidProof,
    StaleEvidence,
    BadEvidenceSignature,
}

impl Note {
    pub fn name(self) -> &'static str {
        match self {
            Note::NotTargeted => "NotTargeted",
            Note::AlreadyInBook => "AlreadyInBook",
            Note::SenderNotListed => "SenderNotListed",
            Note::MalformedEmbedded => "MalformedEmbedded",
            Note::BadEmbeddedSignature => "BadEmbeddedSignature",
            Note::UnknownPeer => "UnknownPeer",
            Note::NoRecordedTargets => "NoRecordedTargets",
            Note::NoDuplicate => "NoDuplicate",
            Note::UnexpectedStatus => "UnexpectedStatus",
            Note::OutOfOrder => "OutOfOrder",
            Note::SolverExhausted => "SolverExhausted",
            Note::RequirementExpired => "RequirementExpired",
            Note::ForeignRequirement => "ForeignRequirement",
            Note::InvalidProof => "InvalidProof",
            Note::StaleEvidence => "StaleEvidence",
            Note::BadEvidenceSignature => "BadEvidenceSignature",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Applied,
    Ignored(Note),
    Rejected(RejectReason),
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Applied => f.write_str("applied"),
            Outcome::Ignored(n) => write!(f, "ignored:{}", n.name()),
            Outcome::Rejected(r) => write!(f, "rejected:{}", r.name()),
        }
    }
}

/// What moved a peer between statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cause {
    Initiated,
    InitReceived,
    ProofVerified,
    KeepAlive,
    Expired,
    DuplicateEvidence,
    HandshakeFailed,
}

impl Cause {
    pub fn name(self) -> &'static str {
        match self {
            Cause::Initiated => "Initiated",
            Cause::InitReceived => "InitReceived",
            Cause::ProofVerified => "ProofVerified",
            Cause::KeepAlive => "KeepAlive",
            Cause::Expired => "Expired",
            Cause::DuplicateEvidence => "DuplicateEvidence",
            Cause::HandshakeFailed => "HandshakeFailed",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [
            Cause::Initiated,
            Cause::InitReceived,
            Cause::ProofVerified,
            Cause::KeepAlive,
            Cause::Expired,
            Cause::DuplicateEvidence,
            Cause::HandshakeFailed,
        ]
        .into_iter()
        .find(|c| c.name() == name)
    }
}

/// Journal of noteworthy engine steps, drained by the host after each call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EngineEvent {
    Handled {
        sender: Option<PeerAddress>,
        tag: Option<EventTag>,
        outcome: Outcome,
        actions: usize,
    },
    Transition {
        subject: PeerAddress,
        from: Option<PeerStatus>,
        to: Option<PeerStatus>,
        cause: Cause,
    },
    BatchArmed {
        deadline_ms: u64,
    },
    BatchCleared,
    ChallengeGenerated {
        recipients: usize,
    },
    Solved {
        issuer: PeerAddress,
        iterations: u64,
        success: bool,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineStats {
    pub accepted: u64,
    pub rejected: BTreeMap<RejectReason, u64>,
    pub broadcasts: u64,
    pub disconnects: u64,
    pub challenges_generated: u64,
    pub pow_iterations_total: u64,
    pub pow_verify_hashes: u64,
}

struct Handled {
    actions: Vec<OutboundAction>,
    outcome: Outcome,
}

impl Handled {
    fn applied(actions: Vec<OutboundAction>) -> Self {
        Self {
            actions,
            outcome: Outcome::Applied,
        }
    }

    fn ignored(note: Note) -> Self {
        Self {
            actions: Vec::new(),
            outcome: Outcome::Ignored(note),
        }
    }
}

pub struct Engine {
    identity: Keypair,
    cfg: ProtocolConfig,
    book: ConnectionBook,
    limiter: RateLimiterState,
    pending_batch_deadline_ms: Option<u64>,
    current_challenge: Option<PowChallenge>,
    next_keepalive_due_ms: u64,
    rng: ChaCha8Rng,
    stats: EngineStats,
    journal: Vec<EngineEvent>,
}

impl fmt::Debug for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Engine")
            .field("address", &self.identity.address())
            .field("book_len", &self.book.len())
            .field("pending_batch_deadline_ms", &self.pending_batch_deadline_ms)
            .finish_non_exhaustive()
    }
}

impl Engine {
    pub fn new(identity: Keypair, cfg: ProtocolConfig, rng_seed: u64, now_ms: u64) -> Result<Self> {
        cfg.validate("")?;
        Ok(Self {
            book: ConnectionBook::new(cfg.book.clone()),
            next_keepalive_due_ms: now_ms + cfg.keepalive_interval_ms,
            identity,
            cfg,
            limiter: RateLimiterState::new(),
            pending_batch_deadline_ms: None,
            current_challenge: None,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
            stats: EngineStats::default(),
            journal: Vec::new(),
        })
    }

    pub fn address(&self) -> PeerAddress {
        self.identity.address()
    }

    pub fn identity(&self) -> &Keypair {
        &self.identity
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.cfg
    }

    pub fn book(&self) -> &ConnectionBook {
        &self.book
    }

    pub fn stats(&self) -> &EngineStats {
        &self.stats
    }

    pub fn pending_batch_deadline_ms(&self) -> Option<u64> {
        self.pending_batch_deadline_ms
    }

    pub fn current_challenge(&self) -> Option<&PowChallenge> {
        self.current_challenge.as_ref()
    }

    pub fn next_keepalive_due_ms(&self) -> u64 {
        self.next_keepalive_due_ms
    }

    /// Earliest time at which [`Engine::on_tick`] has work to do.
    pub fn next_wake_ms(&self) -> u64 {
        match self.pending_batch_deadline_ms {
            Some(d) => d.min(self.next_keepalive_due_ms),
            None => self.next_keepalive_due_ms,
        }
    }

    pub fn drain_journal(&mut self) -> Vec<EngineEvent> {
        std::mem::take(&mut self.journal)
    }

    fn transition(
        &mut self,
        subject: PeerAddress,
        from: Option<PeerStatus>,
        to: Option<PeerStatus>,
        cause: Cause,
    ) {
        if from != to {
            self.journal.push(EngineEvent::Transition {
                subject,
                from,
                to,
                cause,
            });
        }
    }

    fn upsert(
        &mut self,
        peer: PeerAddress,
        status: PeerStatus,
        event: Envelope,
        now_ms: u64,
        cause: Cause,
    ) -> Result<()> {
        let previous = self.book.upsert(peer, status, event, now_ms)?;
        self.transition(peer, previous, Some(status), cause);
        Ok(())
    }

    fn remove(&mut self, peer: PeerAddress, now_ms: u64, cause: Cause) -> Option<PeerStatus> {
        let status = self.book.status(&peer, now_ms)?;
        self.book.remove(&peer);
        self.transition(peer, Some(status), None, cause);
        Some(status)
    }

    fn sweep(&mut self, now_ms: u64) -> Vec<OutboundAction> {
        let mut actions = Vec::new();
        for (peer, status) in self.book.sweep_expired(now_ms) {
            self.transition(peer, Some(status), None, Cause::Expired);
            if status == PeerStatus::Connected {
                self.stats.disconnects += 1;
                actions.push(OutboundAction::Disconnect { peer });
            }
        }
        actions
    }

    /// Clears the batch deadline once nobody is waiting for a challenge.
    fn settle_batch(&mut self, now_ms: u64) {
        if self.pending_batch_deadline_ms.is_some()
            && self
                .book
                .peers_with_status(PeerStatus::WantsToConnect, now_ms)
                .is_empty()
        {
            self.pending_batch_deadline_ms = None;
            self.journal.push(EngineEvent::BatchCleared);
        }
    }

    fn seal(&self, payload: EventPayload, now_ms: u64) -> Envelope {
        Envelope::seal(&self.identity, payload, now_ms)
    }

    fn broadcast(&mut self, payload: EventPayload, now_ms: u64) -> OutboundAction {
        debug_assert!(matches!(
            payload.tag(),
            EventTag::NewPeer | EventTag::AlreadyConnected
        ));
        self.stats.broadcasts += 1;
        OutboundAction::Broadcast {
            envelope: self.seal(payload, now_ms),
        }
    }

    /// The signed peer set `peer` most recently declared to us, if the
    /// stored event is one of its own ConnectionInit or KeepAlive events.
    fn recorded_targets(entry: &BookEntry, peer: &PeerAddress) -> Option<Vec<PeerAddress>> {
        if entry.last_event.sender != *peer {
            return None;
        }
        entry.last_event.payload.target_peers().map(<[_]>::to_vec)
    }

    /// The peer set we announce in KeepAlives: everyone we are connected to
    /// or still connecting to.
    fn keepalive_targets(&mut self, now_ms: u64) -> Vec<PeerAddress> {
        self.book.sweep_expired(now_ms);
        self.book
            .entries()
            .filter(|(_, e)| matches!(e.status, PeerStatus::Connected | PeerStatus::Connecting))
            .map(|(p, _)| *p)
            .collect()
    }

    /// Sends a ConnectionInit to every target not already in the book and
    /// registers each as `Connecting`.
    pub fn initiate_connection(
        &mut self,
        target_peers: &[PeerAddress],
        now_ms: u64,
    ) -> Result<Vec<OutboundAction>> {
        let payload = EventPayload::ConnectionInit {
            target_peers: target_peers.to_vec(),
        };
        payload
            .validate()
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        if target_peers.contains(&self.address()) {
            return Err(Error::InvalidInput(
                "target_peers contains our own address".into(),
            ));
        }
        let mut actions = self.sweep(now_ms);
        let fresh: Vec<PeerAddress> = target_peers
            .iter()
            .copied()
            .filter(|p| self.book.status(p, now_ms).is_none())
            .collect();
        if fresh.is_empty() {
            return Ok(actions);
        }
        let init = self.seal(payload, now_ms);
        for peer in fresh {
            self.upsert(
                peer,
                PeerStatus::Connecting,
                init.clone(),
                now_ms,
                Cause::Initiated,
            )?;
            actions.push(OutboundAction::Send {
                to: peer,
                envelope: init.clone(),
            });
        }
        Ok(actions)
    }

    /// Like [`Engine::initiate_connection`] but also re-sends to targets that
    /// are already in the book. Models a peer that joins a second time under
    /// the same identity.
    pub fn reinitiate_connection(
        &mut self,
        target_peers: &[PeerAddress],
        now_ms: u64,
    ) -> Result<Vec<OutboundAction>> {
        let payload = EventPayload::ConnectionInit {
            target_peers: target_peers.to_vec(),
        };
        payload
            .validate()
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        if target_peers.contains(&self.address()) {
            return Err(Error::InvalidInput(
                "target_peers contains our own address".into(),
            ));
        }
        let mut actions = self.sweep(now_ms);
        let init = self.seal(payload, now_ms);
        for &peer in target_peers {
            if self.book.status(&peer, now_ms).is_none() {
                self.upsert(
                    peer,
                    PeerStatus::Connecting,
                    init.clone(),
                    now_ms,
                    Cause::Initiated,
                )?;
            }
            actions.push(OutboundAction::Send {
                to: peer,
                envelope: init.clone(),
            });
        }
        Ok(actions)
    }

    /// Evicts expired entries without handling anything else.
    pub fn expire(&mut self, now_ms: u64) -> Vec<OutboundAction> {
        let actions = self.sweep(now_ms);
        self.settle_batch(now_ms);
        actions
    }

    /// Entrypoint plus routing. Rejections are recorded in the journal and
    /// produce no actions beyond any expiry disconnects.
    pub fn dispatch(&mut self, env: &Envelope, now_ms: u64) -> Vec<OutboundAction> {
        let mut actions = self.sweep(now_ms);
        let connected = self.book.status(&env.sender, now_ms) == Some(PeerStatus::Connected);
        let verdict = entrypoint::validate_envelope(
            &mut self.limiter,
            &self.cfg.entrypoint,
            env,
            now_ms,
            connected,
        );
        let handled = match verdict {
            Verdict::Rejected(reason) => {
                *self.stats.rejected.entry(reason).or_default() += 1;
                Handled {
                    actions: Vec::new(),
                    outcome: Outcome::Rejected(reason),
                }
            }
            Verdict::Accepted => {
                self.stats.accepted += 1;
                self.route(env, now_ms)
            }
        };
        self.settle_batch(now_ms);
        self.journal.push(EngineEvent::Handled {
            sender: Some(env.sender),
            tag: Some(env.tag()),
            outcome: handled.outcome,
            actions: handled.actions.len(),
        });
        actions.extend(handled.actions);
        actions
    }

    /// Decodes wire bytes and dispatches them. Undecodable input is
    /// journalled as `MalformedPayload`.
    pub fn receive(&mut self, bytes: &[u8], now_ms: u64) -> Vec<OutboundAction> {
        match Envelope::from_bytes(bytes) {
            Ok(env) => self.dispatch(&env, now_ms),
            Err(_) => {
                let actions = self.sweep(now_ms);
                *self
                    .stats
                    .rejected
                    .entry(RejectReason::MalformedPayload)
                    .or_default() += 1;
                self.journal.push(EngineEvent::Handled {
                    sender: None,
                    tag: bytes.first().copied().and_then(EventTag::from_byte),
                    outcome: Outcome::Rejected(RejectReason::MalformedPayload),
                    actions: 0,
                });
                actions
            }
        }
    }

    fn route(&mut self, env: &Envelope, now_ms: u64) -> Handled {
        match env.tag() {
            EventTag::ConnectionInit => self.on_connection_init(env, now_ms),
            EventTag::NewPeer => self.on_new_peer(env, now_ms),
            EventTag::ConnectionRequirement => self.on_connection_requirement(env, now_ms),
            EventTag::ConnectionRequirementResponse => self.on_requirement_response(env, now_ms),
            EventTag::AlreadyConnected => self.on_already_connected(env, now_ms),
            EventTag::KeepAlive => self.on_keep_alive(env, now_ms),
        }
    }

    pub fn handle_connection_init(&mut self, env: &Envelope, now_ms: u64) -> Vec<OutboundAction> {
        let mut actions = self.sweep(now_ms);
        actions.extend(self.on_connection_init(env, now_ms).actions);
        self.settle_batch(now_ms);
        actions
    }

    pub fn handle_new_peer(&mut self, env: &Envelope, now_ms: u64) -> Vec<OutboundAction> {
        let mut actions = self.sweep(now_ms);
        actions.extend(self.on_new_peer(env, now_ms).actions);
        self.settle_batch(now_ms);
        actions
    }

    pub fn handle_connection_requirement(
        &mut self,
        env: &Envelope,
        now_ms: u64,
    ) -> Vec<OutboundAction> {
        let mut actions = self.sweep(now_ms);
        actions.extend(self.on_connection_requirement(env, now_ms).actions);
        self.settle_batch(now_ms);
        actions
    }

    pub fn handle_requirement_response(
        &mut self,
        env: &Envelope,
        now_ms: u64,
    ) -> Vec<OutboundAction> {
        let mut actions = self.sweep(now_ms);
        actions.extend(self.on_requirement_response(env, now_ms).actions);
        self.settle_batch(now_ms);
        actions
    }

    pub fn handle_already_connected(&mut self, env: &Envelope, now_ms: u64) -> Vec<OutboundAction> {
        let mut actions = self.sweep(now_ms);
        actions.extend(self.on_already_connected(env, now_ms).actions);
        self.settle_batch(now_ms);
        actions
    }

    pub fn handle_keep_alive(&mut self, env: &Envelope, now_ms: u64) -> Vec<OutboundAction> {
        let mut actions = self.sweep(now_ms);
        actions.extend(self.on_keep_alive(env, now_ms).actions);
        self.settle_batch(now_ms);
        actions
    }

    fn on_connection_init(&mut self, env: &Envelope, now_ms: u64) -> Handled {
        let EventPayload::ConnectionInit { target_peers } = &env.payload else {
            return Handled::ignored(Note::MalformedEmbedded);
        };
        if !target_peers.contains(&self.address()) {
            return Handled::ignored(Note::NotTargeted);
        }
        if let Some(entry) = self.book.get(&env.sender, now_ms) {
            // Only evidence signed by the sender itself proves anything to others.
            let evidence =
                (entry.last_event.sender == env.sender).then(|| entry.last_event_bytes());
            let actions = evidence
                .map(|evidence| {
                    vec![self.broadcast(EventPayload::AlreadyConnected { evidence }, now_ms)]
                })
                .unwrap_or_default();
            return Handled {
                actions,
                outcome: Outcome::Ignored(Note::AlreadyInBook),
            };
        }
        if self
            .upsert(
                env.sender,
                PeerStatus::WantsToConnect,
                env.clone(),
                now_ms,
                Cause::InitReceived,
            )
            .is_err()
        {
            return Handled::ignored(Note::UnexpectedStatus);
        }
        let new_peer = self.broadcast(
            EventPayload::NewPeer {
                init_envelope: env.to_bytes(),
            },
            now_ms,
        );
        if self.pending_batch_deadline_ms.is_none() {
            let (lo, hi) = self.cfg.batch_wait_range_ms;
            let deadline_ms = now_ms + self.rng.gen_range(lo..=hi);
            self.pending_batch_deadline_ms = Some(deadline_ms);
            self.journal.push(EngineEvent::BatchArmed { deadline_ms });
        }
        Handled::applied(vec![new_peer])
    }

    fn on_new_peer(&mut self, env: &Envelope, now_ms: u64) -> Handled {
        let EventPayload::NewPeer { init_envelope } = &env.payload else {
            return Handled::ignored(Note::MalformedEmbedded);
        };
        let Ok(init) = Envelope::from_bytes(init_envelope) else {
            return Handled::ignored(Note::MalformedEmbedded);
        };
        let EventPayload::ConnectionInit { target_peers } = &init.payload else {
            return Handled::ignored(Note::MalformedEmbedded);
        };
        if !target_peers.contains(&env.sender) {
            return Handled::ignored(Note::SenderNotListed);
        }
        if !init.has_valid_signature() {
            return Handled::ignored(Note::BadEmbeddedSignature);
        }
        let joiner = init.sender;
        let Some(entry) = self.book.get(&joiner, now_ms) else {
            return Handled::ignored(Note::UnknownPeer);
        };
        let Some(recorded) = Self::recorded_targets(entry, &joiner) else {
            return Handled::ignored(Note::NoRecordedTargets);
        };
        if same_peer_set(target_peers, &recorded) {
            return Handled::ignored(Note::NoDuplicate);
        }
        let evidence = entry.last_event_bytes();
        let mut actions = vec![self.broadcast(EventPayload::AlreadyConnected { evidence }, now_ms)];
        // We hold the signed proof ourselves, so we drop the duplicate too.
        self.remove(joiner, now_ms, Cause::DuplicateEvidence);
        self.stats.disconnects += 1;
        actions.push(OutboundAction::Disconnect { peer: joiner });
        Handled::applied(actions)
    }

    fn on_connection_requirement(&mut self, env: &Envelope, now_ms: u64) -> Handled {
        let EventPayload::ConnectionRequirement { challenge } = &env.payload else {
            return Handled::ignored(Note::MalformedEmbedded);
        };
        match self.book.status(&env.sender, now_ms) {
            None => return Handled::ignored(Note::UnknownPeer),
            Some(PeerStatus::Connecting) => {}
            Some(_) => return Handled::ignored(Note::UnexpectedStatus),
        }
        let outcome = pow::solve(challenge, self.cfg.pow_max_iterations);
        self.stats.pow_iterations_total += outcome.iterations();
        self.journal.push(EngineEvent::Solved {
            issuer: env.sender,
            iterations: outcome.iterations(),
            success: outcome.proof().is_some(),
        });
        match outcome {
            SolveOutcome::Solved { proof, .. } => {
                let _ = self.upsert(
                    env.sender,
                    PeerStatus::Connecting,
                    env.clone(),
                    now_ms,
                    Cause::Initiated,
                );
                let response = self.seal(
                    EventPayload::ConnectionRequirementResponse {
                        requirement_raw_payload: env.to_bytes(),
                        proof,
                    },
                    now_ms,
                );
                Handled::applied(vec![OutboundAction::Send {
                    to: env.sender,
                    envelope: response,
                }])
            }
            SolveOutcome::Exhausted { .. } => {
                self.remove(env.sender, now_ms, Cause::HandshakeFailed);
                Handled::ignored(Note::SolverExhausted)
            }
        }
    }

    fn on_requirement_response(&mut self, env: &Envelope, now_ms: u64) -> Handled {
        let EventPayload::ConnectionRequirementResponse {
            requirement_raw_payload,
            proof,
        } = &env.payload
        else {
            return Handled::ignored(Note::MalformedEmbedded);
        };
        match self.book.status(&env.sender, now_ms) {
            None => return Handled::ignored(Note::UnknownPeer),
            Some(PeerStatus::WantsToConnect) => {}
            Some(_) => return Handled::ignored(Note::UnexpectedStatus),
        }
        let fail = |engine: &mut Self, note| {
            engine.remove(env.sender, now_ms, Cause::HandshakeFailed);
            Handled::ignored(note)
        };
        let Ok(requirement) = Envelope::from_bytes(requirement_raw_payload) else {
            return fail(self, Note::MalformedEmbedded);
        };
        let EventPayload::ConnectionRequirement { challenge } = &requirement.payload else {
            return fail(self, Note::MalformedEmbedded);
        };
        if requirement.timestamp_ms < now_ms.saturating_sub(self.cfg.requirement_freshness_ms) {
            return fail(self, Note::RequirementExpired);
        }
        if requirement.sender != self.address() || !requirement.has_valid_signature() {
            return fail(self, Note::ForeignRequirement);
        }
        self.stats.pow_verify_hashes += 1;
        if !pow::verify_proof(challenge, proof) {
            return fail(self, Note::InvalidProof);
        }
        if self
            .upsert(
                env.sender,
                PeerStatus::Connected,
                env.clone(),
                now_ms,
                Cause::ProofVerified,
            )
            .is_err()
        {
            return Handled::ignored(Note::UnexpectedStatus);
        }
        let target_peers = self.keepalive_targets(now_ms);
        let keep_alive = self.seal(EventPayload::KeepAlive { target_peers }, now_ms);
        Handled::applied(vec![OutboundAction::Send {
            to: env.sender,
            envelope: keep_alive,
        }])
    }

    fn on_already_connected(&mut self, env: &Envelope, now_ms: u64) -> Handled {
        let EventPayload::AlreadyConnected { evidence } = &env.payload else {
            return Handled::ignored(Note::MalformedEmbedded);
        };
        let Ok(evidence) = Envelope::from_bytes(evidence) else {
            return Handled::ignored(Note::MalformedEmbedded);
        };
        let suspect = evidence.sender;
        let Some(entry) = self.book.get(&suspect, now_ms) else {
            return Handled::ignored(Note::UnknownPeer);
        };
        let Some(recorded) = Self::recorded_targets(entry, &suspect) else {
            return Handled::ignored(Note::NoRecordedTargets);
        };
        let duplicate = match &evidence.payload {
            EventPayload::KeepAlive { target_peers } => !same_peer_set(target_peers, &recorded),
            EventPayload::ConnectionInit { target_peers } => same_peer_set(target_peers, &recorded),
            _ => return Handled::ignored(Note::MalformedEmbedded),
        };
        if !duplicate {
            return Handled::ignored(Note::NoDuplicate);
        }
        if !evidence.has_valid_signature() {
            return Handled::ignored(Note::BadEvidenceSignature);
        }
        if entrypoint::timestamp_problem(&self.cfg.entrypoint, evidence.timestamp_ms, now_ms)
            .is_some()
        {
            return Handled::ignored(Note::StaleEvidence);
        }
        self.remove(suspect, now_ms, Cause::DuplicateEvidence);
        self.stats.disconnects += 1;
        Handled::applied(vec![OutboundAction::Disconnect { peer: suspect }])
    }

    fn on_keep_alive(&mut self, env: &Envelope, now_ms: u64) -> Handled {
        let Some(entry) = self.book.get(&env.sender, now_ms) else {
            return Handled::ignored(Note::UnknownPeer);
        };
        let status = entry.status;
        // an older KeepAlive from the same sender must not roll back last_event
        if entry.last_event.sender == env.sender && env.timestamp_ms < entry.last_event.timestamp_ms
        {
            return Handled::ignored(Note::OutOfOrder);
        }
        match status {
            PeerStatus::WantsToConnect => Handled::ignored(Note::UnexpectedStatus),
            PeerStatus::Connected => {
                let _ = self.upsert(
                    env.sender,
                    PeerStatus::Connected,
                    env.clone(),
                    now_ms,
                    Cause::KeepAlive,
                );
                Handled::applied(Vec::new())
            }
            PeerStatus::Connecting => {
                if self
                    .upsert(
                        env.sender,
                        PeerStatus::Connected,
                        env.clone(),
                        now_ms,
                        Cause::KeepAlive,
                    )
                    .is_err()
                {
                    return Handled::ignored(Note::UnexpectedStatus);
                }
                let target_peers = self.keepalive_targets(now_ms);
                let reply = self.seal(EventPayload::KeepAlive { target_peers }, now_ms);
                Handled::applied(vec![OutboundAction::Send {
                    to: env.sender,
                    envelope: reply,
                }])
            }
        }
    }

    /// Timer-driven work: expiry sweep, the batched challenge once its
    /// deadline passes, and the periodic KeepAlive round.
    pub fn on_tick(&mut self, now_ms: u64) -> Vec<OutboundAction> {
        let mut actions = self.sweep(now_ms);
        self.settle_batch(now_ms);

        if let Some(deadline) = self.pending_batch_deadline_ms {
            if deadline <= now_ms {
                self.pending_batch_deadline_ms = None;
                let waiting = self
                    .book
                    .peers_with_status(PeerStatus::WantsToConnect, now_ms);
                if !waiting.is_empty() {
                    let challenge = pow::make_challenge(
                        &mut self.rng,
                        self.cfg.challenge_size_bytes,
                        self.cfg.pow_difficulty,
                    )
                    .expect("challenge parameters validated at construction");
                    self.stats.challenges_generated += 1;
                    self.journal.push(EngineEvent::ChallengeGenerated {
                        recipients: waiting.len(),
                    });
                    let requirement = self.seal(
                        EventPayload::ConnectionRequirement {
                            challenge: challenge.clone(),
                        },
                        now_ms,
                    );
                    self.current_challenge = Some(challenge);
                    actions.extend(waiting.into_iter().map(|(to, _)| OutboundAction::Send {
                        to,
                        envelope: requirement.clone(),
                    }));
                }
            }
        }

        if self.next_keepalive_due_ms <= now_ms {
            let connected = self.book.peers_with_status(PeerStatus::Connected, now_ms);
            if !connected.is_empty() {
                let target_peers = self.keepalive_targets(now_ms);
                let keep_alive = self.seal(EventPayload::KeepAlive { target_peers }, now_ms);
                actions.extend(connected.into_iter().map(|(to, _)| OutboundAction::Send {
                    to,
                    envelope: keep_alive.clone(),
                }));
            }
            let interval = self.cfg.keepalive_interval_ms;
            let missed = (now_ms - self.next_keepalive_due_ms) / interval;
            self.next_keepalive_due_ms += (missed + 1) * interval;
        }
        actions
    }
}
