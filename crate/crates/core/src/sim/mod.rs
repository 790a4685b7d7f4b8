//! Deterministic discrete-event simulator hosting many engines.
//!
//! Virtual time runs from 0 to `duration_ms`. Each engine sees
//! `SIM_EPOCH_MS + t + skew` as its wall clock. The drop and latency of a
//! message are drawn from a stream keyed by its link, its bytes and how many
//! identical copies crossed that link before, so injected traffic never
//! shifts the fate of any other message.

mod queue;
mod report;
pub mod scenario;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{Engine, EngineEvent, OutboundAction, ProtocolConfig};
use crate::error::{Error, Result};
use crate::identity::{Keypair, PeerAddress, Signature};
use crate::trace::{trace_hash, PeerInfo, TraceRecord};
use crate::wire::{Envelope, EventPayload, EventTag};

pub use queue::{SimEvent, SimEventQueue};
pub use report::{BookSnapshot, CaptureInfo, Counters, MessageCounters, PeerReport, SimReport};
pub use scenario::{Action, ForgeMode, ForgedEvent, ScenarioSpec, ScriptedAction};

/// Wall-clock time engines see at virtual time 0.
pub const SIM_EPOCH_MS: u64 = 1_700_000_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub seed: u64,
    pub num_honest_peers: usize,
    /// Inclusive `[min, max]` one-way delivery latency.
    pub latency_ms: (u64, u64),
    pub drop_probability: f64,
    pub duration_ms: u64,
    /// Per-peer clock offset added to the virtual clock.
    pub clock_skew_ms: BTreeMap<String, i64>,
    /// Virtual time charged per proof-of-work iteration.
    pub pow_ms_per_iteration: f64,
    pub protocol: ProtocolConfig,
    pub scenario: ScenarioSpec,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_honest_peers: 2,
            latency_ms: (5, 50),
            drop_probability: 0.0,
            duration_ms: 60_000,
            clock_skew_ms: BTreeMap::new(),
            pow_ms_per_iteration: 0.0,
            protocol: ProtocolConfig::default(),
            scenario: ScenarioSpec::default(),
        }
    }
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let key = message
                .split('`')
                .nth(1)
                .filter(|_| message.starts_with("unknown field"))
                .unwrap_or("<document>")
                .to_string();
            Error::Config {
                key,
                message: e.to_string().trim_end().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            key: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(Error::config("drop_probability", "must be within [0, 1]"));
        }
        if self.latency_ms.0 > self.latency_ms.1 {
            return Err(Error::config("latency_ms", "min exceeds max"));
        }
        if self.duration_ms == 0 {
            return Err(Error::config("duration_ms", "must be positive"));
        }
        if !self.pow_ms_per_iteration.is_finite() || self.pow_ms_per_iteration < 0.0 {
            return Err(Error::config(
                "pow_ms_per_iteration",
                "must be a non-negative number",
            ));
        }
        self.protocol.validate("protocol.")?;
        self.scenario.validate(self.num_honest_peers, "scenario.")?;
        for name in self.clock_skew_ms.keys() {
            let honest = (0..self.num_honest_peers).any(|i| scenario::honest_name(i) == *name);
            if !honest && !self.scenario.adversaries.contains(name) {
                return Err(Error::config(
                    format!("clock_skew_ms.{name}"),
                    "unknown peer",
                ));
            }
        }
        Ok(())
    }
}

struct Node {
    name: String,
    engine: Engine,
    honest: bool,
    owner: Option<String>,
    alive: bool,
    skew_ms: i64,
    scheduled_wake: Option<u64>,
}

#[derive(Clone)]
enum Step {
    Join {
        actor: usize,
        targets: Vec<usize>,
    },
    DuplicateJoin {
        actor: usize,
        targets: Vec<usize>,
    },
    Replay {
        actor: usize,
        index: usize,
        to: Option<usize>,
    },
    Impersonate {
        actor: usize,
        victim: usize,
        to: usize,
        mode: ForgeMode,
        payload: ForgedEvent,
    },
    SybilInit {
        sybil: usize,
        target: usize,
    },
    RawInit {
        actor: usize,
        target: usize,
    },
    Crash {
        actor: usize,
    },
}

fn derive(seed: u64, label: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_be_bytes());
    for part in label {
        h.update((part.len() as u32).to_be_bytes());
        h.update(part);
    }
    h.finalize().into()
}

/// The identity a peer named `name` gets in a run seeded with `seed`.
pub fn peer_keypair(seed: u64, name: &str) -> Keypair {
    Keypair::from_seed(&derive(seed, &[b"key", name.as_bytes()]))
}

struct Simulator {
    cfg: SimConfig,
    nodes: Vec<Node>,
    by_name: HashMap<String, usize>,
    by_addr: HashMap<PeerAddress, usize>,
    queue: SimEventQueue,
    copies: HashMap<(usize, usize, [u8; 32]), u32>,
    steps: Vec<(u64, Step)>,
    trace: Vec<String>,
    captures: Vec<(CaptureInfo, Vec<u8>)>,
    messages: MessageCounters,
    duplicates: BTreeSet<usize>,
}

impl Simulator {
    fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let mut sim = Simulator {
            nodes: Vec::new(),
            by_name: HashMap::new(),
            by_addr: HashMap::new(),
            queue: SimEventQueue::new(),
            copies: HashMap::new(),
            steps: Vec::new(),
            trace: Vec::new(),
            captures: Vec::new(),
            messages: MessageCounters::default(),
            duplicates: BTreeSet::new(),
            cfg,
        };
        for i in 0..sim.cfg.num_honest_peers {
            sim.add_node(scenario::honest_name(i), true, None)?;
        }
        for name in sim.cfg.scenario.adversaries.clone() {
            sim.add_node(name, false, None)?;
        }
        sim.expand_script()?;
        Ok(sim)
    }

    fn add_node(&mut self, name: String, honest: bool, owner: Option<String>) -> Result<usize> {
        let identity = peer_keypair(self.cfg.seed, &name);
        let address = identity.address();
        let rng_seed = u64::from_be_bytes(
            derive(self.cfg.seed, &[b"rng", name.as_bytes()])[..8]
                .try_into()
                .expect("8 bytes"),
        );
        let skew_ms = self.cfg.clock_skew_ms.get(&name).copied().unwrap_or(0);
        let index = self.nodes.len();
        let engine = Engine::new(
            identity,
            self.cfg.protocol.clone(),
            rng_seed,
            Self::local_time(skew_ms, 0),
        )?;
        let node = Node {
            engine,
            name: name.clone(),
            honest,
            owner,
            alive: true,
            skew_ms,
            scheduled_wake: None,
        };
        if self.by_addr.insert(address, index).is_some() {
            return Err(Error::InvalidInput(format!("address collision for {name}")));
        }
        self.by_name.insert(name, index);
        self.nodes.push(node);
        Ok(index)
    }

    fn local_time(skew_ms: i64, t: u64) -> u64 {
        ((SIM_EPOCH_MS + t) as i64).saturating_add(skew_ms).max(0) as u64
    }

    fn local(&self, i: usize, t: u64) -> u64 {
        Self::local_time(self.nodes[i].skew_ms, t)
    }

    fn expand_script(&mut self) -> Result<()> {
        let mut sybils_made: HashMap<String, u32> = HashMap::new();
        for step in self.cfg.scenario.actions.clone() {
            let actor = self.by_name[&step.actor];
            let idx = |sim: &Self, name: &String| sim.by_name[name];
            let at = step.at_ms;
            match step.action {
                Action::Join { targets } => {
                    let targets = targets.iter().map(|t| idx(self, t)).collect();
                    self.steps.push((at, Step::Join { actor, targets }));
                }
                Action::DuplicateJoin { targets } => {
                    let targets = targets.iter().map(|t| idx(self, t)).collect();
                    self.steps
                        .push((at, Step::DuplicateJoin { actor, targets }));
                }
                Action::Replay {
                    captured_event_index,
                    to,
                } => {
                    let to = to.map(|t| idx(self, &t));
                    self.steps.push((
                        at,
                        Step::Replay {
                            actor,
                            index: captured_event_index,
                            to,
                        },
                    ));
                }
                Action::Impersonate {
                    victim,
                    to,
                    mode,
                    payload,
                } => {
                    let (victim, to) = (idx(self, &victim), idx(self, &to));
                    self.steps.push((
                        at,
                        Step::Impersonate {
                            actor,
                            victim,
                            to,
                            mode,
                            payload,
                        },
                    ));
                }
                Action::Spam {
                    target,
                    count,
                    interval_ms,
                    fresh_identities,
                } => {
                    let target = idx(self, &target);
                    for k in 0..count {
                        let at_k = at + u64::from(k) * interval_ms;
                        if fresh_identities {
                            let made = sybils_made.entry(step.actor.clone()).or_default();
                            let name = scenario::sybil_name(&step.actor, *made);
                            *made += 1;
                            let sybil = self.add_node(name, false, Some(step.actor.clone()))?;
                            self.steps.push((at_k, Step::SybilInit { sybil, target }));
                        } else {
                            self.steps.push((at_k, Step::RawInit { actor, target }));
                        }
                    }
                }
                Action::Crash => self.steps.push((at, Step::Crash { actor })),
            }
        }
        // stable: same-time steps keep script order
        self.steps.sort_by_key(|(at, _)| *at);
        Ok(())
    }

    fn record(&mut self, record: TraceRecord) {
        self.trace.push(record.to_line());
    }

    fn message_rng(&mut self, from: usize, to: usize, bytes: &[u8]) -> ChaCha8Rng {
        let digest: [u8; 32] = Sha256::digest(bytes).into();
        let copy = self.copies.entry((from, to, digest)).or_default();
        *copy += 1;
        let (a, b) = (
            self.nodes[from].name.as_bytes(),
            self.nodes[to].name.as_bytes(),
        );
        let seed = derive(
            self.cfg.seed,
            &[b"link", a, b, &digest, &copy.to_be_bytes()],
        );
        ChaCha8Rng::from_seed(seed)
    }

    fn send_bytes(&mut self, t: u64, from: usize, to: usize, bytes: Vec<u8>) {
        let event = bytes
            .first()
            .copied()
            .and_then(EventTag::from_byte)
            .map_or("Unknown", EventTag::name);
        self.captures.push((
            CaptureInfo {
                index: self.captures.len(),
                t,
                origin: self.nodes[from].name.clone(),
                to: self.nodes[to].name.clone(),
                event: event.to_string(),
            },
            bytes.clone(),
        ));
        self.messages.sent += 1;
        let p = self.cfg.drop_probability;
        let (lo, hi) = self.cfg.latency_ms;
        let mut rng = self.message_rng(from, to, &bytes);
        let dropped = rng.gen::<f64>() < p;
        let latency = rng.gen_range(lo..=hi);
        if dropped {
            self.messages.dropped += 1;
        } else {
            self.queue.push(
                t + latency,
                SimEvent::Deliver {
                    to,
                    origin: from,
                    bytes,
                },
            );
        }
    }

    fn apply(&mut self, t: u64, from: usize, actions: Vec<OutboundAction>) {
        for action in actions {
            match action {
                OutboundAction::Send { to, envelope } => match self.by_addr.get(&to).copied() {
                    Some(j) => self.send_bytes(t, from, j, envelope.to_bytes()),
                    None => {
                        self.messages.sent += 1;
                        self.messages.dropped += 1;
                    }
                },
                OutboundAction::Broadcast { envelope } => {
                    self.record(TraceRecord::Broadcast {
                        t,
                        peer: self.nodes[from].name.clone(),
                        event: envelope.tag().name().to_string(),
                    });
                    let bytes = envelope.to_bytes();
                    for j in 0..self.nodes.len() {
                        if j != from && self.nodes[j].alive {
                            self.send_bytes(t, from, j, bytes.clone());
                        }
                    }
                }
                OutboundAction::Disconnect { .. } => {}
            }
        }
    }

    /// Moves the engine journal into the trace; returns solver iterations.
    fn drain(&mut self, t: u64, i: usize, origin: Option<usize>) -> u64 {
        let mut iterations = 0;
        let peer = self.nodes[i].name.clone();
        for event in self.nodes[i].engine.drain_journal() {
            let record = match event {
                EngineEvent::Handled {
                    sender,
                    tag,
                    outcome,
                    actions,
                } => TraceRecord::Handled {
                    t,
                    peer: peer.clone(),
                    origin: origin.map_or_else(String::new, |o| self.nodes[o].name.clone()),
                    sender: sender.map(|s| s.to_hex()),
                    event: tag.map(|tag| tag.name().to_string()),
                    outcome: outcome.to_string(),
                    actions,
                },
                EngineEvent::Transition {
                    subject,
                    from,
                    to,
                    cause,
                } => TraceRecord::Transition {
                    t,
                    peer: peer.clone(),
                    subject: subject.to_hex(),
                    from: from.map(|s| s.name().to_string()),
                    to: to.map(|s| s.name().to_string()),
                    cause: cause.name().to_string(),
                },
                EngineEvent::BatchArmed { deadline_ms } => TraceRecord::BatchArmed {
                    t,
                    peer: peer.clone(),
                    deadline_ms,
                },
                EngineEvent::BatchCleared => TraceRecord::BatchCleared {
                    t,
                    peer: peer.clone(),
                },
                EngineEvent::ChallengeGenerated { recipients } => TraceRecord::Challenge {
                    t,
                    peer: peer.clone(),
                    recipients,
                },
                EngineEvent::Solved {
                    issuer,
                    iterations: n,
                    success,
                } => {
                    iterations += n;
                    TraceRecord::Solved {
                        t,
                        peer: peer.clone(),
                        issuer: issuer.to_hex(),
                        iterations: n,
                        success,
                    }
                }
            };
            self.record(record);
        }
        iterations
    }

    fn pow_delay(&self, iterations: u64) -> u64 {
        (iterations as f64 * self.cfg.pow_ms_per_iteration).round() as u64
    }

    /// Journals, routes the actions and re-arms the tick for engine `i`.
    fn settle(&mut self, t: u64, i: usize, origin: Option<usize>, actions: Vec<OutboundAction>) {
        let iterations = self.drain(t, i, origin);
        let send_at = t + self.pow_delay(iterations);
        self.apply(send_at, i, actions);
        self.reschedule(t, i);
    }

    fn reschedule(&mut self, t: u64, i: usize) {
        let node = &self.nodes[i];
        if !node.alive {
            return;
        }
        let local_wake = node.engine.next_wake_ms() as i64;
        let wake = (local_wake - SIM_EPOCH_MS as i64 - node.skew_ms).max(t as i64) as u64;
        if node.scheduled_wake != Some(wake) {
            self.nodes[i].scheduled_wake = Some(wake);
            self.queue.push(wake, SimEvent::Tick { peer: i });
        }
    }

    fn script_record(&mut self, t: u64, actor: usize, action: &str, detail: String) {
        self.record(TraceRecord::Script {
            t,
            actor: self.nodes[actor].name.clone(),
            action: action.to_string(),
            detail,
        });
    }

    fn addresses(&self, peers: &[usize]) -> Vec<PeerAddress> {
        peers
            .iter()
            .map(|&p| self.nodes[p].engine.address())
            .collect()
    }

    fn names(&self, peers: &[usize]) -> String {
        peers
            .iter()
            .map(|&p| self.nodes[p].name.as_str())
            .collect::<Vec<_>>()
            .join(",")
    }

    fn run_step(&mut self, t: u64, step: usize) {
        let step = self.steps[step].1.clone();
        let actor = match &step {
            Step::Join { actor, .. }
            | Step::DuplicateJoin { actor, .. }
            | Step::Replay { actor, .. }
            | Step::Impersonate { actor, .. }
            | Step::RawInit { actor, .. }
            | Step::Crash { actor } => *actor,
            Step::SybilInit { sybil, .. } => *sybil,
        };
        let action = match &step {
            Step::Join { .. } => "join",
            Step::DuplicateJoin { .. } => "duplicate_join",
            Step::Replay { .. } => "replay",
            Step::Impersonate { .. } => "impersonate",
            Step::SybilInit { .. } => "spam_init",
            Step::RawInit { .. } => "spam_init",
            Step::Crash { .. } => "crash",
        };
        if !self.nodes[actor].alive {
            self.script_record(t, actor, action, "skipped: actor crashed".into());
            return;
        }
        let now = self.local(actor, t);
        match step {
            Step::Join { targets, .. } => {
                let addrs = self.addresses(&targets);
                let detail = self.names(&targets);
                self.script_record(t, actor, action, detail);
                match self.nodes[actor].engine.initiate_connection(&addrs, now) {
                    Ok(actions) => self.settle(t, actor, None, actions),
                    Err(e) => self.script_record(t, actor, action, format!("failed: {e}")),
                }
            }
            Step::DuplicateJoin { targets, .. } => {
                let addrs = self.addresses(&targets);
                let detail = self.names(&targets);
                self.script_record(t, actor, action, detail);
                self.duplicates.insert(actor);
                match self.nodes[actor].engine.reinitiate_connection(&addrs, now) {
                    Ok(actions) => self.settle(t, actor, None, actions),
                    Err(e) => self.script_record(t, actor, action, format!("failed: {e}")),
                }
            }
            Step::SybilInit { sybil, target } => {
                let addrs = self.addresses(&[target]);
                let detail = self.nodes[target].name.clone();
                self.script_record(t, sybil, action, detail);
                match self.nodes[sybil].engine.initiate_connection(&addrs, now) {
                    Ok(actions) => self.settle(t, sybil, None, actions),
                    Err(e) => self.script_record(t, sybil, action, format!("failed: {e}")),
                }
            }
            Step::RawInit { actor, target } => {
                let env = Envelope::seal(
                    self.nodes[actor].engine.identity(),
                    EventPayload::ConnectionInit {
                        target_peers: self.addresses(&[target]),
                    },
                    now,
                );
                let detail = self.nodes[target].name.clone();
                self.script_record(t, actor, action, detail);
                self.send_bytes(t, actor, target, env.to_bytes());
            }
            Step::Replay { actor, index, to } => {
                let Some((info, bytes)) = self.captures.get(index).cloned() else {
                    self.script_record(
                        t,
                        actor,
                        action,
                        format!("skipped: no captured message {index}"),
                    );
                    return;
                };
                let dest = to.unwrap_or(self.by_name[&info.to]);
                let detail = format!("{index}:{}->{}", info.event, self.nodes[dest].name);
                self.script_record(t, actor, action, detail);
                self.send_bytes(t, actor, dest, bytes);
            }
            Step::Impersonate {
                actor,
                victim,
                to,
                mode,
                payload,
            } => {
                let target_peers = self.addresses(&[to]);
                let payload = match payload {
                    ForgedEvent::ConnectionInit => EventPayload::ConnectionInit { target_peers },
                    ForgedEvent::KeepAlive => EventPayload::KeepAlive { target_peers },
                };
                let mut env = Envelope::seal(self.nodes[actor].engine.identity(), payload, now);
                match mode {
                    ForgeMode::RewriteSender => env.sender = self.nodes[victim].engine.address(),
                    ForgeMode::CorruptSignature => {
                        let mut sig = *env.signature.as_bytes();
                        sig[(t as usize) % sig.len()] ^= 0x01;
                        env.signature = Signature::from_bytes(sig);
                    }
                }
                let detail = format!(
                    "{mode:?}:{}->{}",
                    self.nodes[victim].name, self.nodes[to].name
                );
                self.script_record(t, actor, action, detail);
                self.send_bytes(t, actor, to, env.to_bytes());
            }
            Step::Crash { actor } => {
                self.script_record(t, actor, action, String::new());
                self.nodes[actor].alive = false;
                self.nodes[actor].scheduled_wake = None;
            }
        }
    }

    fn run(mut self) -> SimReport {
        let peers = self
            .nodes
            .iter()
            .map(|n| PeerInfo {
                name: n.name.clone(),
                address: n.engine.address().to_hex(),
                honest: n.honest,
            })
            .collect();
        self.record(TraceRecord::Header {
            seed: self.cfg.seed,
            duration_ms: self.cfg.duration_ms,
            peers,
        });
        for i in 0..self.steps.len() {
            self.queue
                .push(self.steps[i].0, SimEvent::Script { step: i });
        }
        for i in 0..self.nodes.len() {
            self.reschedule(0, i);
        }

        let end = self.cfg.duration_ms;
        while let Some((t, event)) = self.queue.pop_until(end) {
            match event {
                SimEvent::Script { step } => self.run_step(t, step),
                SimEvent::Tick { peer } => {
                    let node = &self.nodes[peer];
                    if !node.alive || node.scheduled_wake != Some(t) {
                        continue;
                    }
                    self.nodes[peer].scheduled_wake = None;
                    let now = self.local(peer, t);
                    let actions = self.nodes[peer].engine.on_tick(now);
                    self.settle(t, peer, None, actions);
                }
                SimEvent::Deliver { to, origin, bytes } => {
                    if !self.nodes[to].alive {
                        self.messages.dropped += 1;
                        continue;
                    }
                    self.messages.delivered += 1;
                    let now = self.local(to, t);
                    let actions = self.nodes[to].engine.receive(&bytes, now);
                    self.settle(t, to, Some(origin), actions);
                }
            }
        }
        self.messages.in_flight = self.queue.pending_deliveries() as u64;

        for i in 0..self.nodes.len() {
            if self.nodes[i].alive {
                let now = self.local(i, end);
                self.nodes[i].engine.expire(now);
                self.drain(end, i, None);
            }
        }
        self.finish(end)
    }

    fn finish(mut self, end: u64) -> SimReport {
        let duplicate_addrs: BTreeSet<PeerAddress> = self
            .duplicates
            .iter()
            .map(|&d| self.nodes[d].engine.address())
            .collect();
        let uniqueness_verdict = self.nodes.iter().enumerate().all(|(i, n)| {
            !n.honest
                || !n.alive
                || self.duplicates.contains(&i)
                || n.engine
                    .book()
                    .entries()
                    .all(|(p, _)| !duplicate_addrs.contains(p))
        });
        let duplicates: Vec<String> = self
            .duplicates
            .iter()
            .map(|&d| self.nodes[d].name.clone())
            .collect();
        self.record(TraceRecord::End {
            t: end,
            uniqueness_verdict,
            duplicates: duplicates.clone(),
        });

        let mut counters = Counters::default();
        let mut peers = BTreeMap::new();
        for n in &self.nodes {
            counters.add(n.engine.stats());
            let book = n
                .engine
                .book()
                .entries()
                .map(|(addr, e)| BookSnapshot {
                    address: addr.to_hex(),
                    name: self.by_addr.get(addr).map(|&j| self.nodes[j].name.clone()),
                    status: e.status,
                    connected_at: e.connected_at,
                    last_event: e.last_event.tag().name().to_string(),
                    last_event_ms: e.last_event.timestamp_ms,
                })
                .collect();
            peers.insert(
                n.name.clone(),
                PeerReport {
                    name: n.name.clone(),
                    address: n.engine.address().to_hex(),
                    honest: n.honest,
                    owner: n.owner.clone(),
                    crashed: !n.alive,
                    stats: n.engine.stats().clone(),
                    book,
                },
            );
        }
        SimReport {
            seed: self.cfg.seed,
            duration_ms: end,
            peers,
            counters,
            messages: self.messages,
            uniqueness_verdict,
            duplicates,
            lint: self.cfg.protocol.lint(),
            trace_hash: trace_hash(&self.trace),
            trace: self.trace,
            captures: self.captures.into_iter().map(|(info, _)| info).collect(),
        }
    }
}

pub fn run_simulation(cfg: &SimConfig) -> Result<SimReport> {
    Ok(Simulator::new(cfg.clone())?.run())
}
