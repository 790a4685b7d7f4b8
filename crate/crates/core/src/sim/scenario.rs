//! Scripted actions a scenario injects into a simulation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForgeMode {
    /// Seal with the actor's key, then claim the victim as sender.
    #[default]
    RewriteSender,
    /// Seal under the actor's own key, then flip one signature bit. The
    /// victim is not involved.
    CorruptSignature,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForgedEvent {
    #[default]
    ConnectionInit,
    KeepAlive,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    Join {
        targets: Vec<String>,
    },
    /// Join again under the same identity, re-sending to every target.
    DuplicateJoin {
        targets: Vec<String>,
    },
    /// Re-deliver the bytes of the `captured_event_index`-th message sent in
    /// this run, from the actor, to `to` (default: the original recipient).
    Replay {
        captured_event_index: usize,
        #[serde(default)]
        to: Option<String>,
    },
    Impersonate {
        victim: String,
        to: String,
        #[serde(default)]
        mode: ForgeMode,
        #[serde(default)]
        payload: ForgedEvent,
    },
    /// `count` ConnectionInits at `target`, one every `interval_ms`. With
    /// fresh identities each comes from its own sybil engine named
    /// `actor#k`, which also answers challenges; otherwise the actor re-sends
    /// raw inits under its own key.
    Spam {
        target: String,
        count: u32,
        interval_ms: u64,
        #[serde(default = "default_true")]
        fresh_identities: bool,
    },
    Crash,
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::Join { .. } => "join",
            Action::DuplicateJoin { .. } => "duplicate_join",
            Action::Replay { .. } => "replay",
            Action::Impersonate { .. } => "impersonate",
            Action::Spam { .. } => "spam",
            Action::Crash => "crash",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedAction {
    pub at_ms: u64,
    pub actor: String,
    pub action: Action,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSpec {
    /// Names of adversary peers, in addition to the honest `peer0..peerN`.
    pub adversaries: Vec<String>,
    pub actions: Vec<ScriptedAction>,
}

pub fn honest_name(i: usize) -> String {
    format!("peer{i}")
}

pub fn sybil_name(actor: &str, k: u32) -> String {
    format!("{actor}#{k}")
}

impl ScenarioSpec {
    pub fn with_actions(actions: Vec<ScriptedAction>) -> Self {
        Self {
            adversaries: Vec::new(),
            actions,
        }
    }

    pub fn validate(&self, num_honest: usize, prefix: &str) -> Result<()> {
        let mut declared: BTreeSet<String> = (0..num_honest).map(honest_name).collect();
        for (i, name) in self.adversaries.iter().enumerate() {
            let key = format!("{prefix}adversaries[{i}]");
            if name.is_empty() || name.contains('#') {
                return Err(Error::config(key, format!("invalid peer name {name:?}")));
            }
            if !declared.insert(name.clone()) {
                return Err(Error::config(
                    key,
                    format!("peer name {name:?} declared twice"),
                ));
            }
        }
        let known = |key: String, name: &str| -> Result<()> {
            if declared.contains(name) {
                Ok(())
            } else {
                Err(Error::config(key, format!("unknown peer {name:?}")))
            }
        };
        let mut last_at = 0;
        for (i, step) in self.actions.iter().enumerate() {
            let key = format!("{prefix}actions[{i}]");
            if step.at_ms < last_at {
                return Err(Error::config(
                    format!("{key}.at_ms"),
                    "actions must be sorted by at_ms",
                ));
            }
            last_at = step.at_ms;
            known(format!("{key}.actor"), &step.actor)?;
            match &step.action {
                Action::Join { targets } | Action::DuplicateJoin { targets } => {
                    let tkey = format!("{key}.action.targets");
                    if targets.is_empty() {
                        return Err(Error::config(tkey, "must not be empty"));
                    }
                    let mut seen = BTreeSet::new();
                    for t in targets {
                        known(tkey.clone(), t)?;
                        if t == &step.actor {
                            return Err(Error::config(tkey, "a peer cannot target itself"));
                        }
                        if !seen.insert(t) {
                            return Err(Error::config(tkey, format!("duplicate target {t:?}")));
                        }
                    }
                }
                Action::Replay { to, .. } => {
                    if let Some(to) = to {
                        known(format!("{key}.action.to"), to)?;
                    }
                }
                Action::Impersonate { victim, to, .. } => {
                    known(format!("{key}.action.victim"), victim)?;
                    known(format!("{key}.action.to"), to)?;
                }
                Action::Spam { target, count, .. } => {
                    known(format!("{key}.action.target"), target)?;
                    if *count == 0 {
                        return Err(Error::config(
                            format!("{key}.action.count"),
                            "must be at least 1",
                        ));
                    }
                    if target == &step.actor {
                        return Err(Error::config(
                            format!("{key}.action.target"),
                            "a peer cannot spam itself",
                        ));
                    }
                }
                Action::Crash => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(at_ms: u64, actor: &str, action: Action) -> ScriptedAction {
        ScriptedAction {
            at_ms,
            actor: actor.into(),
            action,
        }
    }

    #[test]
    fn empty_duplicate_targets_rejected() {
        let s = ScenarioSpec::with_actions(vec![step(
            5,
            "peer0",
            Action::DuplicateJoin { targets: vec![] },
        )]);
        let err = s.validate(2, "scenario.").unwrap_err().to_string();
        assert!(err.contains("scenario.actions[0].action.targets"), "{err}");
    }

    #[test]
    fn unsorted_and_undeclared_rejected() {
        let s = ScenarioSpec::with_actions(vec![
            step(10, "peer0", Action::Crash),
            step(5, "peer1", Action::Crash),
        ]);
        assert!(s
            .validate(2, "")
            .unwrap_err()
            .to_string()
            .contains("actions[1].at_ms"));
        let s = ScenarioSpec::with_actions(vec![step(1, "mallory", Action::Crash)]);
        assert!(s.validate(2, "").is_err());
        let s = ScenarioSpec {
            adversaries: vec!["mallory".into()],
            actions: vec![step(1, "mallory", Action::Crash)],
        };
        assert!(s.validate(2, "").is_ok());
    }

    #[test]
    fn adversary_names_must_be_unique_and_plain() {
        for bad in ["peer0", "a#1", ""] {
            let s = ScenarioSpec {
                adversaries: vec![bad.into()],
                actions: vec![],
            };
            assert!(s.validate(1, "").is_err(), "{bad:?}");
        }
    }

    #[test]
    fn spam_needs_positive_count() {
        let s = ScenarioSpec::with_actions(vec![step(
            0,
            "peer0",
            Action::Spam {
                target: "peer1".into(),
                count: 0,
                interval_ms: 1,
                fresh_identities: true,
            },
        )]);
        assert!(s.validate(2, "").unwrap_err().to_string().contains("count"));
    }
}
