//! Attackers that sit on a link or hammer the directory.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::crypto::KeyPair;
use crate::encoding::canonical_encode;
use crate::envelope::{MsgType, Nonce, SignedEnvelope};
use crate::model::{AgentId, Version};
use crate::negotiation::messages::Sso;

/// Directed link between two agents.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub from: AgentId,
    pub to: AgentId,
}

impl Link {
    pub fn carries(&self, env: &SignedEnvelope) -> bool {
        env.sender == self.from && env.recipient == self.to
    }
}

/// How a downgrader rewrites the extension in an offer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
pub enum DowngradeMode {
    /// Caps the advertised version at `to`.
    Strip { to: Version },
    /// Adds an extension name the sender never offered.
    Inject { extension: String },
    /// Passes offers through untouched.
    Noop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum AdversarySpec {
    /// Records envelopes on `target` and re-delivers each once, `delay_ms`
    /// later. An empty `msg_types` means every type.
    Replayer {
        target: Link,
        #[serde(default)]
        msg_types: Vec<MsgType>,
        #[serde(default = "one_second")]
        delay_ms: u64,
    },
    /// Rewrites SSO offers on `target`. With `resign` the adversary holds the
    /// sender's key, as a compromised relay would.
    Downgrader {
        target: Link,
        mode: DowngradeMode,
        #[serde(default = "yes")]
        resign: bool,
    },
    /// Forges a copy of every envelope `impersonate` sends to `target`,
    /// signed with the impostor's own key.
    Impostor { target: AgentId, impersonate: AgentId },
    /// Burst of registrations and queries from one identity against the
    /// directory named by `target`.
    Flooder {
        target: AgentId,
        #[serde(default = "hundred")]
        registrations: u32,
        #[serde(default)]
        queries: u32,
        #[serde(default = "one_second")]
        window_ms: u64,
        #[serde(default = "yes")]
        valid_pow: bool,
        /// Offset from the start of the run.
        #[serde(default)]
        start_ms: u64,
    },
}

fn one_second() -> u64 {
    1_000
}

fn yes() -> bool {
    true
}

fn hundred() -> u32 {
    100
}

impl AdversarySpec {
    pub fn kind(&self) -> &'static str {
        match self {
            AdversarySpec::Replayer { .. } => "REPLAYER",
            AdversarySpec::Downgrader { .. } => "DOWNGRADER",
            AdversarySpec::Impostor { .. } => "IMPOSTOR",
            AdversarySpec::Flooder { .. } => "FLOODER",
        }
    }

    /// Agents this adversary names, for scenario validation.
    pub fn referenced_agents(&self) -> Vec<&AgentId> {
        match self {
            AdversarySpec::Replayer { target, .. } | AdversarySpec::Downgrader { target, .. } => {
                vec![&target.from, &target.to]
            }
            AdversarySpec::Impostor { target, impersonate } => vec![target, impersonate],
            AdversarySpec::Flooder { target, .. } => vec![target],
        }
    }
}

/// What an on-path adversary did to one envelope.
#[derive(Debug, Default)]
pub(crate) struct Interception {
    /// Replacement for the envelope in flight.
    pub rewritten: Option<SignedEnvelope>,
    /// Extra envelopes to deliver, with their delay.
    pub inject: Vec<(u64, SignedEnvelope)>,
}

/// Runs `spec` over an envelope crossing the network.
pub(crate) fn intercept(
    spec: &AdversarySpec,
    env: &SignedEnvelope,
    keys: &BTreeMap<AgentId, KeyPair>,
    impostor_key: &KeyPair,
) -> Interception {
    let mut out = Interception::default();
    match spec {
        AdversarySpec::Replayer { target, msg_types, delay_ms } => {
            if target.carries(env) && (msg_types.is_empty() || msg_types.contains(&env.msg_type)) {
                out.inject.push((*delay_ms, env.clone()));
            }
        }
        AdversarySpec::Downgrader { target, mode, resign } => {
            if target.carries(env) && env.msg_type == MsgType::Sso {
                out.rewritten = rewrite_offer(env, mode, resign.then(|| keys.get(&env.sender)).flatten());
            }
        }
        AdversarySpec::Impostor { target, impersonate } => {
            if &env.sender == impersonate && &env.recipient == target {
                let mut forged = env.clone();
                let mut n = env.nonce.0;
                n.iter_mut().for_each(|b| *b ^= 0xa5);
                forged.nonce = Nonce(n);
                forged.seq = env.seq + 1;
                forged.resign(impostor_key);
                out.inject.push((1, forged));
            }
        }
        AdversarySpec::Flooder { .. } => {}
    }
    out
}

fn rewrite_offer(env: &SignedEnvelope, mode: &DowngradeMode, signer: Option<&KeyPair>) -> Option<SignedEnvelope> {
    let mut offer: Sso = env.decode_body().ok()?;
    let before = offer.extension.clone();
    match mode {
        DowngradeMode::Strip { to } => {
            let ext = &mut offer.extension;
            if *to < ext.version {
                ext.version = *to;
                ext.compatibility = ext.compatibility.min(*to);
            }
        }
        DowngradeMode::Inject { extension } => {
            offer.extension.extensions.insert(extension.clone());
        }
        DowngradeMode::Noop => {}
    }
    if offer.extension == before {
        return None;
    }
    let mut forged = env.clone();
    forged.body = canonical_encode(&offer).expect("offer encodes");
    if let Some(k) = signer {
        forged.resign(k);
    }
    Some(forged)
}
