use serde::Serialize;

use crate::audit::AuditLog;
use crate::crypto::{sha3, Hash32, KeyPair, PublicKey};
use crate::envelope::{MsgType, SignedEnvelope};
use crate::model::AgentId;
use crate::negotiation::messages::{CdQuery, CdResponse};
use crate::negotiation::{decode, Agent, Ctx, Endpoint, NegotiationError, Timer};

/// Network face of the registry: answers signed CD_QUERY envelopes.
pub struct AnsNode {
    ep: Endpoint,
    audit: AuditLog,
}

#[derive(Serialize)]
struct QueryEntry<'a> {
    requester: &'a AgentId,
    results: Vec<&'a AgentId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

impl AnsNode {
    pub fn new(id: AgentId, key: KeyPair, rng_seed: [u8; 32]) -> Self {
        AnsNode { ep: Endpoint::new(id, key, rng_seed), audit: AuditLog::new() }
    }

    pub fn public_key(&self) -> PublicKey {
        self.ep.public_key()
    }
}

impl Agent for AnsNode {
    fn id(&self) -> &AgentId {
        &self.ep.id
    }

    fn handle(&mut self, env: &SignedEnvelope, ctx: &mut Ctx<'_>) -> Result<(), NegotiationError> {
        if env.msg_type != MsgType::CdQuery {
            return Err(NegotiationError::IllegalPhase {
                phase: "ANS".into(),
                detail: format!("directory does not accept {}", env.msg_type),
            });
        }
        let key = ctx
            .registry
            .public_key_of(&env.sender)
            .ok_or_else(|| NegotiationError::UnknownPeer(env.sender.clone()))?;
        self.ep.admit(env, &key, ctx.now)?;
        let q: CdQuery = decode(env)?;
        let body = match ctx.registry.query_as(&env.sender, &q.query, q.limit as usize) {
            Ok(candidates) => CdResponse { candidates, error: None },
            Err(e) => CdResponse { candidates: Vec::new(), error: Some(e.name().into()) },
        };
        let entry = QueryEntry {
            requester: &env.sender,
            results: body.candidates.iter().map(|a| &a.id).collect(),
            error: body.error.as_deref(),
        };
        self.audit.append(ctx.now, &self.ep.id, "query", &entry).expect("query entry encodes");
        let out = self.ep.envelope(&env.sender, env.session_id, MsgType::CdResponse, &body, ctx.now);
        ctx.out.send.push(out);
        Ok(())
    }

    fn on_timer(&mut self, _timer: Timer, _ctx: &mut Ctx<'_>) -> Result<(), NegotiationError> {
        Ok(())
    }

    fn audit(&self) -> &AuditLog {
        &self.audit
    }

    fn state_digest(&self) -> Hash32 {
        sha3(&self.audit.head())
    }
}
