//! Enforcement: token checks, policy evaluation and obligation validation.
//!
//! Only a `Permit` decision whose obligations all pass yields `Allow`; every
//! other path is a `Deny` with an enumerated reason.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use parking_lot::RwLock;

use super::model::*;
use super::pdp::pdp_evaluate;
use super::pip::{pip_resolve, AttributeSources};
use crate::registrar::{TokenStatus, TokenTable};
use crate::token::{inspect_token, wire_from_bearer, ClaimSet, CoseKey};
use crate::UnixSeconds;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum DenyReason {
    TokenInvalid,
    TokenExpired,
    TokenRevoked,
    PolicyDeny,
    PolicyNotApplicable,
    PolicyIndeterminate,
    ObligationFailed(ObligationId),
}

impl DenyReason {
    /// Failures of the credential itself, as opposed to authorization failures.
    pub fn is_token_failure(&self) -> bool {
        matches!(self, DenyReason::TokenInvalid | DenyReason::TokenExpired | DenyReason::TokenRevoked)
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "TokenInvalid" => DenyReason::TokenInvalid,
            "TokenExpired" => DenyReason::TokenExpired,
            "TokenRevoked" => DenyReason::TokenRevoked,
            "PolicyDeny" => DenyReason::PolicyDeny,
            "PolicyNotApplicable" => DenyReason::PolicyNotApplicable,
            "PolicyIndeterminate" => DenyReason::PolicyIndeterminate,
            other => {
                let id = other.strip_prefix("ObligationFailed(")?.strip_suffix(')')?;
                DenyReason::ObligationFailed(ObligationId::parse(id))
            }
        })
    }
}

impl fmt::Display for DenyReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DenyReason::TokenInvalid => f.write_str("TokenInvalid"),
            DenyReason::TokenExpired => f.write_str("TokenExpired"),
            DenyReason::TokenRevoked => f.write_str("TokenRevoked"),
            DenyReason::PolicyDeny => f.write_str("PolicyDeny"),
            DenyReason::PolicyNotApplicable => f.write_str("PolicyNotApplicable"),
            DenyReason::PolicyIndeterminate => f.write_str("PolicyIndeterminate"),
            DenyReason::ObligationFailed(id) => write!(f, "ObligationFailed({id})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EnforcementResult {
    Allow,
    Deny(DenyReason),
}

impl EnforcementResult {
    pub fn is_allow(&self) -> bool {
        matches!(self, EnforcementResult::Allow)
    }
}

/// The outcome of enforcement along with what was learned on the way.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Enforcement {
    pub result: EnforcementResult,
    pub claims: Option<ClaimSet>,
    /// Absent when the request was rejected before policy evaluation.
    pub decision: Option<Decision>,
}

/// An access attempt as intercepted, before the token is checked.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawRequest {
    pub bearer: Option<String>,
    pub resource_id: String,
    pub action: String,
    pub attributes: AttributeBag,
}

impl RawRequest {
    pub fn new(bearer: Option<String>, resource_id: impl Into<String>, action: impl Into<String>) -> Self {
        RawRequest { bearer, resource_id: resource_id.into(), action: action.into(), attributes: AttributeBag::new() }
    }
}

pub struct ObligationContext<'a> {
    pub obligation: &'a Obligation,
    pub request: &'a AccessRequest,
    pub claims: &'a ClaimSet,
    pub sources: &'a AttributeSources,
}

impl ObligationContext<'_> {
    /// Subject keys tried by the account-based validators: user then client.
    pub fn subjects(&self) -> impl Iterator<Item = &str> {
        self.claims.user_name.as_deref().into_iter().chain(std::iter::once(self.claims.client_id.as_str()))
    }
}

pub trait ObligationValidator: Send + Sync {
    fn check(&self, ctx: &ObligationContext<'_>) -> bool;
}

impl<F> ObligationValidator for F
where
    F: Fn(&ObligationContext<'_>) -> bool + Send + Sync,
{
    fn check(&self, ctx: &ObligationContext<'_>) -> bool {
        self(ctx)
    }
}

/// Validators keyed by obligation id. An obligation with no registered
/// validator fails.
#[derive(Clone, Default)]
pub struct ObligationValidators {
    by_id: BTreeMap<String, Arc<dyn ObligationValidator>>,
}

impl fmt::Debug for ObligationValidators {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.by_id.keys()).finish()
    }
}

impl ObligationValidators {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, id: ObligationId, validator: Arc<dyn ObligationValidator>) {
        self.by_id.insert(id.as_str().to_owned(), validator);
    }

    pub fn with(mut self, id: ObligationId, validator: impl ObligationValidator + 'static) -> Self {
        self.register(id, Arc::new(validator));
        self
    }

    /// Runs validators in declaration order, stopping at the first failure.
    pub fn run(&self, obligations: &[Obligation], request: &AccessRequest, claims: &ClaimSet, sources: &AttributeSources) -> Result<(), ObligationId> {
        for obligation in obligations {
            let ctx = ObligationContext { obligation, request, claims, sources };
            let passed = self.by_id.get(obligation.id.as_str()).is_some_and(|v| v.check(&ctx));
            if !passed {
                return Err(obligation.id.clone());
            }
        }
        Ok(())
    }
}

/// Active subscriptions per subject. A subscription without a service
/// covers every service; the obligation's `service` parameter selects one.
#[derive(Debug, Default)]
pub struct SubscriptionRegistry {
    entries: RwLock<HashSet<(String, Option<String>)>>,
}

impl SubscriptionRegistry {
    pub fn subscribe(&self, subject: impl Into<String>, service: Option<&str>) {
        self.entries.write().insert((subject.into(), service.map(str::to_owned)));
    }

    pub fn cancel(&self, subject: &str, service: Option<&str>) {
        self.entries.write().remove(&(subject.to_owned(), service.map(str::to_owned)));
    }
}

impl ObligationValidator for SubscriptionRegistry {
    fn check(&self, ctx: &ObligationContext<'_>) -> bool {
        let service = ctx.obligation.params.get("service").cloned();
        let entries = self.entries.read();
        ctx.subjects().any(|s| {
            entries.contains(&(s.to_owned(), None)) || (service.is_some() && entries.contains(&(s.to_owned(), service.clone())))
        })
    }
}

/// Account balances. Passes when a subject's balance covers the
/// obligation's `amount` parameter (default 1).
#[derive(Debug, Default)]
pub struct PaymentLedger {
    balances: RwLock<HashMap<String, i64>>,
}

impl PaymentLedger {
    pub fn set_balance(&self, subject: impl Into<String>, balance: i64) {
        self.balances.write().insert(subject.into(), balance);
    }

    pub fn balance(&self, subject: &str) -> Option<i64> {
        self.balances.read().get(subject).copied()
    }
}

impl ObligationValidator for PaymentLedger {
    fn check(&self, ctx: &ObligationContext<'_>) -> bool {
        let amount = match ctx.obligation.params.get("amount") {
            None => 1,
            Some(a) => match a.parse::<i64>() {
                Ok(a) => a,
                Err(_) => return false,
            },
        };
        let balances = self.balances.read();
        ctx.subjects().any(|s| balances.get(s).is_some_and(|b| *b >= amount))
    }
}

/// Checks the requester's `Subject:platform` attribute against the
/// obligation's comma-separated `allowed` parameter, or against this
/// list when the parameter is absent.
#[derive(Debug, Default)]
pub struct PlatformAllowList {
    allowed: RwLock<HashSet<String>>,
}

impl PlatformAllowList {
    pub fn new<'a>(platforms: impl IntoIterator<Item = &'a str>) -> Self {
        PlatformAllowList { allowed: RwLock::new(platforms.into_iter().map(str::to_owned).collect()) }
    }

    pub fn allow(&self, platform: impl Into<String>) {
        self.allowed.write().insert(platform.into());
    }
}

impl ObligationValidator for PlatformAllowList {
    fn check(&self, ctx: &ObligationContext<'_>) -> bool {
        let Ok(platforms) = pip_resolve(ctx.request, &AttributeId::subject("platform"), ctx.sources) else {
            return false;
        };
        let from_param: Option<HashSet<&str>> =
            ctx.obligation.params.get("allowed").map(|p| p.split(',').map(str::trim).collect());
        let own = self.allowed.read();
        platforms.iter().any(|p| {
            let AttributeValue::Text(p) = p else { return false };
            match &from_param {
                Some(set) => set.contains(p.as_str()),
                None => own.contains(p),
            }
        })
    }
}

/// Everything enforcement needs besides the request and the policy set.
#[derive(Clone)]
pub struct EnforcementContext<'a> {
    pub issuer_key: &'a CoseKey,
    pub registrar: &'a dyn TokenTable,
    pub validators: &'a ObligationValidators,
    pub sources: &'a AttributeSources,
}

fn check_token(raw: &RawRequest, ctx: &EnforcementContext<'_>, now: UnixSeconds) -> Result<ClaimSet, DenyReason> {
    let bearer = raw.bearer.as_deref().ok_or(DenyReason::TokenInvalid)?;
    let wire = wire_from_bearer(bearer).map_err(|_| DenyReason::TokenInvalid)?;
    let token = inspect_token(&wire, ctx.issuer_key).map_err(|_| DenyReason::TokenInvalid)?;
    let claims = token.claims;
    match ctx.registrar.status(&claims.jti, now) {
        TokenStatus::Revoked => Err(DenyReason::TokenRevoked),
        _ if now >= claims.exp => Err(DenyReason::TokenExpired),
        TokenStatus::Expired => Err(DenyReason::TokenExpired),
        TokenStatus::Unknown => Err(DenyReason::TokenInvalid),
        TokenStatus::Active => Ok(claims),
    }
}

pub fn pep_enforce(raw: &RawRequest, set: &PolicySet, ctx: &EnforcementContext<'_>, now: UnixSeconds) -> Enforcement {
    let claims = match check_token(raw, ctx, now) {
        Ok(c) => c,
        Err(reason) => return Enforcement { result: EnforcementResult::Deny(reason), claims: None, decision: None },
    };
    let request = AccessRequest {
        attributes: raw.attributes.clone(),
        resource_id: raw.resource_id.clone(),
        action: raw.action.clone(),
        token_claims: Some(claims.clone()),
    };
    let sources = ctx.sources.clone().at(now);
    let decision = pdp_evaluate(set, &request, &sources);
    let result = match decision.outcome {
        Outcome::Permit => match ctx.validators.run(&decision.obligations, &request, &claims, &sources) {
            Ok(()) => EnforcementResult::Allow,
            Err(id) => EnforcementResult::Deny(DenyReason::ObligationFailed(id)),
        },
        Outcome::Deny => EnforcementResult::Deny(DenyReason::PolicyDeny),
        Outcome::NotApplicable => EnforcementResult::Deny(DenyReason::PolicyNotApplicable),
        Outcome::Indeterminate => EnforcementResult::Deny(DenyReason::PolicyIndeterminate),
    };
    Enforcement { result, claims: Some(claims), decision: Some(decision) }
}
