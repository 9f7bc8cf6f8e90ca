//! Attribute resolution.
//!
//! Sources are consulted in a fixed order and the first one with an entry
//! wins: inline request attributes (including the synthesized
//! `Resource:resource-id` and `Action:action-id`), token claims exposed as
//! Subject attributes, registered providers, and finally the clock as
//! `Environment:current-time`.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use super::model::{AccessRequest, AttributeId, AttributeValue, Category};
use crate::UnixSeconds;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("missing attribute {0}")]
pub struct MissingAttribute(pub AttributeId);

/// An external attribute store.
pub trait AttributeProvider: Send + Sync {
    fn resolve(&self, request: &AccessRequest, id: &AttributeId) -> Option<Vec<AttributeValue>>;
}

impl<F> AttributeProvider for F
where
    F: Fn(&AccessRequest, &AttributeId) -> Option<Vec<AttributeValue>> + Send + Sync,
{
    fn resolve(&self, request: &AccessRequest, id: &AttributeId) -> Option<Vec<AttributeValue>> {
        self(request, id)
    }
}

#[derive(Clone, Default)]
pub struct AttributeSources {
    providers: Vec<Arc<dyn AttributeProvider>>,
    now: Option<UnixSeconds>,
}

impl fmt::Debug for AttributeSources {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AttributeSources")
            .field("providers", &self.providers.len())
            .field("now", &self.now)
            .finish()
    }
}

impl AttributeSources {
    pub fn new() -> Self {
        Self::default()
    }

    /// Exposes `now` as `Environment:current-time`.
    pub fn at(mut self, now: UnixSeconds) -> Self {
        self.now = Some(now);
        self
    }

    pub fn with_provider(mut self, provider: impl AttributeProvider + 'static) -> Self {
        self.providers.push(Arc::new(provider));
        self
    }

    pub fn with_shared_provider(mut self, provider: Arc<dyn AttributeProvider>) -> Self {
        self.providers.push(provider);
        self
    }
}

pub const RESOURCE_ID: &str = "resource-id";
pub const ACTION_ID: &str = "action-id";
pub const CURRENT_TIME: &str = "current-time";

fn texts<'a>(items: impl IntoIterator<Item = &'a str>) -> Vec<AttributeValue> {
    items.into_iter().map(AttributeValue::text).collect()
}

fn from_claims(request: &AccessRequest, name: &str) -> Option<Vec<AttributeValue>> {
    let c = request.token_claims.as_ref()?;
    Some(match name {
        "scope" => texts(c.scope.iter().map(String::as_str)),
        "aud" => texts([c.aud.as_str()]),
        "client_id" => texts([c.client_id.as_str()]),
        "jti" => texts([c.jti.as_str()]),
        "user_name" => texts([c.user_name.as_deref()?]),
        "authorities" => texts(c.authorities.as_deref()?.split(',').map(str::trim).filter(|s| !s.is_empty())),
        "exp" => vec![AttributeValue::Time(c.exp)],
        "iat" => vec![AttributeValue::Time(c.iat?)],
        _ => return None,
    })
}

pub fn pip_resolve(
    request: &AccessRequest,
    id: &AttributeId,
    sources: &AttributeSources,
) -> Result<Vec<AttributeValue>, MissingAttribute> {
    if let Some(v) = request.attributes.get(id) {
        return Ok(v.to_vec());
    }
    match (id.category, id.name.as_str()) {
        (Category::Resource, RESOURCE_ID) => return Ok(vec![AttributeValue::text(&request.resource_id)]),
        (Category::Action, ACTION_ID) => return Ok(vec![AttributeValue::text(&request.action)]),
        (Category::Subject, name) => {
            if let Some(v) = from_claims(request, name) {
                return Ok(v);
            }
        }
        _ => {}
    }
    for p in &sources.providers {
        if let Some(v) = p.resolve(request, id) {
            return Ok(v);
        }
    }
    match (id.category, id.name.as_str(), sources.now) {
        (Category::Environment, CURRENT_TIME, Some(now)) => Ok(vec![AttributeValue::Time(now)]),
        _ => Err(MissingAttribute(id.clone())),
    }
}
