use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::token::{ClientSpec, GrantType, DEFAULT_TOKEN_TTL};

use super::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    /// Protected resources only.
    ResourceServer,
    /// Validating forwarder in front of an upstream.
    ProxyResourceServer,
    /// Token issuance and introspection only.
    AuthorizationServer,
    /// Token endpoint and protected resources in one process.
    Combined,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::ResourceServer => "resource-server",
            Role::ProxyResourceServer => "proxy-resource-server",
            Role::AuthorizationServer => "authorization-server",
            Role::Combined => "combined",
        }
    }

    pub fn issues_tokens(self) -> bool {
        matches!(self, Role::AuthorizationServer | Role::Combined)
    }

    pub fn serves_resources(self) -> bool {
        matches!(self, Role::ResourceServer | Role::Combined)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Role::ResourceServer, Role::ProxyResourceServer, Role::AuthorizationServer, Role::Combined]
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| {
                format!("unknown role {s:?}; expected resource-server, proxy-resource-server, authorization-server or combined")
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientConfig {
    pub client_id: String,
    /// Hashed with a random salt when loaded; never kept in clear.
    pub secret: String,
    #[serde(default = "all_grants")]
    pub grant_types: Vec<String>,
    #[serde(default = "any_audience")]
    pub audiences: Vec<String>,
    #[serde(default = "read_scope")]
    pub scope: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub authorities: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_ttl: Option<u64>,
    #[serde(default)]
    pub admin: bool,
}

fn all_grants() -> Vec<String> {
    GrantType::ALL.iter().map(|g| g.as_str().to_owned()).collect()
}

fn any_audience() -> Vec<String> {
    vec!["*".into()]
}

fn read_scope() -> Vec<String> {
    vec!["read".into()]
}

impl ClientConfig {
    pub fn new(client_id: impl Into<String>, secret: impl Into<String>) -> Self {
        ClientConfig {
            client_id: client_id.into(),
            secret: secret.into(),
            grant_types: all_grants(),
            audiences: any_audience(),
            scope: read_scope(),
            authorities: None,
            token_ttl: None,
            admin: false,
        }
    }

    pub fn to_spec(&self) -> Result<ClientSpec, ServiceError> {
        let grants = self
            .grant_types
            .iter()
            .map(|g| g.parse::<GrantType>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ServiceError::ConfigInvalid(format!("clients.{}: {e}", self.client_id)))?;
        Ok(ClientSpec {
            client_id: self.client_id.clone(),
            secret: self.secret.clone(),
            allowed_grant_types: grants,
            allowed_audiences: self.audiences.clone(),
            default_scope: self.scope.clone(),
            authorities: self.authorities.clone(),
            token_ttl: self.token_ttl,
            admin: self.admin,
        })
    }
}

/// A protected resource exposed at `/resource/{path}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceDescriptor {
    pub resource_id: String,
    pub path: String,
    #[serde(default = "read_scope")]
    pub actions: Vec<String>,
    /// Extra `Resource` category attributes for policy evaluation.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, Vec<String>>,
    /// Body served on an allowed read.
    #[serde(default)]
    pub body: String,
}

/// Seed data for the built-in obligation validators.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObligationConfig {
    /// Subjects (client ids or user names) with an active subscription.
    #[serde(default)]
    pub subscriptions: Vec<String>,
    /// Account balances for payment checks.
    #[serde(default)]
    pub balances: BTreeMap<String, i64>,
    /// Platforms admitted when an obligation names none.
    #[serde(default)]
    pub platforms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProxyConfig {
    /// Path prefixes that may be forwarded.
    #[serde(default = "root_prefix")]
    pub allowed_paths: Vec<String>,
    #[serde(default = "default_body_limit")]
    pub max_body_bytes: usize,
    /// Concurrent requests allowed per source address.
    #[serde(default = "default_source_limit")]
    pub per_source_limit: usize,
    /// Requests lacking any of these headers are rejected.
    #[serde(default)]
    pub required_headers: Vec<String>,
    /// Headers removed before forwarding, in addition to hop-by-hop headers.
    #[serde(default = "default_strip")]
    pub strip_headers: Vec<String>,
}

fn root_prefix() -> Vec<String> {
    vec!["/".into()]
}

fn default_body_limit() -> usize {
    64 * 1024
}

fn default_source_limit() -> usize {
    64
}

fn default_strip() -> Vec<String> {
    vec!["cookie".into(), "x-forwarded-for".into()]
}

impl Default for ProxyConfig {
    fn default() -> Self {
        ProxyConfig {
            allowed_paths: root_prefix(),
            max_body_bytes: default_body_limit(),
            per_source_limit: default_source_limit(),
            required_headers: Vec::new(),
            strip_headers: default_strip(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen_address: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upstream: Option<String>,
    /// Policy document; an empty policy set (deny everything) when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_path: Option<PathBuf>,
    /// Issuer key as a JSON COSE_Key; an ephemeral key is generated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issuer_key_path: Option<PathBuf>,
    pub token_default_ttl: u64,
    pub request_timeout: u64,
    /// Registrar operation log, replayed at start and appended to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registrar_log: Option<PathBuf>,
    /// Seconds between expiry sweeps; 0 disables the sweeper.
    pub purge_interval: u64,
    #[serde(default)]
    pub clients: Vec<ClientConfig>,
    #[serde(default)]
    pub resources: Vec<ResourceDescriptor>,
    #[serde(default)]
    pub obligations: ObligationConfig,
    #[serde(default)]
    pub proxy: ProxyConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen_address: "127.0.0.1:8080".into(),
            role: Role::Combined,
            upstream: None,
            policy_path: None,
            issuer_key_path: None,
            token_default_ttl: DEFAULT_TOKEN_TTL,
            request_timeout: 10,
            registrar_log: None,
            purge_interval: 60,
            clients: Vec::new(),
            resources: Vec::new(),
            obligations: ObligationConfig::default(),
            proxy: ProxyConfig::default(),
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<(), ServiceError> {
        let invalid = |m: String| Err(ServiceError::ConfigInvalid(m));
        if self.listen_address.parse::<std::net::SocketAddr>().is_err() {
            return invalid(format!("listen_address: {:?} is not host:port", self.listen_address));
        }
        if self.role == Role::ProxyResourceServer && self.upstream.as_deref().map_or(true, str::is_empty) {
            return invalid("upstream: required for the proxy-resource-server role".into());
        }
        if self.token_default_ttl == 0 {
            return invalid("token_default_ttl: must be positive".into());
        }
        if self.request_timeout == 0 {
            return invalid("request_timeout: must be positive".into());
        }
        let mut paths = std::collections::HashSet::new();
        for r in &self.resources {
            if !paths.insert(r.path.trim_matches('/')) {
                return invalid(format!("resources: duplicate path {:?}", r.path));
            }
            if r.actions.is_empty() {
                return invalid(format!("resources.{}: actions must not be empty", r.resource_id));
            }
        }
        let mut ids = std::collections::HashSet::new();
        for c in &self.clients {
            if !ids.insert(c.client_id.as_str()) {
                return invalid(format!("clients: duplicate client_id {:?}", c.client_id));
            }
            c.to_spec()?;
        }
        if self.proxy.per_source_limit == 0 {
            return invalid("proxy.per_source_limit: must be positive".into());
        }
        Ok(())
    }

    /// Makes relative file paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &std::path::Path) {
        for p in [&mut self.policy_path, &mut self.issuer_key_path, &mut self.registrar_log].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, ServiceError> {
        toml::from_str(text).map_err(|e| ServiceError::ConfigParse(e.to_string()))
    }
}
