use std::collections::BTreeMap;

use rand::RngCore;
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;

use super::grant::{GrantType, DEFAULT_TOKEN_TTL};

/// A registered client. Secrets are kept only as salted SHA-256 digests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientEntry {
    pub client_id: String,
    salt: [u8; 16],
    secret_hash: [u8; 32],
    pub allowed_grant_types: Vec<GrantType>,
    /// Audiences this client may request; `"*"` admits any.
    pub allowed_audiences: Vec<String>,
    pub default_scope: Vec<String>,
    pub authorities: Option<String>,
    pub token_ttl: Option<u64>,
    /// Admin clients may call the introspection endpoint.
    pub admin: bool,
}

impl ClientEntry {
    pub fn verify_secret(&self, secret: &str) -> bool {
        salted_hash(&self.salt, secret).ct_eq(&self.secret_hash).into()
    }

    pub fn allows_grant(&self, grant: GrantType) -> bool {
        self.allowed_grant_types.contains(&grant)
    }

    pub fn allows_audience(&self, aud: &str) -> bool {
        self.allowed_audiences.iter().any(|a| a == "*" || a == aud)
    }
}

/// Input for registering a client.
#[derive(Debug, Clone)]
pub struct ClientSpec {
    pub client_id: String,
    pub secret: String,
    pub allowed_grant_types: Vec<GrantType>,
    pub allowed_audiences: Vec<String>,
    pub default_scope: Vec<String>,
    pub authorities: Option<String>,
    pub token_ttl: Option<u64>,
    pub admin: bool,
}

impl ClientSpec {
    /// A client allowed every grant type and audience.
    pub fn new(client_id: impl Into<String>, secret: impl Into<String>) -> Self {
        ClientSpec {
            client_id: client_id.into(),
            secret: secret.into(),
            allowed_grant_types: GrantType::ALL.to_vec(),
            allowed_audiences: vec!["*".into()],
            default_scope: vec!["read".into()],
            authorities: None,
            token_ttl: None,
            admin: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientDirectory {
    entries: BTreeMap<String, ClientEntry>,
    default_ttl: u64,
}

impl Default for ClientDirectory {
    fn default() -> Self {
        Self::new(DEFAULT_TOKEN_TTL)
    }
}

impl ClientDirectory {
    pub fn new(default_ttl: u64) -> Self {
        ClientDirectory { entries: BTreeMap::new(), default_ttl }
    }

    pub fn register(&mut self, spec: ClientSpec) {
        let mut salt = [0u8; 16];
        rand::thread_rng().fill_bytes(&mut salt);
        let entry = ClientEntry {
            secret_hash: salted_hash(&salt, &spec.secret),
            salt,
            client_id: spec.client_id.clone(),
            allowed_grant_types: spec.allowed_grant_types,
            allowed_audiences: spec.allowed_audiences,
            default_scope: spec.default_scope,
            authorities: spec.authorities,
            token_ttl: spec.token_ttl,
            admin: spec.admin,
        };
        self.entries.insert(spec.client_id, entry);
    }

    pub fn with(mut self, spec: ClientSpec) -> Self {
        self.register(spec);
        self
    }

    pub fn get(&self, client_id: &str) -> Option<&ClientEntry> {
        self.entries.get(client_id)
    }

    /// Lifetime of tokens issued to `client`.
    pub fn ttl_for(&self, client: &ClientEntry) -> u64 {
        client.token_ttl.unwrap_or(self.default_ttl)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn salted_hash(salt: &[u8], secret: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(salt);
    h.update(secret.as_bytes());
    h.finalize().into()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn secrets_are_salted() {
        let dir = ClientDirectory::default()
            .with(ClientSpec::new("a", "secret"))
            .with(ClientSpec::new("b", "secret"));
        let (a, b) = (dir.get("a").unwrap(), dir.get("b").unwrap());
        assert_ne!(a.secret_hash, b.secret_hash);
        assert!(a.verify_secret("secret"));
        assert!(!a.verify_secret("Secret"));
    }

    #[test]
    fn audience_wildcard() {
        let mut spec = ClientSpec::new("a", "s");
        spec.allowed_audiences = vec!["Sensor01".into()];
        let dir = ClientDirectory::default().with(spec);
        let a = dir.get("a").unwrap();
        assert!(a.allows_audience("Sensor01"));
        assert!(!a.allows_audience("Vehicle01"));
        assert_eq!(dir.ttl_for(a), DEFAULT_TOKEN_TTL);
    }
}
