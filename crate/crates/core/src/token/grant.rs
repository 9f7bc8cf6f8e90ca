//! Token endpoint grant handling.
//!
//! Four grant types are supported. `client_credentials`, `password` and
//! `symmetric_key` authenticate with the client secret and bind a freshly
//! generated HS256 key as the token's `cnf`. `refresh_token` authenticates
//! with a previously issued token (MAC-valid under the issuer key, issued to
//! the same client; expiry is not enforced) and binds the client-supplied
//! proof-of-possession key verbatim.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use thiserror::Error;

use crate::codec::{base64url_encode, CborValue};
use crate::UnixSeconds;

use super::key::bytes_field;
use super::{inspect_token, issue_cwt, issue_jwt, wire_from_bearer};
use super::{CapabilityToken, ClaimSet, ClientDirectory, ClientEntry, CoseKey, TokenError, TokenFormat};

/// Default token lifetime in seconds.
pub const DEFAULT_TOKEN_TTL: u64 = 3600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GrantType {
    ClientCredentials,
    Password,
    SymmetricKey,
    RefreshToken,
}

impl GrantType {
    pub const ALL: [GrantType; 4] =
        [GrantType::ClientCredentials, GrantType::Password, GrantType::SymmetricKey, GrantType::RefreshToken];

    pub fn as_str(self) -> &'static str {
        match self {
            GrantType::ClientCredentials => "client_credentials",
            GrantType::Password => "password",
            GrantType::SymmetricKey => "symmetric_key",
            GrantType::RefreshToken => "refresh_token",
        }
    }
}

impl fmt::Display for GrantType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GrantType {
    type Err = GrantError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GrantType::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| GrantError::UnsupportedGrantType(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrantError {
    #[error("unknown client {0}")]
    UnknownClient(String),
    #[error("bad client credentials")]
    BadCredentials,
    #[error("unsupported grant type {0}")]
    UnsupportedGrantType(String),
    #[error("audience {0:?} not allowed")]
    InvalidAudience(String),
    #[error("scope not allowed: {0}")]
    InvalidScope(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("token issuance failed: {0}")]
    Issuance(#[from] TokenError),
}

impl GrantError {
    /// Machine-readable error code for response bodies.
    pub fn code(&self) -> &'static str {
        match self {
            GrantError::UnknownClient(_) => "UnknownClient",
            GrantError::BadCredentials => "BadCredentials",
            GrantError::UnsupportedGrantType(_) => "UnsupportedGrantType",
            GrantError::InvalidAudience(_) => "InvalidAudience",
            GrantError::InvalidScope(_) => "InvalidScope",
            GrantError::InvalidRequest(_) => "InvalidRequest",
            GrantError::Issuance(_) => "IssuanceFailed",
        }
    }
}

/// A token request as received by the token endpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrantRequest {
    pub grant_type: GrantType,
    pub client_id: String,
    pub client_secret: Option<String>,
    /// Requested audience. May be empty for refresh, which inherits it.
    pub aud: String,
    pub scope: Option<Vec<String>>,
    /// For refresh: the previously issued access token.
    pub refresh_material: Option<Vec<u8>>,
    pub pop_key: Option<CoseKey>,
    pub username: Option<String>,
    /// Overrides the default token format of the grant.
    pub format: Option<TokenFormat>,
}

impl GrantRequest {
    pub fn new(grant_type: GrantType, client_id: impl Into<String>, aud: impl Into<String>) -> Self {
        GrantRequest {
            grant_type,
            client_id: client_id.into(),
            client_secret: None,
            aud: aud.into(),
            scope: None,
            refresh_material: None,
            pop_key: None,
            username: None,
            format: None,
        }
    }

    pub fn with_secret(mut self, secret: impl Into<String>) -> Self {
        self.client_secret = Some(secret.into());
        self
    }

    /// Checks the per-grant required fields.
    pub fn validate(&self) -> Result<(), GrantError> {
        if self.client_id.is_empty() {
            return Err(GrantError::InvalidRequest("client_id is required".into()));
        }
        match self.grant_type {
            GrantType::RefreshToken if self.refresh_material.is_none() => {
                Err(GrantError::InvalidRequest("refresh_token grant requires the previous token".into()))
            }
            GrantType::RefreshToken => Ok(()),
            _ if self.client_secret.is_none() => Err(GrantError::BadCredentials),
            _ if self.aud.is_empty() => Err(GrantError::InvalidAudience(String::new())),
            _ => Ok(()),
        }
    }

    /// Document form, usable for both CBOR and JSON bodies.
    pub fn to_cbor(&self) -> CborValue {
        let mut e = vec![
            (CborValue::text("grant_type"), CborValue::text(self.grant_type.as_str())),
            (CborValue::text("client_id"), CborValue::text(&self.client_id)),
        ];
        if !self.aud.is_empty() {
            e.push((CborValue::text("aud"), CborValue::text(&self.aud)));
        }
        if let Some(secret) = &self.client_secret {
            e.push((CborValue::text("client_secret"), CborValue::text(secret)));
        }
        if let Some(scope) = &self.scope {
            e.push((CborValue::text("scope"), CborValue::Array(scope.iter().map(CborValue::text).collect())));
        }
        if let Some(user) = &self.username {
            e.push((CborValue::text("username"), CborValue::text(user)));
        }
        if let Some(material) = &self.refresh_material {
            e.push((CborValue::text("refresh_token"), CborValue::Bytes(material.clone())));
        }
        if let Some(key) = &self.pop_key {
            e.push((CborValue::text("cnf"), key.to_cnf()));
        }
        if let Some(format) = self.format {
            let f = match format {
                TokenFormat::Jwt => "jwt",
                TokenFormat::Cwt => "cwt",
            };
            e.push((CborValue::text("token_format"), CborValue::text(f)));
        }
        CborValue::Map(e)
    }

    /// Parses a request document. Unknown fields are ignored.
    pub fn from_cbor(doc: &CborValue) -> Result<Self, GrantError> {
        if doc.as_map().is_none() {
            return Err(GrantError::InvalidRequest("request body must be a map".into()));
        }
        let text = |key: &str| -> Result<Option<String>, GrantError> {
            match doc.get(key) {
                None | Some(CborValue::Null) => Ok(None),
                Some(CborValue::Text(s)) => Ok(Some(s.clone())),
                Some(_) => Err(GrantError::InvalidRequest(format!("{key} must be text"))),
            }
        };
        let grant_type: GrantType = text("grant_type")?
            .ok_or_else(|| GrantError::InvalidRequest("grant_type is required".into()))?
            .parse()?;
        let scope = match doc.get("scope") {
            None | Some(CborValue::Null) => None,
            Some(CborValue::Text(s)) => Some(s.split_whitespace().map(str::to_owned).collect()),
            Some(CborValue::Array(items)) => Some(
                items
                    .iter()
                    .map(|v| v.as_text().map(str::to_owned))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| GrantError::InvalidRequest("scope entries must be text".into()))?,
            ),
            Some(_) => return Err(GrantError::InvalidRequest("scope must be text or an array".into())),
        };
        let refresh_material = match doc.get("refresh_token") {
            None | Some(CborValue::Null) => None,
            // JSON carries the previous token as its bearer text.
            Some(CborValue::Text(s)) => {
                Some(wire_from_bearer(s).map_err(|_| GrantError::InvalidRequest("refresh_token is not a token".into()))?)
            }
            Some(v) => Some(bytes_field(v).map_err(|e| GrantError::InvalidRequest(e.to_string()))?),
        };
        let pop_key = doc
            .get("cnf")
            .map(CoseKey::from_cnf)
            .transpose()
            .map_err(|e| GrantError::InvalidRequest(e.to_string()))?;
        let format = match text("token_format")?.as_deref() {
            None => None,
            Some("jwt" | "JWT") => Some(TokenFormat::Jwt),
            Some("cwt" | "CWT") => Some(TokenFormat::Cwt),
            Some(other) => return Err(GrantError::InvalidRequest(format!("unknown token_format {other}"))),
        };
        Ok(GrantRequest {
            grant_type,
            client_id: text("client_id")?.unwrap_or_default(),
            client_secret: text("client_secret")?,
            aud: text("aud")?.unwrap_or_default(),
            scope,
            refresh_material,
            pop_key,
            username: match text("username")? {
                Some(u) => Some(u),
                None => text("user_name")?,
            },
            format,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AccessToken {
    /// COSE_Mac0 bytes.
    Cwt(Vec<u8>),
    /// Compact JWT.
    Jwt(String),
}

impl AccessToken {
    pub fn wire(&self) -> Vec<u8> {
        match self {
            AccessToken::Cwt(b) => b.clone(),
            AccessToken::Jwt(s) => s.as_bytes().to_vec(),
        }
    }

    pub fn bearer(&self) -> String {
        match self {
            AccessToken::Cwt(b) => base64url_encode(b),
            AccessToken::Jwt(s) => s.clone(),
        }
    }
}

/// The token endpoint's success response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenResponse {
    pub access_token: AccessToken,
    pub token_type: String,
    pub expires_in: u64,
    pub profile: Option<String>,
    pub csp: Option<String>,
    pub cnf: Option<CoseKey>,
}

impl TokenResponse {
    pub fn to_cbor(&self) -> CborValue {
        let token = match &self.access_token {
            AccessToken::Cwt(b) => CborValue::Bytes(b.clone()),
            AccessToken::Jwt(s) => CborValue::text(s),
        };
        let mut e = vec![
            (CborValue::text("access_token"), token),
            (CborValue::text("token_type"), CborValue::text(&self.token_type)),
            (CborValue::text("expires_in"), CborValue::Unsigned(self.expires_in)),
        ];
        if let Some(p) = &self.profile {
            e.push((CborValue::text("profile"), CborValue::text(p)));
        }
        if let Some(c) = &self.csp {
            e.push((CborValue::text("csp"), CborValue::text(c)));
        }
        if let Some(k) = &self.cnf {
            e.push((CborValue::text("cnf"), k.to_cnf()));
        }
        CborValue::Map(e)
    }

    pub fn from_cbor(doc: &CborValue) -> Result<Self, GrantError> {
        let bad = |m: &str| GrantError::InvalidRequest(m.to_owned());
        let access_token = match doc.get("access_token") {
            Some(CborValue::Bytes(b)) => AccessToken::Cwt(b.clone()),
            Some(CborValue::Text(s)) if s.contains('.') => AccessToken::Jwt(s.clone()),
            Some(CborValue::Text(s)) => {
                AccessToken::Cwt(wire_from_bearer(s).map_err(|_| bad("access_token is not a token"))?)
            }
            _ => return Err(bad("missing access_token")),
        };
        let expires_in = match doc.get("expires_in") {
            Some(CborValue::Unsigned(v)) => *v,
            // Shown as a string in some deployments.
            Some(CborValue::Text(s)) => s.parse().map_err(|_| bad("expires_in is not a number"))?,
            _ => return Err(bad("missing expires_in")),
        };
        let text = |key: &str| doc.get(key).and_then(CborValue::as_text).map(str::to_owned);
        Ok(TokenResponse {
            access_token,
            token_type: text("token_type").ok_or_else(|| bad("missing token_type"))?,
            expires_in,
            profile: text("profile"),
            csp: text("csp"),
            cnf: doc.get("cnf").map(CoseKey::from_cnf).transpose().map_err(|e| bad(&e.to_string()))?,
        })
    }
}

/// Result of a successful grant: the wire response and the token it carries.
#[derive(Debug, Clone)]
pub struct GrantOutcome {
    pub response: TokenResponse,
    pub token: CapabilityToken,
}

/// Authenticates the client, applies its grant policy and issues a token.
pub fn handle_grant(
    request: &GrantRequest,
    issuer_key: &CoseKey,
    clients: &ClientDirectory,
    now: UnixSeconds,
) -> Result<GrantOutcome, GrantError> {
    let client = clients
        .get(&request.client_id)
        .ok_or_else(|| GrantError::UnknownClient(request.client_id.clone()))?;
    if !client.allows_grant(request.grant_type) {
        return Err(GrantError::UnsupportedGrantType(request.grant_type.to_string()));
    }
    request.validate()?;

    let mut rng = rand::thread_rng();
    let (aud, scope, cnf) = match request.grant_type {
        GrantType::RefreshToken => {
            let material = request.refresh_material.as_deref().unwrap_or_default();
            let prior = inspect_token(material, issuer_key).map_err(|_| GrantError::BadCredentials)?;
            if prior.claims.client_id != request.client_id {
                return Err(GrantError::BadCredentials);
            }
            if let Some(secret) = &request.client_secret {
                if !client.verify_secret(secret) {
                    return Err(GrantError::BadCredentials);
                }
            }
            let aud = if request.aud.is_empty() { prior.claims.aud } else { request.aud.clone() };
            let scope = request.scope.clone().unwrap_or(prior.claims.scope);
            let cnf = match &request.pop_key {
                Some(key) => key.clone(),
                None => CoseKey::generate_symmetric(&mut rng),
            };
            (aud, scope, cnf)
        }
        _ => {
            let secret = request.client_secret.as_deref().unwrap_or_default();
            if !client.verify_secret(secret) {
                return Err(GrantError::BadCredentials);
            }
            let scope = request.scope.clone().unwrap_or_else(|| client.default_scope.clone());
            (request.aud.clone(), scope, CoseKey::generate_symmetric(&mut rng))
        }
    };
    issue(request, client, aud, scope, cnf, issuer_key, clients, now)
}

/// Issues a token for a client that already proved possession of the key
/// confirmed by one of its live tokens for audience `prior_aud`.
/// The proof stands in for the client secret. The new token is bound to the
/// request's `cnf` key, or to a fresh symmetric key.
pub fn handle_pop_grant(
    request: &GrantRequest,
    prior_aud: &str,
    issuer_key: &CoseKey,
    clients: &ClientDirectory,
    now: UnixSeconds,
) -> Result<GrantOutcome, GrantError> {
    let client = clients
        .get(&request.client_id)
        .ok_or_else(|| GrantError::UnknownClient(request.client_id.clone()))?;
    if !client.allows_grant(GrantType::RefreshToken) {
        return Err(GrantError::UnsupportedGrantType(GrantType::RefreshToken.to_string()));
    }
    let aud = if request.aud.is_empty() { prior_aud.to_owned() } else { request.aud.clone() };
    let scope = request.scope.clone().unwrap_or_else(|| client.default_scope.clone());
    let cnf = match &request.pop_key {
        Some(key) => key.clone(),
        None => CoseKey::generate_symmetric(&mut rand::thread_rng()),
    };
    let mut request = request.clone();
    request.grant_type = GrantType::RefreshToken;
    issue(&request, client, aud, scope, cnf, issuer_key, clients, now)
}

#[allow(clippy::too_many_arguments)]
fn issue(
    request: &GrantRequest,
    client: &ClientEntry,
    aud: String,
    scope: Vec<String>,
    cnf: CoseKey,
    issuer_key: &CoseKey,
    clients: &ClientDirectory,
    now: UnixSeconds,
) -> Result<GrantOutcome, GrantError> {
    let mut rng = rand::thread_rng();
    if !client.allows_audience(&aud) {
        return Err(GrantError::InvalidAudience(aud));
    }
    if scope.is_empty() {
        return Err(GrantError::InvalidScope("empty scope".into()));
    }
    if let Some(extra) = scope.iter().find(|s| !client.default_scope.contains(s)) {
        return Err(GrantError::InvalidScope(extra.clone()));
    }

    let ttl = clients.ttl_for(client);
    let claims = ClaimSet {
        aud,
        user_name: request.username.clone(),
        scope,
        exp: now + ttl as i64,
        iat: Some(now),
        authorities: client.authorities.clone(),
        jti: new_jti(&mut rng),
        client_id: request.client_id.clone(),
    };
    let format = request.format.unwrap_or(match request.grant_type {
        GrantType::Password => TokenFormat::Jwt,
        _ => TokenFormat::Cwt,
    });
    let (token, access_token, cnf) = match format {
        TokenFormat::Jwt => {
            let token = issue_jwt(&claims, issuer_key, now)?;
            let text = token.bearer();
            (token, AccessToken::Jwt(text), None)
        }
        TokenFormat::Cwt => {
            let token = issue_cwt(&claims, &cnf, issuer_key, now)?;
            let wire = token.wire.clone();
            (token, AccessToken::Cwt(wire), Some(cnf))
        }
    };
    let (profile, csp) = match request.grant_type {
        GrantType::SymmetricKey | GrantType::RefreshToken => (Some("coap_dtls".to_owned()), None),
        GrantType::ClientCredentials | GrantType::Password => (None, Some("DTLS".to_owned())),
    };
    Ok(GrantOutcome {
        response: TokenResponse { access_token, token_type: "Bearer".into(), expires_in: ttl, profile, csp, cnf },
        token,
    })
}

/// 16 hex characters.
pub(crate) fn new_jti(rng: &mut impl RngCore) -> String {
    format!("{:016x}", rng.next_u64())
}
