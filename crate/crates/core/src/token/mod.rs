//! Capability tokens: claim sets, COSE keys, JWT and CWT issuance and
//! verification, and the grant flows of the token endpoint.
//!
//! Both formats are integrity-protected with HMAC-SHA256 under the issuer's
//! symmetric key. A JWT is the usual `header.payload.tag` compact form; a CWT
//! is a tagged COSE_Mac0 structure whose payload is the CBOR claim map plus
//! an optional `cnf` proof-of-possession key.
//!
//! ```
//! use capodaz::token::{issue_jwt, verify_token, ClaimSet, CoseKey};
//!
//! let key = CoseKey::symmetric(b"issuer".to_vec(), vec![7u8; 32]);
//! let claims = ClaimSet {
//!     aud: "Vehicle01".into(),
//!     user_name: None,
//!     scope: vec!["read".into()],
//!     exp: 2_000,
//!     iat: Some(1_000),
//!     authorities: None,
//!     jti: "abc".into(),
//!     client_id: "CAPODAZ-client".into(),
//! };
//! let token = issue_jwt(&claims, &key, 1_000).unwrap();
//! assert_eq!(verify_token(&token.wire, &key, 1_500).unwrap(), claims);
//! ```

mod claims;
mod clients;
mod cwt;
mod grant;
mod jwt;
mod key;
mod mac;

use thiserror::Error;

use crate::codec::{base64url_decode, base64url_encode};
use crate::UnixSeconds;

pub use claims::ClaimSet;
pub use clients::{ClientDirectory, ClientEntry, ClientSpec};
pub use cwt::{issue_cwt, CoseMac0, COSE_MAC0_TAG};
pub use grant::{
    handle_grant, handle_pop_grant, AccessToken, GrantError, GrantOutcome, GrantRequest, GrantType, TokenResponse, DEFAULT_TOKEN_TTL,
};
pub use jwt::issue_jwt;
pub use key::{CoseKey, KeyType, MacAlgorithm};
pub use mac::{hmac_sha256, hmac_sha256_verify};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenError {
    #[error("unsupported algorithm: {0}")]
    UnsupportedAlgorithm(String),
    #[error("invalid claims: {0}")]
    InvalidClaims(String),
    #[error("invalid key: {0}")]
    InvalidKey(String),
    #[error("MAC does not verify")]
    MacMismatch,
    #[error("token expired")]
    Expired,
    #[error("malformed token: {0}")]
    MalformedToken(String),
    #[error("unrecognized token format")]
    UnknownFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenFormat {
    Jwt,
    Cwt,
}

/// An issued (or opened) capability token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapabilityToken {
    pub format: TokenFormat,
    pub claims: ClaimSet,
    pub cnf: Option<CoseKey>,
    /// HMAC-SHA256 tag.
    pub mac: Vec<u8>,
    /// Compact serialization: ASCII for JWT, CBOR for CWT.
    pub wire: Vec<u8>,
}

impl CapabilityToken {
    /// Text form for an `Authorization: Bearer` header. CWTs are base64url encoded.
    pub fn bearer(&self) -> String {
        match self.format {
            TokenFormat::Jwt => String::from_utf8(self.wire.clone()).expect("JWT wire is ASCII"),
            TokenFormat::Cwt => base64url_encode(&self.wire),
        }
    }
}

/// Turns a bearer credential back into wire bytes.
pub fn wire_from_bearer(bearer: &str) -> Result<Vec<u8>, TokenError> {
    let bearer = bearer.trim();
    if bearer.contains('.') {
        Ok(bearer.as_bytes().to_vec())
    } else {
        base64url_decode(bearer).map_err(|_| TokenError::UnknownFormat)
    }
}

/// Detects the format of raw wire bytes.
pub fn detect_format(wire: &[u8]) -> Result<TokenFormat, TokenError> {
    match wire.first() {
        // Tag 17 (COSE_Mac0) initial byte.
        Some(0xd1) => Ok(TokenFormat::Cwt),
        Some(_) if wire.iter().filter(|&&b| b == b'.').count() == 2 && wire.is_ascii() => Ok(TokenFormat::Jwt),
        _ => Err(TokenError::UnknownFormat),
    }
}

/// Parsed token with its MAC status, before any expiry decision.
struct Opened {
    token: CapabilityToken,
    mac_ok: bool,
}

fn open(wire: &[u8], key: &CoseKey) -> Result<Opened, TokenError> {
    let secret = key.mac_secret()?;
    match detect_format(wire)? {
        TokenFormat::Jwt => jwt::open(wire, secret),
        TokenFormat::Cwt => cwt::open(wire, secret),
    }
}

/// Verifies the MAC and returns the token without checking expiry.
///
/// Used where an expired token still has to be identified, e.g. to report
/// `Expired` rather than `Invalid`, or to refresh it.
pub fn inspect_token(wire: &[u8], key: &CoseKey) -> Result<CapabilityToken, TokenError> {
    let opened = open(wire, key)?;
    if opened.mac_ok {
        Ok(opened.token)
    } else {
        Err(TokenError::MacMismatch)
    }
}

/// Returns the claims iff the MAC verifies and `now < exp`.
///
/// Both checks always run; a MAC failure takes precedence in the error.
pub fn verify_token(wire: &[u8], key: &CoseKey, now: UnixSeconds) -> Result<ClaimSet, TokenError> {
    let opened = open(wire, key)?;
    let expired = now >= opened.token.claims.exp;
    match (opened.mac_ok, expired) {
        (false, _) => Err(TokenError::MacMismatch),
        (true, true) => Err(TokenError::Expired),
        (true, false) => Ok(opened.token.claims),
    }
}

pub(crate) fn validate_for_issue(claims: &ClaimSet, now: UnixSeconds) -> Result<(), TokenError> {
    claims.validate()?;
    if claims.exp <= now {
        return Err(TokenError::InvalidClaims("token would already be expired".into()));
    }
    Ok(())
}

pub(crate) fn check_issuer_key(key: &CoseKey) -> Result<&[u8], TokenError> {
    key.mac_secret()
}
