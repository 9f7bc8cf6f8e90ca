use crate::codec::{base64url_decode, base64url_encode, cbor_to_json, json_to_cbor};
use crate::UnixSeconds;

use super::mac::{hmac_sha256, hmac_sha256_verify};
use super::{check_issuer_key, validate_for_issue, CapabilityToken, ClaimSet, CoseKey, Opened, TokenError, TokenFormat};

const HEADER: &str = r#"{"alg":"HS256","typ":"JWT"}"#;

/// Issues an HS256 JWT. Claims that are already expired at `now` are rejected.
pub fn issue_jwt(claims: &ClaimSet, key: &CoseKey, now: UnixSeconds) -> Result<CapabilityToken, TokenError> {
    let secret = check_issuer_key(key)?;
    validate_for_issue(claims, now)?;
    let payload = cbor_to_json(&claims.to_cbor()).expect("claim maps have text keys");
    let signing_input = format!(
        "{}.{}",
        base64url_encode(HEADER.as_bytes()),
        base64url_encode(payload.to_string().as_bytes())
    );
    let mac = hmac_sha256(secret, signing_input.as_bytes());
    let wire = format!("{signing_input}.{}", base64url_encode(&mac)).into_bytes();
    Ok(CapabilityToken { format: TokenFormat::Jwt, claims: claims.clone(), cnf: None, mac, wire })
}

pub(super) fn open(wire: &[u8], secret: &[u8]) -> Result<Opened, TokenError> {
    let text = std::str::from_utf8(wire).map_err(|_| TokenError::UnknownFormat)?;
    let mut parts = text.split('.');
    let (Some(h), Some(p), Some(s), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err(TokenError::MalformedToken("JWT needs three segments".into()));
    };
    let malformed = |what: &str| TokenError::MalformedToken(format!("JWT {what}"));
    let header: serde_json::Value = serde_json::from_slice(&base64url_decode(h).map_err(|_| malformed("header encoding"))?)
        .map_err(|_| malformed("header JSON"))?;
    match header.get("alg").and_then(|a| a.as_str()) {
        Some("HS256") => {}
        Some(other) => return Err(TokenError::UnsupportedAlgorithm(other.to_owned())),
        None => return Err(malformed("header without alg")),
    }
    let payload: serde_json::Value =
        serde_json::from_slice(&base64url_decode(p).map_err(|_| malformed("payload encoding"))?)
            .map_err(|_| malformed("payload JSON"))?;
    let doc = json_to_cbor(&payload).map_err(|e| TokenError::MalformedToken(e.to_string()))?;
    let claims = ClaimSet::from_cbor(&doc)?;
    let mac = base64url_decode(s).map_err(|_| malformed("MAC encoding"))?;
    let signing_input = &text[..h.len() + 1 + p.len()];
    let mac_ok = hmac_sha256_verify(secret, signing_input.as_bytes(), &mac);
    Ok(Opened {
        token: CapabilityToken { format: TokenFormat::Jwt, claims, cnf: None, mac, wire: wire.to_vec() },
        mac_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;

    #[test]
    fn payload_decodes_to_the_input_claims() {
        let token = issue_jwt(&sample_claims(), &issuer_key(), 0).unwrap();
        let text = String::from_utf8(token.wire).unwrap();
        let payload = text.split('.').nth(1).unwrap();
        let json: serde_json::Value = serde_json::from_slice(&base64url_decode(payload).unwrap()).unwrap();
        assert_eq!(
            json,
            serde_json::json!({
                "aud": "Vehicle01", "user_name": "v01", "scope": ["read", "trust"], "exp": 1518074605,
                "authorities": "ROLE_USER", "jti": "1d3b890201", "client_id": "CAPODAZ-client"
            })
        );
    }

    #[test]
    fn rejects_foreign_algorithms() {
        let header = base64url_encode(br#"{"alg":"none"}"#);
        let payload = base64url_encode(serde_json::to_string(&sample_claims()).unwrap().as_bytes());
        let wire = format!("{header}.{payload}.");
        assert!(matches!(open(wire.as_bytes(), b"k"), Err(TokenError::UnsupportedAlgorithm(_))));
    }
}
