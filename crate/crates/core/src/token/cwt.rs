//! CWT issuance wrapped in a COSE_Mac0 structure.
//!
//! Wire layout: `17([protected: bstr {1: 5, 4: kid}, unprotected: {}, payload: bstr, tag: bstr])`
//! where the tag is HMAC-SHA256 over the COSE `MAC_structure`
//! `["MAC0", protected, h'', payload]`. The kid lives in the protected header
//! so that every byte of the token is covered by the tag.

use crate::codec::{decode_cbor, encode_cbor, CborValue};
use crate::UnixSeconds;

use super::mac::{hmac_sha256, hmac_sha256_verify};
use super::{check_issuer_key, validate_for_issue, CapabilityToken, ClaimSet, CoseKey, Opened, TokenError, TokenFormat};

pub const COSE_MAC0_TAG: u64 = 17;
const LABEL_ALG: u64 = 1;
const LABEL_KID: u64 = 4;
const ALG_HMAC_256_256: u64 = 5;

/// A parsed COSE_Mac0 object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoseMac0 {
    pub protected: Vec<u8>,
    pub kid: Option<Vec<u8>>,
    pub payload: Vec<u8>,
    pub tag: Vec<u8>,
}

impl CoseMac0 {
    /// MACs `payload` under `key` (HS256).
    pub fn seal(payload: Vec<u8>, key: &CoseKey) -> Result<Self, TokenError> {
        let secret = check_issuer_key(key)?;
        let mut header = vec![(CborValue::Unsigned(LABEL_ALG), CborValue::Unsigned(ALG_HMAC_256_256))];
        let kid = (!key.kid.is_empty()).then(|| key.kid.clone());
        if let Some(kid) = &kid {
            header.push((CborValue::Unsigned(LABEL_KID), CborValue::Bytes(kid.clone())));
        }
        let protected = encode_cbor(&CborValue::Map(header)).expect("header encodes");
        let tag = hmac_sha256(secret, &mac_structure(&protected, &payload));
        Ok(CoseMac0 { protected, kid, payload, tag })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let item = CborValue::Tagged(
            COSE_MAC0_TAG,
            Box::new(CborValue::Array(vec![
                CborValue::Bytes(self.protected.clone()),
                CborValue::Map(vec![]),
                CborValue::Bytes(self.payload.clone()),
                CborValue::Bytes(self.tag.clone()),
            ])),
        );
        encode_cbor(&item).expect("COSE_Mac0 encodes")
    }

    pub fn parse(wire: &[u8]) -> Result<Self, TokenError> {
        let malformed = |m: &str| TokenError::MalformedToken(format!("COSE_Mac0 {m}"));
        let item = decode_cbor(wire).map_err(|e| TokenError::MalformedToken(e.to_string()))?;
        let CborValue::Tagged(COSE_MAC0_TAG, inner) = item else {
            return Err(TokenError::UnknownFormat);
        };
        let [protected, unprotected, payload, tag] = inner.as_array().ok_or_else(|| malformed("is not an array"))? else {
            return Err(malformed("must have four elements"));
        };
        let protected = protected.as_bytes().ok_or_else(|| malformed("protected header is not bytes"))?.to_vec();
        let header = decode_cbor(&protected).map_err(|_| malformed("protected header is not CBOR"))?;
        let header = header.as_map().ok_or_else(|| malformed("protected header is not a map"))?;
        let label = |l: u64| header.iter().find(|(k, _)| *k == CborValue::Unsigned(l)).map(|(_, v)| v);
        match label(LABEL_ALG) {
            Some(CborValue::Unsigned(ALG_HMAC_256_256)) => {}
            Some(other) => return Err(TokenError::UnsupportedAlgorithm(other.to_string())),
            None => return Err(malformed("protected header lacks alg")),
        }
        let kid = label(LABEL_KID)
            .map(|v| v.as_bytes().map(<[u8]>::to_vec).ok_or_else(|| malformed("kid is not bytes")))
            .transpose()?;
        if unprotected.as_map().is_none() {
            return Err(malformed("unprotected header is not a map"));
        }
        Ok(CoseMac0 {
            protected,
            kid,
            payload: payload.as_bytes().ok_or_else(|| malformed("payload is not bytes"))?.to_vec(),
            tag: tag.as_bytes().ok_or_else(|| malformed("tag is not bytes"))?.to_vec(),
        })
    }

    pub fn verify(&self, secret: &[u8]) -> bool {
        hmac_sha256_verify(secret, &mac_structure(&self.protected, &self.payload), &self.tag)
    }
}

fn mac_structure(protected: &[u8], payload: &[u8]) -> Vec<u8> {
    encode_cbor(&CborValue::Array(vec![
        CborValue::text("MAC0"),
        CborValue::Bytes(protected.to_vec()),
        CborValue::Bytes(Vec::new()),
        CborValue::Bytes(payload.to_vec()),
    ]))
    .expect("MAC structure encodes")
}

/// Issues a CWT whose payload is the claim map plus `cnf: {COSE_Key: cnf}`.
pub fn issue_cwt(claims: &ClaimSet, cnf: &CoseKey, key: &CoseKey, now: UnixSeconds) -> Result<CapabilityToken, TokenError> {
    check_issuer_key(key)?;
    validate_for_issue(claims, now)?;
    cnf.validate()?;
    let mut entries = claims.to_entries();
    entries.push((CborValue::text("cnf"), cnf.to_cnf()));
    let payload = encode_cbor(&CborValue::Map(entries)).map_err(|e| TokenError::InvalidClaims(e.to_string()))?;
    let sealed = CoseMac0::seal(payload, key)?;
    let wire = sealed.to_bytes();
    Ok(CapabilityToken {
        format: TokenFormat::Cwt,
        claims: claims.clone(),
        cnf: Some(cnf.clone()),
        mac: sealed.tag,
        wire,
    })
}

pub(super) fn open(wire: &[u8], secret: &[u8]) -> Result<Opened, TokenError> {
    let sealed = CoseMac0::parse(wire)?;
    let doc = decode_cbor(&sealed.payload).map_err(|e| TokenError::MalformedToken(e.to_string()))?;
    let claims = ClaimSet::from_cbor(&doc)?;
    let cnf = doc
        .get("cnf")
        .map(CoseKey::from_cnf)
        .transpose()
        .map_err(|e| TokenError::MalformedToken(e.to_string()))?;
    let mac_ok = sealed.verify(secret);
    Ok(Opened {
        token: CapabilityToken { format: TokenFormat::Cwt, claims, cnf, mac: sealed.tag, wire: wire.to_vec() },
        mac_ok,
    })
}
