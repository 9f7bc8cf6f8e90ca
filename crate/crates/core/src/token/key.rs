use rand::{CryptoRng, RngCore};

use crate::codec::{base64url_decode, base64url_encode, CborValue};

use super::TokenError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KeyType {
    /// Symmetric key material. Both "Symmetric" and "oct" spellings decode to this.
    Oct,
    Ec2,
}

impl KeyType {
    pub fn as_str(self) -> &'static str {
        match self {
            KeyType::Oct => "oct",
            KeyType::Ec2 => "EC2",
        }
    }

    fn parse(v: &CborValue) -> Result<Self, TokenError> {
        match v {
            CborValue::Text(s) => match s.as_str() {
                "oct" | "Oct" | "OCT" | "Symmetric" | "symmetric" => Ok(KeyType::Oct),
                "EC" | "EC2" | "ec2" => Ok(KeyType::Ec2),
                other => Err(TokenError::InvalidKey(format!("unknown kty {other}"))),
            },
            // COSE registry values.
            CborValue::Unsigned(4) => Ok(KeyType::Oct),
            CborValue::Unsigned(2) => Ok(KeyType::Ec2),
            other => Err(TokenError::InvalidKey(format!("unknown kty {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MacAlgorithm {
    HS256,
}

impl MacAlgorithm {
    pub fn as_str(self) -> &'static str {
        "HS256"
    }

    fn parse(v: &CborValue) -> Result<Self, TokenError> {
        match v {
            CborValue::Text(s) if s == "HS256" => Ok(MacAlgorithm::HS256),
            // COSE "HMAC 256/256".
            CborValue::Unsigned(5) => Ok(MacAlgorithm::HS256),
            other => Err(TokenError::UnsupportedAlgorithm(other.to_string())),
        }
    }
}

/// A COSE_Key description, as carried in a `cnf` claim or used as issuer key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoseKey {
    pub kty: KeyType,
    pub kid: Vec<u8>,
    pub alg: Option<MacAlgorithm>,
    pub k: Option<Vec<u8>>,
    pub crv: Option<String>,
    pub x: Option<Vec<u8>>,
    pub y: Option<Vec<u8>>,
}

impl CoseKey {
    pub fn symmetric(kid: impl Into<Vec<u8>>, k: impl Into<Vec<u8>>) -> Self {
        CoseKey {
            kty: KeyType::Oct,
            kid: kid.into(),
            alg: Some(MacAlgorithm::HS256),
            k: Some(k.into()),
            crv: None,
            x: None,
            y: None,
        }
    }

    pub fn ec2(kid: impl Into<Vec<u8>>, crv: &str, x: Vec<u8>, y: Vec<u8>) -> Self {
        CoseKey {
            kty: KeyType::Ec2,
            kid: kid.into(),
            alg: None,
            k: None,
            crv: Some(crv.to_owned()),
            x: Some(x),
            y: Some(y),
        }
    }

    /// Fresh HS256 key with an 8-byte kid and a 32-byte secret.
    pub fn generate_symmetric<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut kid = [0u8; 8];
        let mut k = [0u8; 32];
        rng.fill_bytes(&mut kid);
        rng.fill_bytes(&mut k);
        CoseKey::symmetric(kid.to_vec(), k.to_vec())
    }

    pub fn validate(&self) -> Result<(), TokenError> {
        match self.kty {
            KeyType::Oct => match &self.k {
                Some(k) if !k.is_empty() => Ok(()),
                _ => Err(TokenError::InvalidKey("symmetric key without k".into())),
            },
            KeyType::Ec2 => {
                if self.crv.is_some() && self.x.is_some() && self.y.is_some() {
                    Ok(())
                } else {
                    Err(TokenError::InvalidKey("EC2 key requires crv, x and y".into()))
                }
            }
        }
    }

    /// The secret for HMAC use; fails for keys that cannot MAC.
    pub fn mac_secret(&self) -> Result<&[u8], TokenError> {
        if self.kty != KeyType::Oct {
            return Err(TokenError::UnsupportedAlgorithm(format!("{} keys cannot MAC", self.kty.as_str())));
        }
        match &self.k {
            Some(k) if !k.is_empty() => Ok(k),
            _ => Err(TokenError::InvalidKey("symmetric key without k".into())),
        }
    }

    /// Copy without secret material, safe to log or display.
    pub fn public_view(&self) -> CoseKey {
        CoseKey { k: None, ..self.clone() }
    }

    pub fn to_cbor(&self) -> CborValue {
        let mut entries = vec![
            (CborValue::text("kty"), CborValue::text(self.kty.as_str())),
            (CborValue::text("kid"), CborValue::Bytes(self.kid.clone())),
        ];
        if let Some(alg) = self.alg {
            entries.push((CborValue::text("alg"), CborValue::text(alg.as_str())));
        }
        if let Some(k) = &self.k {
            entries.push((CborValue::text("k"), CborValue::Bytes(k.clone())));
        }
        if let Some(crv) = &self.crv {
            entries.push((CborValue::text("crv"), CborValue::text(crv)));
        }
        if let Some(x) = &self.x {
            entries.push((CborValue::text("x"), CborValue::Bytes(x.clone())));
        }
        if let Some(y) = &self.y {
            entries.push((CborValue::text("y"), CborValue::Bytes(y.clone())));
        }
        CborValue::Map(entries)
    }

    pub fn from_cbor(doc: &CborValue) -> Result<Self, TokenError> {
        if doc.as_map().is_none() {
            return Err(TokenError::InvalidKey("COSE_Key is not a map".into()));
        }
        let kty = KeyType::parse(doc.get("kty").ok_or_else(|| TokenError::InvalidKey("missing kty".into()))?)?;
        let bytes = |key: &str| doc.get(key).map(bytes_field).transpose();
        let key = CoseKey {
            kty,
            kid: bytes("kid")?.unwrap_or_default(),
            alg: doc.get("alg").map(MacAlgorithm::parse).transpose()?,
            k: bytes("k")?,
            crv: match doc.get("crv") {
                None => None,
                Some(v) => Some(
                    v.as_text()
                        .ok_or_else(|| TokenError::InvalidKey("crv must be text".into()))?
                        .to_owned(),
                ),
            },
            x: bytes("x")?,
            y: bytes("y")?,
        };
        key.validate()?;
        Ok(key)
    }

    /// `{"COSE_Key": {...}}`, the confirmation claim body.
    pub fn to_cnf(&self) -> CborValue {
        CborValue::Map(vec![(CborValue::text("COSE_Key"), self.to_cbor())])
    }

    pub fn from_cnf(doc: &CborValue) -> Result<Self, TokenError> {
        let inner = doc
            .get("COSE_Key")
            .ok_or_else(|| TokenError::InvalidKey("cnf without COSE_Key".into()))?;
        CoseKey::from_cbor(inner)
    }

    /// JSON key file form: `{"kty": "oct", "kid": "<b64url>", "k": "<b64url>", ...}`.
    pub fn to_json(&self) -> serde_json::Value {
        crate::codec::cbor_to_json(&self.to_cbor()).expect("key maps have text keys")
    }

    pub fn from_json(doc: &serde_json::Value) -> Result<Self, TokenError> {
        let cbor = crate::codec::json_to_cbor(doc).map_err(|e| TokenError::InvalidKey(e.to_string()))?;
        CoseKey::from_cbor(&cbor)
    }
}

/// Byte-valued fields travel as byte strings in CBOR and base64url text in JSON.
pub(crate) fn bytes_field(v: &CborValue) -> Result<Vec<u8>, TokenError> {
    match v {
        CborValue::Bytes(b) => Ok(b.clone()),
        CborValue::Text(s) => base64url_decode(s).map_err(|e| TokenError::InvalidKey(e.to_string())),
        other => Err(TokenError::InvalidKey(format!("expected bytes, found {other}"))),
    }
}

impl std::fmt::Display for CoseKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.kty.as_str(), base64url_encode(&self.kid))
    }
}
