use serde::{Deserialize, Serialize};

use crate::codec::CborValue;
use crate::UnixSeconds;

use super::TokenError;

/// The claims carried by a capability token, in both JWT and CWT form.
///
/// Field order is the rendering order of the JWT payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimSet {
    pub aud: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_name: Option<String>,
    pub scope: Vec<String>,
    pub exp: UnixSeconds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iat: Option<UnixSeconds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub authorities: Option<String>,
    pub jti: String,
    pub client_id: String,
}

impl ClaimSet {
    pub fn validate(&self) -> Result<(), TokenError> {
        if self.jti.is_empty() {
            return Err(TokenError::InvalidClaims("jti must not be empty".into()));
        }
        if self.scope.is_empty() {
            return Err(TokenError::InvalidClaims("scope must not be empty".into()));
        }
        if let Some(iat) = self.iat {
            if self.exp <= iat {
                return Err(TokenError::InvalidClaims("exp must be later than iat".into()));
            }
        }
        Ok(())
    }

    /// Claim map entries in rendering order.
    pub(crate) fn to_entries(&self) -> Vec<(CborValue, CborValue)> {
        let mut entries = vec![(CborValue::text("aud"), CborValue::text(&self.aud))];
        if let Some(user) = &self.user_name {
            entries.push((CborValue::text("user_name"), CborValue::text(user)));
        }
        entries.push((
            CborValue::text("scope"),
            CborValue::Array(self.scope.iter().map(CborValue::text).collect()),
        ));
        entries.push((CborValue::text("exp"), int(self.exp)));
        if let Some(iat) = self.iat {
            entries.push((CborValue::text("iat"), int(iat)));
        }
        if let Some(auth) = &self.authorities {
            entries.push((CborValue::text("authorities"), CborValue::text(auth)));
        }
        entries.push((CborValue::text("jti"), CborValue::text(&self.jti)));
        entries.push((CborValue::text("client_id"), CborValue::text(&self.client_id)));
        entries
    }

    pub fn to_cbor(&self) -> CborValue {
        CborValue::Map(self.to_entries())
    }

    /// Reads claims from a map, ignoring keys that are not claims (such as `cnf`).
    pub fn from_cbor(doc: &CborValue) -> Result<Self, TokenError> {
        if doc.as_map().is_none() {
            return Err(TokenError::MalformedToken("claims are not a map".into()));
        }
        let text = |key: &str| -> Result<Option<String>, TokenError> {
            match doc.get(key) {
                None | Some(CborValue::Null) => Ok(None),
                Some(CborValue::Text(s)) => Ok(Some(s.clone())),
                Some(_) => Err(TokenError::MalformedToken(format!("claim {key} is not text"))),
            }
        };
        let time = |key: &str| -> Result<Option<UnixSeconds>, TokenError> {
            match doc.get(key) {
                None | Some(CborValue::Null) => Ok(None),
                Some(v) => v
                    .as_integer()
                    .and_then(|i| i64::try_from(i).ok())
                    .map(Some)
                    .ok_or_else(|| TokenError::MalformedToken(format!("claim {key} is not an integer"))),
            }
        };
        let required = |key: &str, v: Option<String>| {
            v.ok_or_else(|| TokenError::MalformedToken(format!("missing claim {key}")))
        };
        let scope = match doc.get("scope") {
            Some(CborValue::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_text()
                        .map(str::to_owned)
                        .ok_or_else(|| TokenError::MalformedToken("scope entries must be text".into()))
                })
                .collect::<Result<Vec<_>, _>>()?,
            Some(CborValue::Text(s)) => s.split_whitespace().map(str::to_owned).collect(),
            _ => return Err(TokenError::MalformedToken("missing claim scope".into())),
        };
        Ok(ClaimSet {
            aud: required("aud", text("aud")?)?,
            user_name: text("user_name")?,
            scope,
            exp: time("exp")?.ok_or_else(|| TokenError::MalformedToken("missing claim exp".into()))?,
            iat: time("iat")?,
            authorities: text("authorities")?,
            jti: required("jti", text("jti")?)?,
            client_id: required("client_id", text("client_id")?)?,
        })
    }
}

fn int(v: i64) -> CborValue {
    CborValue::integer(v as i128).expect("i64 always fits")
}
