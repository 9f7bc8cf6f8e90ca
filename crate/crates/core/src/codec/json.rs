//! Bridge between the CBOR data model and JSON documents.
//!
//! Request and response documents are built once as [`CborValue`] maps and
//! rendered to either content type. Byte strings become base64url text in
//! JSON; parsers that expect bytes accept either form.

use serde_json::{Map, Number, Value};
use thiserror::Error;

use super::cbor::CborValue;
use super::base64url::base64url_encode;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JsonBridgeError {
    #[error("floating point numbers are not supported")]
    Float,
    #[error("map keys must be text to render as JSON")]
    NonTextKey,
}

pub fn cbor_to_json(value: &CborValue) -> Result<Value, JsonBridgeError> {
    Ok(match value {
        CborValue::Unsigned(v) => Value::Number(Number::from(*v)),
        CborValue::Negative(_) => {
            let v = value.as_integer().unwrap();
            match i64::try_from(v) {
                Ok(v) => Value::Number(Number::from(v)),
                Err(_) => Value::String(v.to_string()),
            }
        }
        CborValue::Bytes(b) => Value::String(base64url_encode(b)),
        CborValue::Text(s) => Value::String(s.clone()),
        CborValue::Array(items) => Value::Array(items.iter().map(cbor_to_json).collect::<Result<_, _>>()?),
        CborValue::Map(entries) => {
            let mut map = Map::with_capacity(entries.len());
            for (k, v) in entries {
                let key = k.as_text().ok_or(JsonBridgeError::NonTextKey)?;
                map.insert(key.to_owned(), cbor_to_json(v)?);
            }
            Value::Object(map)
        }
        CborValue::Tagged(_, inner) => cbor_to_json(inner)?,
        CborValue::Bool(b) => Value::Bool(*b),
        CborValue::Null => Value::Null,
    })
}

pub fn json_to_cbor(value: &Value) -> Result<CborValue, JsonBridgeError> {
    Ok(match value {
        Value::Null => CborValue::Null,
        Value::Bool(b) => CborValue::Bool(*b),
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                CborValue::Unsigned(u)
            } else if let Some(i) = n.as_i64() {
                CborValue::integer(i as i128).expect("i64 fits")
            } else {
                return Err(JsonBridgeError::Float);
            }
        }
        Value::String(s) => CborValue::Text(s.clone()),
        Value::Array(items) => CborValue::Array(items.iter().map(json_to_cbor).collect::<Result<_, _>>()?),
        Value::Object(map) => CborValue::Map(
            map.iter()
                .map(|(k, v)| Ok((CborValue::Text(k.clone()), json_to_cbor(v)?)))
                .collect::<Result<_, JsonBridgeError>>()?,
        ),
    })
}
