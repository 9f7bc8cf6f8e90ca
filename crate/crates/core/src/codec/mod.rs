//! Byte-level codecs shared by the token formats.

pub mod base64url;
pub mod cbor;
pub mod json;

pub use base64url::{base64url_decode, base64url_encode, Base64Error, EncodedSegment, Rendering};
pub use cbor::{decode_cbor, encode_cbor, CborError, CborValue};
pub use json::{cbor_to_json, json_to_cbor, JsonBridgeError};
