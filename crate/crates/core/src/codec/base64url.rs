//! base64url without padding (RFC 4648 §5), the JWT segment alphabet.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::{DecodeError, Engine};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Base64Error {
    #[error("character outside the base64url alphabet at offset {0}")]
    InvalidAlphabet(usize),
    #[error("input length is not a valid unpadded base64url length")]
    InvalidLength,
}

pub fn base64url_encode(bytes: &[u8]) -> String {
    URL_SAFE_NO_PAD.encode(bytes)
}

pub fn base64url_decode(text: &str) -> Result<Vec<u8>, Base64Error> {
    URL_SAFE_NO_PAD.decode(text).map_err(|e| match e {
        DecodeError::InvalidByte(offset, _) => Base64Error::InvalidAlphabet(offset),
        DecodeError::InvalidLastSymbol(offset, _) => Base64Error::InvalidAlphabet(offset),
        DecodeError::InvalidLength(_) => Base64Error::InvalidLength,
        DecodeError::InvalidPadding => Base64Error::InvalidAlphabet(text.find('=').unwrap_or(0)),
    })
}

/// How an encoded token segment is carried on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rendering {
    Base64Url,
    RawCbor,
}

/// Raw bytes of a token segment plus the form they travel in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSegment {
    pub raw: Vec<u8>,
    pub rendering: Rendering,
}

impl EncodedSegment {
    pub fn base64url(raw: Vec<u8>) -> Self {
        Self { raw, rendering: Rendering::Base64Url }
    }

    pub fn raw_cbor(raw: Vec<u8>) -> Self {
        Self { raw, rendering: Rendering::RawCbor }
    }

    /// Wire bytes for this segment.
    pub fn to_wire(&self) -> Vec<u8> {
        match self.rendering {
            Rendering::Base64Url => base64url_encode(&self.raw).into_bytes(),
            Rendering::RawCbor => self.raw.clone(),
        }
    }
}
