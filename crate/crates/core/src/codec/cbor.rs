//! A definite-length CBOR subset (RFC 7049) sufficient for CWT payloads.
//!
//! Supported: unsigned and negative integers up to 64 bits, byte and text
//! strings, arrays, maps, tags, `true`/`false` and `null`. Indefinite-length
//! items, floating point numbers and other simple values are rejected on
//! decode. Integers and lengths are always encoded in their shortest form.

use std::fmt;

use thiserror::Error;

const MAJOR_UNSIGNED: u8 = 0;
const MAJOR_NEGATIVE: u8 = 1;
const MAJOR_BYTES: u8 = 2;
const MAJOR_TEXT: u8 = 3;
const MAJOR_ARRAY: u8 = 4;
const MAJOR_MAP: u8 = 5;
const MAJOR_TAG: u8 = 6;
const MAJOR_SIMPLE: u8 = 7;

const SIMPLE_FALSE: u8 = 20;
const SIMPLE_TRUE: u8 = 21;
const SIMPLE_NULL: u8 = 22;

/// Nesting limit for decoding untrusted input.
pub const MAX_DEPTH: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CborError {
    #[error("integer {0} does not fit a 64-bit CBOR integer")]
    IntegerOutOfRange(i128),
    #[error("text string is not valid UTF-8")]
    InvalidUtf8,
    #[error("map contains a duplicate key")]
    DuplicateMapKey,
    #[error("input ended before the item was complete")]
    TruncatedInput,
    #[error("{0} bytes remain after the top-level item")]
    TrailingBytes(usize),
    #[error("unsupported CBOR feature: {0}")]
    UnsupportedMajorTypeFeature(&'static str),
    #[error("text string contains malformed UTF-8")]
    MalformedUtf8,
    #[error("nesting deeper than {MAX_DEPTH} levels")]
    NestingTooDeep,
}

/// The CBOR data model used for CWT payloads.
///
/// `Negative(n)` represents the integer `-1 - n`, mirroring the major type 1
/// wire form. Map entries keep their insertion order for encoding, but
/// equality treats maps as unordered.
#[derive(Debug, Clone)]
pub enum CborValue {
    Unsigned(u64),
    Negative(u64),
    Bytes(Vec<u8>),
    Text(String),
    Array(Vec<CborValue>),
    Map(Vec<(CborValue, CborValue)>),
    Tagged(u64, Box<CborValue>),
    Bool(bool),
    Null,
}

impl CborValue {
    /// Builds an integer value, picking the major type from the sign.
    pub fn integer(v: i128) -> Result<Self, CborError> {
        if v >= 0 {
            u64::try_from(v)
                .map(CborValue::Unsigned)
                .map_err(|_| CborError::IntegerOutOfRange(v))
        } else {
            u64::try_from(-1 - v)
                .map(CborValue::Negative)
                .map_err(|_| CborError::IntegerOutOfRange(v))
        }
    }

    pub fn text(s: impl Into<String>) -> Self {
        CborValue::Text(s.into())
    }

    /// Builds a text string from raw octets, validating UTF-8.
    pub fn text_from_utf8(bytes: Vec<u8>) -> Result<Self, CborError> {
        String::from_utf8(bytes)
            .map(CborValue::Text)
            .map_err(|_| CborError::InvalidUtf8)
    }

    /// Integer view of `Unsigned`/`Negative` values.
    pub fn as_integer(&self) -> Option<i128> {
        match *self {
            CborValue::Unsigned(v) => Some(v as i128),
            CborValue::Negative(n) => Some(-1 - n as i128),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            CborValue::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            CborValue::Bytes(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_array(&self) -> Option<&[CborValue]> {
        match self {
            CborValue::Array(items) => Some(items),
            _ => None,
        }
    }

    pub fn as_map(&self) -> Option<&[(CborValue, CborValue)]> {
        match self {
            CborValue::Map(entries) => Some(entries),
            _ => None,
        }
    }

    /// Looks up a text key in a map value.
    pub fn get(&self, key: &str) -> Option<&CborValue> {
        self.as_map()?
            .iter()
            .find(|(k, _)| k.as_text() == Some(key))
            .map(|(_, v)| v)
    }
}

impl PartialEq for CborValue {
    fn eq(&self, other: &Self) -> bool {
        use CborValue::*;
        match (self, other) {
            (Unsigned(a), Unsigned(b)) | (Negative(a), Negative(b)) => a == b,
            (Bytes(a), Bytes(b)) => a == b,
            (Text(a), Text(b)) => a == b,
            (Array(a), Array(b)) => a == b,
            (Map(a), Map(b)) => {
                a.len() == b.len()
                    && a.iter()
                        .all(|(ka, va)| b.iter().any(|(kb, vb)| ka == kb && va == vb))
            }
            (Tagged(ta, a), Tagged(tb, b)) => ta == tb && a == b,
            (Bool(a), Bool(b)) => a == b,
            (Null, Null) => true,
            _ => false,
        }
    }
}

impl Eq for CborValue {}

impl fmt::Display for CborValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CborValue::Unsigned(v) => write!(f, "{v}"),
            CborValue::Negative(n) => write!(f, "{}", -1 - *n as i128),
            CborValue::Bytes(b) => {
                f.write_str("h'")?;
                for byte in b {
                    write!(f, "{byte:02x}")?;
                }
                f.write_str("'")
            }
            CborValue::Text(s) => write!(f, "{s:?}"),
            CborValue::Array(items) => {
                f.write_str("[")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str("]")
            }
            CborValue::Map(entries) => {
                f.write_str("{")?;
                for (i, (k, v)) in entries.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{k}: {v}")?;
                }
                f.write_str("}")
            }
            CborValue::Tagged(tag, inner) => write!(f, "{tag}({inner})"),
            CborValue::Bool(b) => write!(f, "{b}"),
            CborValue::Null => f.write_str("null"),
        }
    }
}

/// Encodes `value` in shortest-form definite-length CBOR.
pub fn encode_cbor(value: &CborValue) -> Result<Vec<u8>, CborError> {
    let mut out = Vec::new();
    encode_into(value, &mut out)?;
    Ok(out)
}

fn encode_into(value: &CborValue, out: &mut Vec<u8>) -> Result<(), CborError> {
    match value {
        CborValue::Unsigned(v) => write_head(out, MAJOR_UNSIGNED, *v),
        CborValue::Negative(n) => write_head(out, MAJOR_NEGATIVE, *n),
        CborValue::Bytes(b) => {
            write_head(out, MAJOR_BYTES, b.len() as u64);
            out.extend_from_slice(b);
        }
        CborValue::Text(s) => {
            write_head(out, MAJOR_TEXT, s.len() as u64);
            out.extend_from_slice(s.as_bytes());
        }
        CborValue::Array(items) => {
            write_head(out, MAJOR_ARRAY, items.len() as u64);
            for item in items {
                encode_into(item, out)?;
            }
        }
        CborValue::Map(entries) => {
            write_head(out, MAJOR_MAP, entries.len() as u64);
            let mut seen: Vec<Vec<u8>> = Vec::with_capacity(entries.len());
            for (k, v) in entries {
                let key = encode_cbor(k)?;
                if seen.contains(&key) {
                    return Err(CborError::DuplicateMapKey);
                }
                out.extend_from_slice(&key);
                seen.push(key);
                encode_into(v, out)?;
            }
        }
        CborValue::Tagged(tag, inner) => {
            write_head(out, MAJOR_TAG, *tag);
            encode_into(inner, out)?;
        }
        CborValue::Bool(b) => out.push((MAJOR_SIMPLE << 5) | if *b { SIMPLE_TRUE } else { SIMPLE_FALSE }),
        CborValue::Null => out.push((MAJOR_SIMPLE << 5) | SIMPLE_NULL),
    }
    Ok(())
}

/// Writes an initial byte plus argument using the narrowest width.
fn write_head(out: &mut Vec<u8>, major: u8, arg: u64) {
    let m = major << 5;
    if arg < 24 {
        out.push(m | arg as u8);
    } else if arg <= u8::MAX as u64 {
        out.push(m | 24);
        out.push(arg as u8);
    } else if arg <= u16::MAX as u64 {
        out.push(m | 25);
        out.extend_from_slice(&(arg as u16).to_be_bytes());
    } else if arg <= u32::MAX as u64 {
        out.push(m | 26);
        out.extend_from_slice(&(arg as u32).to_be_bytes());
    } else {
        out.push(m | 27);
        out.extend_from_slice(&arg.to_be_bytes());
    }
}

/// Decodes exactly one CBOR item spanning the whole input.
pub fn decode_cbor(bytes: &[u8]) -> Result<CborValue, CborError> {
    let mut reader = Reader { buf: bytes, pos: 0 };
    let value = reader.item(0)?;
    match bytes.len() - reader.pos {
        0 => Ok(value),
        n => Err(CborError::TrailingBytes(n)),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CborError> {
        let end = self.pos.checked_add(n).ok_or(CborError::TruncatedInput)?;
        let slice = self.buf.get(self.pos..end).ok_or(CborError::TruncatedInput)?;
        self.pos = end;
        Ok(slice)
    }

    fn argument(&mut self, info: u8) -> Result<u64, CborError> {
        Ok(match info {
            0..=23 => info as u64,
            24 => self.take(1)?[0] as u64,
            25 => u16::from_be_bytes(self.take(2)?.try_into().unwrap()) as u64,
            26 => u32::from_be_bytes(self.take(4)?.try_into().unwrap()) as u64,
            27 => u64::from_be_bytes(self.take(8)?.try_into().unwrap()),
            28..=30 => return Err(CborError::UnsupportedMajorTypeFeature("reserved additional information")),
            _ => return Err(CborError::UnsupportedMajorTypeFeature("indefinite length")),
        })
    }

    fn length(&mut self, info: u8) -> Result<usize, CborError> {
        let len = self.argument(info)?;
        // Every element occupies at least one byte, so a declared length
        // larger than what remains can only be truncated input.
        let remaining = (self.buf.len() - self.pos) as u64;
        if len > remaining {
            return Err(CborError::TruncatedInput);
        }
        Ok(len as usize)
    }

    fn item(&mut self, depth: usize) -> Result<CborValue, CborError> {
        if depth > MAX_DEPTH {
            return Err(CborError::NestingTooDeep);
        }
        let initial = self.take(1)?[0];
        let major = initial >> 5;
        let info = initial & 0x1f;
        match major {
            MAJOR_UNSIGNED => Ok(CborValue::Unsigned(self.argument(info)?)),
            MAJOR_NEGATIVE => Ok(CborValue::Negative(self.argument(info)?)),
            MAJOR_BYTES => {
                let len = self.length(info)?;
                Ok(CborValue::Bytes(self.take(len)?.to_vec()))
            }
            MAJOR_TEXT => {
                let len = self.length(info)?;
                let raw = self.take(len)?;
                std::str::from_utf8(raw)
                    .map(|s| CborValue::Text(s.to_owned()))
                    .map_err(|_| CborError::MalformedUtf8)
            }
            MAJOR_ARRAY => {
                let len = self.length(info)?;
                let mut items = Vec::with_capacity(len);
                for _ in 0..len {
                    items.push(self.item(depth + 1)?);
                }
                Ok(CborValue::Array(items))
            }
            MAJOR_MAP => {
                let len = self.length(info)?;
                let mut entries: Vec<(CborValue, CborValue)> = Vec::with_capacity(len);
                let mut key_spans: Vec<&[u8]> = Vec::with_capacity(len);
                for _ in 0..len {
                    let start = self.pos;
                    let key = self.item(depth + 1)?;
                    let span = &self.buf[start..self.pos];
                    if key_spans.contains(&span) {
                        return Err(CborError::DuplicateMapKey);
                    }
                    key_spans.push(span);
                    let value = self.item(depth + 1)?;
                    entries.push((key, value));
                }
                Ok(CborValue::Map(entries))
            }
            MAJOR_TAG => {
                let tag = self.argument(info)?;
                Ok(CborValue::Tagged(tag, Box::new(self.item(depth + 1)?)))
            }
            _ => match info {
                SIMPLE_FALSE => Ok(CborValue::Bool(false)),
                SIMPLE_TRUE => Ok(CborValue::Bool(true)),
                SIMPLE_NULL => Ok(CborValue::Null),
                25..=27 => Err(CborError::UnsupportedMajorTypeFeature("floating point")),
                31 => Err(CborError::UnsupportedMajorTypeFeature("break outside indefinite item")),
                _ => Err(CborError::UnsupportedMajorTypeFeature("simple value")),
            },
        }
    }
}
