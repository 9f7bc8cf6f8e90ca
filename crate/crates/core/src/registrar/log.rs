//! Append-only operation log.
//!
//! One line per operation: `op,jti[,field=value]*`. Field values are
//! percent-encoded so commas, equals signs and newlines survive. Byte fields
//! are base64url. Purge lines carry `*` in the jti column.

use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, CONTROLS};
use thiserror::Error;

use super::TokenRecord;
use crate::codec::{base64url_decode, base64url_encode, decode_cbor, encode_cbor};
use crate::token::CoseKey;

const FIELD: &AsciiSet = &CONTROLS.add(b'%').add(b',').add(b'=').add(b' ');

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogEntry {
    Register(TokenRecord),
    Revoke(String),
    Purge(i64),
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line:?}: {reason}")]
pub struct LogParseError {
    pub line: String,
    pub reason: String,
}

pub trait OpLog: Send {
    fn append(&mut self, entry: &LogEntry) -> io::Result<()>;
}

/// Log file opened for append; every entry is flushed before the operation
/// is acknowledged.
pub struct FileOpLog {
    out: BufWriter<File>,
}

impl FileOpLog {
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(FileOpLog { out: BufWriter::new(file) })
    }
}

impl OpLog for FileOpLog {
    fn append(&mut self, entry: &LogEntry) -> io::Result<()> {
        writeln!(self.out, "{}", entry.to_line())?;
        self.out.flush()
    }
}

impl OpLog for Vec<String> {
    fn append(&mut self, entry: &LogEntry) -> io::Result<()> {
        self.push(entry.to_line());
        Ok(())
    }
}

fn enc(s: &str) -> String {
    utf8_percent_encode(s, FIELD).to_string()
}

impl LogEntry {
    pub fn to_line(&self) -> String {
        match self {
            LogEntry::Register(r) => {
                let mut line = format!(
                    "register,{},aud={},client_id={},issued_at={},exp={},revoked={}",
                    enc(&r.jti),
                    enc(&r.aud),
                    enc(&r.client_id),
                    r.issued_at,
                    r.exp,
                    r.revoked
                );
                if let Some(kid) = &r.cnf_kid {
                    line.push_str(&format!(",cnf_kid={}", base64url_encode(kid)));
                }
                if let Some(key) = &r.cnf_key {
                    let bytes = encode_cbor(&key.to_cbor()).expect("key maps encode");
                    line.push_str(&format!(",cnf_key={}", base64url_encode(&bytes)));
                }
                line
            }
            LogEntry::Revoke(jti) => format!("revoke,{}", enc(jti)),
            LogEntry::Purge(now) => format!("purge,*,now={now}"),
        }
    }

    pub fn parse(line: &str) -> Result<Self, LogParseError> {
        let fail = |reason: &str| LogParseError { line: line.to_owned(), reason: reason.to_owned() };
        let dec = |s: &str| {
            percent_decode_str(s)
                .decode_utf8()
                .map(|c| c.into_owned())
                .map_err(|_| fail("invalid percent-encoding"))
        };
        let mut parts = line.trim_end_matches(['\r', '\n']).split(',');
        let op = parts.next().ok_or_else(|| fail("empty line"))?;
        let jti = dec(parts.next().ok_or_else(|| fail("missing jti"))?)?;
        let mut fields = Vec::new();
        for part in parts {
            let (k, v) = part.split_once('=').ok_or_else(|| fail("field without '='"))?;
            fields.push((k, dec(v)?));
        }
        let field = |name: &str| fields.iter().find(|(k, _)| *k == name).map(|(_, v)| v.as_str());
        let int = |name: &str| -> Result<i64, LogParseError> {
            field(name)
                .ok_or_else(|| fail(&format!("missing {name}")))?
                .parse()
                .map_err(|_| fail(&format!("{name} is not an integer")))
        };
        match op {
            "register" => {
                let cnf_kid = field("cnf_kid")
                    .map(|s| base64url_decode(s).map_err(|_| fail("bad cnf_kid")))
                    .transpose()?;
                let cnf_key = field("cnf_key")
                    .map(|s| {
                        let bytes = base64url_decode(s).map_err(|_| fail("bad cnf_key"))?;
                        let doc = decode_cbor(&bytes).map_err(|_| fail("bad cnf_key"))?;
                        CoseKey::from_cbor(&doc).map_err(|_| fail("bad cnf_key"))
                    })
                    .transpose()?;
                Ok(LogEntry::Register(TokenRecord {
                    jti,
                    aud: field("aud").ok_or_else(|| fail("missing aud"))?.to_owned(),
                    client_id: field("client_id").ok_or_else(|| fail("missing client_id"))?.to_owned(),
                    issued_at: int("issued_at")?,
                    exp: int("exp")?,
                    revoked: match field("revoked") {
                        Some("true") => true,
                        Some("false") | None => false,
                        Some(_) => return Err(fail("revoked must be true or false")),
                    },
                    cnf_kid,
                    cnf_key,
                }))
            }
            "revoke" => Ok(LogEntry::Revoke(jti)),
            "purge" => Ok(LogEntry::Purge(int("now")?)),
            _ => Err(fail("unknown operation")),
        }
    }
}

#[cfg(test)]
#[derive(Clone, Default)]
pub(crate) struct SharedBuffer(std::sync::Arc<parking_lot::Mutex<Vec<String>>>);

#[cfg(test)]
impl SharedBuffer {
    pub(crate) fn contents(&self) -> String {
        self.0.lock().iter().map(|l| format!("{l}\n")).collect()
    }
}

#[cfg(test)]
impl OpLog for SharedBuffer {
    fn append(&mut self, entry: &LogEntry) -> io::Result<()> {
        self.0.lock().push(entry.to_line());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lines_round_trip() {
        let key = CoseKey::symmetric(b"k1".to_vec(), vec![9; 32]);
        let entries = [
            LogEntry::Register(TokenRecord {
                jti: "a,b=c%d\ne".into(),
                aud: "Vehicle 01".into(),
                client_id: "x".into(),
                issued_at: -5,
                exp: 100,
                revoked: true,
                cnf_kid: Some(key.kid.clone()),
                cnf_key: Some(key),
            }),
            LogEntry::Revoke("j,1".into()),
            LogEntry::Purge(1518074605),
        ];
        for e in entries {
            let line = e.to_line();
            assert!(!line.contains('\n'));
            assert_eq!(LogEntry::parse(&line).unwrap(), e);
        }
        assert_eq!(LogEntry::Revoke("abc".into()).to_line(), "revoke,abc");
    }

    #[test]
    fn rejects_garbage() {
        for line in ["", "frobnicate,x", "register,x,aud=a", "purge,*,now=soon", "revoke"] {
            assert!(LogEntry::parse(line).is_err(), "{line:?}");
        }
    }
}
