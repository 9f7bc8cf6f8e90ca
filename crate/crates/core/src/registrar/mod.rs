//! The token table.
//!
//! Every issued capability token is registered here. Resource servers look
//! tokens up by `jti`, challenge holders of proof-of-possession keys, and
//! operators revoke tokens. All operations serialize through one lock, so
//! concurrent callers observe a single total order; when an operation log is
//! attached, entries are appended inside the same critical section.
//!
//! A token is live on the half-open interval `[issued_at, exp)`. Revocation
//! is permanent and dominates expiry; only [`Registrar::purge_expired`]
//! removes records.

mod log;

use std::collections::HashMap;
use std::io::{self, BufRead, Write};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use rand::RngCore;
use thiserror::Error;

use crate::clock::Clock;
use crate::token::{hmac_sha256_verify, CapabilityToken, CoseKey};
use crate::UnixSeconds;

pub use log::{FileOpLog, LogEntry, LogParseError, OpLog};

/// Default lifetime of a proof-of-possession challenge.
pub const DEFAULT_CHALLENGE_TTL: u64 = 30;
/// Minimum nonce length in bytes.
pub const NONCE_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenStatus {
    Active,
    Revoked,
    Expired,
    Unknown,
}

impl TokenStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenStatus::Active => "active",
            TokenStatus::Revoked => "revoked",
            TokenStatus::Expired => "expired",
            TokenStatus::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenRecord {
    pub jti: String,
    pub aud: String,
    pub client_id: String,
    pub issued_at: UnixSeconds,
    pub exp: UnixSeconds,
    pub revoked: bool,
    pub cnf_kid: Option<Vec<u8>>,
    pub cnf_key: Option<CoseKey>,
}

impl TokenRecord {
    pub fn from_token(token: &CapabilityToken, issued_at: UnixSeconds) -> Self {
        let claims = &token.claims;
        TokenRecord {
            jti: claims.jti.clone(),
            aud: claims.aud.clone(),
            client_id: claims.client_id.clone(),
            issued_at: claims.iat.unwrap_or(issued_at),
            exp: claims.exp,
            revoked: false,
            cnf_kid: token.cnf.as_ref().map(|k| k.kid.clone()),
            cnf_key: token.cnf.clone(),
        }
    }

    fn status(&self, now: UnixSeconds) -> TokenStatus {
        if self.revoked {
            TokenStatus::Revoked
        } else if now >= self.exp {
            TokenStatus::Expired
        } else {
            TokenStatus::Active
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Challenge {
    pub jti: String,
    pub nonce: Vec<u8>,
    pub issued_at: UnixSeconds,
    pub ttl: u64,
}

#[derive(Debug, Error)]
pub enum RegistrarError {
    #[error("jti {0} is already registered")]
    DuplicateJti(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("unknown jti {0}")]
    UnknownJti(String),
    #[error("token is {}", .0.as_str())]
    NotActive(TokenStatus),
    #[error("no challenge outstanding")]
    NoChallengeOutstanding,
    #[error("challenge expired")]
    ChallengeExpired,
    #[error("no proof-of-possession key bound to the token")]
    NoPopKeyBound,
    #[error("operation log: {0}")]
    Log(#[from] io::Error),
    #[error("malformed log: {0}")]
    Parse(#[from] LogParseError),
}

/// Status lookup, the part of the registrar the enforcement point needs.
pub trait TokenTable: Send + Sync {
    fn status(&self, jti: &str, now: UnixSeconds) -> TokenStatus;
}

#[derive(Default)]
struct State {
    records: HashMap<String, TokenRecord>,
    challenges: HashMap<String, Challenge>,
    log: Option<Box<dyn OpLog>>,
}

impl State {
    fn append(&mut self, entry: &LogEntry) -> Result<(), RegistrarError> {
        if let Some(log) = self.log.as_mut() {
            log.append(entry)?;
        }
        Ok(())
    }

    fn apply(&mut self, entry: LogEntry) -> Result<usize, RegistrarError> {
        match entry {
            LogEntry::Register(record) => {
                if record.exp <= record.issued_at {
                    return Err(RegistrarError::InvalidRecord("exp must be later than issued_at".into()));
                }
                if record.jti.is_empty() {
                    return Err(RegistrarError::InvalidRecord("empty jti".into()));
                }
                if self.records.contains_key(&record.jti) {
                    return Err(RegistrarError::DuplicateJti(record.jti));
                }
                self.records.insert(record.jti.clone(), record);
                Ok(1)
            }
            LogEntry::Revoke(jti) => {
                let record = self.records.get_mut(&jti).ok_or(RegistrarError::UnknownJti(jti))?;
                record.revoked = true;
                Ok(1)
            }
            LogEntry::Purge(now) => {
                let before = self.records.len();
                self.records.retain(|_, r| r.exp > now);
                let records = &self.records;
                self.challenges.retain(|jti, _| records.contains_key(jti));
                Ok(before - self.records.len())
            }
        }
    }
}

pub struct Registrar {
    state: Mutex<State>,
    challenge_ttl: u64,
}

impl Default for Registrar {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for Registrar {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registrar").field("records", &self.len()).finish()
    }
}

impl Registrar {
    pub fn new() -> Self {
        Registrar { state: Mutex::new(State::default()), challenge_ttl: DEFAULT_CHALLENGE_TTL }
    }

    pub fn with_challenge_ttl(mut self, ttl: u64) -> Self {
        self.challenge_ttl = ttl;
        self
    }

    /// Appends every subsequent mutation to `log`.
    pub fn with_log(self, log: impl OpLog + 'static) -> Self {
        self.state.lock().log = Some(Box::new(log));
        self
    }

    /// Rebuilds a registrar by replaying an operation log or a snapshot.
    pub fn replay(reader: impl BufRead) -> Result<Self, RegistrarError> {
        let registrar = Registrar::new();
        {
            let mut state = registrar.state.lock();
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() || line.starts_with('#') {
                    continue;
                }
                state.apply(LogEntry::parse(&line)?)?;
            }
        }
        Ok(registrar)
    }

    pub fn register(&self, record: TokenRecord) -> Result<(), RegistrarError> {
        let mut state = self.state.lock();
        let entry = LogEntry::Register(record);
        // Validate against the table before logging.
        if let LogEntry::Register(r) = &entry {
            if r.exp <= r.issued_at {
                return Err(RegistrarError::InvalidRecord("exp must be later than issued_at".into()));
            }
            if state.records.contains_key(&r.jti) {
                return Err(RegistrarError::DuplicateJti(r.jti.clone()));
            }
        }
        state.append(&entry)?;
        state.apply(entry).map(|_| ())
    }

    pub fn lookup(&self, jti: &str, now: UnixSeconds) -> TokenStatus {
        self.state.lock().records.get(jti).map_or(TokenStatus::Unknown, |r| r.status(now))
    }

    pub fn get(&self, jti: &str) -> Option<TokenRecord> {
        self.state.lock().records.get(jti).cloned()
    }

    /// Finds the record whose bound proof-of-possession key has this kid.
    pub fn find_by_cnf_kid(&self, kid: &[u8]) -> Option<TokenRecord> {
        self.state
            .lock()
            .records
            .values()
            .find(|r| r.cnf_kid.as_deref() == Some(kid))
            .cloned()
    }

    /// Idempotent: revoking twice leaves the record revoked.
    pub fn revoke(&self, jti: &str) -> Result<(), RegistrarError> {
        let mut state = self.state.lock();
        match state.records.get(jti) {
            None => Err(RegistrarError::UnknownJti(jti.to_owned())),
            Some(r) if r.revoked => Ok(()),
            Some(_) => {
                let entry = LogEntry::Revoke(jti.to_owned());
                state.append(&entry)?;
                state.apply(entry).map(|_| ())
            }
        }
    }

    /// Removes every record with `exp <= now`, revoked or not.
    pub fn purge_expired(&self, now: UnixSeconds) -> Result<usize, RegistrarError> {
        let mut state = self.state.lock();
        if !state.records.values().any(|r| r.exp <= now) {
            return Ok(0);
        }
        let entry = LogEntry::Purge(now);
        state.append(&entry)?;
        state.apply(entry)
    }

    /// Issues a fresh nonce for an active token with a bound key,
    /// replacing any outstanding challenge for it.
    pub fn issue_challenge(&self, jti: &str, now: UnixSeconds) -> Result<Challenge, RegistrarError> {
        let mut state = self.state.lock();
        let record = state.records.get(jti).ok_or_else(|| RegistrarError::UnknownJti(jti.to_owned()))?;
        match record.status(now) {
            TokenStatus::Active => {}
            other => return Err(RegistrarError::NotActive(other)),
        }
        if record.cnf_key.is_none() {
            return Err(RegistrarError::NoPopKeyBound);
        }
        let mut nonce = vec![0u8; NONCE_LEN];
        rand::thread_rng().fill_bytes(&mut nonce);
        let challenge = Challenge { jti: jti.to_owned(), nonce, issued_at: now, ttl: self.challenge_ttl };
        state.challenges.insert(jti.to_owned(), challenge.clone());
        Ok(challenge)
    }

    /// Checks `mac == HMAC-SHA256(cnf.k, nonce)`. The outstanding challenge is
    /// consumed by the attempt whatever its outcome.
    pub fn verify_challenge(&self, jti: &str, nonce: &[u8], mac: &[u8], now: UnixSeconds) -> Result<bool, RegistrarError> {
        let mut state = self.state.lock();
        let challenge = state.challenges.remove(jti).ok_or(RegistrarError::NoChallengeOutstanding)?;
        if now >= challenge.issued_at.saturating_add(challenge.ttl as i64) {
            return Err(RegistrarError::ChallengeExpired);
        }
        let record = state.records.get(jti).ok_or(RegistrarError::NoChallengeOutstanding)?;
        match record.status(now) {
            TokenStatus::Active => {}
            other => return Err(RegistrarError::NotActive(other)),
        }
        let key = record.cnf_key.as_ref().ok_or(RegistrarError::NoPopKeyBound)?;
        let Ok(secret) = key.mac_secret() else {
            return Err(RegistrarError::NoPopKeyBound);
        };
        if challenge.nonce != nonce {
            return Ok(false);
        }
        Ok(hmac_sha256_verify(secret, nonce, mac))
    }

    pub fn len(&self) -> usize {
        self.state.lock().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every record, ordered by jti.
    pub fn records(&self) -> Vec<TokenRecord> {
        let mut records: Vec<_> = self.state.lock().records.values().cloned().collect();
        records.sort_by(|a, b| a.jti.cmp(&b.jti));
        records
    }

    /// Writes one `register` line per record, in jti order.
    pub fn write_snapshot(&self, mut out: impl Write) -> io::Result<()> {
        for record in self.records() {
            writeln!(out, "{}", LogEntry::Register(record).to_line())?;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> String {
        let mut buf = Vec::new();
        self.write_snapshot(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("log lines are UTF-8")
    }
}

impl TokenTable for Registrar {
    fn status(&self, jti: &str, now: UnixSeconds) -> TokenStatus {
        self.lookup(jti, now)
    }
}

/// Periodically purges expired records. Runs until the task is aborted.
pub fn spawn_sweeper(registrar: Arc<Registrar>, clock: Arc<dyn Clock>, interval: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut ticker = tokio::time::interval(interval);
        ticker.tick().await;
        loop {
            ticker.tick().await;
            match registrar.purge_expired(clock.now()) {
                Ok(0) => {}
                Ok(n) => tracing::debug!(purged = n, "registrar sweep"),
                Err(e) => tracing::warn!(error = %e, "registrar sweep failed"),
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::token::hmac_sha256;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn record(jti: &str, issued_at: i64, exp: i64) -> TokenRecord {
        TokenRecord {
            jti: jti.into(),
            aud: "Vehicle01".into(),
            client_id: "CAPODAZ-client".into(),
            issued_at,
            exp,
            revoked: false,
            cnf_kid: None,
            cnf_key: None,
        }
    }

    fn bound(jti: &str) -> TokenRecord {
        let key = CoseKey::symmetric(b"kid".to_vec(), vec![4; 32]);
        TokenRecord { cnf_kid: Some(key.kid.clone()), cnf_key: Some(key), ..record(jti, 0, 100) }
    }

    #[test]
    fn register_and_lookup() {
        let r = Registrar::new();
        r.register(record("a", 0, 10)).unwrap();
        assert_eq!(r.lookup("a", 0), TokenStatus::Active);
        assert_eq!(r.lookup("a", 9), TokenStatus::Active);
        assert_eq!(r.lookup("a", 10), TokenStatus::Expired);
        assert_eq!(r.lookup("b", 0), TokenStatus::Unknown);
        assert!(matches!(r.register(record("a", 0, 10)), Err(RegistrarError::DuplicateJti(_))));
        assert!(matches!(r.register(record("c", 10, 10)), Err(RegistrarError::InvalidRecord(_))));
    }

    #[test]
    fn revocation() {
        let r = Registrar::new();
        r.register(record("a", 0, 10)).unwrap();
        r.revoke("a").unwrap();
        r.revoke("a").unwrap();
        assert_eq!(r.lookup("a", 5), TokenStatus::Revoked);
        assert_eq!(r.lookup("a", 50), TokenStatus::Revoked);
        assert!(matches!(r.revoke("zz"), Err(RegistrarError::UnknownJti(_))));
    }

    #[test]
    fn purge() {
        let r = Registrar::new();
        assert_eq!(r.purge_expired(100).unwrap(), 0);
        for (i, exp) in [5, 6, 7, 50, 60].into_iter().enumerate() {
            r.register(record(&i.to_string(), 0, exp)).unwrap();
        }
        assert_eq!(r.purge_expired(10).unwrap(), 3);
        assert_eq!(r.purge_expired(10).unwrap(), 0);
        assert_eq!(r.lookup("0", 10), TokenStatus::Unknown);
        assert_eq!(r.lookup("3", 10), TokenStatus::Active);
    }

    #[test]
    fn challenge_response() {
        let r = Registrar::new();
        r.register(bound("a")).unwrap();
        let c = r.issue_challenge("a", 1).unwrap();
        assert!(c.nonce.len() >= NONCE_LEN);
        let mac = hmac_sha256(&[4; 32], &c.nonce);
        assert!(r.verify_challenge("a", &c.nonce, &mac, 2).unwrap());
        assert!(matches!(r.verify_challenge("a", &c.nonce, &mac, 2), Err(RegistrarError::NoChallengeOutstanding)));

        let c = r.issue_challenge("a", 1).unwrap();
        assert!(!r.verify_challenge("a", &c.nonce, &[0; 32], 2).unwrap());
        let c = r.issue_challenge("a", 1).unwrap();
        let mac = hmac_sha256(&[4; 32], &c.nonce);
        assert!(matches!(r.verify_challenge("a", &c.nonce, &mac, 1 + 30), Err(RegistrarError::ChallengeExpired)));

        r.register(record("plain", 0, 100)).unwrap();
        assert!(matches!(r.issue_challenge("plain", 1), Err(RegistrarError::NoPopKeyBound)));
    }

    #[test]
    fn log_replay_and_snapshot_restore() {
        let buf = log::SharedBuffer::default();
        let r = Registrar::new().with_log(buf.clone());
        r.register(bound("a")).unwrap();
        r.register(record("b,with=odd%chars", 0, 5)).unwrap();
        r.register(record("c", 0, 50)).unwrap();
        r.revoke("c").unwrap();
        r.purge_expired(10).unwrap();

        let replayed = Registrar::replay(buf.contents().as_bytes()).unwrap();
        assert_eq!(replayed.records(), r.records());

        let restored = Registrar::replay(r.snapshot().as_bytes()).unwrap();
        for jti in ["a", "b,with=odd%chars", "c", "d"] {
            for now in [0, 5, 60, 200] {
                assert_eq!(restored.lookup(jti, now), r.lookup(jti, now));
            }
        }
    }

    #[derive(Debug, Clone)]
    enum Op {
        Register(u8, i64, i64),
        Revoke(u8),
        Purge(i64),
        Lookup(u8, i64),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0u8..6, 0i64..50, 0i64..60).prop_map(|(j, at, life)| Op::Register(j, at, at + life)),
            (0u8..6).prop_map(Op::Revoke),
            (0i64..120).prop_map(Op::Purge),
            (0u8..6, 0i64..120).prop_map(|(j, t)| Op::Lookup(j, t)),
        ]
    }

    proptest! {
        #[test]
        fn matches_reference_model(ops in proptest::collection::vec(op(), 1..40)) {
            let r = Registrar::new();
            // jti -> (exp, revoked)
            let mut model: BTreeMap<String, (i64, bool)> = BTreeMap::new();
            for op in ops {
                match op {
                    Op::Register(j, at, exp) => {
                        let jti = j.to_string();
                        let expect_ok = exp > at && !model.contains_key(&jti);
                        prop_assert_eq!(r.register(record(&jti, at, exp)).is_ok(), expect_ok);
                        if expect_ok {
                            model.insert(jti, (exp, false));
                        }
                    }
                    Op::Revoke(j) => {
                        let jti = j.to_string();
                        prop_assert_eq!(r.revoke(&jti).is_ok(), model.contains_key(&jti));
                        if let Some(e) = model.get_mut(&jti) {
                            e.1 = true;
                        }
                    }
                    Op::Purge(now) => {
                        let before = model.len();
                        model.retain(|_, (exp, _)| *exp > now);
                        prop_assert_eq!(r.purge_expired(now).unwrap(), before - model.len());
                    }
                    Op::Lookup(j, now) => {
                        let expected = match model.get(&j.to_string()) {
                            None => TokenStatus::Unknown,
                            Some((_, true)) => TokenStatus::Revoked,
                            Some((exp, false)) if now >= *exp => TokenStatus::Expired,
                            Some(_) => TokenStatus::Active,
                        };
                        prop_assert_eq!(r.lookup(&j.to_string(), now), expected);
                    }
                }
            }
        }
    }
}
