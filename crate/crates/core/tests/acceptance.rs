//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Barrier};
use std::time::{Duration, Instant};

use capodaz::bench::{
    aggregate_spec, exp_cdf, export_report, ks_critical_value, ks_statistic, run_rounds, selftest_response_law, simulate, Driver,
    ExportFormat, MetricsReport, Pattern, RequestTemplate, RoundPlan, SampleStatus, ServiceTarget, SimTarget, StubModel, StubServer,
    WorkloadSpec,
};
use capodaz::clock::ManualClock;
use capodaz::codec::{base64url_decode, cbor_to_json, decode_cbor, encode_cbor, json_to_cbor, CborError, CborValue};
use capodaz::policy::*;
use capodaz::registrar::{Registrar, RegistrarError, TokenRecord, TokenStatus};
use capodaz::service::{ServiceClient, ServiceConfig, ServiceState, WireFormat};
use capodaz::token::*;
use common::{sample_config, start_with, ADMIN, CLIENT};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let criteria: Vec<(&str, Option<Duration>, Box<dyn FnOnce() -> Check>)> = vec![
        ("token round-trip", Some(Duration::from_secs(10)), Box::new(token_round_trip)),
        ("sample payloads over HTTP", Some(Duration::from_secs(5)), Box::new(|| rt.block_on(sample_payloads()))),
        ("PDP oracle equivalence", Some(Duration::from_secs(30)), Box::new(pdp_oracle)),
        ("combining truth tables", None, Box::new(combining_tables)),
        ("registrar state machine", None, Box::new(registrar_model)),
        ("end-to-end enforcement", None, Box::new(|| rt.block_on(enforcement_reasons()))),
        ("Poisson arrival fidelity", Some(Duration::from_secs(180)), Box::new(|| rt.block_on(poisson_fidelity()))),
        ("saturation clamp", None, Box::new(|| rt.block_on(saturation()))),
        ("closed-loop response-time law", None, Box::new(|| rt.block_on(response_law()))),
        ("three-round orchestration", None, Box::new(|| rt.block_on(three_rounds()))),
        ("CBOR codec", None, Box::new(cbor_codec)),
    ];

    let mut failed = 0;
    for (i, (name, limit, check)) in criteria.into_iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = started.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took {elapsed:.1?}, limit {limit:?}")),
            (o, _) => o,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        failed += outcome.is_err() as usize;
        println!("{tag} {:02} {name} ({:.2} s): {detail}", i + 1, elapsed.as_secs_f64());
    }
    drop(rt);
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

// ---- tokens ----

fn word(rng: &mut impl Rng, min: usize, max: usize) -> String {
    const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789-_./ \"\\\xc3\xa9";
    let len = rng.gen_range(min..=max);
    let s: String = (0..len).map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len() - 2)] as char).collect();
    if rng.gen_bool(0.1) {
        s + "é"
    } else {
        s
    }
}

fn random_claims(rng: &mut impl Rng, now: i64) -> ClaimSet {
    let exp = now + rng.gen_range(1..100_000);
    ClaimSet {
        aud: word(rng, 0, 16),
        user_name: rng.gen_bool(0.5).then(|| word(rng, 1, 12)),
        scope: (0..rng.gen_range(1..4)).map(|_| word(rng, 1, 8)).collect(),
        exp,
        iat: rng.gen_bool(0.5).then(|| rng.gen_range(now - 1000..exp)),
        authorities: rng.gen_bool(0.5).then(|| word(rng, 1, 12)),
        jti: word(rng, 1, 20),
        client_id: word(rng, 0, 16),
    }
}

fn token_round_trip() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let key = CoseKey::symmetric(b"issuer".to_vec(), (0..32).map(|_| rng.gen()).collect::<Vec<u8>>());
    let now = 1_700_000_000;
    let (mut flips, mut exhaustive) = (0usize, 0usize);
    for i in 0..1000 {
        let claims = random_claims(&mut rng, now);
        let cnf = CoseKey::symmetric(vec![i as u8; 4], vec![7; 32]);
        let tokens = [issue_jwt(&claims, &key, now).map_err(|e| e.to_string())?, issue_cwt(&claims, &cnf, &key, now).map_err(|e| e.to_string())?];
        for token in tokens {
            let fmt = token.format;
            ensure!(verify_token(&token.wire, &key, now).as_ref() == Ok(&claims), "{fmt:?} identity failed for {claims:?}");
            ensure!(verify_token(&token.wire, &key, claims.exp - 1).is_ok(), "{fmt:?} rejected at exp - 1");
            ensure!(verify_token(&token.wire, &key, claims.exp) == Err(TokenError::Expired), "{fmt:?} accepted at exp");
            ensure!(verify_token(&token.wire, &key, claims.exp + 1) == Err(TokenError::Expired), "{fmt:?} accepted after exp");
            // every bit of the first tokens, one random bit of the rest
            let bits: Vec<usize> = if i < 10 { (0..token.wire.len() * 8).collect() } else { vec![rng.gen_range(0..token.wire.len() * 8)] };
            for bit in bits {
                let mut wire = token.wire.clone();
                wire[bit / 8] ^= 1 << (bit % 8);
                ensure!(verify_token(&wire, &key, now).is_err(), "{fmt:?} accepted a flip of bit {bit}");
                flips += 1;
            }
            exhaustive += (i < 10) as usize;
        }
    }
    Ok(format!("1000 claim sets x {{JWT, CWT}}; {flips} single-bit mutations rejected ({exhaustive} tokens exhaustively); exp-1 valid, exp and exp+1 expired"))
}

// ---- sample payloads ----

const CLAIMS_SAMPLE: &str = r#"{ "aud": "Vehicle01", "user_name": "v01", "scope": ["read", "trust"], "exp": 1518074605, "authorities": "ROLE_USER", "jti": "1d3b890201", "client_id": "CAPODAZ-client" }"#;
const SYMMETRIC_KEY_RESPONSE: &str = r#"{ "access_token": "b64'eyJGhbJciOi..'", "profile": "coap_dtls", "expires_in": "3600", "cnf": { "COSE_Key": { "kty": "Symmetric", "kid": "b64'44Gkam'", "k": "b64'JSU0ExxzUi..'" }} }"#;
const CLIENT_CREDENTIALS_PAYLOAD: &str = r#"{ "grant_type": "client_credentials", "client_id": "CAPODAZ-client", "aud": "Vehicle01" }"#;
const CLIENT_CREDENTIALS_REQUEST: &str = r#"{ "grant_type": "client_credentials", "aud": "Sensor01", "client_id": "CAPODAZ-client", "client_secret": "secret" }"#;
const CLIENT_CREDENTIALS_RESPONSE: &str = r#"{ "access_token": "b64'eyJGhbJciOi..'", "token_type": "Bearer", "csp": "DTLS", "cnf": { "COSE_Key": { "kid": "b64'd30tZS..'", "kty": "oct", "alg": "HS256", "k": "b64'JSU0ExxzUi..'" }} }"#;
const REFRESH_PAYLOAD: &str = r#"{ "grant_type": "client_credentials", "client_id": "CAPODAZ-client", "cnf": { "COSE_Key": { "kty": "EC", "kid": "h'11'", "crv": "P-256", "x": "b64'trxcoq..'", "y": "b64'Qwebq..'" }} }"#;

/// Parses a diagnostic-style document: `b64'..'` and `h'..'` strings become
/// byte strings.
fn diagnostic(text: &str) -> CborValue {
    fn lift(v: CborValue) -> CborValue {
        match v {
            CborValue::Text(s) => {
                if let Some(inner) = s.strip_prefix("b64'").and_then(|r| r.strip_suffix('\'')) {
                    CborValue::Bytes(inner.as_bytes().to_vec())
                } else if let Some(hex) = s.strip_prefix("h'").and_then(|r| r.strip_suffix('\'')) {
                    CborValue::Bytes((0..hex.len()).step_by(2).map(|i| u8::from_str_radix(&hex[i..i + 2], 16).unwrap()).collect())
                } else {
                    CborValue::Text(s)
                }
            }
            CborValue::Array(items) => CborValue::Array(items.into_iter().map(lift).collect()),
            CborValue::Map(entries) => CborValue::Map(entries.into_iter().map(|(k, v)| (k, lift(v))).collect()),
            other => other,
        }
    }
    lift(json_to_cbor(&serde_json::from_str(text).unwrap()).unwrap())
}

/// Every field of `shown` is present in `actual`. Literal text must match;
/// byte placeholders only fix the type.
fn covers(shown: &CborValue, actual: &CborValue, path: &str) -> Result<(), String> {
    match (shown, actual) {
        (CborValue::Map(fields), CborValue::Map(_)) => {
            for (k, v) in fields {
                let key = k.as_text().unwrap();
                let got = actual.get(key).ok_or_else(|| format!("{path}.{key} missing"))?;
                covers(v, got, &format!("{path}.{key}"))?;
            }
            Ok(())
        }
        (CborValue::Bytes(_), CborValue::Bytes(_)) => Ok(()),
        (CborValue::Text(a), CborValue::Text(b)) if a == b => Ok(()),
        // "Symmetric" and "oct" name the same key type
        (CborValue::Text(a), CborValue::Text(b)) if path.ends_with(".kty") && a == "Symmetric" && b == "oct" => Ok(()),
        (CborValue::Text(a), CborValue::Unsigned(n)) if a.parse() == Ok(*n) => Ok(()),
        _ => Err(format!("{path}: shown {shown:?}, got {actual:?}")),
    }
}

fn keys(doc: &CborValue) -> Vec<String> {
    doc.as_map().unwrap().iter().map(|(k, _)| k.as_text().unwrap().to_owned()).collect()
}

async fn post_token(http: &reqwest::Client, base: &str, mime: &str, body: Vec<u8>, basic: Option<(&str, &str)>) -> (u16, Vec<u8>) {
    let mut req = http.post(format!("{base}/token")).header("content-type", mime).body(body);
    if let Some((id, secret)) = basic {
        req = req.basic_auth(id, Some(secret));
    }
    let resp = req.send().await.unwrap();
    (resp.status().as_u16(), resp.bytes().await.unwrap().to_vec())
}

async fn sample_payloads() -> Check {
    const NOW: i64 = 1_518_070_000;
    let clock = Arc::new(ManualClock::new(NOW));
    let svc = start_with(sample_config(), clock.clone()).await;
    let (base, state) = (svc.base_url(), svc.state().clone());
    let http = reqwest::Client::new();
    let client = ServiceClient::new(base.clone());

    // every payload survives the codec unchanged
    for text in [SYMMETRIC_KEY_RESPONSE, CLIENT_CREDENTIALS_PAYLOAD, CLIENT_CREDENTIALS_REQUEST, CLIENT_CREDENTIALS_RESPONSE, REFRESH_PAYLOAD] {
        let doc = diagnostic(text);
        ensure!(decode_cbor(&encode_cbor(&doc).unwrap()).as_ref() == Ok(&doc), "codec changed {text}");
    }

    // JWT claims set: issued, presented to a resource, decoded back
    let shown: serde_json::Value = serde_json::from_str(CLAIMS_SAMPLE).unwrap();
    let claims: ClaimSet = serde_json::from_value(shown.clone()).map_err(|e| e.to_string())?;
    let jwt = issue_jwt(&claims, &state.issuer_key, NOW).map_err(|e| e.to_string())?;
    state.registrar.register(TokenRecord::from_token(&jwt, NOW)).map_err(|e| e.to_string())?;
    let reply = client.get_resource("vehicle/localisation", Some(&jwt.bearer()), None).await.map_err(|e| e.to_string())?;
    ensure!(reply.status == 200, "claims-set JWT got {} {:?}", reply.status, reply.reason);
    let segment = jwt.bearer().split('.').nth(1).unwrap().to_owned();
    let decoded: serde_json::Value = serde_json::from_slice(&base64url_decode(&segment).unwrap()).unwrap();
    ensure!(decoded == shown, "JWT payload {decoded} differs from {shown}");
    let pw = GrantRequest { username: Some("v01".into()), ..GrantRequest::new(GrantType::Password, CLIENT.0, "Vehicle01").with_secret(CLIENT.1) };
    let issued = client.request_token(&pw, WireFormat::Json).await.map_err(|e| e.to_string())?;
    let AccessToken::Jwt(text) = &issued.access_token else { return Err("password grant did not return a JWT".into()) };
    let segment = text.split('.').nth(1).unwrap();
    let got: serde_json::Value = serde_json::from_slice(&base64url_decode(segment).unwrap()).unwrap();
    for key in shown.as_object().unwrap().keys() {
        ensure!(got.get(key).is_some(), "password-grant JWT lacks {key}");
    }
    for key in ["aud", "user_name", "scope", "authorities", "client_id"] {
        ensure!(got[key] == shown[key], "password-grant JWT {key}: {} vs {}", got[key], shown[key]);
    }

    // symmetric-key grant: CBOR response carrying a symmetric COSE_Key
    let sym = GrantRequest::new(GrantType::SymmetricKey, CLIENT.0, "Vehicle01").with_secret(CLIENT.1);
    let (status, body) = post_token(&http, &base, "application/cbor", encode_cbor(&sym.to_cbor()).unwrap(), None).await;
    ensure!(status == 200, "symmetric-key grant: {status}");
    let resp = decode_cbor(&body).map_err(|e| e.to_string())?;
    covers(&diagnostic(SYMMETRIC_KEY_RESPONSE), &resp, "symmetric-key response")?;

    // client credentials: the short payload with HTTP Basic, then the full request
    let (status, _) = post_token(&http, &base, "application/cbor", encode_cbor(&diagnostic(CLIENT_CREDENTIALS_PAYLOAD)).unwrap(), Some(CLIENT)).await;
    ensure!(status == 200, "client-credentials payload with Basic auth: {status}");
    let (status, body) = post_token(&http, &base, "application/cbor", encode_cbor(&diagnostic(CLIENT_CREDENTIALS_REQUEST)).unwrap(), None).await;
    ensure!(status == 200, "client-credentials request: {status}");
    let resp = decode_cbor(&body).map_err(|e| e.to_string())?;
    covers(&diagnostic(CLIENT_CREDENTIALS_RESPONSE), &resp, "client-credentials response")?;
    let cc = TokenResponse::from_cbor(&resp).map_err(|e| e.to_string())?;
    ensure!(cc.token_type == "Bearer", "token_type {}", cc.token_type);
    let prior = verify_token(&cc.access_token.wire(), &state.issuer_key, NOW).map_err(|e| e.to_string())?;
    let pop = cc.cnf.clone().ok_or("no cnf in client-credentials response")?;

    // refresh: the payload sealed under the bound key, answered in kind
    let sealed = CoseMac0::seal(encode_cbor(&diagnostic(REFRESH_PAYLOAD)).unwrap(), &pop).map_err(|e| e.to_string())?;
    let (status, body) = post_token(&http, &base, "application/cose", sealed.to_bytes(), None).await;
    ensure!(status == 200, "sealed refresh: {status} {}", String::from_utf8_lossy(&body));
    let envelope = CoseMac0::parse(&body).map_err(|e| e.to_string())?;
    ensure!(envelope.verify(pop.mac_secret().unwrap()), "refresh response MAC");
    let refreshed = TokenResponse::from_cbor(&decode_cbor(&envelope.payload).unwrap()).map_err(|e| e.to_string())?;
    let shown_key = CoseKey::from_cnf(diagnostic(REFRESH_PAYLOAD).get("cnf").unwrap()).unwrap();
    ensure!(refreshed.cnf.as_ref() == Some(&shown_key), "refreshed token bound to {:?}", refreshed.cnf);
    ensure!(state.registrar.lookup(&prior.jti, NOW) == TokenStatus::Revoked, "refreshed-from token still active");
    let reply = client.get_resource("vehicle/localisation", Some(&refreshed.access_token.bearer()), None).await.map_err(|e| e.to_string())?;
    ensure!(reply.status == 200, "refreshed token got {}", reply.status);

    svc.shutdown().await.map_err(|e| e.to_string())?;
    Ok(format!(
        "JWT claims set decodes equal and opens vehicle/localisation; CWT flows: symmetric-key {:?}, client credentials 200 Bearer, COSE refresh rebinds to kid h'11'",
        keys(&resp)
    ))
}

// ---- policies ----

/// Deny-/permit-overrides written out as rows over which outcomes occur:
/// (permit seen, deny seen, indeterminate seen) -> result.
const OVERRIDES_TABLE: [((bool, bool, bool), Outcome, Outcome); 8] = {
    use Outcome::*;
    [
        ((false, false, false), NotApplicable, NotApplicable),
        ((true, false, false), Permit, Permit),
        ((false, true, false), Deny, Deny),
        ((false, false, true), Indeterminate, Indeterminate),
        ((true, true, false), Deny, Permit),
        ((true, false, true), Indeterminate, Permit),
        ((false, true, true), Deny, Indeterminate),
        ((true, true, true), Deny, Permit),
    ]
};

fn table(alg: CombiningAlgorithm, seq: &[Outcome]) -> Outcome {
    if alg == CombiningAlgorithm::FirstApplicable {
        return seq.iter().copied().find(|o| *o != Outcome::NotApplicable).unwrap_or(Outcome::NotApplicable);
    }
    let seen = (seq.contains(&Outcome::Permit), seq.contains(&Outcome::Deny), seq.contains(&Outcome::Indeterminate));
    let (_, deny_ov, permit_ov) = OVERRIDES_TABLE.iter().find(|(k, _, _)| *k == seen).unwrap();
    if alg == CombiningAlgorithm::DenyOverrides {
        *deny_ov
    } else {
        *permit_ov
    }
}

fn attr(i: usize) -> AttributeId {
    AttributeId::subject(format!("flag{i}"))
}

fn compare(i: usize, b: bool) -> Match {
    Match::new(attr(i), MatchOp::Equals, AttributeValue::Boolean(b))
}

fn random_condition(rng: &mut impl Rng, attrs: usize, depth: usize) -> Condition {
    if depth == 0 || rng.gen_bool(0.4) {
        return Condition::Compare(compare(rng.gen_range(0..attrs), rng.gen()));
    }
    let children = |rng: &mut ChaCha8Rng| (0..rng.gen_range(1..=3)).map(|_| random_condition(rng, attrs, depth - 1)).collect::<Vec<_>>();
    let mut sub = ChaCha8Rng::seed_from_u64(rng.gen());
    match rng.gen_range(0..3) {
        0 => Condition::Not(Box::new(random_condition(rng, attrs, depth - 1))),
        1 => Condition::And(children(&mut sub)),
        _ => Condition::Or(children(&mut sub)),
    }
}

fn random_target(rng: &mut impl Rng, attrs: usize) -> Target {
    let n = if rng.gen_bool(0.5) { 0 } else { rng.gen_range(1..=2) };
    Target { matches: (0..n).map(|_| compare(rng.gen_range(0..attrs), rng.gen())).collect() }
}

fn random_set(rng: &mut impl Rng, attrs: usize) -> PolicySet {
    let algs = CombiningAlgorithm::ALL;
    let mut rules_left = rng.gen_range(1..=4);
    let policies = (0..rng.gen_range(1..=3))
        .map(|p| {
            let n = rng.gen_range(0..=rules_left);
            rules_left -= n;
            let ob_ids = [ObligationId::CheckSubscription, ObligationId::CheckPayment, ObligationId::Custom("audit".into())];
            Policy {
                id: format!("p{p}"),
                target: random_target(rng, attrs),
                rules: (0..n)
                    .map(|r| Rule {
                        id: format!("p{p}r{r}"),
                        effect: if rng.gen() { Effect::Permit } else { Effect::Deny },
                        target: random_target(rng, attrs),
                        condition: rng.gen_bool(0.7).then(|| random_condition(rng, attrs, 2)),
                    })
                    .collect(),
                combining: *algs.choose(rng).unwrap(),
                obligations: (0..rng.gen_range(0..=2))
                    .map(|_| Obligation::new(ob_ids.choose(rng).unwrap().clone(), if rng.gen() { Effect::Permit } else { Effect::Deny }))
                    .collect(),
            }
        })
        .collect();
    PolicySet { id: "random".into(), target: random_target(rng, attrs), policies, combining: *algs.choose(rng).unwrap() }
}

/// Truth value of a condition: `None` when an attribute is missing.
fn oracle_condition(c: &Condition, env: &[Option<bool>]) -> Option<bool> {
    match c {
        Condition::Compare(m) => {
            let i: usize = m.attr.name.trim_start_matches("flag").parse().unwrap();
            let AttributeValue::Boolean(lit) = m.values[0] else { unreachable!() };
            env[i].map(|v| v == lit)
        }
        Condition::Not(inner) => oracle_condition(inner, env).map(|b| !b),
        Condition::And(ops) => {
            let vals: Vec<_> = ops.iter().map(|o| oracle_condition(o, env)).collect();
            if vals.contains(&Some(false)) {
                Some(false)
            } else if vals.contains(&None) {
                None
            } else {
                Some(true)
            }
        }
        Condition::Or(ops) => {
            let vals: Vec<_> = ops.iter().map(|o| oracle_condition(o, env)).collect();
            if vals.contains(&Some(true)) {
                Some(true)
            } else if vals.contains(&None) {
                None
            } else {
                Some(false)
            }
        }
    }
}

fn oracle_target(t: &Target, env: &[Option<bool>]) -> bool {
    t.matches.iter().all(|m| oracle_condition(&Condition::Compare(m.clone()), env) == Some(true))
}

fn oracle(set: &PolicySet, env: &[Option<bool>]) -> (Outcome, Vec<Obligation>) {
    if !oracle_target(&set.target, env) {
        return (Outcome::NotApplicable, vec![]);
    }
    let outcomes: Vec<Outcome> = set
        .policies
        .iter()
        .map(|p| {
            if !oracle_target(&p.target, env) {
                return Outcome::NotApplicable;
            }
            let rules: Vec<Outcome> = p
                .rules
                .iter()
                .map(|r| {
                    if !oracle_target(&r.target, env) {
                        return Outcome::NotApplicable;
                    }
                    match r.condition.as_ref().map_or(Some(true), |c| oracle_condition(c, env)) {
                        Some(true) => r.effect.outcome(),
                        Some(false) => Outcome::NotApplicable,
                        None => Outcome::Indeterminate,
                    }
                })
                .collect();
            table(p.combining, &rules)
        })
        .collect();
    let outcome = table(set.combining, &outcomes);
    if !matches!(outcome, Outcome::Permit | Outcome::Deny) {
        return (outcome, vec![]);
    }
    // first-applicable never looks past the deciding policy
    let considered = match set.combining {
        CombiningAlgorithm::FirstApplicable => outcomes.iter().position(|o| *o != Outcome::NotApplicable).unwrap() + 1,
        _ => outcomes.len(),
    };
    let obligations = set.policies[..considered]
        .iter()
        .zip(&outcomes)
        .filter(|(_, o)| **o == outcome)
        .flat_map(|(p, _)| p.obligations.iter().filter(|ob| ob.applies_on.outcome() == outcome).cloned())
        .collect();
    (outcome, obligations)
}

fn assignments(attrs: usize) -> Vec<Vec<Option<bool>>> {
    let mut all = vec![vec![]];
    for _ in 0..attrs {
        all = all.into_iter().flat_map(|a: Vec<Option<bool>>| [None, Some(false), Some(true)].map(|v| [a.clone(), vec![v]].concat())).collect();
    }
    all
}

fn request_for(env: &[Option<bool>]) -> AccessRequest {
    env.iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|b| (i, b)))
        .fold(AccessRequest::new("r", "read"), |req, (i, b)| req.with_attribute(attr(i), vec![AttributeValue::Boolean(b)]))
}

fn pdp_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sources = AttributeSources::new();
    let (mut cases, mut seen) = (0usize, BTreeMap::new());
    for _ in 0..500 {
        let attrs = rng.gen_range(1..=3);
        let set = random_set(&mut rng, attrs);
        for env in assignments(attrs) {
            let got = pdp_evaluate(&set, &request_for(&env), &sources);
            let (outcome, obligations) = oracle(&set, &env);
            ensure!(got.outcome == outcome && got.obligations == obligations, "set {set:?} under {env:?}: got {:?} {:?}, oracle {outcome:?} {obligations:?}", got.outcome, got.obligations);
            *seen.entry(outcome.as_str()).or_insert(0usize) += 1;
            cases += 1;
        }
    }
    Ok(format!("500 policy sets, {cases} evaluations, 100% agreement; outcome mix {seen:?}"))
}

/// A one-rule policy per outcome, under the request built by `request_for`.
fn rule_yielding(o: Outcome, id: usize) -> Rule {
    let (effect, condition) = match o {
        Outcome::Permit => (Effect::Permit, None),
        Outcome::Deny => (Effect::Deny, None),
        Outcome::NotApplicable => (Effect::Permit, Some(Condition::Compare(compare(0, false)))),
        Outcome::Indeterminate => (Effect::Deny, Some(Condition::Compare(compare(1, true)))),
    };
    Rule { id: format!("r{id}"), effect, target: Target::default(), condition }
}

fn combining_tables() -> Check {
    let request = request_for(&[Some(true), None]);
    let sources = AttributeSources::new();
    let mut sequences: Vec<Vec<Outcome>> = vec![vec![]];
    let mut frontier = sequences.clone();
    for _ in 0..4 {
        frontier = frontier.iter().flat_map(|s| Outcome::ALL.map(|o| [s.clone(), vec![o]].concat())).collect();
        sequences.extend(frontier.iter().cloned());
    }
    let mut checked = 0;
    for alg in CombiningAlgorithm::ALL {
        for seq in &sequences {
            let expected = table(alg, seq);
            ensure!(combine(alg, seq.iter().copied()) == expected, "{alg:?} fold of {seq:?}");
            let policy = Policy {
                id: "p".into(),
                target: Target::default(),
                rules: seq.iter().enumerate().map(|(i, o)| rule_yielding(*o, i)).collect(),
                combining: alg,
                obligations: vec![],
            };
            let set = PolicySet { policies: vec![policy], ..PolicySet::empty("s") };
            let got = pdp_evaluate(&set, &request, &sources).outcome;
            ensure!(got == expected, "{alg:?} over rules {seq:?}: pdp {got:?}, table {expected:?}");
            checked += 1;
        }
    }
    Ok(format!("{} sequences of length 0..=4 per algorithm ({checked} checks) match the tables, through combine and pdp_evaluate", sequences.len()))
}

// ---- registrar ----

#[derive(Default)]
struct ModelRegistrar {
    /// jti -> (exp, revoked, bound key)
    records: BTreeMap<String, (i64, bool, Option<Vec<u8>>)>,
    /// jti -> (nonce, issued_at)
    challenges: BTreeMap<String, (Vec<u8>, i64)>,
}

impl ModelRegistrar {
    fn status(&self, jti: &str, now: i64) -> TokenStatus {
        match self.records.get(jti) {
            None => TokenStatus::Unknown,
            Some((_, true, _)) => TokenStatus::Revoked,
            Some((exp, false, _)) if now >= *exp => TokenStatus::Expired,
            Some(_) => TokenStatus::Active,
        }
    }
}

fn tag<T: std::fmt::Debug>(r: &Result<T, RegistrarError>) -> String {
    match r {
        Ok(v) => format!("ok {v:?}"),
        Err(RegistrarError::DuplicateJti(_)) => "duplicate".into(),
        Err(RegistrarError::InvalidRecord(_)) => "invalid".into(),
        Err(RegistrarError::UnknownJti(_)) => "unknown".into(),
        Err(RegistrarError::NotActive(s)) => format!("not active {s:?}"),
        Err(RegistrarError::NoChallengeOutstanding) => "no challenge".into(),
        Err(RegistrarError::ChallengeExpired) => "challenge expired".into(),
        Err(RegistrarError::NoPopKeyBound) => "no key".into(),
        Err(e) => format!("other {e}"),
    }
}

fn registrar_model() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ops_run = 0;
    for seq in 0..10_000 {
        let r = Registrar::new();
        let mut m = ModelRegistrar::default();
        for _ in 0..rng.gen_range(1..=40) {
            ops_run += 1;
            let jti = rng.gen_range(0..5).to_string();
            let now = rng.gen_range(0..150);
            let (got, want) = match rng.gen_range(0..7) {
                0 => {
                    let at = rng.gen_range(0..100);
                    let exp = at + rng.gen_range(0..60);
                    let key = rng.gen_bool(0.6).then(|| vec![rng.gen_range(1..=255u8); 32]);
                    let record = TokenRecord {
                        jti: jti.clone(),
                        aud: "a".into(),
                        client_id: "c".into(),
                        issued_at: at,
                        exp,
                        revoked: false,
                        cnf_kid: key.as_ref().map(|_| jti.as_bytes().to_vec()),
                        cnf_key: key.as_ref().map(|k| CoseKey::symmetric(jti.as_bytes().to_vec(), k.clone())),
                    };
                    let want = if exp <= at {
                        "invalid".to_string()
                    } else if m.records.contains_key(&jti) {
                        "duplicate".into()
                    } else {
                        m.records.insert(jti.clone(), (exp, false, key));
                        "ok ()".into()
                    };
                    (tag(&r.register(record)), want)
                }
                1 => {
                    let want = match m.records.get_mut(&jti) {
                        Some(rec) => {
                            rec.1 = true;
                            "ok ()".into()
                        }
                        None => "unknown".to_string(),
                    };
                    (tag(&r.revoke(&jti)), want)
                }
                2 => {
                    let before = m.records.len();
                    m.records.retain(|_, (exp, _, _)| *exp > now);
                    let records = &m.records;
                    m.challenges.retain(|j, _| records.contains_key(j));
                    (tag(&r.purge_expired(now)), format!("ok {}", before - m.records.len()))
                }
                3 => (format!("{:?}", r.lookup(&jti, now)), format!("{:?}", m.status(&jti, now))),
                4 => {
                    let got = r.issue_challenge(&jti, now);
                    let want = match (m.status(&jti, now), m.records.get(&jti)) {
                        (TokenStatus::Unknown, _) => "unknown".to_string(),
                        (TokenStatus::Active, Some((_, _, None))) => "no key".into(),
                        (TokenStatus::Active, _) => {
                            let c = got.as_ref().map_err(|e| format!("issue_challenge failed: {e}"))?;
                            ensure!(c.nonce.len() >= 16, "short nonce");
                            m.challenges.insert(jti.clone(), (c.nonce.clone(), now));
                            "challenge".into()
                        }
                        (s, _) => format!("not active {s:?}"),
                    };
                    (if got.is_ok() { "challenge".into() } else { tag(&got) }, want)
                }
                _ => {
                    // honest response, wrong MAC, or a stale nonce
                    let kind = rng.gen_range(0..3);
                    let key = m.records.get(&jti).and_then(|r| r.2.clone()).unwrap_or_else(|| vec![9; 32]);
                    let nonce = match (kind, m.challenges.get(&jti)) {
                        (2, _) | (_, None) => vec![0; 16],
                        (_, Some((n, _))) => n.clone(),
                    };
                    let mac = if kind == 1 { vec![0; 32] } else { hmac_sha256(&key, &nonce) };
                    let want = match m.challenges.remove(&jti) {
                        None => "no challenge".to_string(),
                        Some((_, at)) if now >= at + 30 => "challenge expired".into(),
                        Some((n, _)) => match m.status(&jti, now) {
                            TokenStatus::Active => format!("ok {}", n == nonce && kind == 0),
                            s => format!("not active {s:?}"),
                        },
                    };
                    (tag(&r.verify_challenge(&jti, &nonce, &mac, now)), want)
                }
            };
            ensure!(got == want, "sequence {seq}: registrar {got}, model {want}");
        }
        for jti in (0..5).map(|j| j.to_string()) {
            for now in [0, 60, 200] {
                ensure!(r.lookup(&jti, now) == m.status(&jti, now), "sequence {seq}: final status of {jti} at {now}");
            }
        }
    }

    // single use under contention
    let contenders = 8;
    let rounds = 500;
    let registrar = Arc::new(Registrar::new());
    let key = CoseKey::symmetric(b"pop".to_vec(), vec![3; 32]);
    registrar
        .register(TokenRecord { cnf_kid: Some(key.kid.clone()), cnf_key: Some(key), ..TokenRecord { jti: "t".into(), aud: "a".into(), client_id: "c".into(), issued_at: 0, exp: 1000, revoked: false, cnf_kid: None, cnf_key: None } })
        .unwrap();
    for round in 0..rounds {
        let challenge = registrar.issue_challenge("t", 1).unwrap();
        let mac = hmac_sha256(&[3; 32], &challenge.nonce);
        let barrier = Barrier::new(contenders);
        let wins = std::thread::scope(|s| {
            let handles: Vec<_> = (0..contenders)
                .map(|_| {
                    s.spawn(|| {
                        barrier.wait();
                        registrar.verify_challenge("t", &challenge.nonce, &mac, 2)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).filter(|r| matches!(r, Ok(true))).count()
        });
        ensure!(wins == 1, "round {round}: {wins} verifiers accepted one nonce");
    }
    Ok(format!("10000 sequences ({ops_run} ops) match the map model; {rounds} rounds of {contenders} concurrent verifiers, exactly one accepted each nonce"))
}

// ---- enforcement over HTTP ----

async fn enforcement_reasons() -> Check {
    const NOW: i64 = 1_700_000_000;
    let clock = Arc::new(ManualClock::new(NOW));
    let svc = start_with(sample_config(), clock.clone()).await;
    let client = ServiceClient::new(svc.base_url());
    let token = |id: &'static str, secret: &'static str| {
        let client = &client;
        async move {
            let req = GrantRequest::new(GrantType::ClientCredentials, id, "vehicle/localisation").with_secret(secret);
            client.request_token(&req, WireFormat::Cbor).await.map(|r| r.access_token.bearer()).map_err(|e| format!("{id}: {e}"))
        }
    };
    let user = token(CLIENT.0, CLIENT.1).await?;
    let revoked = token(CLIENT.0, CLIENT.1).await?;
    client.revoke_token(ADMIN, &revoked).await.map_err(|e| e.to_string())?;
    let blocked = token("blocked-client", "blocked").await?;
    let admin = token(ADMIN.0, ADMIN.1).await?;

    let cases: Vec<(&str, &str, u16, &str)> = vec![
        ("vehicle/localisation", user.as_str(), 200, "Allow"),
        ("vehicle/localisation", "not-a-token", 401, "TokenInvalid"),
        ("vehicle/localisation", revoked.as_str(), 401, "TokenRevoked"),
        ("vehicle/localisation", blocked.as_str(), 403, "PolicyDeny"),
        ("door/lock", user.as_str(), 403, "PolicyNotApplicable"),
        ("vehicle/diagnostics", user.as_str(), 403, "PolicyIndeterminate"),
        ("vehicle/localisation", admin.as_str(), 403, "ObligationFailed(CheckSubscription)"),
    ];
    let mut seen = Vec::new();
    for (path, bearer, status, reason) in cases {
        let reply = client.get_resource(path, Some(bearer), None).await.map_err(|e| e.to_string())?;
        ensure!((reply.status, reply.reason.as_deref()) == (status, Some(reason)), "{path}: expected {status} {reason}, got {} {:?}", reply.status, reply.reason);
        seen.push(format!("{reason}={status}"));
    }
    clock.set(NOW + 3600);
    let reply = client.get_resource("vehicle/localisation", Some(&user), None).await.map_err(|e| e.to_string())?;
    ensure!((reply.status, reply.reason.as_deref()) == (401, Some("TokenExpired")), "at exp: {} {:?}", reply.status, reply.reason);
    seen.push("TokenExpired=401".into());
    for s in &seen[1..] {
        let reason = s.split('=').next().unwrap();
        ensure!(DenyReason::parse(reason).is_some(), "{reason} is not a deny reason");
    }
    svc.shutdown().await.map_err(|e| e.to_string())?;
    Ok(seen[1..].join(", "))
}

// ---- load harness ----

const LAMBDAS: [f64; 4] = [1.0, 0.2, 0.0022, 0.0011];

fn poisson(lambda: f64, duration: f64, seed: u64) -> WorkloadSpec {
    WorkloadSpec { pattern: Pattern::Poisson, users: 1000, lambda, duration, seed, ..WorkloadSpec::default() }
}

/// Requests sent inside the measured window, per second.
fn sent_rate(spec: &WorkloadSpec, samples: &[capodaz::bench::Sample]) -> f64 {
    let (from, to) = spec.measured_window();
    let n = samples.iter().filter(|s| (s.send_time as f64 / 1e9) >= from).count();
    n as f64 / (to - from)
}

/// Two-sided 99.9% interval of a Poisson count with mean `mu` (normal
/// approximation with continuity correction).
fn poisson_interval(mu: f64) -> (f64, f64) {
    let half = 3.2905 * mu.sqrt() + 0.5;
    (mu - half, mu + half)
}

async fn poisson_fidelity() -> Check {
    let mut notes = Vec::new();
    let mut failures = Vec::new();
    for (i, lambda) in LAMBDAS.into_iter().enumerate() {
        let expected = 1000.0 * lambda;

        // the literal 60 s run: its count must be a plausible Poisson draw
        let spec = poisson(lambda, 60.0, 10 + i as u64);
        let samples = simulate(&spec, &mut SimTarget::stub(StubModel::uncapped(0.001))).await.map_err(|e| e.to_string())?;
        let rate60 = sent_rate(&spec, &samples);
        let (from, to) = spec.measured_window();
        let (lo, hi) = poisson_interval(expected * (to - from));
        let count = rate60 * (to - from);
        if count < lo || count > hi {
            failures.push(format!("λ={lambda}: 60 s count {count} outside Poisson 99.9% [{lo:.0}, {hi:.0}]"));
        }

        // rate within 5% over a horizon holding at least 10,000 expected arrivals
        let horizon = (10_000.0 / expected / (1.0 - spec.warmup)).max(60.0);
        let spec = poisson(lambda, horizon, 20 + i as u64);
        let samples = simulate(&spec, &mut SimTarget::stub(StubModel::uncapped(0.001))).await.map_err(|e| e.to_string())?;
        let rate = sent_rate(&spec, &samples);
        if (rate - expected).abs() > 0.05 * expected {
            failures.push(format!("λ={lambda}: rate {rate:.4} over {horizon:.0} s not within 5% of {expected}"));
        }

        // KS on the first ten gaps of every user, from a run long enough
        // that no user's tenth gap is cut by the end of the run
        let spec = poisson(lambda, 60.0 / lambda, 30 + i as u64);
        let samples = simulate(&spec, &mut SimTarget::stub(StubModel::uncapped(0.001))).await.map_err(|e| e.to_string())?;
        let mut per_user: Vec<Vec<u64>> = vec![Vec::new(); spec.users];
        for s in &samples {
            per_user[s.user_index].push(s.send_time);
        }
        let mut gaps = Vec::with_capacity(10 * spec.users);
        for times in &per_user {
            ensure!(times.len() >= 11, "λ={lambda}: a user sent only {} requests", times.len());
            gaps.extend(times.windows(2).take(10).map(|w| (w[1] - w[0]) as f64 / 1e9));
        }
        let d = ks_statistic(&gaps, |x| exp_cdf(lambda, x));
        let crit = ks_critical_value(gaps.len(), 0.01);
        if d >= crit {
            failures.push(format!("λ={lambda}: KS D={d:.4} >= {crit:.4}"));
        }
        notes.push(format!(
            "λ={lambda}: 60 s rate {rate60:.3} ({:+.1}%), {horizon:.0} s rate {rate:.4} ({:+.2}%), KS D={d:.4}<{crit:.4}",
            100.0 * (rate60 / expected - 1.0),
            100.0 * (rate / expected - 1.0)
        ));
    }
    ensure!(failures.is_empty(), "{}", failures.join("; "));
    Ok(notes.join("; "))
}

async fn saturation() -> Check {
    let model = StubModel::capacity(100.0, 10, 10);
    let mut spec = WorkloadSpec { request: RequestTemplate { path: "/".into(), ..RequestTemplate::default() }, ..poisson(1.0, 10.0, 4) };
    let stub = StubServer::start(model.clone()).await.map_err(|e| e.to_string())?;
    spec.target = stub.url();
    let samples = capodaz::bench::run_workload(&spec).await.map_err(|e| e.to_string());
    stub.shutdown().await;
    let samples = samples?;
    let live = aggregate_spec(&spec, &samples);
    let offered = sent_rate(&spec, &samples);
    let rejected = samples.iter().filter(|s| s.status == SampleStatus::HttpError(503)).count();

    let sim_spec = WorkloadSpec { duration: 60.0, ..spec.clone() };
    let sim = aggregate_spec(&sim_spec, &simulate(&sim_spec, &mut SimTarget::stub(model)).await.map_err(|e| e.to_string())?);
    ensure!((offered - 1000.0).abs() < 100.0, "offered load {offered:.1} req/s is not about 1000");
    ensure!((live.throughput - 100.0).abs() <= 10.0, "live throughput {:.1} req/s", live.throughput);
    ensure!((sim.throughput - 100.0).abs() <= 10.0, "virtual-time throughput {:.1} req/s", sim.throughput);
    Ok(format!(
        "offered {offered:.0} req/s against C=100: live {:.1} req/s ({rejected} rejected with 503), virtual time {:.1} req/s",
        live.throughput, sim.throughput
    ))
}

async fn response_law() -> Check {
    let mut notes = Vec::new();
    for (users, latency) in [(100, 0.010), (500, 0.056)] {
        let live = selftest_response_law(latency, users, 1.0, 12.0, true).await.map_err(|e| e.to_string())?;
        let sim = selftest_response_law(latency, users, 1.0, 60.0, false).await.map_err(|e| e.to_string())?;
        ensure!(live.passed, "N={users} R={latency}: live {:.1} vs predicted {:.1}", live.measured, live.predicted);
        ensure!(sim.passed, "N={users} R={latency}: virtual {:.1} vs predicted {:.1}", sim.measured, sim.predicted);
        notes.push(format!(
            "N={users} R={}ms: predicted {:.1}, live {:.1} ({:+.1}%), virtual {:.1} ({:+.1}%)",
            latency * 1e3,
            live.predicted,
            live.measured,
            100.0 * (live.measured / live.predicted - 1.0),
            sim.measured,
            100.0 * (sim.measured / sim.predicted - 1.0)
        ));
    }
    Ok(notes.join("; "))
}

fn service_driver(epoch: i64) -> Result<Driver, String> {
    let clock = Arc::new(ManualClock::new(epoch));
    let cfg: ServiceConfig = sample_config();
    let state = Arc::new(ServiceState::from_config(cfg).map_err(|e| e.to_string())?.with_clock(clock.clone()));
    Ok(Driver::Simulated(SimTarget::service(ServiceTarget::new(state, clock), StubModel::capacity(500.0, 1, 4096), epoch)))
}

fn dir_contents(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_str().unwrap().to_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

async fn three_rounds() -> Check {
    let template = WorkloadSpec { request: RequestTemplate::resource_read("vehicle/localisation", CLIENT.0, CLIENT.1), seed: 7, ..WorkloadSpec::default() };
    let plan = RoundPlan::default_plan(&template);
    ensure!(plan.len() == 14, "default plan has {} cells", plan.len());
    ensure!(plan.specs().all(|s| s.duration == 60.0), "cells are not 60 s");

    let mut driver = service_driver(1_700_000_000)?;
    let results = run_rounds(&plan, &mut driver).await;
    ensure!(results.aborted.is_none(), "aborted: {:?}", results.aborted);
    ensure!(results.reports.len() == 14, "{} reports", results.reports.len());
    for (spec, r) in &results.reports {
        ensure!(r.success_count > 0, "{}: no successes", r.label);
        if spec.pattern.is_closed_loop() {
            ensure!(r.failure_count == 0, "{}: {} failures against the service", r.label, r.failure_count);
        }
    }
    let out = tempfile::tempdir().unwrap();
    export_report(&results.reports, ExportFormat::Csv, out.path()).map_err(|e| e.to_string())?;
    export_report(&results.reports, ExportFormat::PlotData, out.path()).map_err(|e| e.to_string())?;
    let header = std::fs::read_to_string(out.path().join("report.csv")).unwrap().lines().next().unwrap().to_owned();
    for column in ["mean_latency", "mode_bucket", "latency_stddev", "throughput", "load_kbps", "time_to_success_cdf"] {
        ensure!(header.split(',').any(|c| c == column), "report.csv lacks {column}");
    }
    ensure!(header.split(',').count() == MetricsReport::FIELDS.len(), "header {header}");
    let files = dir_contents(out.path());
    for (_, r) in &results.reports {
        for f in [format!("cdf_{}.dat", r.label), format!("hist_{}.dat", r.label)] {
            ensure!(files.contains_key(&f), "{f} missing");
        }
    }
    for f in ["throughput_vs_users.dat", "throughput_poisson_vs_uniform.dat"] {
        ensure!(files.contains_key(f), "{f} missing");
    }

    // the same plan twice against the deterministic stub
    let mut runs = Vec::new();
    for _ in 0..2 {
        let mut driver = Driver::Simulated(SimTarget::stub(StubModel::capacity(500.0, 1, 4096)));
        let rerun = run_rounds(&plan, &mut driver).await;
        let dir = tempfile::tempdir().unwrap();
        export_report(&rerun.reports, ExportFormat::Csv, dir.path()).map_err(|e| e.to_string())?;
        export_report(&rerun.reports, ExportFormat::PlotData, dir.path()).map_err(|e| e.to_string())?;
        runs.push(dir_contents(dir.path()));
    }
    ensure!(runs[0] == runs[1], "stub re-run differs");
    let tp: Vec<String> = results.reports.iter().map(|(_, r)| format!("{}={:.1}", r.label, r.throughput)).collect();
    Ok(format!("14 cells against the service, {} files each run, stub re-run byte-identical ({} files); throughput {}", files.len(), runs[0].len(), tp.join(" ")))
}

// ---- CBOR ----

fn leaf() -> impl Strategy<Value = CborValue> {
    prop_oneof![
        any::<u64>().prop_map(CborValue::Unsigned),
        any::<u64>().prop_map(CborValue::Negative),
        proptest::collection::vec(any::<u8>(), 0..24).prop_map(CborValue::Bytes),
        "\\PC{0,12}".prop_map(CborValue::Text),
        any::<bool>().prop_map(CborValue::Bool),
        Just(CborValue::Null),
    ]
}

fn value() -> impl Strategy<Value = CborValue> {
    let tree = leaf().prop_recursive(4, 24, 4, |inner| {
        prop_oneof![
            proptest::collection::vec(inner.clone(), 0..4).prop_map(CborValue::Array),
            proptest::collection::btree_map("[a-z]{0,6}", inner.clone(), 0..4)
                .prop_map(|m| CborValue::Map(m.into_iter().map(|(k, v)| (CborValue::Text(k), v)).collect())),
            (0u64..100_000, inner).prop_map(|(t, v)| CborValue::Tagged(t, Box::new(v))),
        ]
    });
    // at least four containers deep
    (tree, proptest::collection::vec((0u8..3, any::<u32>()), 4..6)).prop_map(|(v, wraps)| {
        wraps.into_iter().fold(v, |v, (kind, n)| match kind {
            0 => CborValue::Array(vec![CborValue::Unsigned(n as u64), v]),
            1 => CborValue::Map(vec![(CborValue::text(n.to_string()), v)]),
            _ => CborValue::Tagged(n as u64, Box::new(v)),
        })
    })
}

fn depth(v: &CborValue) -> usize {
    match v {
        CborValue::Array(items) => 1 + items.iter().map(depth).max().unwrap_or(0),
        CborValue::Map(entries) => 1 + entries.iter().map(|(k, v)| depth(k).max(depth(v))).max().unwrap_or(0),
        CborValue::Tagged(_, inner) => 1 + depth(inner),
        _ => 0,
    }
}

/// Every head that can carry `n` for major type `major`, narrowest first.
fn widened_heads(major: u8, n: u64) -> Vec<Vec<u8>> {
    let m = major << 5;
    let mut heads = Vec::new();
    if n < 24 {
        heads.push(vec![m | n as u8]);
    }
    if n <= u8::MAX as u64 {
        heads.push(vec![m | 24, n as u8]);
    }
    if n <= u16::MAX as u64 {
        heads.push([vec![m | 25], (n as u16).to_be_bytes().to_vec()].concat());
    }
    if n <= u32::MAX as u64 {
        heads.push([vec![m | 26], (n as u32).to_be_bytes().to_vec()].concat());
    }
    heads.push([vec![m | 27], n.to_be_bytes().to_vec()].concat());
    heads
}

fn cbor_codec() -> Check {
    let mut runner = TestRunner::new(Config { cases: 10_000, failure_persistence: None, ..Config::default() });
    let max_depth = std::cell::Cell::new(0);
    let prefixes = std::cell::Cell::new(0usize);
    let result = runner.run(&value(), |v| {
        let bytes = encode_cbor(&v).unwrap();
        prop_assert_eq!(&decode_cbor(&bytes).unwrap(), &v);
        prop_assert!(depth(&v) >= 4);
        max_depth.set(max_depth.get().max(depth(&v)));
        for cut in 0..bytes.len() {
            prop_assert_eq!(decode_cbor(&bytes[..cut]), Err(CborError::TruncatedInput), "prefix {} of {:?}", cut, bytes);
            prefixes.set(prefixes.get() + 1);
        }
        Ok(())
    });
    result.map_err(|e| format!("round trip: {e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut edges: Vec<u64> = vec![0, 1, 23, 24, 255, 256, 65_535, 65_536, u32::MAX as u64, u32::MAX as u64 + 1, u64::MAX];
    edges.extend((0..10_000).map(|_| rng.gen::<u64>() >> rng.gen_range(0..64)));
    for n in &edges {
        let n = *n;
        for (major, value) in [(0u8, CborValue::Unsigned(n)), (1, CborValue::Negative(n))] {
            let heads = widened_heads(major, n);
            let encoded = encode_cbor(&value).unwrap();
            ensure!(encoded == heads[0], "{value:?} encoded as {encoded:02x?}, narrowest is {:02x?}", heads[0]);
            ensure!(heads.iter().all(|h| h.len() >= encoded.len()), "{value:?} has a narrower head");
        }
    }
    for len in [0usize, 23, 24, 255, 256, 65_536] {
        let encoded = encode_cbor(&CborValue::Bytes(vec![0; len])).unwrap();
        let head = &widened_heads(2, len as u64)[0];
        ensure!(encoded.starts_with(head) && encoded.len() == head.len() + len, "byte string of {len} has head {:02x?}", &encoded[..head.len()]);
    }
    let json = cbor_to_json(&CborValue::Unsigned(1)).is_ok();
    ensure!(json, "json bridge");
    Ok(format!(
        "10000 generated values (depth 4..={max_depth}) round-trip; {prefixes} strict prefixes rejected as truncated; {} integers at the narrowest of their widened heads",
        edges.len() * 2,
        max_depth = max_depth.get(),
        prefixes = prefixes.get()
    ))
}
