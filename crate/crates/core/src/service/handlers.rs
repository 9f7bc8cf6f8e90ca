use std::sync::Arc;

use axum::body::{to_bytes, Body, Bytes};
use axum::extract::{Path, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use super::client::WireFormat;
use super::ServiceState;
use crate::codec::{cbor_to_json, decode_cbor, encode_cbor, json_to_cbor, CborValue};
use crate::policy::{pep_enforce, AttributeId, AttributeValue, DenyReason, EnforcementContext, EnforcementResult, RawRequest};
use crate::registrar::{TokenRecord, TokenStatus};
use crate::token::{handle_grant, handle_pop_grant, inspect_token, CoseKey, wire_from_bearer, CoseMac0, GrantError, GrantRequest, GrantType};

pub const REASON_HEADER: &str = "x-capodaz-reason";
const PLATFORM_HEADER: &str = "x-capodaz-platform";

fn format_of(headers: &HeaderMap) -> Option<WireFormat> {
    let ct = headers.get(header::CONTENT_TYPE)?.to_str().ok()?;
    WireFormat::from_mime(ct.split(';').next()?.trim())
}

fn encode_doc(format: WireFormat, doc: &CborValue) -> Vec<u8> {
    match format {
        WireFormat::Json => {
            let json = cbor_to_json(doc).unwrap_or(serde_json::Value::Null);
            serde_json::to_vec(&json).expect("JSON serializes")
        }
        WireFormat::Cbor | WireFormat::Cose => encode_cbor(doc).expect("documents encode"),
    }
}

fn decode_doc(format: WireFormat, body: &[u8]) -> Result<CborValue, String> {
    match format {
        WireFormat::Json => {
            let json: serde_json::Value = serde_json::from_slice(body).map_err(|e| e.to_string())?;
            json_to_cbor(&json).map_err(|e| e.to_string())
        }
        WireFormat::Cbor | WireFormat::Cose => decode_cbor(body).map_err(|e| e.to_string()),
    }
}

fn reply(status: StatusCode, format: WireFormat, doc: &CborValue, reason: &str) -> Response {
    // Error documents in a COSE exchange are plain CBOR.
    let ct = if format == WireFormat::Cose && status != StatusCode::OK { WireFormat::Cbor } else { format };
    let mut resp = (status, encode_doc(ct, doc)).into_response();
    let h = resp.headers_mut();
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static(ct.mime()));
    if let Ok(v) = HeaderValue::from_str(reason) {
        h.insert(REASON_HEADER, v);
    }
    resp
}

fn error_doc(code: &str, reason: &str) -> CborValue {
    CborValue::Map(vec![(CborValue::text("code"), CborValue::text(code)), (CborValue::text("reason"), CborValue::text(reason))])
}

fn error(status: StatusCode, format: WireFormat, code: &str, reason: impl AsRef<str>) -> Response {
    reply(status, format, &error_doc(code, reason.as_ref()), code)
}

fn grant_status(e: &GrantError) -> StatusCode {
    match e {
        GrantError::UnknownClient(_) | GrantError::BadCredentials => StatusCode::UNAUTHORIZED,
        _ => StatusCode::BAD_REQUEST,
    }
}

fn grant_error(format: WireFormat, e: &GrantError) -> Response {
    error(grant_status(e), format, e.code(), e.to_string())
}

/// `Authorization: Basic` credentials.
fn basic_auth(headers: &HeaderMap) -> Option<(String, String)> {
    let value = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    let encoded = value.strip_prefix("Basic ").or_else(|| value.strip_prefix("basic "))?;
    let decoded = String::from_utf8(STANDARD.decode(encoded.trim()).ok()?).ok()?;
    let (id, secret) = decoded.split_once(':')?;
    Some((id.to_owned(), secret.to_owned()))
}

fn bearer(headers: &HeaderMap) -> Option<String> {
    let value = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    value.strip_prefix("Bearer ").or_else(|| value.strip_prefix("bearer ")).map(|s| s.trim().to_owned())
}

/// A refresh request MACed with the proof-of-possession key of the token
/// being refreshed. Yields the request, that key and, when the payload names
/// no previous token, the record of the live token the key is bound to.
fn open_sealed_refresh(st: &ServiceState, body: &[u8]) -> Result<(GrantRequest, CoseKey, Option<TokenRecord>), GrantError> {
    let bad = |m: &str| GrantError::InvalidRequest(m.to_owned());
    let envelope = CoseMac0::parse(body).map_err(|e| bad(&e.to_string()))?;
    let doc = decode_cbor(&envelope.payload).map_err(|e| bad(&e.to_string()))?;
    let req = GrantRequest::from_cbor(&doc)?;
    let (pop, bound) = match (req.grant_type, &req.refresh_material) {
        (GrantType::RefreshToken, material) => {
            let prior = inspect_token(material.as_deref().unwrap_or_default(), &st.issuer_key)
                .map_err(|_| GrantError::BadCredentials)?;
            (prior.cnf.ok_or(GrantError::BadCredentials)?, None)
        }
        // A client-credentials payload names its token only through the kid.
        (GrantType::ClientCredentials, None) => {
            let kid = envelope.kid.as_deref().ok_or(GrantError::BadCredentials)?;
            let record = st.registrar.find_by_cnf_kid(kid).ok_or(GrantError::BadCredentials)?;
            if record.client_id != req.client_id || st.registrar.lookup(&record.jti, st.now()) != TokenStatus::Active {
                return Err(GrantError::BadCredentials);
            }
            (record.cnf_key.clone().ok_or(GrantError::BadCredentials)?, Some(record))
        }
        _ => return Err(bad("application/cose bodies carry refresh requests only")),
    };
    let secret = pop.mac_secret().map_err(|_| GrantError::BadCredentials)?;
    if envelope.kid.as_deref() != Some(pop.kid.as_slice()) || !envelope.verify(secret) {
        return Err(GrantError::BadCredentials);
    }
    Ok((req, pop, bound))
}

pub(super) async fn token(State(st): State<Arc<ServiceState>>, headers: HeaderMap, body: Bytes) -> Response {
    let Some(format) = format_of(&headers) else {
        return error(StatusCode::UNSUPPORTED_MEDIA_TYPE, WireFormat::Json, "UnsupportedMediaType", "use application/json, application/cbor or application/cose");
    };
    let (mut req, response_key, bound) = if format == WireFormat::Cose {
        match open_sealed_refresh(&st, &body) {
            Ok((req, pop, bound)) => (req, Some(pop), bound),
            Err(e) => return grant_error(format, &e),
        }
    } else {
        let doc = match decode_doc(format, &body) {
            Ok(d) => d,
            Err(e) => return error(StatusCode::BAD_REQUEST, format, "MalformedRequest", e),
        };
        match GrantRequest::from_cbor(&doc) {
            Ok(r) => (r, None, None),
            Err(e) => return grant_error(format, &e),
        }
    };

    if let Some((id, secret)) = basic_auth(&headers) {
        if req.client_id.is_empty() {
            req.client_id = id.clone();
        }
        if req.client_id != id {
            return grant_error(format, &GrantError::BadCredentials);
        }
        req.client_secret.get_or_insert(secret);
    }
    // Outside a COSE envelope, refresh needs the client secret as well.
    if req.grant_type == GrantType::RefreshToken && response_key.is_none() && req.client_secret.is_none() {
        return grant_error(format, &GrantError::BadCredentials);
    }

    let now = st.now();
    let prior_jti = match req.grant_type {
        GrantType::RefreshToken => {
            let material = req.refresh_material.as_deref().unwrap_or_default();
            match inspect_token(material, &st.issuer_key) {
                Ok(prior) if st.registrar.lookup(&prior.claims.jti, now) == TokenStatus::Revoked => {
                    return grant_error(format, &GrantError::BadCredentials)
                }
                Ok(prior) => Some(prior.claims.jti),
                Err(_) => None,
            }
        }
        _ => bound.as_ref().map(|r| r.jti.clone()),
    };

    let granted = match &bound {
        Some(prior) => handle_pop_grant(&req, &prior.aud, &st.issuer_key, &st.clients, now),
        None => handle_grant(&req, &st.issuer_key, &st.clients, now),
    };
    let outcome = match granted {
        Ok(o) => o,
        Err(e) => return grant_error(format, &e),
    };
    if let Err(e) = st.registrar.register(TokenRecord::from_token(&outcome.token, now)) {
        return error(StatusCode::INTERNAL_SERVER_ERROR, format, "RegistrarFailure", e.to_string());
    }
    if let Some(jti) = prior_jti {
        // The refreshed token replaces the old one.
        let _ = st.registrar.revoke(&jti);
    }
    tracing::debug!(jti = %outcome.token.claims.jti, grant = %req.grant_type, "token issued");

    let doc = outcome.response.to_cbor();
    match response_key {
        Some(pop) => {
            let payload = encode_cbor(&doc).expect("responses encode");
            match CoseMac0::seal(payload, &pop) {
                Ok(sealed) => {
                    let mut resp = (StatusCode::OK, sealed.to_bytes()).into_response();
                    resp.headers_mut().insert(header::CONTENT_TYPE, HeaderValue::from_static(WireFormat::Cose.mime()));
                    resp
                }
                Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, WireFormat::Cbor, "IssuanceFailed", e.to_string()),
            }
        }
        None => reply(StatusCode::OK, format, &doc, "Issued"),
    }
}

fn admin_check(st: &ServiceState, headers: &HeaderMap) -> bool {
    basic_auth(headers)
        .and_then(|(id, secret)| st.clients.get(&id).map(|c| c.admin && c.verify_secret(&secret)))
        .unwrap_or(false)
}

/// `{jti}` or `{token}` → the jti it names.
fn jti_from_doc(st: &ServiceState, doc: &CborValue) -> Option<String> {
    if let Some(jti) = doc.get("jti").and_then(CborValue::as_text) {
        return Some(jti.to_owned());
    }
    let wire = match doc.get("token")? {
        CborValue::Text(s) => wire_from_bearer(s).ok()?,
        CborValue::Bytes(b) => b.clone(),
        _ => return None,
    };
    inspect_token(&wire, &st.issuer_key).ok().map(|t| t.claims.jti)
}

pub(super) async fn introspect(State(st): State<Arc<ServiceState>>, headers: HeaderMap, body: Bytes) -> Response {
    let format = format_of(&headers).unwrap_or(WireFormat::Json);
    if !admin_check(&st, &headers) {
        return error(StatusCode::UNAUTHORIZED, format, "Unauthenticated", "admin client credentials required");
    }
    let doc = match decode_doc(format, &body) {
        Ok(d) => d,
        Err(e) => return error(StatusCode::BAD_REQUEST, format, "MalformedRequest", e),
    };
    let Some(jti) = jti_from_doc(&st, &doc) else {
        return error(StatusCode::NOT_FOUND, format, "UnknownToken", "no such token");
    };
    let Some(record) = st.registrar.get(&jti) else {
        return error(StatusCode::NOT_FOUND, format, "UnknownToken", "no such token");
    };
    let status = st.registrar.lookup(&jti, st.now());
    let mut e = vec![
        (CborValue::text("status"), CborValue::text(status.as_str())),
        (CborValue::text("jti"), CborValue::text(&record.jti)),
        (CborValue::text("aud"), CborValue::text(&record.aud)),
        (CborValue::text("client_id"), CborValue::text(&record.client_id)),
        (CborValue::text("iat"), CborValue::integer(record.issued_at.into()).expect("i64 fits")),
        (CborValue::text("exp"), CborValue::integer(record.exp.into()).expect("i64 fits")),
    ];
    if let Some(kid) = &record.cnf_kid {
        e.push((CborValue::text("cnf_kid"), CborValue::Bytes(kid.clone())));
    }
    reply(StatusCode::OK, format, &CborValue::Map(e), status.as_str())
}

pub(super) async fn revoke(State(st): State<Arc<ServiceState>>, headers: HeaderMap, body: Bytes) -> Response {
    let format = format_of(&headers).unwrap_or(WireFormat::Json);
    if !admin_check(&st, &headers) {
        return error(StatusCode::UNAUTHORIZED, format, "Unauthenticated", "admin client credentials required");
    }
    let doc = match decode_doc(format, &body) {
        Ok(d) => d,
        Err(e) => return error(StatusCode::BAD_REQUEST, format, "MalformedRequest", e),
    };
    let Some(jti) = jti_from_doc(&st, &doc) else {
        return error(StatusCode::NOT_FOUND, format, "UnknownToken", "no such token");
    };
    match st.registrar.revoke(&jti) {
        Ok(()) => reply(
            StatusCode::OK,
            format,
            &CborValue::Map(vec![
                (CborValue::text("status"), CborValue::text("revoked")),
                (CborValue::text("jti"), CborValue::text(&jti)),
            ]),
            "revoked",
        ),
        Err(e) => error(StatusCode::NOT_FOUND, format, "UnknownToken", e.to_string()),
    }
}

/// Single mapping from deny reasons to status codes.
pub(super) fn deny_status(reason: &DenyReason) -> StatusCode {
    if reason.is_token_failure() {
        StatusCode::UNAUTHORIZED
    } else {
        StatusCode::FORBIDDEN
    }
}

fn with_reason(mut resp: Response, reason: &str) -> Response {
    if let Ok(v) = HeaderValue::from_str(reason) {
        resp.headers_mut().insert(REASON_HEADER, v);
    }
    resp
}

pub(super) async fn resource(State(st): State<Arc<ServiceState>>, Path(path): Path<String>, request: Request) -> Response {
    let (parts, body) = request.into_parts();
    let json = |status: StatusCode, code: &str, reason: &str| error(status, WireFormat::Json, code, reason);
    let Some(descriptor) = st.config.resources.iter().find(|r| r.path.trim_matches('/') == path.trim_matches('/')) else {
        return json(StatusCode::NOT_FOUND, "UnknownResource", "no such resource");
    };
    let action = match parts.method {
        Method::GET => "read",
        Method::POST => "write",
        _ => return json(StatusCode::METHOD_NOT_ALLOWED, "UnsupportedAction", "use GET to read or POST to write"),
    };
    if !descriptor.actions.iter().any(|a| a == action) {
        return json(StatusCode::METHOD_NOT_ALLOWED, "UnsupportedAction", &format!("{action} is not offered"));
    }
    let body = match to_bytes(Body::new(body), st.config.proxy.max_body_bytes).await {
        Ok(b) => b,
        Err(_) => return json(StatusCode::PAYLOAD_TOO_LARGE, "PayloadTooLarge", "request body too large"),
    };

    let mut raw = RawRequest::new(bearer(&parts.headers), descriptor.resource_id.clone(), action);
    for (name, values) in &descriptor.attributes {
        raw.attributes
            .insert(AttributeId::resource(name.clone()), values.iter().map(AttributeValue::text).collect());
    }
    if let Some(p) = parts.headers.get(PLATFORM_HEADER).and_then(|v| v.to_str().ok()) {
        raw.attributes.insert(AttributeId::subject("platform"), vec![AttributeValue::text(p)]);
    }
    let policies = st.policies.current();
    let ctx = EnforcementContext {
        issuer_key: &st.issuer_key,
        registrar: st.registrar.as_ref(),
        validators: &st.validators,
        sources: &st.sources,
    };
    let enforcement = pep_enforce(&raw, &policies, &ctx, st.now());
    match enforcement.result {
        EnforcementResult::Allow => {
            let resp = match action {
                "read" => (StatusCode::OK, descriptor.body.clone()).into_response(),
                _ => {
                    let doc = serde_json::json!({
                        "resource_id": descriptor.resource_id,
                        "action": action,
                        "accepted_bytes": body.len(),
                    });
                    (StatusCode::OK, [(header::CONTENT_TYPE, "application/json")], doc.to_string()).into_response()
                }
            };
            with_reason(resp, "Allow")
        }
        EnforcementResult::Deny(reason) => {
            let text = reason.to_string();
            let code = match &reason {
                DenyReason::ObligationFailed(_) => "ObligationFailed",
                _ => text.as_str(),
            };
            let resp = error(deny_status(&reason), WireFormat::Json, code, &text);
            with_reason(resp, &text)
        }
    }
}
