//! A small HTTP client for the service, used by examples, tests and the CLI.

use thiserror::Error;

use crate::codec::{cbor_to_json, decode_cbor, encode_cbor, json_to_cbor, CborValue};
use crate::token::{CoseKey, CoseMac0, GrantRequest, TokenResponse};

use super::handlers::REASON_HEADER;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WireFormat {
    Json,
    Cbor,
    /// A COSE_Mac0 envelope around a CBOR document.
    Cose,
}

impl WireFormat {
    pub fn mime(self) -> &'static str {
        match self {
            WireFormat::Json => "application/json",
            WireFormat::Cbor => "application/cbor",
            WireFormat::Cose => "application/cose",
        }
    }

    pub fn from_mime(mime: &str) -> Option<Self> {
        match mime {
            "application/json" => Some(WireFormat::Json),
            "application/cbor" => Some(WireFormat::Cbor),
            "application/cose" => Some(WireFormat::Cose),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("HTTP {status}: {code}")]
    Rejected { status: u16, code: String, body: String },
    #[error("undecodable response: {0}")]
    Decode(String),
}

/// Status, reason header and body of a resource request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceReply {
    pub status: u16,
    pub reason: Option<String>,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct ServiceClient {
    base: String,
    http: reqwest::Client,
}

fn decode(format: WireFormat, bytes: &[u8]) -> Result<CborValue, ClientError> {
    match format {
        WireFormat::Json => {
            let json: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| ClientError::Decode(e.to_string()))?;
            json_to_cbor(&json).map_err(|e| ClientError::Decode(e.to_string()))
        }
        _ => decode_cbor(bytes).map_err(|e| ClientError::Decode(e.to_string())),
    }
}

fn encode(format: WireFormat, doc: &CborValue) -> Vec<u8> {
    match format {
        WireFormat::Json => serde_json::to_vec(&cbor_to_json(doc).unwrap_or_default()).expect("JSON serializes"),
        _ => encode_cbor(doc).expect("documents encode"),
    }
}

async fn rejected(resp: reqwest::Response) -> ClientError {
    let status = resp.status().as_u16();
    let code = resp
        .headers()
        .get(REASON_HEADER)
        .and_then(|v| v.to_str().ok())
        .unwrap_or_default()
        .to_owned();
    let body = resp.text().await.unwrap_or_default();
    ClientError::Rejected { status, code, body }
}

impl ServiceClient {
    pub fn new(base_url: impl Into<String>) -> Self {
        ServiceClient { base: base_url.into().trim_end_matches('/').to_owned(), http: reqwest::Client::new() }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.base, path.trim_start_matches('/'))
    }

    /// Posts a raw body to `/token` and returns status and body bytes.
    pub async fn post_token_raw(&self, format: WireFormat, body: Vec<u8>) -> Result<(u16, Vec<u8>), ClientError> {
        let resp = self
            .http
            .post(self.url("token"))
            .header("content-type", format.mime())
            .body(body)
            .send()
            .await?;
        Ok((resp.status().as_u16(), resp.bytes().await?.to_vec()))
    }

    /// Requests a token with a JSON or CBOR body.
    pub async fn request_token(&self, req: &GrantRequest, format: WireFormat) -> Result<TokenResponse, ClientError> {
        let resp = self
            .http
            .post(self.url("token"))
            .header("content-type", format.mime())
            .body(encode(format, &req.to_cbor()))
            .send()
            .await?;
        if !resp.status().is_success() {
            return Err(rejected(resp).await);
        }
        let doc = decode(format, &resp.bytes().await?)?;
        TokenResponse::from_cbor(&doc).map_err(|e| ClientError::Decode(e.to_string()))
    }

    /// Refreshes a token, proving possession of its key `pop` by MACing the
    /// request with it. The response comes back MACed with the same key.
    pub async fn refresh_sealed(&self, req: &GrantRequest, pop: &CoseKey) -> Result<TokenResponse, ClientError> {
        let payload = encode_cbor(&req.to_cbor()).expect("requests encode");
        let sealed = CoseMac0::seal(payload, pop).map_err(|e| ClientError::Decode(e.to_string()))?;
        let resp = self
            .http
            .post(self.url("token"))
            .header("content-type", WireFormat::Cose.mime())
            .body(sealed.to_bytes())
            .send()
            .await?;
        if !resp.status().is_success() {
            return Err(rejected(resp).await);
        }
        let envelope = CoseMac0::parse(&resp.bytes().await?).map_err(|e| ClientError::Decode(e.to_string()))?;
        let secret = pop.mac_secret().map_err(|e| ClientError::Decode(e.to_string()))?;
        if !envelope.verify(secret) {
            return Err(ClientError::Decode("response MAC does not verify".into()));
        }
        let doc = decode_cbor(&envelope.payload).map_err(|e| ClientError::Decode(e.to_string()))?;
        TokenResponse::from_cbor(&doc).map_err(|e| ClientError::Decode(e.to_string()))
    }

    async fn resource(&self, req: reqwest::RequestBuilder, bearer: Option<&str>, platform: Option<&str>) -> Result<ResourceReply, ClientError> {
        let mut req = req;
        if let Some(b) = bearer {
            req = req.bearer_auth(b);
        }
        if let Some(p) = platform {
            req = req.header("x-capodaz-platform", p);
        }
        let resp = req.send().await?;
        let status = resp.status().as_u16();
        let reason = resp.headers().get(REASON_HEADER).and_then(|v| v.to_str().ok()).map(str::to_owned);
        Ok(ResourceReply { status, reason, body: resp.bytes().await?.to_vec() })
    }

    pub async fn get_resource(&self, path: &str, bearer: Option<&str>, platform: Option<&str>) -> Result<ResourceReply, ClientError> {
        let req = self.http.get(self.url(&format!("resource/{}", path.trim_start_matches('/'))));
        self.resource(req, bearer, platform).await
    }

    pub async fn post_resource(&self, path: &str, bearer: Option<&str>, body: Vec<u8>) -> Result<ResourceReply, ClientError> {
        let req = self.http.post(self.url(&format!("resource/{}", path.trim_start_matches('/')))).body(body);
        self.resource(req, bearer, None).await
    }

    async fn admin(&self, route: &str, admin: (&str, &str), target: serde_json::Value) -> Result<serde_json::Value, ClientError> {
        let resp = self
            .http
            .post(self.url(route))
            .basic_auth(admin.0, Some(admin.1))
            .header("content-type", "application/json")
            .body(target.to_string())
            .send()
            .await?;
        if !resp.status().is_success() {
            return Err(rejected(resp).await);
        }
        serde_json::from_slice(&resp.bytes().await?).map_err(|e| ClientError::Decode(e.to_string()))
    }

    /// Registrar status of `jti`, as `{status, jti, aud, client_id, iat, exp}`.
    pub async fn introspect(&self, admin: (&str, &str), jti: &str) -> Result<serde_json::Value, ClientError> {
        self.admin("introspect", admin, serde_json::json!({ "jti": jti })).await
    }

    /// As [`introspect`](Self::introspect), naming the token by its bearer form.
    pub async fn introspect_token(&self, admin: (&str, &str), bearer: &str) -> Result<serde_json::Value, ClientError> {
        self.admin("introspect", admin, serde_json::json!({ "token": bearer })).await
    }

    pub async fn revoke(&self, admin: (&str, &str), jti: &str) -> Result<serde_json::Value, ClientError> {
        self.admin("revoke", admin, serde_json::json!({ "jti": jti })).await
    }

    pub async fn revoke_token(&self, admin: (&str, &str), bearer: &str) -> Result<serde_json::Value, ClientError> {
        self.admin("revoke", admin, serde_json::json!({ "token": bearer })).await
    }
}
