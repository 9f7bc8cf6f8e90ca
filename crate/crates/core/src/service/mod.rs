//! HTTP surface.
//!
//! | Route | Purpose |
//! |---|---|
//! | `POST /token` | grant endpoint; JSON, CBOR or COSE (refresh) bodies |
//! | `POST /introspect` | registrar status of a jti or token, admin clients only |
//! | `POST /revoke` | revokes a jti, admin clients only |
//! | `GET` / `POST /resource/{path}` | protected resources, read / write |
//! | anything else | forwarded upstream in the proxy role |
//!
//! Every resource response carries `X-Capodaz-Reason`: `Allow` or the deny
//! reason. Token failures answer 401, authorization failures 403. Error
//! bodies are `{code, reason}` documents in the request's content type.

mod client;
mod config;
mod handlers;
mod proxy;

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::routing::{any, post};
use axum::Router;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::clock::{Clock, SystemClock};
use crate::policy::{
    pap_load_file, AttributeSources, ObligationId, ObligationValidators, PaymentLedger, PlatformAllowList, PolicySet,
    PolicyStore, SubscriptionRegistry,
};
use crate::registrar::{spawn_sweeper, FileOpLog, Registrar};
use crate::token::{ClientDirectory, CoseKey};

pub use client::{ClientError, ResourceReply, ServiceClient, WireFormat};
pub use config::{ClientConfig, ObligationConfig, ProxyConfig, ResourceDescriptor, Role, ServiceConfig};
pub use handlers::REASON_HEADER;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot bind {0}: {1}")]
    BindFailure(String, std::io::Error),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("cannot parse configuration: {0}")]
    ConfigParse(String),
    #[error("cannot load policy: {0}")]
    PolicyLoadFailure(String),
    #[error("cannot load issuer key: {0}")]
    KeyLoadFailure(String),
    #[error("registrar: {0}")]
    Registrar(String),
    #[error("server error: {0}")]
    Runtime(String),
}

/// Shared state of a running service. Built from a [`ServiceConfig`], then
/// adjustable (clock, validators) before the router is created.
pub struct ServiceState {
    pub config: ServiceConfig,
    pub issuer_key: CoseKey,
    pub clients: ClientDirectory,
    pub registrar: Arc<Registrar>,
    pub policies: Arc<PolicyStore>,
    pub validators: ObligationValidators,
    pub subscriptions: Arc<SubscriptionRegistry>,
    pub balances: Arc<PaymentLedger>,
    pub platforms: Arc<PlatformAllowList>,
    pub sources: AttributeSources,
    pub clock: Arc<dyn Clock>,
    proxy: proxy::ProxyState,
}

pub fn load_issuer_key(path: &Path) -> Result<CoseKey, ServiceError> {
    let fail = |m: String| ServiceError::KeyLoadFailure(format!("{}: {m}", path.display()));
    let text = std::fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
    let json: serde_json::Value = serde_json::from_str(&text).map_err(|e| fail(e.to_string()))?;
    let key = CoseKey::from_json(&json).map_err(|e| fail(e.to_string()))?;
    key.mac_secret().map_err(|e| fail(e.to_string()))?;
    Ok(key)
}

impl ServiceState {
    pub fn from_config(config: ServiceConfig) -> Result<Self, ServiceError> {
        config.validate()?;
        let policy = match &config.policy_path {
            Some(p) => pap_load_file(p).map_err(|e| ServiceError::PolicyLoadFailure(e.to_string()))?,
            None => PolicySet::empty("empty"),
        };
        let issuer_key = match &config.issuer_key_path {
            Some(p) => load_issuer_key(p)?,
            None => CoseKey::generate_symmetric(&mut rand::thread_rng()),
        };
        let mut clients = ClientDirectory::new(config.token_default_ttl);
        for c in &config.clients {
            clients.register(c.to_spec()?);
        }
        let registrar = match &config.registrar_log {
            Some(path) => {
                let fail = |e: String| ServiceError::Registrar(format!("{}: {e}", path.display()));
                let registrar = match std::fs::File::open(path) {
                    Ok(f) => Registrar::replay(std::io::BufReader::new(f)).map_err(|e| fail(e.to_string()))?,
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => Registrar::new(),
                    Err(e) => return Err(fail(e.to_string())),
                };
                registrar.with_log(FileOpLog::open(path).map_err(|e| fail(e.to_string()))?)
            }
            None => Registrar::new(),
        };

        let subscriptions = Arc::new(SubscriptionRegistry::default());
        for s in &config.obligations.subscriptions {
            subscriptions.subscribe(s.clone(), None);
        }
        let balances = Arc::new(PaymentLedger::default());
        for (s, b) in &config.obligations.balances {
            balances.set_balance(s.clone(), *b);
        }
        let platforms = Arc::new(PlatformAllowList::new(config.obligations.platforms.iter().map(String::as_str)));
        let mut validators = ObligationValidators::new();
        validators.register(ObligationId::CheckSubscription, subscriptions.clone());
        validators.register(ObligationId::CheckPayment, balances.clone());
        validators.register(ObligationId::CheckPlatform, platforms.clone());

        let proxy = proxy::ProxyState::new(&config)?;
        Ok(ServiceState {
            config,
            issuer_key,
            clients,
            registrar: Arc::new(registrar),
            policies: Arc::new(PolicyStore::new(policy)),
            validators,
            subscriptions,
            balances,
            platforms,
            sources: AttributeSources::new(),
            clock: Arc::new(SystemClock),
            proxy,
        })
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_issuer_key(mut self, key: CoseKey) -> Self {
        self.issuer_key = key;
        self
    }

    pub fn with_policy(self, set: PolicySet) -> Self {
        self.policies.replace(set);
        self
    }

    pub fn now(&self) -> crate::UnixSeconds {
        self.clock.now()
    }
}

/// Routes for the configured role.
pub fn router(state: Arc<ServiceState>) -> Router {
    let role = state.config.role;
    let mut app = Router::new();
    if role.issues_tokens() {
        app = app
            .route("/token", post(handlers::token))
            .route("/introspect", post(handlers::introspect))
            .route("/revoke", post(handlers::revoke));
    }
    if role.serves_resources() {
        app = app.route("/resource/{*path}", any(handlers::resource));
    }
    if role == Role::ProxyResourceServer {
        app = app.fallback(proxy::forward);
    }
    app.with_state(state)
}

/// A running service.
pub struct ServiceHandle {
    local_addr: SocketAddr,
    state: Arc<ServiceState>,
    shutdown: Option<oneshot::Sender<()>>,
    server: JoinHandle<std::io::Result<()>>,
    sweeper: Option<JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.local_addr)
    }

    pub fn state(&self) -> &Arc<ServiceState> {
        &self.state
    }

    /// Stops accepting connections and waits up to `request_timeout` for
    /// in-flight requests to finish.
    pub async fn shutdown(mut self) -> Result<(), ServiceError> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(s) = self.sweeper.take() {
            s.abort();
        }
        let grace = Duration::from_secs(self.state.config.request_timeout);
        match tokio::time::timeout(grace, &mut self.server).await {
            Ok(Ok(Ok(()))) => Ok(()),
            Ok(Ok(Err(e))) => Err(ServiceError::Runtime(e.to_string())),
            Ok(Err(e)) => Err(ServiceError::Runtime(e.to_string())),
            Err(_) => {
                self.server.abort();
                Err(ServiceError::Runtime("in-flight requests did not drain in time".into()))
            }
        }
    }

    /// Runs until the server stops by itself.
    pub async fn wait(mut self) -> Result<(), ServiceError> {
        let result = (&mut self.server).await;
        if let Some(s) = self.sweeper.take() {
            s.abort();
        }
        match result {
            Ok(Ok(())) => Ok(()),
            Ok(Err(e)) => Err(ServiceError::Runtime(e.to_string())),
            Err(e) => Err(ServiceError::Runtime(e.to_string())),
        }
    }
}

/// Binds `state.config.listen_address` and starts serving.
pub async fn serve_state(state: ServiceState) -> Result<ServiceHandle, ServiceError> {
    let addr = state.config.listen_address.clone();
    let listener = TcpListener::bind(&addr).await.map_err(|e| ServiceError::BindFailure(addr.clone(), e))?;
    let local_addr = listener.local_addr().map_err(|e| ServiceError::BindFailure(addr, e))?;
    let state = Arc::new(state);
    let sweeper = (state.config.purge_interval > 0).then(|| {
        spawn_sweeper(state.registrar.clone(), state.clock.clone(), Duration::from_secs(state.config.purge_interval))
    });
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(state.clone()).into_make_service_with_connect_info::<SocketAddr>();
    let server = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = rx.await;
            })
            .await
    });
    tracing::info!(%local_addr, role = %state.config.role, "service listening");
    Ok(ServiceHandle { local_addr, state, shutdown: Some(tx), server, sweeper })
}

pub async fn serve(config: ServiceConfig) -> Result<ServiceHandle, ServiceError> {
    serve_state(ServiceState::from_config(config)?).await
}
