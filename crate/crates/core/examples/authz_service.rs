//! Runs the combined authorization service on an ephemeral port and walks a
//! client through it: token, resource access, sealed refresh, revocation.
//!
//! `cargo run --example authz_service`

use std::path::Path;

use capodaz::service::{serve, ServiceClient, ServiceConfig, WireFormat};
use capodaz::token::{GrantRequest, GrantType};

#[tokio::main]
async fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples");
    let mut cfg = ServiceConfig::from_toml(&std::fs::read_to_string(dir.join("capodaz.toml")).unwrap()).unwrap();
    cfg.resolve_paths(&dir);
    cfg.listen_address = "127.0.0.1:0".into();

    let svc = serve(cfg).await.unwrap();
    println!("listening on {}", svc.base_url());
    let client = ServiceClient::new(svc.base_url());

    let req = GrantRequest::new(GrantType::ClientCredentials, "CAPODAZ-client", "vehicle/localisation").with_secret("secret");
    let issued = client.request_token(&req, WireFormat::Cbor).await.unwrap();
    println!("token ({:?}), expires in {} s", issued.csp, issued.expires_in);
    let bearer = issued.access_token.bearer();

    for path in ["vehicle/localisation", "vehicle/diagnostics", "door/lock"] {
        let reply = client.get_resource(path, Some(&bearer), None).await.unwrap();
        println!("GET {path:<22} -> {} {}", reply.status, reply.reason.unwrap_or_default());
    }

    // a refresh is sealed under the key the first token confirms
    let pop = issued.cnf.clone().unwrap();
    let refresh = GrantRequest {
        refresh_material: Some(issued.access_token.wire()),
        ..GrantRequest::new(GrantType::RefreshToken, "CAPODAZ-client", "")
    };
    let refreshed = client.refresh_sealed(&refresh, &pop).await.unwrap();
    let old = client.get_resource("vehicle/localisation", Some(&bearer), None).await.unwrap();
    println!("after refresh, old token -> {} {}", old.status, old.reason.unwrap_or_default());

    let admin = ("fleet-admin", "admin-secret");
    let fresh = refreshed.access_token.bearer();
    println!("introspect: {}", client.introspect_token(admin, &fresh).await.unwrap());
    client.revoke_token(admin, &fresh).await.unwrap();
    let reply = client.get_resource("vehicle/localisation", Some(&fresh), None).await.unwrap();
    println!("after revoke -> {} {}", reply.status, reply.reason.unwrap_or_default());

    svc.shutdown().await.unwrap();
}
