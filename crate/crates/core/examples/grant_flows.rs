//! The token endpoint's grant logic, in process: client credentials,
//! password, symmetric key and refresh.
//!
//! `cargo run --example grant_flows`

use capodaz::codec::{cbor_to_json, encode_cbor};
use capodaz::token::{handle_grant, ClientDirectory, ClientSpec, CoseKey, GrantRequest, GrantType};

fn main() {
    let now = 1_700_000_000;
    let issuer = CoseKey::symmetric(b"issuer".to_vec(), vec![0x42; 32]);
    let mut clients = ClientDirectory::new(3600);
    clients.register(ClientSpec {
        default_scope: vec!["read".into(), "trust".into()],
        authorities: Some("ROLE_USER".into()),
        ..ClientSpec::new("CAPODAZ-client", "secret")
    });

    let cc = GrantRequest::new(GrantType::ClientCredentials, "CAPODAZ-client", "Sensor01").with_secret("secret");
    let issued = handle_grant(&cc, &issuer, &clients, now).unwrap();
    println!("client_credentials -> {}", cbor_to_json(&issued.response.to_cbor()).unwrap());
    println!("  {} bytes on the wire as CBOR", encode_cbor(&issued.response.to_cbor()).unwrap().len());

    let password = GrantRequest { username: Some("v01".into()), ..GrantRequest::new(GrantType::Password, "CAPODAZ-client", "Vehicle01").with_secret("secret") };
    let issued = handle_grant(&password, &issuer, &clients, now).unwrap();
    println!("password -> {:?} token, jti {}", issued.token.format, issued.token.claims.jti);

    let sym = GrantRequest::new(GrantType::SymmetricKey, "CAPODAZ-client", "Vehicle01").with_secret("secret");
    let issued = handle_grant(&sym, &issuer, &clients, now).unwrap();
    println!("symmetric key -> profile {:?}, key kid {:?}", issued.response.profile, issued.response.cnf.as_ref().map(|k| &k.kid));

    let refresh = GrantRequest {
        refresh_material: Some(issued.token.wire.clone()),
        ..GrantRequest::new(GrantType::RefreshToken, "CAPODAZ-client", "")
    };
    let refreshed = handle_grant(&refresh, &issuer, &clients, now + 60).unwrap();
    println!("refresh -> aud {}, exp {}", refreshed.token.claims.aud, refreshed.token.claims.exp);

    let bad = GrantRequest::new(GrantType::ClientCredentials, "CAPODAZ-client", "Sensor01").with_secret("guess");
    let err = handle_grant(&bad, &issuer, &clients, now).unwrap_err();
    println!("wrong secret -> {} ({err})", err.code());
}
