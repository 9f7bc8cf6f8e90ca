//! The registrar's token table: lookup, proof-of-possession challenges,
//! revocation and expiry purging.
//!
//! `cargo run --example token_registrar`

use capodaz::registrar::{Registrar, TokenRecord};
use capodaz::token::{hmac_sha256, issue_cwt, ClaimSet, CoseKey};

fn main() {
    let now = 1_700_000_000;
    let issuer = CoseKey::symmetric(b"issuer".to_vec(), vec![0x42; 32]);
    let pop = CoseKey::symmetric(b"holder".to_vec(), vec![0x07; 32]);
    let registrar = Registrar::new();

    for (jti, ttl) in [("short", 60), ("long", 3600)] {
        let claims = ClaimSet {
            aud: "Vehicle01".into(),
            user_name: None,
            scope: vec!["read".into()],
            exp: now + ttl,
            iat: Some(now),
            authorities: None,
            jti: jti.into(),
            client_id: "CAPODAZ-client".into(),
        };
        let token = issue_cwt(&claims, &pop, &issuer, now).unwrap();
        registrar.register(TokenRecord::from_token(&token, now)).unwrap();
    }
    println!("short at now: {:?}, at now+60: {:?}", registrar.lookup("short", now), registrar.lookup("short", now + 60));

    // the holder proves possession by MACing the nonce with its bound key
    let challenge = registrar.issue_challenge("long", now).unwrap();
    let mac = hmac_sha256(pop.mac_secret().unwrap(), &challenge.nonce);
    println!("honest response: {:?}", registrar.verify_challenge("long", &challenge.nonce, &mac, now + 1));
    println!("replayed:        {:?}", registrar.verify_challenge("long", &challenge.nonce, &mac, now + 2));

    let challenge = registrar.issue_challenge("long", now).unwrap();
    println!("answered late:   {:?}", registrar.verify_challenge("long", &challenge.nonce, &mac, now + 31));

    registrar.revoke("long").unwrap();
    println!("after revoke: {:?}; revoke again: {:?}", registrar.lookup("long", now), registrar.revoke("long"));
    println!("purged at now+60: {}", registrar.purge_expired(now + 60).unwrap());
    println!("table:\n{}", registrar.snapshot());
}
