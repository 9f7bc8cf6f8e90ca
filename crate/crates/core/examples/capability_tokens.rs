//! Issuing and verifying capability tokens as JWT and as CWT.
//!
//! `cargo run --example capability_tokens`

use capodaz::token::{issue_cwt, issue_jwt, verify_token, ClaimSet, CoseKey, TokenError};

fn main() {
    let now = 1_518_070_000;
    let issuer = CoseKey::symmetric(b"issuer".to_vec(), vec![0x42; 32]);
    let claims = ClaimSet {
        aud: "Vehicle01".into(),
        user_name: Some("v01".into()),
        scope: vec!["read".into(), "trust".into()],
        exp: 1_518_074_605,
        iat: Some(now),
        authorities: Some("ROLE_USER".into()),
        jti: "1d3b890201".into(),
        client_id: "CAPODAZ-client".into(),
    };

    let jwt = issue_jwt(&claims, &issuer, now).unwrap();
    println!("JWT ({} bytes): {}", jwt.wire.len(), jwt.bearer());

    // the CWT carries the proof-of-possession key the holder must use
    let pop = CoseKey::symmetric(b"holder-1".to_vec(), vec![0x07; 32]);
    let cwt = issue_cwt(&claims, &pop, &issuer, now).unwrap();
    println!("CWT ({} bytes): {}", cwt.wire.len(), cwt.bearer());

    for token in [&jwt, &cwt] {
        assert_eq!(verify_token(&token.wire, &issuer, now).unwrap(), claims);
        // valid up to, not including, exp
        assert!(verify_token(&token.wire, &issuer, claims.exp - 1).is_ok());
        assert_eq!(verify_token(&token.wire, &issuer, claims.exp), Err(TokenError::Expired));
    }

    let mut forged = cwt.wire.clone();
    *forged.last_mut().unwrap() ^= 1;
    println!("tampered CWT: {:?}", verify_token(&forged, &issuer, now));
    let other = CoseKey::symmetric(b"issuer".to_vec(), vec![0x43; 32]);
    println!("wrong issuer key: {:?}", verify_token(&jwt.wire, &other, now));
}
