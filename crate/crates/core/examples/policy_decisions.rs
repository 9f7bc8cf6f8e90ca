//! Loading the sample policy document and evaluating requests against it,
//! first at the decision point, then through full enforcement.
//!
//! `cargo run --example policy_decisions`

use std::path::Path;
use std::sync::Arc;

use capodaz::policy::*;
use capodaz::registrar::{Registrar, TokenRecord};
use capodaz::token::{issue_cwt, ClaimSet, CoseKey};

fn main() {
    let doc = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/vehicle.xml");
    let set = pap_load_file(&doc).unwrap();
    println!("policy set {:?}: {} policies, {:?}", set.id, set.policies.len(), set.combining);

    let now = 1_700_000_000;
    let claims = ClaimSet {
        aud: "vehicle/localisation".into(),
        user_name: None,
        scope: vec!["read".into(), "trust".into()],
        exp: now + 3600,
        iat: Some(now),
        authorities: Some("ROLE_USER".into()),
        jti: "demo-1".into(),
        client_id: "CAPODAZ-client".into(),
    };

    // decision only: outcome, obligations and the evaluation trace
    let sources = AttributeSources::new().at(now);
    for (resource, action) in [("vehicle/localisation", "read"), ("vehicle/telemetry", "write"), ("vehicle/diagnostics", "read"), ("door/lock", "read")] {
        let request = AccessRequest::new(resource, action).with_claims(claims.clone());
        let d = pdp_evaluate(&set, &request, &sources);
        let obligations: Vec<&str> = d.obligations.iter().map(|o| o.id.as_str()).collect();
        println!("{resource:<22} {action:<5} -> {:<14} obligations {obligations:?}", d.outcome.as_str());
    }

    // enforcement: token checks, decision, then obligation validators
    let issuer = CoseKey::symmetric(b"issuer".to_vec(), vec![0x42; 32]);
    let pop = CoseKey::symmetric(b"holder".to_vec(), vec![0x07; 32]);
    let token = issue_cwt(&claims, &pop, &issuer, now).unwrap();
    let registrar = Registrar::new();
    registrar.register(TokenRecord::from_token(&token, now)).unwrap();

    let subscriptions = Arc::new(SubscriptionRegistry::default());
    let mut validators = ObligationValidators::new();
    validators.register(ObligationId::CheckSubscription, subscriptions.clone());
    let ctx = EnforcementContext { issuer_key: &issuer, registrar: &registrar, validators: &validators, sources: &sources };
    let raw = RawRequest::new(Some(token.bearer()), "vehicle/localisation", "read");

    println!("without a subscription: {:?}", pep_enforce(&raw, &set, &ctx, now).result);
    subscriptions.subscribe("CAPODAZ-client", None);
    println!("with a subscription:    {:?}", pep_enforce(&raw, &set, &ctx, now).result);
    registrar.revoke("demo-1").unwrap();
    println!("after revocation:       {:?}", pep_enforce(&raw, &set, &ctx, now).result);
}
