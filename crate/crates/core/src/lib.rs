//! Capability-token authorization for IoT/cloud deployments.
//!
//! The crate bundles four cooperating pieces:
//!
//! * [`codec`] and [`token`]: CBOR/base64url codecs and HMAC-protected
//!   capability tokens in JWT and CWT (COSE_Mac0) form, plus the grant
//!   flows that issue them.
//! * [`policy`]: an XACML-subset policy engine split into the usual
//!   administration (PAP), information (PIP), decision (PDP) and
//!   enforcement (PEP) points.
//! * [`registrar`]: the token table used for lookup, proof-of-possession
//!   challenges, revocation and expiry purging.
//! * [`service`]: the HTTP surface (token endpoint, introspection,
//!   protected resources, proxy resource server).
//!
//! [`bench`] is the load harness. It runs three-round evaluations
//! (binomial, uniform and Poisson workloads) against any HTTP
//! target or against a simulated target in virtual time.
//!
//! The runnable programs under `examples/` walk through each capability.

pub mod bench;
pub mod cli;
pub mod clock;
pub mod codec;
pub mod policy;
pub mod registrar;
pub mod service;
pub mod token;

/// Seconds since the Unix epoch.
pub type UnixSeconds = i64;
