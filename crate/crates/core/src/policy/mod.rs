//! Attribute-based policy engine.
//!
//! * administration: [`pap_load`] parses and schema-checks XML policy
//!   documents; [`PolicyStore`] holds the active set and swaps it atomically.
//! * information: [`pip_resolve`] finds attribute values for a request.
//! * decision: [`pdp_evaluate`] folds rule and policy outcomes with
//!   deny-overrides, permit-overrides or first-applicable.
//! * enforcement: [`pep_enforce`] checks the capability token, evaluates,
//!   and runs obligation validators on `Permit`.
//!
//! A minimal document:
//!
//! ```xml
//! <PolicySet id="vehicle" combining="deny-overrides">
//!   <Policy id="localisation" combining="first-applicable">
//!     <Target><Match category="Resource" attr="resource-id" op="prefix-of" value="vehicle/"/></Target>
//!     <Rule id="read" effect="Permit">
//!       <Condition><Compare category="Subject" attr="scope" op="equals" value="read"/></Condition>
//!     </Rule>
//!     <Obligation id="CheckSubscription" appliesOn="Permit"/>
//!   </Policy>
//! </PolicySet>
//! ```

mod document;
mod model;
mod pdp;
mod pep;
mod pip;
mod schema;

pub use document::{pap_load, pap_load_file, PapError, PolicyStore};
pub use model::*;
pub use pdp::{combine, pdp_evaluate};
pub use pep::{
    pep_enforce, DenyReason, Enforcement, EnforcementContext, EnforcementResult, ObligationContext, ObligationValidator,
    ObligationValidators, PaymentLedger, PlatformAllowList, RawRequest, SubscriptionRegistry,
};
pub use pip::{pip_resolve, AttributeProvider, AttributeSources, MissingAttribute, ACTION_ID, CURRENT_TIME, RESOURCE_ID};
pub use schema::schema_source;
