//! Policy evaluation.

use super::model::*;
use super::pip::{pip_resolve, AttributeSources};

/// Folds outcomes with a combining algorithm.
pub fn combine(alg: CombiningAlgorithm, outcomes: impl IntoIterator<Item = Outcome>) -> Outcome {
    let (first, second) = match alg {
        CombiningAlgorithm::FirstApplicable => {
            return outcomes.into_iter().find(|o| *o != Outcome::NotApplicable).unwrap_or(Outcome::NotApplicable)
        }
        CombiningAlgorithm::DenyOverrides => (Outcome::Deny, Outcome::Permit),
        CombiningAlgorithm::PermitOverrides => (Outcome::Permit, Outcome::Deny),
    };
    let (mut seen_ind, mut seen_second) = (false, false);
    for o in outcomes {
        if o == first {
            return first;
        }
        seen_ind |= o == Outcome::Indeterminate;
        seen_second |= o == second;
    }
    if seen_ind {
        Outcome::Indeterminate
    } else if seen_second {
        second
    } else {
        Outcome::NotApplicable
    }
}

struct Evaluator<'a> {
    request: &'a AccessRequest,
    pip: &'a AttributeSources,
}

/// Condition errors: a missing attribute or a type mismatch.
struct EvalError;

impl Evaluator<'_> {
    /// Missing attributes and type mismatches make a target not match.
    fn target(&self, target: &Target) -> bool {
        target.matches.iter().all(|m| {
            pip_resolve(self.request, &m.attr, self.pip)
                .ok()
                .and_then(|bag| m.test(&bag).ok())
                .unwrap_or(false)
        })
    }

    fn condition(&self, c: &Condition) -> Result<bool, EvalError> {
        match c {
            Condition::Compare(m) => {
                let bag = pip_resolve(self.request, &m.attr, self.pip).map_err(|_| EvalError)?;
                m.test(&bag).map_err(|_| EvalError)
            }
            Condition::Not(inner) => self.condition(inner).map(|b| !b),
            Condition::And(ops) => {
                let mut error = false;
                for op in ops {
                    match self.condition(op) {
                        Ok(false) => return Ok(false),
                        Ok(true) => {}
                        Err(EvalError) => error = true,
                    }
                }
                if error {
                    Err(EvalError)
                } else {
                    Ok(true)
                }
            }
            Condition::Or(ops) => {
                let mut error = false;
                for op in ops {
                    match self.condition(op) {
                        Ok(true) => return Ok(true),
                        Ok(false) => {}
                        Err(EvalError) => error = true,
                    }
                }
                if error {
                    Err(EvalError)
                } else {
                    Ok(false)
                }
            }
        }
    }

    fn rule(&self, rule: &Rule) -> Outcome {
        if !self.target(&rule.target) {
            return Outcome::NotApplicable;
        }
        match rule.condition.as_ref().map_or(Ok(true), |c| self.condition(c)) {
            Ok(true) => rule.effect.outcome(),
            Ok(false) => Outcome::NotApplicable,
            Err(EvalError) => Outcome::Indeterminate,
        }
    }

    fn policy(&self, policy: &Policy, trace: &mut Vec<TraceEntry>) -> Outcome {
        if !self.target(&policy.target) {
            return Outcome::NotApplicable;
        }
        let mut outcomes = Vec::with_capacity(policy.rules.len());
        for rule in &policy.rules {
            let outcome = self.rule(rule);
            trace.push(TraceEntry { policy_id: policy.id.clone(), rule_id: rule.id.clone(), outcome });
            outcomes.push(outcome);
            if policy.combining == CombiningAlgorithm::FirstApplicable && outcome != Outcome::NotApplicable {
                break;
            }
        }
        combine(policy.combining, outcomes)
    }
}

/// Evaluates `request` against `set`. Pure: the same inputs always give the
/// same decision, trace included.
pub fn pdp_evaluate(set: &PolicySet, request: &AccessRequest, pip: &AttributeSources) -> Decision {
    let eval = Evaluator { request, pip };
    let mut trace = Vec::new();
    if !eval.target(&set.target) {
        return Decision { outcome: Outcome::NotApplicable, obligations: Vec::new(), trace };
    }
    let mut results = Vec::with_capacity(set.policies.len());
    for policy in &set.policies {
        let outcome = eval.policy(policy, &mut trace);
        results.push((policy, outcome));
        if set.combining == CombiningAlgorithm::FirstApplicable && outcome != Outcome::NotApplicable {
            break;
        }
    }
    let outcome = combine(set.combining, results.iter().map(|(_, o)| *o));
    let obligations = match outcome {
        Outcome::Permit | Outcome::Deny => results
            .iter()
            .filter(|(_, o)| *o == outcome)
            .flat_map(|(p, _)| p.obligations.iter())
            .filter(|ob| ob.applies_on.outcome() == outcome)
            .cloned()
            .collect(),
        _ => Vec::new(),
    };
    Decision { outcome, obligations, trace }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Outcome::*;

    fn all_sequences(max_len: usize) -> Vec<Vec<Outcome>> {
        let mut out = vec![vec![]];
        let mut frontier = vec![vec![]];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for seq in &frontier {
                for o in Outcome::ALL {
                    let mut s: Vec<Outcome> = seq.clone();
                    s.push(o);
                    next.push(s);
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }

    /// The combining tables written as counts over the multiset.
    fn tabulated(alg: CombiningAlgorithm, seq: &[Outcome]) -> Outcome {
        let count = |x: Outcome| seq.iter().filter(|o| **o == x).count();
        let (p, d, i) = (count(Permit), count(Deny), count(Indeterminate));
        match alg {
            CombiningAlgorithm::DenyOverrides if d > 0 => Deny,
            CombiningAlgorithm::DenyOverrides if i > 0 => Indeterminate,
            CombiningAlgorithm::DenyOverrides if p > 0 => Permit,
            CombiningAlgorithm::PermitOverrides if p > 0 => Permit,
            CombiningAlgorithm::PermitOverrides if i > 0 => Indeterminate,
            CombiningAlgorithm::PermitOverrides if d > 0 => Deny,
            CombiningAlgorithm::FirstApplicable => match seq.iter().position(|o| *o != NotApplicable) {
                Some(k) => seq[k],
                None => NotApplicable,
            },
            _ => NotApplicable,
        }
    }

    /// A rule whose outcome is fixed: target always matches, and the condition
    /// yields true, false, or a missing attribute.
    fn fixed_rule(id: usize, outcome: Outcome) -> Rule {
        let probe = |name: &str| {
            Condition::Compare(Match::new(AttributeId::subject(name), MatchOp::Equals, AttributeValue::Boolean(true)))
        };
        let (effect, condition) = match outcome {
            Permit => (Effect::Permit, None),
            Deny => (Effect::Deny, None),
            NotApplicable => (Effect::Permit, Some(Condition::Not(Box::new(probe("on"))))),
            Indeterminate => (Effect::Deny, Some(probe("absent"))),
        };
        Rule { id: format!("r{id}"), effect, target: Target::default(), condition }
    }

    fn on_request() -> AccessRequest {
        AccessRequest::new("x", "read").with_attribute(AttributeId::subject("on"), vec![AttributeValue::Boolean(true)])
    }

    #[test]
    fn combining_tables_are_exhaustively_correct() {
        for seq in all_sequences(4) {
            for alg in CombiningAlgorithm::ALL {
                assert_eq!(combine(alg, seq.iter().copied()), tabulated(alg, &seq), "{alg:?} {seq:?}");
            }
        }
    }

    #[test]
    fn rule_fold_matches_table_end_to_end() {
        let req = on_request();
        for seq in all_sequences(4).into_iter().filter(|s| !s.is_empty()) {
            for alg in CombiningAlgorithm::ALL {
                let policy = Policy {
                    id: "p".into(),
                    target: Target::default(),
                    rules: seq.iter().enumerate().map(|(i, o)| fixed_rule(i, *o)).collect(),
                    combining: alg,
                    obligations: vec![],
                };
                let set = PolicySet { policies: vec![policy], ..PolicySet::empty("s") };
                let d = pdp_evaluate(&set, &req, &AttributeSources::new());
                assert_eq!(d.outcome, tabulated(alg, &seq), "{alg:?} {seq:?}");
            }
        }
    }

    #[test]
    fn override_algorithms_ignore_order() {
        for seq in all_sequences(4) {
            let mut rev = seq.clone();
            rev.reverse();
            let mut rot = seq.clone();
            rot.rotate_left(1.min(seq.len()));
            for alg in [CombiningAlgorithm::DenyOverrides, CombiningAlgorithm::PermitOverrides] {
                let base = combine(alg, seq.iter().copied());
                assert_eq!(combine(alg, rev.iter().copied()), base);
                assert_eq!(combine(alg, rot.iter().copied()), base);
            }
        }
    }

    #[test]
    fn empty_set_is_not_applicable() {
        let d = pdp_evaluate(&PolicySet::empty("s"), &on_request(), &AttributeSources::new());
        assert_eq!(d.outcome, NotApplicable);
        assert!(d.obligations.is_empty() && d.trace.is_empty());
    }

    #[test]
    fn permit_and_deny_under_deny_overrides() {
        let policy = Policy {
            id: "p".into(),
            target: Target::default(),
            rules: vec![fixed_rule(0, Permit), fixed_rule(1, Deny)],
            combining: CombiningAlgorithm::DenyOverrides,
            obligations: vec![],
        };
        let set = PolicySet { policies: vec![policy], ..PolicySet::empty("s") };
        let d = pdp_evaluate(&set, &on_request(), &AttributeSources::new());
        assert_eq!(d.outcome, Deny);
        assert_eq!(d.trace.iter().map(|t| t.outcome).collect::<Vec<_>>(), vec![Permit, Deny]);
    }

    #[test]
    fn obligations_follow_the_decision() {
        let with_obs = |id: &str, rule: Outcome| Policy {
            id: id.into(),
            target: Target::default(),
            rules: vec![fixed_rule(0, rule)],
            combining: CombiningAlgorithm::DenyOverrides,
            obligations: vec![
                Obligation::new(ObligationId::CheckSubscription, Effect::Permit),
                Obligation::new(ObligationId::Custom(format!("audit-{id}")), Effect::Deny),
            ],
        };
        let set = PolicySet {
            policies: vec![with_obs("a", Permit), with_obs("b", Permit), with_obs("c", NotApplicable)],
            combining: CombiningAlgorithm::PermitOverrides,
            ..PolicySet::empty("s")
        };
        let d = pdp_evaluate(&set, &on_request(), &AttributeSources::new());
        assert_eq!(d.outcome, Permit);
        assert_eq!(d.obligations.len(), 2);
        assert!(d.obligations.iter().all(|o| o.applies_on == Effect::Permit));

        let set = PolicySet { policies: vec![with_obs("a", Indeterminate)], ..set };
        let d = pdp_evaluate(&set, &on_request(), &AttributeSources::new());
        assert_eq!(d.outcome, Indeterminate);
        assert!(d.obligations.is_empty());
    }

    #[test]
    fn condition_error_semantics() {
        let missing = || Condition::Compare(Match::new(AttributeId::subject("absent"), MatchOp::Equals, AttributeValue::Boolean(true)));
        let t = || Condition::Compare(Match::new(AttributeId::subject("on"), MatchOp::Equals, AttributeValue::Boolean(true)));
        let f = || Condition::Not(Box::new(t()));
        let req = on_request();
        let pip = AttributeSources::new();
        let e = Evaluator { request: &req, pip: &pip };
        assert_eq!(e.condition(&Condition::And(vec![missing(), f()])).ok(), Some(false));
        assert!(e.condition(&Condition::And(vec![missing(), t()])).is_err());
        assert_eq!(e.condition(&Condition::Or(vec![missing(), t()])).ok(), Some(true));
        assert!(e.condition(&Condition::Or(vec![missing(), f()])).is_err());
        assert!(e.condition(&Condition::Not(Box::new(missing()))).is_err());
    }

    #[test]
    fn missing_target_attribute_is_non_match() {
        let rule = Rule {
            id: "r".into(),
            effect: Effect::Permit,
            target: Target { matches: vec![Match::new(AttributeId::subject("absent"), MatchOp::Equals, AttributeValue::text("x"))] },
            condition: None,
        };
        let e = Evaluator { request: &on_request(), pip: &AttributeSources::new() };
        assert_eq!(e.rule(&rule), NotApplicable);
    }

    fn arb_condition() -> impl Strategy<Value = Condition> {
        let leaf = (0usize..3, any::<bool>()).prop_map(|(a, v)| {
            Condition::Compare(Match::new(AttributeId::subject(format!("a{a}")), MatchOp::Equals, AttributeValue::Boolean(v)))
        });
        leaf.prop_recursive(3, 12, 3, |inner| {
            prop_oneof![
                proptest::collection::vec(inner.clone(), 1..3).prop_map(Condition::And),
                proptest::collection::vec(inner.clone(), 1..3).prop_map(Condition::Or),
                inner.prop_map(|c| Condition::Not(Box::new(c))),
            ]
        })
    }

    proptest! {
        #[test]
        fn evaluation_is_deterministic(c in arb_condition(), a0 in any::<bool>(), alg in 0usize..3) {
            let policy = Policy {
                id: "p".into(),
                target: Target::default(),
                rules: vec![
                    Rule { id: "r0".into(), effect: Effect::Permit, target: Target::default(), condition: Some(c.clone()) },
                    Rule { id: "r1".into(), effect: Effect::Deny, target: Target::default(), condition: Some(Condition::Not(Box::new(c))) },
                ],
                combining: CombiningAlgorithm::ALL[alg],
                obligations: vec![],
            };
            let set = PolicySet { policies: vec![policy], ..PolicySet::empty("s") };
            let req = AccessRequest::new("x", "read").with_attribute(AttributeId::subject("a0"), vec![AttributeValue::Boolean(a0)]);
            let pip = AttributeSources::new();
            prop_assert_eq!(pdp_evaluate(&set, &req, &pip), pdp_evaluate(&set, &req, &pip));
        }
    }
}
