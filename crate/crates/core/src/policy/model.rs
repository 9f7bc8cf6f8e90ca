use std::collections::BTreeMap;
use std::fmt;

use crate::token::ClaimSet;
use crate::UnixSeconds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Subject,
    Resource,
    Action,
    Environment,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Subject, Category::Resource, Category::Action, Category::Environment];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Subject => "Subject",
            Category::Resource => "Resource",
            Category::Action => "Action",
            Category::Environment => "Environment",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Category::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AttributeId {
    pub category: Category,
    pub name: String,
}

impl AttributeId {
    pub fn new(category: Category, name: impl Into<String>) -> Self {
        AttributeId { category, name: name.into() }
    }

    pub fn subject(name: impl Into<String>) -> Self {
        Self::new(Category::Subject, name)
    }

    pub fn resource(name: impl Into<String>) -> Self {
        Self::new(Category::Resource, name)
    }

    pub fn action(name: impl Into<String>) -> Self {
        Self::new(Category::Action, name)
    }

    pub fn environment(name: impl Into<String>) -> Self {
        Self::new(Category::Environment, name)
    }
}

impl fmt::Display for AttributeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.category.as_str(), self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AttributeValue {
    Text(String),
    Integer(i64),
    Boolean(bool),
    Time(UnixSeconds),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValueType {
    Text,
    Integer,
    Boolean,
    Time,
}

impl ValueType {
    pub fn as_str(self) -> &'static str {
        match self {
            ValueType::Text => "string",
            ValueType::Integer => "integer",
            ValueType::Boolean => "boolean",
            ValueType::Time => "time",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [ValueType::Text, ValueType::Integer, ValueType::Boolean, ValueType::Time]
            .into_iter()
            .find(|t| t.as_str() == s)
    }

    /// Integers and times compare with each other.
    fn is_numeric(self) -> bool {
        matches!(self, ValueType::Integer | ValueType::Time)
    }
}

impl AttributeValue {
    pub fn text(s: impl Into<String>) -> Self {
        AttributeValue::Text(s.into())
    }

    pub fn value_type(&self) -> ValueType {
        match self {
            AttributeValue::Text(_) => ValueType::Text,
            AttributeValue::Integer(_) => ValueType::Integer,
            AttributeValue::Boolean(_) => ValueType::Boolean,
            AttributeValue::Time(_) => ValueType::Time,
        }
    }

    pub fn parse_as(ty: ValueType, s: &str) -> Option<Self> {
        match ty {
            ValueType::Text => Some(AttributeValue::Text(s.to_owned())),
            ValueType::Integer => s.trim().parse().ok().map(AttributeValue::Integer),
            ValueType::Time => s.trim().parse().ok().map(AttributeValue::Time),
            ValueType::Boolean => match s.trim() {
                "true" => Some(AttributeValue::Boolean(true)),
                "false" => Some(AttributeValue::Boolean(false)),
                _ => None,
            },
        }
    }

    fn numeric(&self) -> Option<i64> {
        match self {
            AttributeValue::Integer(v) | AttributeValue::Time(v) => Some(*v),
            _ => None,
        }
    }
}

impl fmt::Display for AttributeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttributeValue::Text(s) => f.write_str(s),
            AttributeValue::Integer(v) | AttributeValue::Time(v) => write!(f, "{v}"),
            AttributeValue::Boolean(b) => write!(f, "{b}"),
        }
    }
}

/// Attribute values keyed by category and name. A present key with an empty
/// list is distinct from an absent key.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AttributeBag {
    entries: BTreeMap<AttributeId, Vec<AttributeValue>>,
}

impl AttributeBag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: AttributeId, values: Vec<AttributeValue>) {
        self.entries.insert(id, values);
    }

    pub fn with(mut self, id: AttributeId, values: Vec<AttributeValue>) -> Self {
        self.insert(id, values);
        self
    }

    pub fn get(&self, id: &AttributeId) -> Option<&[AttributeValue]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AttributeId, &[AttributeValue])> {
        self.entries.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessRequest {
    /// Inline attributes of every category.
    pub attributes: AttributeBag,
    pub resource_id: String,
    pub action: String,
    pub token_claims: Option<ClaimSet>,
}

impl AccessRequest {
    pub fn new(resource_id: impl Into<String>, action: impl Into<String>) -> Self {
        AccessRequest {
            attributes: AttributeBag::new(),
            resource_id: resource_id.into(),
            action: action.into(),
            token_claims: None,
        }
    }

    pub fn with_attribute(mut self, id: AttributeId, values: Vec<AttributeValue>) -> Self {
        self.attributes.insert(id, values);
        self
    }

    pub fn with_claims(mut self, claims: ClaimSet) -> Self {
        self.token_claims = Some(claims);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatchOp {
    Equals,
    Less,
    Greater,
    InSet,
    /// The literal is a prefix of the attribute value.
    PrefixOf,
}

impl MatchOp {
    pub const ALL: [MatchOp; 5] = [MatchOp::Equals, MatchOp::Less, MatchOp::Greater, MatchOp::InSet, MatchOp::PrefixOf];

    pub fn as_str(self) -> &'static str {
        match self {
            MatchOp::Equals => "equals",
            MatchOp::Less => "less",
            MatchOp::Greater => "greater",
            MatchOp::InSet => "in-set",
            MatchOp::PrefixOf => "prefix-of",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        MatchOp::ALL.into_iter().find(|op| op.as_str() == s)
    }

    /// Whether literals of type `ty` are allowed with this operator.
    pub fn accepts(self, ty: ValueType) -> bool {
        match self {
            MatchOp::Equals | MatchOp::InSet => true,
            MatchOp::Less | MatchOp::Greater => ty.is_numeric(),
            MatchOp::PrefixOf => ty == ValueType::Text,
        }
    }
}

/// A comparison between an attribute bag and literal operands.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Match {
    pub attr: AttributeId,
    pub op: MatchOp,
    /// One literal, or the member list for `InSet`.
    pub values: Vec<AttributeValue>,
}

/// A type mismatch between an attribute value and a literal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeMismatch;

impl Match {
    pub fn new(attr: AttributeId, op: MatchOp, value: AttributeValue) -> Self {
        Match { attr, op, values: vec![value] }
    }

    pub fn in_set(attr: AttributeId, values: Vec<AttributeValue>) -> Self {
        Match { attr, op: MatchOp::InSet, values }
    }

    pub fn literal_type(&self) -> Option<ValueType> {
        self.values.first().map(AttributeValue::value_type)
    }

    /// True when any value in `bag` satisfies the comparison. A type mismatch
    /// is reported only when no value matches.
    pub fn test(&self, bag: &[AttributeValue]) -> Result<bool, TypeMismatch> {
        let mut mismatch = false;
        for v in bag {
            match self.test_one(v) {
                Ok(true) => return Ok(true),
                Ok(false) => {}
                Err(TypeMismatch) => mismatch = true,
            }
        }
        if mismatch {
            Err(TypeMismatch)
        } else {
            Ok(false)
        }
    }

    fn test_one(&self, v: &AttributeValue) -> Result<bool, TypeMismatch> {
        let compatible = |lit: &AttributeValue| {
            let (a, b) = (v.value_type(), lit.value_type());
            a == b || (a.is_numeric() && b.is_numeric())
        };
        if !self.values.iter().all(compatible) {
            return Err(TypeMismatch);
        }
        let lit = self.values.first().ok_or(TypeMismatch)?;
        Ok(match self.op {
            MatchOp::Equals => equal(v, lit),
            MatchOp::InSet => self.values.iter().any(|l| equal(v, l)),
            MatchOp::Less => v.numeric().ok_or(TypeMismatch)? < lit.numeric().ok_or(TypeMismatch)?,
            MatchOp::Greater => v.numeric().ok_or(TypeMismatch)? > lit.numeric().ok_or(TypeMismatch)?,
            MatchOp::PrefixOf => match (v, lit) {
                (AttributeValue::Text(v), AttributeValue::Text(p)) => v.starts_with(p.as_str()),
                _ => return Err(TypeMismatch),
            },
        })
    }
}

fn equal(a: &AttributeValue, b: &AttributeValue) -> bool {
    match (a.numeric(), b.numeric()) {
        (Some(x), Some(y)) => x == y,
        _ => a == b,
    }
}

/// Conjunction of matches. The empty target matches everything.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Target {
    pub matches: Vec<Match>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Condition {
    And(Vec<Condition>),
    Or(Vec<Condition>),
    Not(Box<Condition>),
    Compare(Match),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Effect {
    Permit,
    Deny,
}

impl Effect {
    pub fn as_str(self) -> &'static str {
        match self {
            Effect::Permit => "Permit",
            Effect::Deny => "Deny",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Permit" => Some(Effect::Permit),
            "Deny" => Some(Effect::Deny),
            _ => None,
        }
    }

    pub fn outcome(self) -> Outcome {
        match self {
            Effect::Permit => Outcome::Permit,
            Effect::Deny => Outcome::Deny,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub id: String,
    pub effect: Effect,
    pub target: Target,
    pub condition: Option<Condition>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CombiningAlgorithm {
    DenyOverrides,
    PermitOverrides,
    FirstApplicable,
}

impl CombiningAlgorithm {
    pub const ALL: [CombiningAlgorithm; 3] = [
        CombiningAlgorithm::DenyOverrides,
        CombiningAlgorithm::PermitOverrides,
        CombiningAlgorithm::FirstApplicable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CombiningAlgorithm::DenyOverrides => "deny-overrides",
            CombiningAlgorithm::PermitOverrides => "permit-overrides",
            CombiningAlgorithm::FirstApplicable => "first-applicable",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        CombiningAlgorithm::ALL.into_iter().find(|a| a.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ObligationId {
    CheckSubscription,
    CheckPayment,
    CheckPlatform,
    Custom(String),
}

impl ObligationId {
    pub fn as_str(&self) -> &str {
        match self {
            ObligationId::CheckSubscription => "CheckSubscription",
            ObligationId::CheckPayment => "CheckPayment",
            ObligationId::CheckPlatform => "CheckPlatform",
            ObligationId::Custom(s) => s,
        }
    }

    pub fn parse(s: &str) -> Self {
        match s {
            "CheckSubscription" => ObligationId::CheckSubscription,
            "CheckPayment" => ObligationId::CheckPayment,
            "CheckPlatform" => ObligationId::CheckPlatform,
            other => ObligationId::Custom(other.to_owned()),
        }
    }
}

impl fmt::Display for ObligationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Obligation {
    pub id: ObligationId,
    pub applies_on: Effect,
    pub params: BTreeMap<String, String>,
}

impl Obligation {
    pub fn new(id: ObligationId, applies_on: Effect) -> Self {
        Obligation { id, applies_on, params: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    pub id: String,
    pub target: Target,
    pub rules: Vec<Rule>,
    pub combining: CombiningAlgorithm,
    pub obligations: Vec<Obligation>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicySet {
    pub id: String,
    pub target: Target,
    pub policies: Vec<Policy>,
    pub combining: CombiningAlgorithm,
}

impl PolicySet {
    pub fn empty(id: impl Into<String>) -> Self {
        PolicySet {
            id: id.into(),
            target: Target::default(),
            policies: Vec::new(),
            combining: CombiningAlgorithm::DenyOverrides,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Permit,
    Deny,
    NotApplicable,
    Indeterminate,
}

impl Outcome {
    pub const ALL: [Outcome; 4] = [Outcome::Permit, Outcome::Deny, Outcome::NotApplicable, Outcome::Indeterminate];

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Permit => "Permit",
            Outcome::Deny => "Deny",
            Outcome::NotApplicable => "NotApplicable",
            Outcome::Indeterminate => "Indeterminate",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub policy_id: String,
    pub rule_id: String,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub outcome: Outcome,
    /// Empty unless the outcome is Permit or Deny.
    pub obligations: Vec<Obligation>,
    /// Every evaluated rule in evaluation order.
    pub trace: Vec<TraceEntry>,
}
