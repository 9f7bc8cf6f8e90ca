//! Policy administration: loading and serializing policy documents.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use parking_lot::RwLock;
use quick_xml::escape::escape;
use roxmltree::{Document, Node};
use thiserror::Error;

use super::model::*;
use super::schema;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PapError {
    #[error("malformed XML: {0}")]
    XmlMalformed(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("unknown combining algorithm {0:?}")]
    UnknownCombiningAlgorithm(String),
    #[error("cannot read policy file: {0}")]
    Io(String),
}

/// Parses and validates a policy document.
pub fn pap_load(document: &[u8]) -> Result<PolicySet, PapError> {
    let text = std::str::from_utf8(document).map_err(|e| PapError::XmlMalformed(e.to_string()))?;
    let doc = Document::parse(text).map_err(|e| PapError::XmlMalformed(e.to_string()))?;
    schema::bundled().validate(&doc).map_err(PapError::SchemaViolation)?;
    build_set(doc.root_element())
}

pub fn pap_load_file(path: impl AsRef<Path>) -> Result<PolicySet, PapError> {
    let bytes = std::fs::read(path.as_ref()).map_err(|e| PapError::Io(format!("{}: {e}", path.as_ref().display())))?;
    pap_load(&bytes)
}

fn req<'a>(node: Node<'a, '_>, name: &str) -> &'a str {
    node.attribute(name).expect("schema guarantees required attributes")
}

fn children<'a, 'i>(node: Node<'a, 'i>, tag: &'static str) -> impl Iterator<Item = Node<'a, 'i>> {
    node.children().filter(move |n| n.has_tag_name(tag))
}

fn combining(node: Node) -> Result<CombiningAlgorithm, PapError> {
    let name = req(node, "combining");
    CombiningAlgorithm::parse(name).ok_or_else(|| PapError::UnknownCombiningAlgorithm(name.to_owned()))
}

fn unique<'a>(seen: &mut HashSet<&'a str>, id: &'a str) -> Result<(), PapError> {
    if seen.insert(id) {
        Ok(())
    } else {
        Err(PapError::DuplicateId(id.to_owned()))
    }
}

fn build_set(node: Node) -> Result<PolicySet, PapError> {
    let mut ids = HashSet::new();
    let mut policies = Vec::new();
    for p in children(node, "Policy") {
        unique(&mut ids, req(p, "id"))?;
        policies.push(build_policy(p)?);
    }
    Ok(PolicySet {
        id: req(node, "id").to_owned(),
        target: build_target(node)?,
        policies,
        combining: combining(node)?,
    })
}

fn build_policy(node: Node) -> Result<Policy, PapError> {
    let mut ids = HashSet::new();
    let mut rules = Vec::new();
    for r in children(node, "Rule") {
        unique(&mut ids, req(r, "id"))?;
        rules.push(Rule {
            id: req(r, "id").to_owned(),
            effect: Effect::parse(req(r, "effect")).expect("schema restricts effect"),
            target: build_target(r)?,
            condition: children(r, "Condition")
                .next()
                .map(|c| build_condition(c.children().find(Node::is_element).expect("schema requires one child")))
                .transpose()?,
        });
    }
    let obligations = children(node, "Obligation")
        .map(|o| Obligation {
            id: ObligationId::parse(req(o, "id")),
            applies_on: Effect::parse(req(o, "appliesOn")).expect("schema restricts appliesOn"),
            params: children(o, "Param")
                .map(|p| (req(p, "name").to_owned(), req(p, "value").to_owned()))
                .collect::<BTreeMap<_, _>>(),
        })
        .collect();
    Ok(Policy {
        id: req(node, "id").to_owned(),
        target: build_target(node)?,
        rules,
        combining: combining(node)?,
        obligations,
    })
}

fn build_target(parent: Node) -> Result<Target, PapError> {
    let Some(target) = children(parent, "Target").next() else {
        return Ok(Target::default());
    };
    Ok(Target { matches: children(target, "Match").map(build_match).collect::<Result<_, _>>()? })
}

fn build_condition(node: Node) -> Result<Condition, PapError> {
    let operands = || node.children().filter(Node::is_element).map(build_condition).collect::<Result<Vec<_>, _>>();
    Ok(match node.tag_name().name() {
        "And" => Condition::And(operands()?),
        "Or" => Condition::Or(operands()?),
        "Not" => Condition::Not(Box::new(operands()?.remove(0))),
        "Compare" => Condition::Compare(build_match(node)?),
        other => return Err(PapError::SchemaViolation(format!("unexpected <{other}> in condition"))),
    })
}

fn build_match(node: Node) -> Result<Match, PapError> {
    let violation = |msg: String| {
        let pos = node.document().text_pos_at(node.range().start);
        PapError::SchemaViolation(format!("{msg} at line {}", pos.row))
    };
    let ty = node.attribute("type").map_or(ValueType::Text, |t| ValueType::parse(t).expect("schema restricts type"));
    let op = MatchOp::parse(req(node, "op")).expect("schema restricts op");
    if !op.accepts(ty) {
        return Err(violation(format!("operator {} does not accept {} literals", op.as_str(), ty.as_str())));
    }
    let raw = req(node, "value");
    let parts: Vec<&str> = if op == MatchOp::InSet { raw.split(',').map(str::trim).collect() } else { vec![raw] };
    let values = parts
        .into_iter()
        .map(|p| AttributeValue::parse_as(ty, p).ok_or_else(|| violation(format!("{p:?} is not a {}", ty.as_str()))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Match {
        attr: AttributeId::new(Category::parse(req(node, "category")).expect("schema restricts category"), req(node, "attr")),
        op,
        values,
    })
}

fn attr(s: &str) -> String {
    escape(s).into_owned()
}

fn write_match(out: &mut String, tag: &str, m: &Match, indent: usize) {
    let ty = m.literal_type().unwrap_or(ValueType::Text);
    let value = m.values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
    let _ = write!(
        out,
        "{:indent$}<{tag} category=\"{}\" attr=\"{}\" op=\"{}\" value=\"{}\"",
        "",
        m.attr.category.as_str(),
        attr(&m.attr.name),
        m.op.as_str(),
        attr(&value),
    );
    if ty != ValueType::Text {
        let _ = write!(out, " type=\"{}\"", ty.as_str());
    }
    out.push_str("/>\n");
}

fn write_target(out: &mut String, target: &Target, indent: usize) {
    if target.matches.is_empty() {
        return;
    }
    let _ = writeln!(out, "{:indent$}<Target>", "");
    for m in &target.matches {
        write_match(out, "Match", m, indent + 2);
    }
    let _ = writeln!(out, "{:indent$}</Target>", "");
}

fn write_condition(out: &mut String, c: &Condition, indent: usize) {
    let (tag, operands) = match c {
        Condition::Compare(m) => return write_match(out, "Compare", m, indent),
        Condition::And(ops) => ("And", ops.as_slice()),
        Condition::Or(ops) => ("Or", ops.as_slice()),
        Condition::Not(op) => ("Not", std::slice::from_ref(op.as_ref())),
    };
    let _ = writeln!(out, "{:indent$}<{tag}>", "");
    for op in operands {
        write_condition(out, op, indent + 2);
    }
    let _ = writeln!(out, "{:indent$}</{tag}>", "");
}

impl PolicySet {
    /// Serializes to the document format read by [`pap_load`].
    pub fn to_xml(&self) -> String {
        let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        let _ = writeln!(out, "<PolicySet id=\"{}\" combining=\"{}\">", attr(&self.id), self.combining.as_str());
        write_target(&mut out, &self.target, 2);
        for p in &self.policies {
            let _ = writeln!(out, "  <Policy id=\"{}\" combining=\"{}\">", attr(&p.id), p.combining.as_str());
            write_target(&mut out, &p.target, 4);
            for r in &p.rules {
                let _ = write!(out, "    <Rule id=\"{}\" effect=\"{}\"", attr(&r.id), r.effect.as_str());
                if r.target.matches.is_empty() && r.condition.is_none() {
                    out.push_str("/>\n");
                    continue;
                }
                out.push_str(">\n");
                write_target(&mut out, &r.target, 6);
                if let Some(c) = &r.condition {
                    out.push_str("      <Condition>\n");
                    write_condition(&mut out, c, 8);
                    out.push_str("      </Condition>\n");
                }
                out.push_str("    </Rule>\n");
            }
            for o in &p.obligations {
                let _ = write!(out, "    <Obligation id=\"{}\" appliesOn=\"{}\"", attr(o.id.as_str()), o.applies_on.as_str());
                if o.params.is_empty() {
                    out.push_str("/>\n");
                    continue;
                }
                out.push_str(">\n");
                for (k, v) in &o.params {
                    let _ = writeln!(out, "      <Param name=\"{}\" value=\"{}\"/>", attr(k), attr(v));
                }
                out.push_str("    </Obligation>\n");
            }
            out.push_str("  </Policy>\n");
        }
        out.push_str("</PolicySet>\n");
        out
    }
}

/// The active policy set. Reloads swap the whole set at once, so readers see
/// either the old or the new set.
#[derive(Debug)]
pub struct PolicyStore {
    current: RwLock<Arc<PolicySet>>,
}

impl PolicyStore {
    pub fn new(set: PolicySet) -> Self {
        PolicyStore { current: RwLock::new(Arc::new(set)) }
    }

    pub fn current(&self) -> Arc<PolicySet> {
        self.current.read().clone()
    }

    pub fn replace(&self, set: PolicySet) -> Arc<PolicySet> {
        std::mem::replace(&mut *self.current.write(), Arc::new(set))
    }

    /// Loads `document` and swaps it in. On error the current set stays.
    pub fn reload(&self, document: &[u8]) -> Result<(), PapError> {
        let set = pap_load(document)?;
        self.replace(set);
        Ok(())
    }
}
