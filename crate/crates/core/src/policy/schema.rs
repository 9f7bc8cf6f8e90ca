//! Structural validation of policy documents against the bundled schema.

use std::collections::HashMap;
use std::sync::OnceLock;

use roxmltree::{Document, Node};

const SCHEMA_SOURCE: &str = include_str!("../../schema/policy.schema.xml");

#[derive(Debug)]
struct AttributeRule {
    name: String,
    required: bool,
    allowed: Option<Vec<String>>,
}

#[derive(Debug)]
struct ChildGroup {
    names: Vec<String>,
    min: usize,
    max: Option<usize>,
}

#[derive(Debug, Default)]
struct ElementRule {
    attributes: Vec<AttributeRule>,
    groups: Vec<ChildGroup>,
}

#[derive(Debug)]
pub(crate) struct Schema {
    root: String,
    elements: HashMap<String, ElementRule>,
}

/// The bundled schema text.
pub fn schema_source() -> &'static str {
    SCHEMA_SOURCE
}

pub(crate) fn bundled() -> &'static Schema {
    static SCHEMA: OnceLock<Schema> = OnceLock::new();
    SCHEMA.get_or_init(|| Schema::parse(SCHEMA_SOURCE).expect("bundled policy schema is well-formed"))
}

fn bound(node: Node, attr: &str, default: Option<usize>) -> Result<Option<usize>, String> {
    match node.attribute(attr) {
        None => Ok(default),
        Some("unbounded") => Ok(None),
        Some(v) => v.parse().map(Some).map_err(|_| format!("bad {attr} {v:?}")),
    }
}

impl Schema {
    fn parse(text: &str) -> Result<Self, String> {
        let doc = Document::parse(text).map_err(|e| e.to_string())?;
        let root = doc.root_element();
        let mut elements = HashMap::new();
        for el in root.children().filter(|n| n.has_tag_name("Element")) {
            let name = el.attribute("name").ok_or("Element without name")?;
            let mut rule = ElementRule::default();
            for item in el.children().filter(Node::is_element) {
                match item.tag_name().name() {
                    "Attribute" => rule.attributes.push(AttributeRule {
                        name: item.attribute("name").ok_or("Attribute without name")?.to_owned(),
                        required: item.attribute("required") == Some("true"),
                        allowed: item.attribute("enum").map(|e| e.split('|').map(str::to_owned).collect()),
                    }),
                    "Child" => rule.groups.push(ChildGroup {
                        names: vec![item.attribute("name").ok_or("Child without name")?.to_owned()],
                        min: bound(item, "min", Some(0))?.unwrap_or(0),
                        max: bound(item, "max", None)?,
                    }),
                    "Choice" => rule.groups.push(ChildGroup {
                        names: item
                            .children()
                            .filter(|n| n.has_tag_name("Child"))
                            .filter_map(|n| n.attribute("name").map(str::to_owned))
                            .collect(),
                        min: bound(item, "min", Some(0))?.unwrap_or(0),
                        max: bound(item, "max", None)?,
                    }),
                    other => return Err(format!("unknown schema item {other}")),
                }
            }
            elements.insert(name.to_owned(), rule);
        }
        let root_name = root.attribute("root").ok_or("Schema without root")?.to_owned();
        Ok(Schema { root: root_name, elements })
    }

    /// Checks every element of `doc`; the error names the first violation.
    pub(crate) fn validate(&self, doc: &Document) -> Result<(), String> {
        let root = doc.root_element();
        if root.tag_name().name() != self.root {
            return Err(format!("root element must be <{}>, found <{}>", self.root, root.tag_name().name()));
        }
        self.validate_element(root)
    }

    fn validate_element(&self, node: Node) -> Result<(), String> {
        let name = node.tag_name().name();
        let pos = node.document().text_pos_at(node.range().start);
        let at = |msg: String| format!("{msg} at line {}", pos.row);
        let rule = self.elements.get(name).ok_or_else(|| at(format!("unexpected element <{name}>")))?;

        for attr in node.attributes() {
            let spec = rule
                .attributes
                .iter()
                .find(|a| a.name == attr.name())
                .ok_or_else(|| at(format!("<{name}> does not take attribute {:?}", attr.name())))?;
            if let Some(allowed) = &spec.allowed {
                if !allowed.iter().any(|v| v == attr.value()) {
                    return Err(at(format!(
                        "<{name}> attribute {} = {:?} is not one of {}",
                        spec.name,
                        attr.value(),
                        allowed.join("|")
                    )));
                }
            }
        }
        for spec in rule.attributes.iter().filter(|a| a.required) {
            if node.attribute(spec.name.as_str()).is_none() {
                return Err(at(format!("<{name}> is missing required attribute {}", spec.name)));
            }
        }

        let mut counts = vec![0usize; rule.groups.len()];
        for child in node.children() {
            if child.is_text() {
                if child.text().is_some_and(|t| !t.trim().is_empty()) {
                    return Err(at(format!("<{name}> must not contain text")));
                }
                continue;
            }
            if !child.is_element() {
                continue;
            }
            let child_name = child.tag_name().name();
            let group = rule
                .groups
                .iter()
                .position(|g| g.names.iter().any(|n| n == child_name))
                .ok_or_else(|| at(format!("<{name}> may not contain <{child_name}>")))?;
            counts[group] += 1;
            self.validate_element(child)?;
        }
        for (group, count) in rule.groups.iter().zip(counts) {
            let label = group.names.join("|");
            if count < group.min {
                return Err(at(format!("<{name}> needs at least {} <{label}>", group.min)));
            }
            if group.max.is_some_and(|max| count > max) {
                return Err(at(format!("<{name}> allows at most {} <{label}>", group.max.unwrap_or(0))));
            }
        }
        Ok(())
    }
}
