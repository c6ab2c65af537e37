//! The mapping language.
//!
//! A mapping file relates source fields to chains of ontology classes and
//! properties. It is line oriented; `#` starts a comment.
//!
//! ```text
//! file    := (directive | comment | blank)*
//! directive :=
//!     "mapping" ID
//!   | "source" ("template" ID VERSION | "entity" TYPE | "vocabularies")
//!   | "label" FIELD+                     -- entity mappings: display label
//!   | "rule" ID                          -- opens a rule
//!   | "from" FIELD                       -- column path, property or field
//!   | "chain" node ("-" PROPERTY "->" (node | "literal"))*
//! node    := CLASS ["[" key "]"]
//! key     := "record" | "row" | "value" | "term" | "fresh"
//!          | "entity" [COLUMN_PATH]
//! ```
//!
//! Every rule has exactly one `from` and one `chain`. The head node
//! defaults to `[record]`, later nodes to `[fresh]`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::ontology::{Ontology, LITERAL};
use super::TransformError;
use crate::template::{ColumnKind, ColumnPath, LiteralKind, Template, TemplateSet, ValueType};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MappingSource {
    Template { template_id: String, version: u32 },
    Entity { entity_type: String },
    Vocabularies,
}

/// How a chain node gets its identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "key", content = "column", rename_all = "snake_case")]
pub enum NodeKey {
    /// The record being transformed.
    Record,
    /// The row holding the source cell.
    Row,
    /// The source value: equal values share one node.
    Value,
    /// The vocabulary term in the source cell.
    Term,
    /// The identity cluster of the entity instance owning the given column
    /// (the source cell when omitted).
    Entity(Option<ColumnPath>),
    /// Minted from the previous node and this step.
    Fresh,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainNode {
    pub class: String,
    pub key: NodeKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case")]
pub enum Target {
    Node(ChainNode),
    Literal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub property: String,
    pub target: Target,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingRule {
    pub rule_id: String,
    pub source: String,
    pub head: ChainNode,
    pub steps: Vec<Step>,
    /// Line of the `rule` directive.
    pub line: usize,
}

impl MappingRule {
    /// Source as a column path (template mappings).
    pub fn column(&self) -> Option<ColumnPath> {
        self.source.parse().ok()
    }

    /// Nodes in chain order, head first.
    pub fn nodes(&self) -> impl Iterator<Item = &ChainNode> {
        std::iter::once(&self.head).chain(self.steps.iter().filter_map(|s| match &s.target {
            Target::Node(n) => Some(n),
            Target::Literal => None,
        }))
    }

    pub fn ends_in_literal(&self) -> bool {
        matches!(self.steps.last(), Some(Step { target: Target::Literal, .. }))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingDefinition {
    pub mapping_id: String,
    pub source: MappingSource,
    #[serde(default)]
    pub label: Vec<String>,
    pub rules: Vec<MappingRule>,
}

/// Fields a vocabulary mapping can read.
pub const VOCABULARY_FIELDS: [&str; 4] = ["term", "broader", "label", "preferred_en"];

fn malformed(line: usize, message: impl Into<String>) -> TransformError {
    TransformError::Malformed {
        line,
        message: message.into(),
    }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.'))
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws(&mut self) {
        while self.text[self.pos..].starts_with(char::is_whitespace) {
            self.pos += self.text[self.pos..].chars().next().map_or(0, char::len_utf8);
        }
    }

    fn done(&mut self) -> bool {
        self.skip_ws();
        self.pos == self.text.len()
    }

    fn eat(&mut self, token: &str) -> bool {
        self.skip_ws();
        if self.text[self.pos..].starts_with(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn ident(&mut self, what: &str) -> Result<&'a str, TransformError> {
        self.skip_ws();
        let rest = &self.text[self.pos..];
        let len = rest
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_' || c == '.'))
            .unwrap_or(rest.len());
        if len == 0 {
            return Err(malformed(self.line, format!("expected {what} at {:?}", rest)));
        }
        self.pos += len;
        Ok(&rest[..len])
    }

    fn node(&mut self, head: bool) -> Result<ChainNode, TransformError> {
        let class = self.ident("a class")?.to_string();
        let key = if self.eat("[") {
            let close = self.text[self.pos..]
                .find(']')
                .ok_or_else(|| malformed(self.line, "unclosed `[`"))?;
            let inner = self.text[self.pos..self.pos + close].trim();
            self.pos += close + 1;
            let mut words = inner.split_whitespace();
            let key = match (words.next(), words.next()) {
                (Some("record"), None) => NodeKey::Record,
                (Some("row"), None) => NodeKey::Row,
                (Some("value"), None) => NodeKey::Value,
                (Some("term"), None) => NodeKey::Term,
                (Some("fresh"), None) => NodeKey::Fresh,
                (Some("entity"), None) => NodeKey::Entity(None),
                (Some("entity"), Some(path)) => NodeKey::Entity(Some(
                    path.parse()
                        .map_err(|_| malformed(self.line, format!("bad column path {path:?}")))?,
                )),
                _ => return Err(malformed(self.line, format!("unknown node key {inner:?}"))),
            };
            if words.next().is_some() {
                return Err(malformed(self.line, format!("unknown node key {inner:?}")));
            }
            key
        } else if head {
            NodeKey::Record
        } else {
            NodeKey::Fresh
        };
        Ok(ChainNode { class, key })
    }
}

fn parse_chain(text: &str, line: usize) -> Result<(ChainNode, Vec<Step>), TransformError> {
    let mut c = Cursor { text, pos: 0, line };
    let head = c.node(true)?;
    let mut steps = Vec::new();
    while !c.done() {
        if matches!(steps.last(), Some(Step { target: Target::Literal, .. })) {
            return Err(malformed(line, "`literal` must end the chain"));
        }
        if !c.eat("-") {
            return Err(malformed(line, "expected `-property->`"));
        }
        let property = c.ident("a property")?.to_string();
        if !c.eat("->") {
            return Err(malformed(line, "expected `->`"));
        }
        c.skip_ws();
        let target = if c.text[c.pos..].starts_with("literal")
            && !c.text[c.pos + 7..].starts_with(|ch: char| ch.is_ascii_alphanumeric() || ch == '_' || ch == '[')
        {
            c.pos += 7;
            Target::Literal
        } else {
            Target::Node(c.node(false)?)
        };
        steps.push(Step { property, target });
    }
    Ok((head, steps))
}

/// Parse a mapping file. Only syntax is checked here; see [`check_mapping`].
pub fn parse_mapping(doc: &str) -> Result<MappingDefinition, TransformError> {
    let mut mapping_id = None;
    let mut source = None;
    let mut label = Vec::new();
    let mut rules: Vec<MappingRule> = Vec::new();
    // rule id, line, from, chain
    type Open = (String, usize, Option<String>, Option<(ChainNode, Vec<Step>)>);
    let mut open: Option<Open> = None;

    fn close(open: Option<Open>, rules: &mut Vec<MappingRule>) -> Result<(), TransformError> {
        if let Some((rule_id, line, from, chain)) = open {
            let source = from.ok_or_else(|| malformed(line, format!("rule {rule_id} has no `from`")))?;
            let (head, steps) = chain.ok_or_else(|| malformed(line, format!("rule {rule_id} has no `chain`")))?;
            if rules.iter().any(|r| r.rule_id == rule_id) {
                return Err(malformed(line, format!("duplicate rule {rule_id}")));
            }
            rules.push(MappingRule {
                rule_id,
                source,
                head,
                steps,
                line,
            });
        }
        Ok(())
    }

    for (i, raw) in doc.lines().enumerate() {
        let line = i + 1;
        let text = raw.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        let (word, rest) = text.split_once(char::is_whitespace).unwrap_or((text, ""));
        let rest = rest.trim();
        let args: Vec<&str> = rest.split_whitespace().collect();
        match word {
            "mapping" => {
                if mapping_id.is_some() || args.len() != 1 || !is_ident(args[0]) {
                    return Err(malformed(line, "expected one `mapping ID` line"));
                }
                mapping_id = Some(args[0].to_string());
            }
            "source" => {
                if source.is_some() {
                    return Err(malformed(line, "duplicate `source`"));
                }
                source = Some(match args.as_slice() {
                    ["template", id, version] if is_ident(id) => MappingSource::Template {
                        template_id: id.to_string(),
                        version: version.parse().map_err(|_| malformed(line, "bad template version"))?,
                    },
                    ["entity", ty] if is_ident(ty) => MappingSource::Entity {
                        entity_type: ty.to_string(),
                    },
                    ["vocabularies"] => MappingSource::Vocabularies,
                    _ => return Err(malformed(line, format!("bad source {rest:?}"))),
                });
            }
            "label" => {
                if args.is_empty() || open.is_some() {
                    return Err(malformed(line, "`label` needs fields and must precede rules"));
                }
                label.extend(args.iter().map(|a| a.to_string()));
            }
            "rule" => {
                if args.len() != 1 || !is_ident(args[0]) {
                    return Err(malformed(line, "expected `rule ID`"));
                }
                close(open.take(), &mut rules)?;
                open = Some((args[0].to_string(), line, None, None));
            }
            "from" => {
                let Some(o) = open.as_mut() else {
                    return Err(malformed(line, "`from` outside a rule"));
                };
                if o.2.is_some() || args.len() != 1 {
                    return Err(malformed(line, "expected one `from FIELD` per rule"));
                }
                o.2 = Some(args[0].to_string());
            }
            "chain" => {
                let Some(o) = open.as_mut() else {
                    return Err(malformed(line, "`chain` outside a rule"));
                };
                if o.3.is_some() {
                    return Err(malformed(line, "one `chain` per rule"));
                }
                o.3 = Some(parse_chain(rest, line)?);
            }
            other => return Err(malformed(line, format!("unknown directive {other:?}"))),
        }
    }
    close(open, &mut rules)?;
    Ok(MappingDefinition {
        mapping_id: mapping_id.ok_or_else(|| malformed(1, "missing `mapping ID`"))?,
        source: source.ok_or_else(|| malformed(1, "missing `source`"))?,
        label,
        rules,
    })
}

fn ill_typed(rule: &MappingRule, step: usize, message: String) -> TransformError {
    TransformError::IllTypedChain {
        rule: rule.rule_id.clone(),
        step,
        message,
    }
}

/// Check every step's property against the ontology: its domain must
/// include the preceding class and its range the following one.
fn check_chain(rule: &MappingRule, ontology: &Ontology) -> Result<(), TransformError> {
    let unknown_class = |c: &str| TransformError::UnknownOntologyTerm {
        rule: rule.rule_id.clone(),
        name: c.to_string(),
    };
    if !ontology.classes.contains_key(&rule.head.class) {
        return Err(unknown_class(&rule.head.class));
    }
    let mut class = rule.head.class.as_str();
    for (i, step) in rule.steps.iter().enumerate() {
        let p = ontology
            .properties
            .get(&step.property)
            .ok_or_else(|| unknown_class(&step.property))?;
        if !ontology.is_subclass(class, &p.domain) {
            return Err(ill_typed(rule, i, format!("{} does not apply to {class}", step.property)));
        }
        match &step.target {
            Target::Literal if p.range == LITERAL => {}
            Target::Literal => {
                return Err(ill_typed(rule, i, format!("{} ranges over {}, not literals", step.property, p.range)))
            }
            Target::Node(n) => {
                if !ontology.classes.contains_key(&n.class) {
                    return Err(unknown_class(&n.class));
                }
                if p.range == LITERAL || !ontology.is_subclass(&n.class, &p.range) {
                    return Err(ill_typed(rule, i, format!("{} does not range over {}", step.property, n.class)));
                }
                class = &n.class;
            }
        }
    }
    Ok(())
}

fn invalid_key(rule: &MappingRule, message: impl Into<String>) -> TransformError {
    TransformError::InvalidKey {
        rule: rule.rule_id.clone(),
        message: message.into(),
    }
}

/// Number of row indices a cell of `path` carries.
fn depth(t: &Template, path: &ColumnPath) -> Option<usize> {
    t.resolve(path).ok().map(|r| r.nested_hops.len() + 1)
}

/// Whether rows of `key` can be derived from the rows of `source`: an
/// ancestor scope of the source, or a single-row root table.
pub(crate) fn key_in_scope(t: &Template, source: &ColumnPath, key: &ColumnPath) -> bool {
    let (Some(ds), Some(dk)) = (depth(t, source), depth(t, key)) else {
        return false;
    };
    if key.table != source.table {
        let single = t
            .table(&key.table)
            .is_some_and(|tb| tb.multiplicity == crate::template::Multiplicity::SingleRow);
        return single && dk == 1;
    }
    if dk > ds {
        return false;
    }
    // the key's nested hops must be a prefix of the source's
    let hops = |p: &ColumnPath| t.resolve(p).map(|r| r.nested_hops.iter().map(|s| s.to_string()).collect::<Vec<_>>());
    match (hops(source), hops(key)) {
        (Ok(s), Ok(k)) => s.starts_with(&k),
        _ => false,
    }
}

fn check_template_rule(t: &Template, rule: &MappingRule) -> Result<(), TransformError> {
    let unknown = |c: &str| TransformError::UnknownColumn {
        rule: rule.rule_id.clone(),
        column: c.to_string(),
    };
    let path: ColumnPath = rule.source.parse().map_err(|_| unknown(&rule.source))?;
    let spec = t.resolve(&path).map_err(|_| unknown(&rule.source))?.spec;
    let ColumnKind::Plain { value_type } = &spec.kind else {
        return Err(unknown(&rule.source));
    };
    let is_entity = matches!(value_type, ValueType::Entity { .. });
    let is_term = matches!(value_type, ValueType::VocabularyTerm { .. });
    for node in rule.nodes() {
        match &node.key {
            NodeKey::Term if !is_term => return Err(invalid_key(rule, "`term` needs a vocabulary column")),
            NodeKey::Value if is_term => return Err(invalid_key(rule, "`value` needs a text column")),
            NodeKey::Entity(None) if !is_entity => {
                return Err(invalid_key(rule, "`entity` without a column needs an entity column"))
            }
            NodeKey::Entity(Some(k)) => {
                let ks = t.resolve(k).map_err(|_| unknown(&k.to_string()))?.spec;
                if !matches!(&ks.kind, ColumnKind::Plain { value_type: ValueType::Entity { .. } }) {
                    return Err(invalid_key(rule, format!("{k} is not an entity column")));
                }
                if !key_in_scope(t, &path, k) {
                    return Err(invalid_key(rule, format!("{k} is not reachable from {path}")));
                }
            }
            _ => {}
        }
    }
    if matches!(rule.head.key, NodeKey::Fresh) {
        return Err(invalid_key(rule, "the head node needs an identity"));
    }
    if rule.ends_in_literal() && is_term {
        return Err(invalid_key(rule, "vocabulary cells map to terms, not literals"));
    }
    Ok(())
}

fn check_entity_rule(entity_type: &str, rule: &MappingRule) -> Result<(), TransformError> {
    if rule.head.key != NodeKey::Entity(None) {
        return Err(invalid_key(rule, format!("{entity_type} rules start at `[entity]`")));
    }
    for n in rule.nodes().skip(1) {
        if !matches!(n.key, NodeKey::Fresh | NodeKey::Value) {
            return Err(invalid_key(rule, "only `fresh` and `value` nodes may follow an entity"));
        }
    }
    Ok(())
}

fn check_vocabulary_rule(rule: &MappingRule) -> Result<(), TransformError> {
    if !VOCABULARY_FIELDS.contains(&rule.source.as_str()) {
        return Err(TransformError::UnknownColumn {
            rule: rule.rule_id.clone(),
            column: rule.source.clone(),
        });
    }
    if rule.head.key != NodeKey::Term {
        return Err(invalid_key(rule, "vocabulary rules start at `[term]`"));
    }
    let last_is_term = matches!(rule.steps.last(), Some(Step { target: Target::Node(ChainNode { key: NodeKey::Term, .. }), .. }));
    match rule.source.as_str() {
        "broader" if !last_is_term || rule.steps.len() != 1 => {
            Err(invalid_key(rule, "`broader` maps to one step ending in `[term]`"))
        }
        "label" | "preferred_en" if !rule.ends_in_literal() => Err(invalid_key(rule, "labels map to literals")),
        "term" if !rule.steps.is_empty() => Err(invalid_key(rule, "`term` only types the concept")),
        _ => Ok(()),
    }
}

/// Check a parsed mapping against the template inventory and the ontology.
pub fn check_mapping(m: &MappingDefinition, templates: &TemplateSet, ontology: &Ontology) -> Result<(), TransformError> {
    let entity_class: Option<&str> = m.rules.first().map(|r| r.head.class.as_str());
    for rule in &m.rules {
        match &m.source {
            MappingSource::Template { template_id, version } => {
                let t = templates
                    .get(template_id, *version)
                    .ok_or_else(|| TransformError::TemplateMismatch(format!("{template_id} v{version}")))?;
                check_template_rule(t, rule)?;
            }
            MappingSource::Entity { entity_type } => {
                check_entity_rule(entity_type, rule)?;
                if Some(rule.head.class.as_str()) != entity_class {
                    return Err(invalid_key(rule, "all rules of an entity mapping share one class"));
                }
            }
            MappingSource::Vocabularies => check_vocabulary_rule(rule)?,
        }
        check_chain(rule, ontology)?;
    }
    if let MappingSource::Entity { .. } = m.source {
        let sources: BTreeSet<&str> = m.rules.iter().map(|r| r.source.as_str()).collect();
        if let Some(l) = m.label.iter().find(|l| !sources.contains(l.as_str())) {
            return Err(TransformError::UnknownColumn {
                rule: "label".into(),
                column: l.clone(),
            });
        }
    } else if !m.label.is_empty() {
        return Err(malformed(1, "`label` is only meaningful for entity mappings"));
    }
    Ok(())
}

/// Parse and check in one go.
pub fn compile_mapping(doc: &str, templates: &TemplateSet, ontology: &Ontology) -> Result<MappingDefinition, TransformError> {
    let m = parse_mapping(doc)?;
    check_mapping(&m, templates, ontology)?;
    Ok(m)
}

/// XSD datatype for a literal column; `None` for plain strings.
pub fn datatype(kind: LiteralKind, value: &str) -> Option<&'static str> {
    match kind {
        LiteralKind::String => None,
        LiteralKind::Integer => Some("integer"),
        LiteralKind::Decimal => Some("decimal"),
        LiteralKind::Boolean => Some("boolean"),
        LiteralKind::Date => Some(match value.len() {
            4 => "gYear",
            7 => "gYearMonth",
            _ => "date",
        }),
    }
}
