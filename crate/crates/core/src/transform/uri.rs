//! URI generation policy: IRIs are pure functions of a node's kind and keys.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TransformError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    /// A record; also names the record's graph.
    Record,
    /// The canonical node of an identity cluster.
    Entity,
    /// Intermediate node minted from its predecessor and the chain step.
    Event,
    /// Node identified by a record row.
    Row,
    /// Node identified by a literal value, shared across records.
    Value,
    Term,
    /// A label proposed for a dynamic vocabulary.
    NewTerm,
    Scheme,
    Occurrence,
    Graph,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pattern {
    pub kind: NodeKind,
    pub pattern: String,
}

/// Patterns interpolate `{ns}` and the keys the engine supplies for each
/// kind; the first pattern for a kind wins. Key values other than `{ns}`
/// are percent-encoded outside `[A-Za-z0-9_.~-]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UriPolicy {
    pub namespace: String,
    /// Hex digits of the SHA-256 digest used for `{hash}`.
    #[serde(default = "default_hash_length")]
    pub hash_length: usize,
    pub patterns: Vec<Pattern>,
}

fn default_hash_length() -> usize {
    12
}

impl Default for UriPolicy {
    fn default() -> Self {
        UriPolicy::with_namespace("https://data.factrix.example/")
    }
}

impl UriPolicy {
    /// The stock patterns under `namespace`.
    pub fn with_namespace(namespace: &str) -> UriPolicy {
        let p = |kind, pattern: &str| Pattern {
            kind,
            pattern: pattern.to_string(),
        };
        UriPolicy {
            namespace: namespace.to_string(),
            hash_length: default_hash_length(),
            patterns: vec![
                p(NodeKind::Record, "{ns}record/{record}"),
                p(NodeKind::Entity, "{ns}{type}/{slug}-{hash}"),
                p(NodeKind::Event, "{ns}{class}/{hash}"),
                p(NodeKind::Row, "{ns}{class}/{record}-{hash}"),
                p(NodeKind::Value, "{ns}{class}/{slug}-{hash}"),
                p(NodeKind::Term, "{ns}vocabulary/{vocab}/{term}"),
                p(NodeKind::NewTerm, "{ns}vocabulary/{vocab}/new/{slug}-{hash}"),
                p(NodeKind::Scheme, "{ns}vocabulary/{vocab}"),
                p(NodeKind::Occurrence, "{ns}occurrence/{hash}"),
                p(NodeKind::Graph, "{ns}graph/{name}"),
            ],
        }
    }

    pub fn parse(doc: &str) -> Result<UriPolicy, TransformError> {
        let p: UriPolicy = serde_json::from_str(doc).map_err(|e| TransformError::InvalidPolicy(e.to_string()))?;
        if !crate::rdf::is_valid_iri(&p.namespace) {
            return Err(TransformError::InvalidPolicy(format!("namespace {:?}", p.namespace)));
        }
        if !(8..=64).contains(&p.hash_length) {
            return Err(TransformError::InvalidPolicy("hash_length must be within 8..=64".into()));
        }
        Ok(p)
    }

    /// Digest of `parts`, truncated to the policy's hash length.
    pub fn hash(&self, parts: &[&str]) -> String {
        let mut h = Sha256::new();
        for (i, p) in parts.iter().enumerate() {
            if i > 0 {
                h.update([0x1f]);
            }
            h.update(p.as_bytes());
        }
        let mut hex = hex::encode(h.finalize());
        hex.truncate(self.hash_length);
        hex
    }

    pub fn generate(&self, kind: NodeKind, keys: &[(&str, &str)]) -> Result<String, TransformError> {
        let pattern = self
            .patterns
            .iter()
            .find(|p| p.kind == kind)
            .ok_or_else(|| TransformError::MissingKey(format!("no pattern for {kind:?}")))?;
        let mut out = String::new();
        let mut rest = pattern.pattern.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let close = rest[open..]
                .find('}')
                .ok_or_else(|| TransformError::InvalidPolicy(format!("unclosed placeholder in {:?}", pattern.pattern)))?;
            let name = &rest[open + 1..open + close];
            if name == "ns" {
                out.push_str(&self.namespace);
            } else {
                let value = keys
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| TransformError::MissingKey(name.to_string()))?;
                encode_into(&mut out, value);
            }
            rest = &rest[open + close + 1..];
        }
        out.push_str(rest);
        if !crate::rdf::is_valid_iri(&out) {
            return Err(TransformError::InvalidPolicy(format!("pattern produced {out:?}")));
        }
        Ok(out)
    }
}

fn encode_into(out: &mut String, value: &str) {
    for b in value.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'~' | b'-') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
}

/// Lowercase ASCII letters and digits, other runs collapsed to `-`; never
/// empty.
pub fn slug(text: &str) -> String {
    let mut out = String::new();
    for c in text.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    let trimmed = out.trim_matches('-');
    if trimmed.is_empty() {
        "x".to_string()
    } else {
        trimmed.to_string()
    }
}

/// `LegalEntity` → `legal-entity`.
pub fn kebab(id: &str) -> String {
    let mut out = String::new();
    for (i, c) in id.chars().enumerate() {
        if c.is_ascii_uppercase() && i > 0 && !out.ends_with('-') {
            out.push('-');
        }
        if c == '_' {
            out.push('-');
        } else {
            out.push(c.to_ascii_lowercase());
        }
    }
    out
}
