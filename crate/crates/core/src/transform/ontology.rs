//! The target ontology: classes and properties with their hierarchies.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::TransformError;

/// Range of properties whose objects are literals.
pub const LITERAL: &str = "Literal";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub superclass: Option<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyDef {
    pub domain: String,
    /// A class id, or `Literal`.
    pub range: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub superproperty: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ontology {
    pub namespace: String,
    pub classes: BTreeMap<String, ClassDef>,
    pub properties: BTreeMap<String, PropertyDef>,
}

fn acyclic<'a>(start: &'a str, next: impl Fn(&'a str) -> Option<&'a str>, limit: usize) -> bool {
    let mut cur = start;
    for _ in 0..=limit {
        match next(cur) {
            Some(n) if n == start => return false,
            Some(n) => cur = n,
            None => return true,
        }
    }
    false
}

impl Ontology {
    pub fn parse(doc: &str) -> Result<Ontology, TransformError> {
        let o: Ontology =
            serde_json::from_str(doc).map_err(|e| TransformError::InvalidOntology(e.to_string()))?;
        o.validate()?;
        Ok(o)
    }

    pub fn validate(&self) -> Result<(), TransformError> {
        let bad = |m: String| Err(TransformError::InvalidOntology(m));
        if !crate::rdf::is_valid_iri(&self.namespace) {
            return bad(format!("namespace {:?} is not an IRI", self.namespace));
        }
        for (id, c) in &self.classes {
            if let Some(s) = &c.superclass {
                if !self.classes.contains_key(s) {
                    return bad(format!("class {id}: unknown superclass {s}"));
                }
            }
            if !acyclic(id, |c| self.classes[c].superclass.as_deref(), self.classes.len()) {
                return bad(format!("class {id} is its own superclass"));
            }
        }
        for (id, p) in &self.properties {
            if !self.classes.contains_key(&p.domain) {
                return bad(format!("property {id}: undeclared domain {}", p.domain));
            }
            if p.range != LITERAL && !self.classes.contains_key(&p.range) {
                return bad(format!("property {id}: undeclared range {}", p.range));
            }
            if let Some(s) = &p.superproperty {
                if !self.properties.contains_key(s) {
                    return bad(format!("property {id}: unknown superproperty {s}"));
                }
            }
            if !acyclic(id, |p| self.properties[p].superproperty.as_deref(), self.properties.len()) {
                return bad(format!("property {id} is its own superproperty"));
            }
        }
        Ok(())
    }

    pub fn class_iri(&self, id: &str) -> String {
        format!("{}{id}", self.namespace)
    }

    pub fn property_iri(&self, id: &str) -> String {
        format!("{}{id}", self.namespace)
    }

    /// `class` and all its superclasses.
    pub fn ancestors<'a>(&'a self, class: &'a str) -> BTreeSet<&'a str> {
        let mut out = BTreeSet::new();
        let mut cur = Some(class);
        while let Some(c) = cur {
            if !out.insert(c) {
                break;
            }
            cur = self.classes.get(c).and_then(|d| d.superclass.as_deref());
        }
        out
    }

    pub fn is_subclass(&self, class: &str, of: &str) -> bool {
        self.ancestors(class).contains(of)
    }

    /// Id of the class or property behind an IRI in our namespace.
    pub fn local<'a>(&self, iri: &'a str) -> Option<&'a str> {
        iri.strip_prefix(self.namespace.as_str())
    }
}
