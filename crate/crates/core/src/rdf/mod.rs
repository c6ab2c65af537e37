//! Minimal RDF model: terms, triples, graphs with set semantics, and
//! datasets of named graphs.
//!
//! Canonical output is N-Triples with lines sorted by byte order; equal
//! graphs therefore serialize to equal bytes.

mod ntriples;
mod turtle;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

pub use ntriples::{parse_nquads, parse_ntriples, to_nquads, to_ntriples, ParseError};
pub use turtle::{to_turtle, PrefixMap};

pub mod ns {
    pub const RDF: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#";
    pub const RDFS: &str = "http://www.w3.org/2000/01/rdf-schema#";
    pub const XSD: &str = "http://www.w3.org/2001/XMLSchema#";
    pub const SKOS: &str = "http://www.w3.org/2004/02/skos/core#";
    pub const OWL: &str = "http://www.w3.org/2002/07/owl#";
    pub const DCT: &str = "http://purl.org/dc/terms/";

    pub const RDF_TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";
    pub const RDFS_LABEL: &str = "http://www.w3.org/2000/01/rdf-schema#label";
    pub const XSD_STRING: &str = "http://www.w3.org/2001/XMLSchema#string";
    pub const RDF_LANG_STRING: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#langString";
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Iri(String),
    Blank(String),
    Literal(Literal),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Literal {
    pub lexical: String,
    /// Full datatype IRI; `rdf:langString` when `lang` is set.
    pub datatype: String,
    pub lang: Option<String>,
}

impl Term {
    pub fn iri(s: impl Into<String>) -> Term {
        Term::Iri(s.into())
    }

    pub fn string(s: impl Into<String>) -> Term {
        Term::Literal(Literal {
            lexical: s.into(),
            datatype: ns::XSD_STRING.into(),
            lang: None,
        })
    }

    pub fn typed(s: impl Into<String>, datatype: impl Into<String>) -> Term {
        Term::Literal(Literal {
            lexical: s.into(),
            datatype: datatype.into(),
            lang: None,
        })
    }

    /// Language-tagged string; tags are stored lower-cased.
    pub fn lang(s: impl Into<String>, lang: &str) -> Term {
        Term::Literal(Literal {
            lexical: s.into(),
            datatype: ns::RDF_LANG_STRING.into(),
            lang: Some(lang.to_ascii_lowercase()),
        })
    }

    pub fn as_iri(&self) -> Option<&str> {
        match self {
            Term::Iri(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_literal(&self) -> bool {
        matches!(self, Term::Literal(_))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        ntriples::write_term(f, self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub subject: Term,
    pub predicate: String,
    pub object: Term,
}

impl Triple {
    pub fn new(subject: Term, predicate: impl Into<String>, object: Term) -> Triple {
        Triple {
            subject,
            predicate: predicate.into(),
            object,
        }
    }
}

/// Set of triples.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Graph {
    triples: BTreeSet<Triple>,
}

impl Graph {
    pub fn new() -> Graph {
        Graph::default()
    }

    /// Returns false when the triple was already present.
    pub fn insert(&mut self, t: Triple) -> bool {
        self.triples.insert(t)
    }

    pub fn add(&mut self, s: &str, p: &str, o: Term) {
        self.insert(Triple::new(Term::iri(s), p, o));
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triples.contains(t)
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Triple> {
        self.triples.iter()
    }

    pub fn union(&mut self, other: &Graph) {
        self.triples.extend(other.triples.iter().cloned());
    }

    pub fn with_predicate<'a>(&'a self, p: &'a str) -> impl Iterator<Item = &'a Triple> + 'a {
        self.triples.iter().filter(move |t| t.predicate == p)
    }

    /// Objects of `(s, p, ?)`.
    pub fn objects<'a>(&'a self, s: &'a str, p: &'a str) -> impl Iterator<Item = &'a Term> + 'a {
        self.triples
            .iter()
            .filter(move |t| t.predicate == p && t.subject.as_iri() == Some(s))
            .map(|t| &t.object)
    }

    /// Every IRI used, in any position.
    pub fn iris(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        for t in &self.triples {
            out.insert(t.predicate.as_str());
            for term in [&t.subject, &t.object] {
                match term {
                    Term::Iri(i) => {
                        out.insert(i.as_str());
                    }
                    Term::Literal(l) => {
                        out.insert(l.datatype.as_str());
                    }
                    Term::Blank(_) => {}
                }
            }
        }
        out
    }
}

impl FromIterator<Triple> for Graph {
    fn from_iter<I: IntoIterator<Item = Triple>>(iter: I) -> Self {
        Graph {
            triples: iter.into_iter().collect(),
        }
    }
}

impl Extend<Triple> for Graph {
    fn extend<I: IntoIterator<Item = Triple>>(&mut self, iter: I) {
        self.triples.extend(iter)
    }
}

impl<'a> IntoIterator for &'a Graph {
    type Item = &'a Triple;
    type IntoIter = std::collections::btree_set::Iter<'a, Triple>;

    fn into_iter(self) -> Self::IntoIter {
        self.triples.iter()
    }
}

/// Named graphs keyed by graph IRI. Merging is set union per graph, so it is
/// associative and commutative.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    graphs: BTreeMap<String, Graph>,
}

impl Dataset {
    pub fn new() -> Dataset {
        Dataset::default()
    }

    pub fn graph_mut(&mut self, name: &str) -> &mut Graph {
        self.graphs.entry(name.to_string()).or_default()
    }

    pub fn graph(&self, name: &str) -> Option<&Graph> {
        self.graphs.get(name)
    }

    pub fn graphs(&self) -> impl Iterator<Item = (&str, &Graph)> {
        self.graphs.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn merge(&mut self, other: Dataset) {
        for (name, g) in other.graphs {
            match self.graphs.get_mut(&name) {
                Some(mine) => mine.union(&g),
                None => {
                    self.graphs.insert(name, g);
                }
            }
        }
    }

    /// All triples, provenance dropped.
    pub fn union_graph(&self) -> Graph {
        let mut g = Graph::new();
        for graph in self.graphs.values() {
            g.union(graph);
        }
        g
    }

    pub fn len(&self) -> usize {
        self.graphs.values().map(Graph::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.values().all(Graph::is_empty)
    }
}

/// Absolute IRI check: a scheme followed by characters allowed inside
/// `<...>` in N-Triples.
pub fn is_valid_iri(s: &str) -> bool {
    let Some((scheme, rest)) = s.split_once(':') else {
        return false;
    };
    let mut chars = scheme.chars();
    let scheme_ok = chars.next().is_some_and(|c| c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.'));
    scheme_ok
        && !rest.is_empty()
        && !s
            .chars()
            .any(|c| c <= ' ' || matches!(c, '<' | '>' | '"' | '{' | '}' | '|' | '^' | '`' | '\\'))
}
