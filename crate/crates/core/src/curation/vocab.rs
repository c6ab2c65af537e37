//! Multilingual controlled vocabularies with a broader-term hierarchy, and
//! their SKOS rendering.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rdf::{ns, Graph, Term};
use crate::record::{walk_cells, CellValue, Record};
use crate::template::{ColumnPath, TemplateSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VocabError {
    #[error("unknown vocabulary: {0}")]
    UnknownVocabulary(String),
    #[error("unknown term {term} in {vocab}")]
    UnknownTerm { vocab: String, term: String },
    #[error("term {0} already exists")]
    DuplicateTerm(String),
    #[error("setting {term} broader than {broader} would create a cycle")]
    CycleDetected { term: String, broader: String },
    #[error("term {0} needs at least one non-empty label")]
    EmptyLabels(String),
    #[error("term {0} still has narrower terms")]
    HasNarrower(String),
    #[error("invalid identifier: {0:?}")]
    InvalidId(String),
    #[error("malformed vocabulary document: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabTerm {
    /// Language tag → label.
    pub labels: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preferred_en: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub broader: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub deprecated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub vocab_id: String,
    pub name: String,
    #[serde(default)]
    pub languages: Vec<String>,
    #[serde(default)]
    pub used_in: Vec<String>,
    #[serde(default)]
    pub curating_org: String,
    #[serde(default)]
    pub terms: BTreeMap<String, VocabTerm>,
}

/// What `remove_term` did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Removal {
    Deleted,
    Deprecated,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.'))
}

impl Vocabulary {
    pub fn new(vocab_id: &str, name: &str) -> Vocabulary {
        Vocabulary {
            vocab_id: vocab_id.to_string(),
            name: name.to_string(),
            languages: Vec::new(),
            used_in: Vec::new(),
            curating_org: String::new(),
            terms: BTreeMap::new(),
        }
    }

    fn unknown(&self, term: &str) -> VocabError {
        VocabError::UnknownTerm {
            vocab: self.vocab_id.clone(),
            term: term.to_string(),
        }
    }

    fn term_mut(&mut self, term: &str) -> Result<&mut VocabTerm, VocabError> {
        if !self.terms.contains_key(term) {
            return Err(self.unknown(term));
        }
        Ok(self.terms.get_mut(term).expect("checked"))
    }

    pub fn validate(&self) -> Result<(), VocabError> {
        if !valid_id(&self.vocab_id) {
            return Err(VocabError::InvalidId(self.vocab_id.clone()));
        }
        for (id, t) in &self.terms {
            if !valid_id(id) {
                return Err(VocabError::InvalidId(id.clone()));
            }
            if t.labels.is_empty() || t.labels.values().any(|l| l.trim().is_empty()) {
                return Err(VocabError::EmptyLabels(id.clone()));
            }
            if let Some(b) = &t.broader {
                if !self.terms.contains_key(b) {
                    return Err(self.unknown(b));
                }
            }
        }
        for id in self.terms.keys() {
            // a chain longer than the term count must revisit a term
            let mut cur = id;
            for _ in 0..=self.terms.len() {
                match &self.terms[cur].broader {
                    Some(b) if b == id => {
                        return Err(VocabError::CycleDetected {
                            term: id.clone(),
                            broader: self.terms[id].broader.clone().unwrap_or_default(),
                        })
                    }
                    Some(b) => cur = b,
                    None => break,
                }
            }
        }
        Ok(())
    }

    pub fn add_term(&mut self, term_id: &str, term: VocabTerm) -> Result<(), VocabError> {
        if !valid_id(term_id) {
            return Err(VocabError::InvalidId(term_id.to_string()));
        }
        if self.terms.contains_key(term_id) {
            return Err(VocabError::DuplicateTerm(term_id.to_string()));
        }
        if term.labels.is_empty() || term.labels.values().any(|l| l.trim().is_empty()) {
            return Err(VocabError::EmptyLabels(term_id.to_string()));
        }
        if let Some(b) = &term.broader {
            if !self.terms.contains_key(b) {
                return Err(self.unknown(b));
            }
        }
        self.terms.insert(term_id.to_string(), term);
        Ok(())
    }

    /// Set or clear the broader term, refusing edges that close a cycle.
    pub fn set_broader(&mut self, term: &str, broader: Option<&str>) -> Result<(), VocabError> {
        if !self.terms.contains_key(term) {
            return Err(self.unknown(term));
        }
        if let Some(b) = broader {
            if !self.terms.contains_key(b) {
                return Err(self.unknown(b));
            }
            let mut cur = Some(b);
            while let Some(c) = cur {
                if c == term {
                    return Err(VocabError::CycleDetected {
                        term: term.to_string(),
                        broader: b.to_string(),
                    });
                }
                cur = self.terms[c].broader.as_deref();
            }
        }
        self.term_mut(term)?.broader = broader.map(String::from);
        Ok(())
    }

    pub fn set_preferred_en(&mut self, term: &str, label: &str) -> Result<(), VocabError> {
        if label.trim().is_empty() {
            return Err(VocabError::EmptyLabels(term.to_string()));
        }
        self.term_mut(term)?.preferred_en = Some(label.to_string());
        Ok(())
    }

    pub fn set_label(&mut self, term: &str, lang: &str, label: &str) -> Result<(), VocabError> {
        if label.trim().is_empty() {
            return Err(VocabError::EmptyLabels(term.to_string()));
        }
        self.term_mut(term)?
            .labels
            .insert(lang.to_ascii_lowercase(), label.to_string());
        Ok(())
    }

    /// Terms directly below `term`.
    pub fn narrower(&self, term: &str) -> BTreeSet<&str> {
        self.terms
            .iter()
            .filter(|(_, t)| t.broader.as_deref() == Some(term))
            .map(|(id, _)| id.as_str())
            .collect()
    }

    /// Every term whose broader chain reaches `term`.
    pub fn narrower_closure(&self, term: &str) -> Result<BTreeSet<String>, VocabError> {
        if !self.terms.contains_key(term) {
            return Err(self.unknown(term));
        }
        let mut children: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (id, t) in &self.terms {
            if let Some(b) = &t.broader {
                children.entry(b.as_str()).or_default().push(id);
            }
        }
        let mut out = BTreeSet::new();
        let mut queue: VecDeque<&str> = VecDeque::from([term]);
        while let Some(cur) = queue.pop_front() {
            for &c in children.get(cur).into_iter().flatten() {
                if out.insert(c.to_string()) {
                    queue.push_back(c);
                }
            }
        }
        Ok(out)
    }

    /// Delete an unused term; a term still cited by records is only
    /// deprecated so those records keep resolving.
    pub fn remove_term(&mut self, term: &str, in_use: bool) -> Result<Removal, VocabError> {
        if !self.terms.contains_key(term) {
            return Err(self.unknown(term));
        }
        if in_use {
            self.term_mut(term)?.deprecated = true;
            return Ok(Removal::Deprecated);
        }
        if !self.narrower(term).is_empty() {
            return Err(VocabError::HasNarrower(term.to_string()));
        }
        self.terms.remove(term);
        Ok(Removal::Deleted)
    }
}

pub fn parse_vocabulary(doc: &str) -> Result<Vocabulary, VocabError> {
    let v: Vocabulary = serde_json::from_str(doc).map_err(|e| VocabError::Malformed(e.to_string()))?;
    v.validate()?;
    Ok(v)
}

/// Load every `*.json` vocabulary in `dir`, keyed by id.
pub fn load_vocabularies(dir: &Path) -> Result<BTreeMap<String, Vocabulary>, VocabError> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| VocabError::Malformed(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    for p in paths {
        let text = std::fs::read_to_string(&p).map_err(|e| VocabError::Malformed(format!("{}: {e}", p.display())))?;
        let v = parse_vocabulary(&text).map_err(|e| VocabError::Malformed(format!("{}: {e}", p.display())))?;
        out.insert(v.vocab_id.clone(), v);
    }
    Ok(out)
}

/// A vocabulary cell found in a record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermUsage {
    pub vocabulary_id: String,
    /// Set for references to existing terms.
    pub term_id: Option<String>,
    /// Set for terms proposed in a dynamic vocabulary column.
    pub new_label: Option<(String, String)>,
    pub record_id: String,
    pub path: ColumnPath,
    pub rows: Vec<usize>,
}

/// Every vocabulary cell of the given records (shared or not).
pub fn term_usages<'a>(records: impl IntoIterator<Item = &'a Record>, templates: &TemplateSet) -> Vec<TermUsage> {
    let mut out = Vec::new();
    for r in records {
        let Some(t) = templates.get(&r.meta.template_id, r.meta.template_version) else {
            continue;
        };
        walk_cells(t, r, |c| {
            let (vocabulary_id, term_id, new_label) = match c.value {
                CellValue::TermRef { vocabulary_id, term_id } => (vocabulary_id, Some(term_id.clone()), None),
                CellValue::NewTerm {
                    vocabulary_id,
                    label,
                    language,
                } => (vocabulary_id, None, Some((label.clone(), language.clone()))),
                _ => return,
            };
            out.push(TermUsage {
                vocabulary_id: vocabulary_id.clone(),
                term_id,
                new_label,
                record_id: r.meta.record_id.clone(),
                path: c.path,
                rows: c.rows,
            });
        });
    }
    out
}

pub fn scheme_iri(base: &str, vocab_id: &str) -> String {
    format!("{base}vocabulary/{vocab_id}")
}

pub fn concept_iri(base: &str, vocab_id: &str, term_id: &str) -> String {
    format!("{base}vocabulary/{vocab_id}/{term_id}")
}

/// SKOS rendering: a concept scheme plus one concept per term. Labels become
/// `skos:prefLabel` per language; `preferred_en` is the English prefLabel and
/// a differing English label is kept as `skos:altLabel`.
pub fn export_skos(v: &Vocabulary, base: &str) -> Graph {
    export_skos_with(v, &scheme_iri(base, &v.vocab_id), |t| concept_iri(base, &v.vocab_id, t))
}

/// [`export_skos`] with caller-chosen IRIs.
pub fn export_skos_with(v: &Vocabulary, scheme: &str, concept: impl Fn(&str) -> String) -> Graph {
    let skos = |local: &str| format!("{}{local}", ns::SKOS);
    let mut g = Graph::new();
    let scheme = scheme.to_string();
    g.add(&scheme, ns::RDF_TYPE, Term::iri(skos("ConceptScheme")));
    g.add(&scheme, &skos("prefLabel"), Term::lang(v.name.clone(), "en"));
    for (id, t) in &v.terms {
        let c = concept(id);
        g.add(&c, ns::RDF_TYPE, Term::iri(skos("Concept")));
        g.add(&c, &skos("inScheme"), Term::iri(scheme.clone()));
        for (lang, label) in &t.labels {
            let predicate = match &t.preferred_en {
                Some(p) if lang == "en" && p == label => continue,
                Some(_) if lang == "en" => "altLabel",
                _ => "prefLabel",
            };
            g.add(&c, &skos(predicate), Term::lang(label.clone(), lang));
        }
        if let Some(p) = &t.preferred_en {
            g.add(&c, &skos("prefLabel"), Term::lang(p.clone(), "en"));
        }
        if let Some(b) = &t.broader {
            g.add(&c, &skos("broader"), Term::iri(concept(b)));
        }
        if t.deprecated {
            g.add(&c, &format!("{}deprecated", ns::OWL), Term::typed("true", format!("{}boolean", ns::XSD)));
        }
    }
    g
}

pub fn skos_prefixes(base: &str) -> crate::rdf::PrefixMap {
    [
        ("skos", ns::SKOS.to_string()),
        ("owl", ns::OWL.to_string()),
        ("xsd", ns::XSD.to_string()),
        ("voc", format!("{base}vocabulary/")),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}
