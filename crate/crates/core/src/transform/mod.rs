//! Records, curated entities and vocabularies to RDF, driven by declarative
//! mappings onto a target ontology.

mod engine;
pub mod mapping;
pub mod ontology;
pub mod uri;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::template::{column_inventory, ColumnPath, TemplateSet};

pub use engine::{EntityIris, Transformer, ENTITIES_GRAPH, VOCABULARIES_GRAPH};
pub use mapping::{
    check_mapping, compile_mapping, parse_mapping, ChainNode, MappingDefinition, MappingRule, MappingSource, NodeKey,
    Step, Target,
};
pub use ontology::Ontology;
pub use uri::{NodeKind, UriPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("rule {rule}: unknown column {column}")]
    UnknownColumn { rule: String, column: String },
    #[error("rule {rule}, step {step}: {message}")]
    IllTypedChain { rule: String, step: usize, message: String },
    #[error("rule {rule}: {name} is not in the ontology")]
    UnknownOntologyTerm { rule: String, name: String },
    #[error("rule {rule}: {message}")]
    InvalidKey { rule: String, message: String },
    #[error("no template or mapping for {0}")]
    TemplateMismatch(String),
    #[error("missing key {0}")]
    MissingKey(String),
    #[error("no mapping for {0}")]
    MissingMapping(String),
    #[error("more than one mapping for {0}")]
    DuplicateMapping(String),
    #[error("invalid ontology: {0}")]
    InvalidOntology(String),
    #[error("invalid uri policy: {0}")]
    InvalidPolicy(String),
    #[error("two identities map to {0}")]
    IriCollision(String),
    #[error("{0}")]
    Io(String),
}

/// Classes and properties the engine itself emits, which every ontology
/// used for transformation must declare.
pub const BUILTIN_CLASSES: [&str; 2] = ["Record", "Occurrence"];
pub const BUILTIN_PROPERTIES: [&str; 5] = ["of_template", "has_occurrence", "found_in", "column_path", "row_path"];

/// Read every `*.map` file in `dir`, sorted by file name.
pub fn load_mappings(dir: &Path) -> Result<Vec<(String, MappingDefinition)>, TransformError> {
    let io = |e: std::io::Error| TransformError::Io(format!("{}: {e}", dir.display()));
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "map"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let text = std::fs::read_to_string(&p).map_err(io)?;
            let m = parse_mapping(&text).map_err(|e| TransformError::Io(format!("{name}: {e}")))?;
            Ok((name, m))
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingReport {
    pub mapping_count: usize,
    pub template_mappings: usize,
    pub entity_mappings: usize,
    pub vocabulary_mappings: usize,
    pub errors: Vec<String>,
    /// Plain template columns no rule reads.
    pub uncovered: Vec<(String, ColumnPath)>,
}

impl MappingReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn warnings(&self) -> Vec<String> {
        self.uncovered
            .iter()
            .map(|(t, p)| format!("{t}: column {p} is not mapped"))
            .collect()
    }
}

/// Check a corpus of mappings: each must compile, and together they must
/// cover every template, every entity type the templates use, and the
/// vocabularies, exactly once.
pub fn validate_corpus_mappings(mappings: &[MappingDefinition], templates: &TemplateSet, ontology: &Ontology) -> MappingReport {
    let mut report = MappingReport {
        mapping_count: mappings.len(),
        ..MappingReport::default()
    };
    let mut seen: BTreeMap<&MappingSource, &str> = BTreeMap::new();
    for m in mappings {
        if let Err(e) = check_mapping(m, templates, ontology) {
            report.errors.push(format!("{}: {e}", m.mapping_id));
        }
        if let Some(first) = seen.insert(&m.source, &m.mapping_id) {
            report.errors.push(format!("{} and {} map the same source", first, m.mapping_id));
        }
        match &m.source {
            MappingSource::Template { .. } => report.template_mappings += 1,
            MappingSource::Entity { .. } => report.entity_mappings += 1,
            MappingSource::Vocabularies => report.vocabulary_mappings += 1,
        }
    }
    let mut entity_types = BTreeSet::new();
    for t in templates.iter() {
        entity_types.extend(t.entity_types.iter().cloned());
        let source = MappingSource::Template {
            template_id: t.id.clone(),
            version: t.version,
        };
        let Some(m) = mappings.iter().find(|m| m.source == source) else {
            report.errors.push(format!("no mapping for template {} v{}", t.id, t.version));
            continue;
        };
        let read: BTreeSet<String> = m.rules.iter().map(|r| r.source.clone()).collect();
        for (path, _) in column_inventory(t) {
            if !read.contains(&path.to_string()) {
                report.uncovered.push((t.id.clone(), path));
            }
        }
    }
    for ty in &entity_types {
        let source = MappingSource::Entity {
            entity_type: ty.clone(),
        };
        if !seen.contains_key(&source) {
            report.errors.push(format!("no mapping for entity type {ty}"));
        }
    }
    if !seen.contains_key(&MappingSource::Vocabularies) {
        report.errors.push("no mapping for vocabularies".into());
    }
    report
}
