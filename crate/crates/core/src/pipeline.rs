//! Directory-level operations shared by the command line and the service:
//! load a configuration, curate a corpus and transform it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curation::vocab::{load_vocabularies, Vocabulary};
use crate::curation::{auto_match, extract_instances, load_rules, MatchRule, Registry};
use crate::rdf::{ns, to_nquads, to_ntriples, to_turtle, Dataset, PrefixMap};
use crate::record::{parse_record, Record};
use crate::template::{parse_template, validate_template, TemplateSet, ValidationReport};
use crate::transform::{load_mappings, validate_corpus_mappings, MappingDefinition, MappingReport, Ontology, Transformer, UriPolicy};

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Unreadable or missing input.
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    /// Readable input that does not parse or validate.
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

impl PipelineError {
    pub fn is_io(&self) -> bool {
        matches!(self, PipelineError::Io { .. })
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    fn invalid(path: &Path, e: impl std::fmt::Display) -> Self {
        PipelineError::Invalid {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

fn read(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))
}

/// `*.json` files of a directory in name order.
fn json_files(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| PipelineError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    out.sort();
    Ok(out)
}

pub fn load_templates(dir: &Path) -> Result<TemplateSet, PipelineError> {
    let mut set = TemplateSet::new();
    for p in json_files(dir)? {
        set.insert(parse_template(&read(&p)?).map_err(|e| PipelineError::invalid(&p, e))?);
    }
    Ok(set)
}

pub fn load_records(dir: &Path) -> Result<Vec<Record>, PipelineError> {
    json_files(dir)?
        .iter()
        .map(|p| parse_record(&read(p)?).map_err(|e| PipelineError::invalid(p, e)))
        .collect()
}

/// The files a transformation reads besides the records. `mappings`,
/// `ontology` and `policy` are required; missing vocabulary or rule files
/// mean none.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigPaths {
    pub templates: PathBuf,
    pub mappings: PathBuf,
    pub ontology: PathBuf,
    pub policy: PathBuf,
    pub vocabularies: PathBuf,
    pub match_rules: PathBuf,
}

impl ConfigPaths {
    /// The standard layout of a configuration directory.
    pub fn under(root: &Path) -> ConfigPaths {
        ConfigPaths {
            templates: root.join("templates"),
            mappings: root.join("mappings"),
            ontology: root.join("ontology.json"),
            policy: root.join("uri-policy.json"),
            vocabularies: root.join("vocabularies"),
            match_rules: root.join("match-rules.json"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Config {
    pub templates: TemplateSet,
    pub mappings: Vec<MappingDefinition>,
    pub ontology: Ontology,
    pub policy: UriPolicy,
    pub vocabularies: BTreeMap<String, Vocabulary>,
    pub match_rules: Vec<MatchRule>,
}

impl Config {
    pub fn load(paths: &ConfigPaths) -> Result<Config, PipelineError> {
        Config::load_with(paths, load_templates(&paths.templates)?)
    }

    /// Like [`Config::load`] with templates from elsewhere; `paths.templates`
    /// is not read.
    pub fn load_with(paths: &ConfigPaths, templates: TemplateSet) -> Result<Config, PipelineError> {
        if !paths.mappings.is_dir() {
            return Err(PipelineError::io(&paths.mappings, "not a directory"));
        }
        let mappings = load_mappings(&paths.mappings)
            .map_err(|e| PipelineError::invalid(&paths.mappings, e))?
            .into_iter()
            .map(|(_, m)| m)
            .collect();
        let ontology = Ontology::parse(&read(&paths.ontology)?).map_err(|e| PipelineError::invalid(&paths.ontology, e))?;
        let policy = UriPolicy::parse(&read(&paths.policy)?).map_err(|e| PipelineError::invalid(&paths.policy, e))?;
        let vocabularies = if paths.vocabularies.is_dir() {
            load_vocabularies(&paths.vocabularies).map_err(|e| PipelineError::invalid(&paths.vocabularies, e))?
        } else {
            BTreeMap::new()
        };
        let match_rules = if paths.match_rules.is_file() {
            load_rules(&read(&paths.match_rules)?).map_err(|e| PipelineError::invalid(&paths.match_rules, e))?
        } else {
            Vec::new()
        };
        Ok(Config {
            templates,
            mappings,
            ontology,
            policy,
            vocabularies,
            match_rules,
        })
    }

    pub fn transformer(&self) -> Result<Transformer<'_>, PipelineError> {
        Transformer::new(&self.ontology, &self.policy, &self.templates, self.mappings.iter().cloned())
            .map_err(|e| PipelineError::Invalid {
                path: PathBuf::from("mappings"),
                message: e.to_string(),
            })
    }

    /// Extract entity instances from the shared records and apply the
    /// identity rules.
    pub fn curate(&self, records: &[Record]) -> Result<Registry, PipelineError> {
        let invalid = |e: crate::curation::CurationError| PipelineError::Invalid {
            path: PathBuf::from("records"),
            message: e.to_string(),
        };
        let reg = extract_instances(records, &self.templates).map_err(invalid)?;
        Ok(auto_match(&reg, &self.match_rules).map_err(invalid)?.0)
    }

    /// Records, their curated entities and the vocabularies as a dataset.
    pub fn transform(&self, records: &[Record]) -> Result<Dataset, PipelineError> {
        let reg = self.curate(records)?;
        self.transformer()?
            .transform_corpus(records, &reg, &self.vocabularies)
            .map_err(|e| PipelineError::Invalid {
                path: PathBuf::from("records"),
                message: e.to_string(),
            })
    }

    pub fn prefixes(&self) -> PrefixMap {
        let mut p = PrefixMap::new();
        p.insert("onto".into(), self.ontology.namespace.clone());
        p.insert("data".into(), self.policy.namespace.clone());
        p.insert("rdf".into(), ns::RDF.into());
        p.insert("rdfs".into(), ns::RDFS.into());
        p.insert("skos".into(), ns::SKOS.into());
        p.insert("xsd".into(), ns::XSD.into());
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RdfFormat {
    /// Canonical N-Triples of the union of all graphs.
    NTriples,
    NQuads,
    /// Turtle of the union of all graphs.
    Turtle,
}

impl RdfFormat {
    /// By file extension; N-Triples when unknown.
    pub fn for_path(path: &Path) -> RdfFormat {
        match path.extension().and_then(|x| x.to_str()) {
            Some("nq") => RdfFormat::NQuads,
            Some("ttl") => RdfFormat::Turtle,
            _ => RdfFormat::NTriples,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            RdfFormat::NTriples => "nt",
            RdfFormat::NQuads => "nq",
            RdfFormat::Turtle => "ttl",
        }
    }
}

pub fn serialize_dataset(ds: &Dataset, format: RdfFormat, prefixes: &PrefixMap) -> String {
    match format {
        RdfFormat::NTriples => to_ntriples(&ds.union_graph()),
        RdfFormat::NQuads => to_nquads(ds),
        RdfFormat::Turtle => to_turtle(&ds.union_graph(), prefixes),
    }
}

/// Outcome of checking a configuration without transforming anything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationSummary {
    /// Templates with a non-empty report.
    pub templates: BTreeMap<String, ValidationReport>,
    pub template_count: usize,
    /// Present when mappings were checked.
    pub mappings: Option<MappingReport>,
}

impl ValidationSummary {
    pub fn is_ok(&self) -> bool {
        self.templates.is_empty() && self.mappings.as_ref().is_none_or(MappingReport::is_ok)
    }
}

/// Validate the templates in `templates`, and when given, the mapping
/// corpus against them and the ontology.
pub fn validate_dirs(
    templates: &Path,
    mappings: Option<(&Path, &Path)>,
) -> Result<ValidationSummary, PipelineError> {
    let set = load_templates(templates)?;
    let mut out = ValidationSummary {
        template_count: set.len(),
        ..ValidationSummary::default()
    };
    for t in set.iter() {
        let report = validate_template(t);
        if !report.is_empty() {
            out.templates.insert(format!("{} v{}", t.id, t.version), report);
        }
    }
    if let Some((dir, ontology)) = mappings {
        let ontology = Ontology::parse(&read(ontology)?).map_err(|e| PipelineError::invalid(ontology, e))?;
        if !dir.is_dir() {
            return Err(PipelineError::io(dir, "not a directory"));
        }
        let ms: Vec<MappingDefinition> = load_mappings(dir)
            .map_err(|e| PipelineError::invalid(dir, e))?
            .into_iter()
            .map(|(_, m)| m)
            .collect();
        out.mappings = Some(validate_corpus_mappings(&ms, &set, &ontology));
    }
    Ok(out)
}
