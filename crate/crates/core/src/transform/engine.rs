use std::collections::{BTreeMap, HashMap};

use super::mapping::{datatype, ChainNode, MappingDefinition, MappingRule, MappingSource, NodeKey, Step, Target};
use super::ontology::Ontology;
use super::uri::{kebab, slug, NodeKind, UriPolicy};
use super::{check_mapping, TransformError, BUILTIN_CLASSES, BUILTIN_PROPERTIES};
use crate::curation::vocab::{export_skos_with, Vocabulary};
use crate::curation::{record_instances, Cluster, EntityInstance, Registry};
use crate::rdf::{ns, Dataset, Graph, Term};
use crate::record::{walk_cells, CellRef, CellValue, Record};
use crate::template::{ColumnKind, ColumnPath, Template, TemplateSet, ValueType};

pub const ENTITIES_GRAPH: &str = "entities";
pub const VOCABULARIES_GRAPH: &str = "vocabularies";

/// Canonical IRIs of the identity clusters of a registry.
#[derive(Debug, Clone, Default)]
pub struct EntityIris {
    by_instance: HashMap<String, String>,
}

impl EntityIris {
    pub fn of_instance(&self, instance_id: &str) -> Option<&str> {
        self.by_instance.get(instance_id).map(String::as_str)
    }
}

/// Everything needed to turn a corpus into a dataset.
#[derive(Debug)]
pub struct Transformer<'a> {
    ontology: &'a Ontology,
    policy: &'a UriPolicy,
    templates: &'a TemplateSet,
    by_template: BTreeMap<(String, u32), MappingDefinition>,
    by_entity: BTreeMap<String, MappingDefinition>,
    vocabularies: Option<MappingDefinition>,
}

impl<'a> Transformer<'a> {
    /// Check the mappings and index them by source.
    pub fn new(
        ontology: &'a Ontology,
        policy: &'a UriPolicy,
        templates: &'a TemplateSet,
        mappings: impl IntoIterator<Item = MappingDefinition>,
    ) -> Result<Transformer<'a>, TransformError> {
        for c in BUILTIN_CLASSES {
            if !ontology.classes.contains_key(c) {
                return Err(TransformError::InvalidOntology(format!("missing class {c}")));
            }
        }
        for p in BUILTIN_PROPERTIES {
            if !ontology.properties.contains_key(p) {
                return Err(TransformError::InvalidOntology(format!("missing property {p}")));
            }
        }
        let mut tr = Transformer {
            ontology,
            policy,
            templates,
            by_template: BTreeMap::new(),
            by_entity: BTreeMap::new(),
            vocabularies: None,
        };
        for m in mappings {
            check_mapping(&m, templates, ontology)?;
            let dup = match &m.source {
                MappingSource::Template { template_id, version } => {
                    tr.by_template.insert((template_id.clone(), *version), m.clone()).is_some()
                }
                MappingSource::Entity { entity_type } => tr.by_entity.insert(entity_type.clone(), m.clone()).is_some(),
                MappingSource::Vocabularies => tr.vocabularies.replace(m.clone()).is_some(),
            };
            if dup {
                return Err(TransformError::DuplicateMapping(m.mapping_id));
            }
        }
        Ok(tr)
    }

    pub fn policy(&self) -> &UriPolicy {
        self.policy
    }

    pub fn record_iri(&self, record_id: &str) -> Result<String, TransformError> {
        self.policy.generate(NodeKind::Record, &[("record", record_id)])
    }

    pub fn graph_iri(&self, name: &str) -> Result<String, TransformError> {
        self.policy.generate(NodeKind::Graph, &[("name", name)])
    }

    /// Display label of an instance: its raw values for the entity
    /// mapping's label fields (all fields when none are set), space-joined.
    fn raw_label(&self, inst: &EntityInstance) -> String {
        let fields: Vec<&str> = match self.by_entity.get(&inst.entity_type) {
            Some(m) if !m.label.is_empty() => m.label.iter().map(String::as_str).collect(),
            _ => inst.properties.keys().map(String::as_str).collect(),
        };
        let parts: Vec<&str> = fields
            .iter()
            .filter_map(|f| inst.properties.get(*f).map(|v| v.trim()))
            .filter(|v| !v.is_empty())
            .collect();
        parts.join(" ")
    }

    /// IRI of a cluster: typed by entity, slugged from the raw label of its
    /// smallest member, and hashed on that member's id so that distinct
    /// clusters never share an IRI.
    fn identity_iri(&self, identity: &EntityInstance) -> Result<String, TransformError> {
        let hash = self.policy.hash(&["entity", &identity.instance_id]);
        self.policy.generate(
            NodeKind::Entity,
            &[
                ("type", &kebab(&identity.entity_type)),
                ("slug", &slug(&self.raw_label(identity))),
                ("hash", &hash),
            ],
        )
    }

    pub fn cluster_iri(&self, reg: &Registry, cluster: &Cluster) -> Result<String, TransformError> {
        let first = cluster.members.iter().next().expect("clusters are non-empty");
        self.identity_iri(&reg.instances[first])
    }

    /// Assign every cluster its IRI; fails if two clusters collide.
    pub fn entity_iris(&self, reg: &Registry) -> Result<EntityIris, TransformError> {
        let mut out = EntityIris::default();
        let mut taken: HashMap<String, u64> = HashMap::new();
        for c in reg.clusters.values() {
            let iri = self.cluster_iri(reg, c)?;
            if taken.insert(iri.clone(), c.cluster_id).is_some() {
                return Err(TransformError::IriCollision(iri));
            }
            for m in &c.members {
                out.by_instance.insert(m.clone(), iri.clone());
            }
        }
        Ok(out)
    }

    fn class_node(&self, g: &mut Graph, iri: &str, class: &str) {
        g.add(iri, ns::RDF_TYPE, Term::iri(self.ontology.class_iri(class)));
    }

    fn value_iri(&self, class: &str, value: &str) -> Result<String, TransformError> {
        let v = value.trim();
        let hash = self.policy.hash(&["value", class, v]);
        self.policy
            .generate(NodeKind::Value, &[("class", &kebab(class)), ("slug", &slug(v)), ("hash", &hash)])
    }

    fn fresh_iri(&self, prev: &str, property: &str, class: &str) -> Result<String, TransformError> {
        let hash = self.policy.hash(&["event", prev, property, class]);
        self.policy.generate(NodeKind::Event, &[("class", &kebab(class)), ("hash", &hash)])
    }

    fn term_iri(&self, value: &CellValue) -> Result<Option<String>, TransformError> {
        Ok(match value {
            CellValue::TermRef { vocabulary_id, term_id } => Some(
                self.policy
                    .generate(NodeKind::Term, &[("vocab", vocabulary_id), ("term", term_id)])?,
            ),
            CellValue::NewTerm {
                vocabulary_id,
                label,
                language,
            } => {
                let hash = self.policy.hash(&["new-term", vocabulary_id, language, label]);
                Some(self.policy.generate(
                    NodeKind::NewTerm,
                    &[("vocab", vocabulary_id), ("slug", &slug(label)), ("hash", &hash)],
                )?)
            }
            _ => None,
        })
    }

    /// Emit one rule instance. Nodes whose identity cannot be established
    /// (an empty key cell) drop the whole instance.
    fn emit_chain(
        &self,
        g: &mut Graph,
        rule: &MappingRule,
        text: &str,
        resolve: &dyn Fn(&ChainNode) -> Result<Option<String>, TransformError>,
        head: Option<String>,
        literal: impl Fn(&str) -> Term,
    ) -> Result<(), TransformError> {
        let Some(head) = (match head {
            Some(h) => Some(h),
            None => resolve(&rule.head)?,
        }) else {
            return Ok(());
        };
        let mut triples = vec![(head.clone(), ns::RDF_TYPE.to_string(), Term::iri(self.ontology.class_iri(&rule.head.class)))];
        let mut prev = head;
        for Step { property, target } in &rule.steps {
            let p = self.ontology.property_iri(property);
            match target {
                Target::Literal => {
                    triples.push((prev.clone(), p, literal(text)));
                }
                Target::Node(n) => {
                    let iri = match n.key {
                        NodeKey::Fresh => self.fresh_iri(&prev, property, &n.class)?,
                        _ => match resolve(n)? {
                            Some(iri) => iri,
                            None => return Ok(()),
                        },
                    };
                    if n.key == NodeKey::Value {
                        triples.push((iri.clone(), ns::RDFS_LABEL.to_string(), Term::string(text.trim())));
                    }
                    triples.push((iri.clone(), ns::RDF_TYPE.to_string(), Term::iri(self.ontology.class_iri(&n.class))));
                    triples.push((prev.clone(), p, Term::iri(iri.clone())));
                    prev = iri;
                }
            }
        }
        for (s, p, o) in triples {
            g.add(&s, &p, o);
        }
        Ok(())
    }

    /// The record's graph: record metadata plus one chain per non-empty
    /// mapped cell. Entity cells resolve to their cluster's IRI; instances
    /// outside `iris` (private records) get an IRI of their own.
    pub fn transform_record(&self, r: &Record, iris: &EntityIris) -> Result<Graph, TransformError> {
        let key = (r.meta.template_id.clone(), r.meta.template_version);
        let label = format!("{} v{}", key.0, key.1);
        let t = self
            .templates
            .get(&key.0, key.1)
            .ok_or_else(|| TransformError::TemplateMismatch(label.clone()))?;
        let m = self
            .by_template
            .get(&key)
            .ok_or_else(|| TransformError::MissingMapping(label.clone()))?;

        let record = self.record_iri(&r.meta.record_id)?;
        let mut g = Graph::new();
        self.class_node(&mut g, &record, "Record");
        g.add(&record, ns::RDFS_LABEL, Term::string(r.meta.title.clone()));
        g.add(&record, &self.ontology.property_iri("of_template"), Term::string(t.id.clone()));

        let instances = record_instances(t, r);
        let mut by_cell: HashMap<(String, Vec<usize>), &EntityInstance> = HashMap::new();
        for inst in &instances {
            let occ = &inst.occurrences[0];
            for path in occ.cells.values() {
                by_cell.insert((path.to_string(), occ.rows.clone()), inst);
            }
        }
        let entity_iri = |path: &ColumnPath, rows: &[usize]| -> Result<Option<String>, TransformError> {
            let Some(inst) = by_cell.get(&(path.to_string(), rows.to_vec())) else {
                return Ok(None);
            };
            match iris.of_instance(&inst.instance_id) {
                Some(iri) => Ok(Some(iri.to_string())),
                None => self.identity_iri(inst).map(Some),
            }
        };

        let mut cells: HashMap<String, Vec<CellRef>> = HashMap::new();
        walk_cells(t, r, |c| {
            if !c.value.display_text().trim().is_empty() {
                cells.entry(c.path.to_string()).or_default().push(c);
            }
        });

        for rule in &m.rules {
            let path = rule.column().expect("checked mapping");
            let Some(found) = cells.get(&rule.source) else { continue };
            let resolved = t.resolve(&path).map_err(|_| TransformError::TemplateMismatch(label.clone()))?;
            let kind = match &resolved.spec.kind {
                ColumnKind::Plain { value_type } => value_type,
                _ => unreachable!("checked mapping"),
            };
            let hops: Vec<&str> = resolved.nested_hops.clone();
            for cell in found {
                let text = cell.value.display_text();
                let resolve = |n: &ChainNode| -> Result<Option<String>, TransformError> {
                    match &n.key {
                        NodeKey::Record => Ok(Some(record.clone())),
                        NodeKey::Row => {
                            let rows: Vec<String> = cell.rows.iter().map(ToString::to_string).collect();
                            let scope = std::iter::once(path.table.as_str()).chain(hops.iter().copied()).collect::<Vec<_>>().join("/");
                            let hash = self.policy.hash(&["row", &r.meta.record_id, &scope, &rows.join(".")]);
                            self.policy
                                .generate(NodeKind::Row, &[("class", &kebab(&n.class)), ("record", &r.meta.record_id), ("hash", &hash)])
                                .map(Some)
                        }
                        NodeKey::Value => self.value_iri(&n.class, text).map(Some),
                        NodeKey::Term => self.term_iri(cell.value),
                        NodeKey::Entity(None) => entity_iri(&cell.path, &cell.rows),
                        NodeKey::Entity(Some(k)) => {
                            let rows = if k.table != cell.path.table {
                                vec![0]
                            } else {
                                let depth = t.resolve(k).map(|x| x.nested_hops.len() + 1).unwrap_or(1);
                                cell.rows[..depth].to_vec()
                            };
                            entity_iri(k, &rows)
                        }
                        NodeKey::Fresh => unreachable!("fresh nodes are minted from their predecessor"),
                    }
                };
                let lang = r.meta.language.as_deref();
                let literal = |text: &str| literal_for(kind, text, lang);
                self.emit_chain(&mut g, rule, text, &resolve, None, literal)?;
            }
        }
        Ok(g)
    }

    /// One canonical node per cluster with its curated (or agreed) values,
    /// raw labels of the members as `skos:altLabel`, and one occurrence
    /// node per member pointing at the record it was found in.
    pub fn transform_registry(&self, reg: &Registry, iris: &EntityIris) -> Result<Graph, TransformError> {
        let mut g = Graph::new();
        let alt = format!("{}altLabel", ns::SKOS);
        for c in reg.clusters.values() {
            let m = self
                .by_entity
                .get(&c.entity_type)
                .ok_or_else(|| TransformError::MissingMapping(c.entity_type.clone()))?;
            let iri = iris
                .of_instance(c.members.iter().next().expect("non-empty"))
                .map(String::from)
                .map_or_else(|| self.cluster_iri(reg, c), Ok)?;
            let class = m.rules.first().map_or(c.entity_type.as_str(), |r| r.head.class.as_str());
            self.class_node(&mut g, &iri, class);
            let preferred: Vec<&str> = m
                .label
                .iter()
                .filter_map(|f| reg.effective_value(c, f))
                .map(str::trim)
                .filter(|v| !v.is_empty())
                .collect();
            if !preferred.is_empty() {
                g.add(&iri, ns::RDFS_LABEL, Term::string(preferred.join(" ")));
            }
            for rule in &m.rules {
                let Some(v) = reg.effective_value(c, &rule.source).filter(|v| !v.trim().is_empty()) else {
                    continue;
                };
                let resolve = |n: &ChainNode| -> Result<Option<String>, TransformError> {
                    match n.key {
                        NodeKey::Value => self.value_iri(&n.class, v).map(Some),
                        _ => unreachable!("checked entity mapping"),
                    }
                };
                self.emit_chain(&mut g, rule, v, &resolve, Some(iri.clone()), |s| Term::string(s))?;
            }
            for member in &c.members {
                let inst = &reg.instances[member];
                let raw = self.raw_label(inst);
                if !raw.is_empty() {
                    g.add(&iri, &alt, Term::string(raw));
                }
                let occ = &inst.occurrences[0];
                let node = self
                    .policy
                    .generate(NodeKind::Occurrence, &[("hash", &self.policy.hash(&["occurrence", member]))])?;
                g.add(&iri, &self.ontology.property_iri("has_occurrence"), Term::iri(node.clone()));
                self.class_node(&mut g, &node, "Occurrence");
                g.add(&node, &self.ontology.property_iri("found_in"), Term::iri(self.record_iri(&occ.record_id)?));
                g.add(&node, &self.ontology.property_iri("column_path"), Term::string(occ.path.to_string()));
                let rows: Vec<String> = occ.rows.iter().map(ToString::to_string).collect();
                g.add(&node, &self.ontology.property_iri("row_path"), Term::string(rows.join(".")));
            }
        }
        Ok(g)
    }

    /// SKOS rendering of every vocabulary plus the vocabulary mapping's
    /// ontology-level triples.
    pub fn transform_vocabularies(&self, vocabularies: &BTreeMap<String, Vocabulary>) -> Result<Graph, TransformError> {
        let mut g = Graph::new();
        for v in vocabularies.values() {
            let scheme = self.policy.generate(NodeKind::Scheme, &[("vocab", &v.vocab_id)])?;
            let mut concepts = BTreeMap::new();
            for id in v.terms.keys() {
                concepts.insert(id.clone(), self.policy.generate(NodeKind::Term, &[("vocab", &v.vocab_id), ("term", id)])?);
            }
            g.union(&export_skos_with(v, &scheme, |t| concepts[t].clone()));
            let Some(m) = &self.vocabularies else { continue };
            for (id, term) in &v.terms {
                let head = concepts[id].clone();
                for rule in &m.rules {
                    let values: Vec<(&str, Option<&str>)> = match rule.source.as_str() {
                        "term" => vec![("", None)],
                        "broader" => term.broader.iter().map(|b| (b.as_str(), None)).collect(),
                        "label" => term.labels.iter().map(|(l, v)| (v.as_str(), Some(l.as_str()))).collect(),
                        "preferred_en" => term.preferred_en.iter().map(|p| (p.as_str(), Some("en"))).collect(),
                        _ => unreachable!("checked vocabulary mapping"),
                    };
                    for (text, lang) in values {
                        let resolve = |n: &ChainNode| -> Result<Option<String>, TransformError> {
                            match n.key {
                                NodeKey::Term => Ok(concepts.get(text).cloned()),
                                NodeKey::Value => self.value_iri(&n.class, text).map(Some),
                                _ => Ok(None),
                            }
                        };
                        let literal = |s: &str| match lang {
                            Some(l) => Term::lang(s, l),
                            None => Term::string(s),
                        };
                        self.emit_chain(&mut g, rule, text, &resolve, Some(head.clone()), literal)?;
                    }
                }
            }
        }
        Ok(g)
    }

    /// Records, registry and vocabularies as one dataset: a named graph per
    /// record (named by the record's IRI), one for entities and one for
    /// vocabularies.
    pub fn transform_corpus<'r>(
        &self,
        records: impl IntoIterator<Item = &'r Record>,
        reg: &Registry,
        vocabularies: &BTreeMap<String, Vocabulary>,
    ) -> Result<Dataset, TransformError> {
        let iris = self.entity_iris(reg)?;
        let mut ds = Dataset::new();
        for r in records {
            let g = self.transform_record(r, &iris)?;
            ds.graph_mut(&self.record_iri(&r.meta.record_id)?).union(&g);
        }
        let entities = self.transform_registry(reg, &iris)?;
        if !entities.is_empty() {
            ds.graph_mut(&self.graph_iri(ENTITIES_GRAPH)?).union(&entities);
        }
        let vocab = self.transform_vocabularies(vocabularies)?;
        if !vocab.is_empty() {
            ds.graph_mut(&self.graph_iri(VOCABULARIES_GRAPH)?).union(&vocab);
        }
        Ok(ds)
    }

    /// The template a mapping reads, for callers checking coverage.
    pub fn template_for(&self, m: &MappingDefinition) -> Option<&Template> {
        match &m.source {
            MappingSource::Template { template_id, version } => self.templates.get(template_id, *version),
            _ => None,
        }
    }
}

/// Literal for a cell: typed when the column is typed and the value carries
/// no uncertainty markers, a language-tagged string for text when the
/// record language is known, a plain string otherwise.
fn literal_for(vt: &ValueType, raw: &str, lang: Option<&str>) -> Term {
    match vt {
        ValueType::Literal { kind } => {
            let uncertain = crate::record::UncertaintyFlags::of(raw).any();
            match datatype(*kind, raw) {
                Some(dt) if !uncertain => Term::typed(raw, format!("{}{dt}", ns::XSD)),
                Some(_) => Term::string(raw),
                None => match lang {
                    Some(l) => Term::lang(raw, l),
                    None => Term::string(raw),
                },
            }
        }
        _ => match lang {
            Some(l) => Term::lang(raw, l),
            None => Term::string(raw),
        },
    }
}
