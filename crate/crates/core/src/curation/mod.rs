//! Entity curation: instances extracted from shared records, identity
//! clusters over them, and the curator actions that reshape those clusters.
//!
//! Curation never writes to records. Instances keep the raw values exactly
//! as transcribed; preferred values and corrections live on clusters, each
//! with its provenance chain.

mod actions;
mod matching;
pub mod vocab;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::record::{walk_rows, CellAddress, CellValue, Record};
use crate::template::{ColumnKind, ColumnPath, ColumnSpec, Slot, TemplateSet, ValueType};
use crate::Timestamp;

pub use actions::{effective_entries, replay, Action, Curation, LogEntry};
pub use matching::{auto_match, load_rules, AutoMatchReport, MatchRule, Scope};

pub type ClusterId = u64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurationError {
    #[error("record {record_id} refers to unknown template {template_id} v{version}")]
    DanglingTemplate {
        record_id: String,
        template_id: String,
        version: u32,
    },
    #[error("unknown instance: {0}")]
    UnknownInstance(String),
    #[error("unknown cluster: {0}")]
    UnknownCluster(ClusterId),
    #[error("a merge needs at least two distinct clusters")]
    NeedTwoClusters,
    #[error("cannot merge clusters of different entity types: {0:?}")]
    TypeMixing(Vec<String>),
    #[error("members disagree on {0:?}; choose preferred values")]
    UnresolvedPropertyConflict(Vec<String>),
    #[error("instance {0} is already alone in its cluster")]
    AlreadySingleton(String),
    #[error("cluster {cluster} has no property `{property}`")]
    UnknownProperty { cluster: ClusterId, property: String },
    #[error("invalid match rule: {0}")]
    InvalidRule(String),
    #[error("nothing to undo")]
    NothingToUndo,
    #[error("log entry {seq} cannot be replayed: {reason}")]
    ReplayFailed { seq: u64, reason: String },
    #[error("curation log i/o: {0}")]
    Io(String),
}

/// Where an instance was found: the anchor path (the colspan group, or the
/// first cell when the instance has no group), the row indices down to the
/// anchor's table, and the column of each property.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Occurrence {
    pub record_id: String,
    pub template_id: String,
    pub template_version: u32,
    pub path: ColumnPath,
    pub rows: Vec<usize>,
    pub cells: BTreeMap<String, ColumnPath>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityInstance {
    pub instance_id: String,
    pub entity_type: String,
    /// Non-empty raw values, verbatim.
    pub properties: BTreeMap<String, String>,
    pub occurrences: Vec<Occurrence>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    AutoRule {
        rule_id: String,
    },
    ManualMerge {
        actor: String,
    },
    Correction {
        actor: String,
        old: Option<String>,
        new: String,
        at: Timestamp,
    },
}

/// A preferred value with the chain of steps that produced it, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CuratedValue {
    pub value: String,
    pub provenance: Vec<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    Extracted,
    AutoRule { rule_id: String },
    Manual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub cluster_id: ClusterId,
    pub entity_type: String,
    pub members: BTreeSet<String>,
    pub curated: BTreeMap<String, CuratedValue>,
    pub origin: Origin,
}

/// Instances partitioned into identity clusters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registry {
    pub instances: BTreeMap<String, EntityInstance>,
    pub clusters: BTreeMap<ClusterId, Cluster>,
    membership: BTreeMap<String, ClusterId>,
    /// Instance pairs a curator split apart, stored both ways round.
    exclusions: BTreeMap<String, BTreeSet<String>>,
    next_cluster: ClusterId,
}

impl Registry {
    /// Every instance in its own cluster, ids assigned in instance-id order.
    pub fn from_instances(instances: impl IntoIterator<Item = EntityInstance>) -> Registry {
        let mut reg = Registry {
            instances: instances.into_iter().map(|i| (i.instance_id.clone(), i)).collect(),
            next_cluster: 1,
            ..Registry::default()
        };
        let ids: Vec<(String, String)> = reg
            .instances
            .values()
            .map(|i| (i.instance_id.clone(), i.entity_type.clone()))
            .collect();
        for (id, entity_type) in ids {
            reg.new_cluster(entity_type, [id].into(), Origin::Extracted);
        }
        reg
    }

    fn new_cluster(&mut self, entity_type: String, members: BTreeSet<String>, origin: Origin) -> ClusterId {
        let cluster_id = self.next_cluster.max(1);
        self.next_cluster = cluster_id + 1;
        for m in &members {
            self.membership.insert(m.clone(), cluster_id);
        }
        self.clusters.insert(
            cluster_id,
            Cluster {
                cluster_id,
                entity_type,
                members,
                curated: BTreeMap::new(),
                origin,
            },
        );
        cluster_id
    }

    pub fn cluster_of(&self, instance_id: &str) -> Option<ClusterId> {
        self.membership.get(instance_id).copied()
    }

    pub fn cluster(&self, id: ClusterId) -> Option<&Cluster> {
        self.clusters.get(&id)
    }

    pub fn instance(&self, id: &str) -> Option<&EntityInstance> {
        self.instances.get(id)
    }

    pub fn clusters_of_type<'a>(&'a self, entity_type: &'a str) -> impl Iterator<Item = &'a Cluster> + 'a {
        self.clusters.values().filter(move |c| c.entity_type == entity_type)
    }

    pub fn instances_of_type<'a>(&'a self, entity_type: &'a str) -> impl Iterator<Item = &'a EntityInstance> + 'a {
        self.instances.values().filter(move |i| i.entity_type == entity_type)
    }

    /// Instance counts per entity type.
    pub fn counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for i in self.instances.values() {
            *out.entry(i.entity_type.clone()).or_insert(0) += 1;
        }
        out
    }

    pub fn is_excluded(&self, a: &str, b: &str) -> bool {
        self.exclusions.get(a).is_some_and(|s| s.contains(b))
    }

    fn exclude(&mut self, a: &str, b: &str) {
        self.exclusions.entry(a.to_string()).or_default().insert(b.to_string());
        self.exclusions.entry(b.to_string()).or_default().insert(a.to_string());
    }

    /// True when no split pair would end up in the union of `a` and `b`.
    fn can_union(&self, a: ClusterId, b: ClusterId) -> bool {
        let (ca, cb) = (&self.clusters[&a], &self.clusters[&b]);
        let (small, other) = if ca.members.len() <= cb.members.len() { (ca, b) } else { (cb, a) };
        !small.members.iter().any(|m| {
            self.exclusions
                .get(m)
                .is_some_and(|ex| ex.iter().any(|x| self.membership.get(x) == Some(&other)))
        })
    }

    /// Fold cluster `b` into `a` (or the other way round, keeping the
    /// smaller id). Curated values of the surviving cluster take precedence.
    fn union(&mut self, a: ClusterId, b: ClusterId) -> ClusterId {
        let (keep, drop) = (a.min(b), a.max(b));
        let dropped = self.clusters.remove(&drop).expect("cluster exists");
        for m in &dropped.members {
            self.membership.insert(m.clone(), keep);
        }
        let kept = self.clusters.get_mut(&keep).expect("cluster exists");
        kept.members.extend(dropped.members);
        for (p, v) in dropped.curated {
            kept.curated.entry(p).or_insert(v);
        }
        keep
    }

    /// Distinct raw values the members of `cluster` hold for `property`.
    pub fn raw_values(&self, cluster: &Cluster, property: &str) -> BTreeSet<&str> {
        cluster
            .members
            .iter()
            .filter_map(|m| self.instances[m].properties.get(property))
            .map(String::as_str)
            .collect()
    }

    /// Property names used by any member or curated on the cluster.
    pub fn property_names<'a>(&'a self, cluster: &'a Cluster) -> BTreeSet<&'a str> {
        let mut out: BTreeSet<&str> = cluster.curated.keys().map(String::as_str).collect();
        for m in &cluster.members {
            out.extend(self.instances[m].properties.keys().map(String::as_str));
        }
        out
    }

    /// The curated value, or the members' raw value when they all agree.
    pub fn effective_value<'a>(&'a self, cluster: &'a Cluster, property: &str) -> Option<&'a str> {
        if let Some(c) = cluster.curated.get(property) {
            return Some(&c.value);
        }
        let raw = self.raw_values(cluster, property);
        if raw.len() == 1 {
            raw.into_iter().next()
        } else {
            None
        }
    }

    /// Check the partition invariant and internal indexes; returns a
    /// description of the first problem found.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for (id, c) in &self.clusters {
            if *id != c.cluster_id || c.members.is_empty() {
                return Err(format!("cluster {id} malformed"));
            }
            for m in &c.members {
                let inst = self.instances.get(m).ok_or(format!("cluster {id} lists unknown {m}"))?;
                if inst.entity_type != c.entity_type {
                    return Err(format!("cluster {id} mixes types"));
                }
                if !seen.insert(m.as_str()) {
                    return Err(format!("{m} in two clusters"));
                }
                if self.membership.get(m) != Some(id) {
                    return Err(format!("membership index stale for {m}"));
                }
            }
        }
        if seen.len() != self.instances.len() || self.membership.len() != self.instances.len() {
            return Err("some instance has no cluster".into());
        }
        Ok(())
    }

    /// Clusters as sets of member sets, for comparing partitions.
    pub fn partition(&self) -> BTreeSet<BTreeSet<String>> {
        self.clusters.values().map(|c| c.members.clone()).collect()
    }
}

/// Entity-typed cells of one row that describe one instance.
struct Pending<'a> {
    key: (Option<&'a str>, &'a str),
    anchor: ColumnPath,
    cells: BTreeMap<String, (ColumnPath, &'a CellValue)>,
}

fn instance_id(record_id: &str, anchor: &ColumnPath, rows: &[usize], entity_type: &str) -> String {
    let rows: Vec<String> = rows.iter().map(ToString::to_string).collect();
    format!("{record_id}/{anchor}@{}#{entity_type}", rows.join("."))
}

/// Instances of one record. Entity cells of a row that share an entity type
/// and outermost colspan group form one instance; when a property repeats
/// within such a group (two ungrouped Location columns, say) a new instance
/// starts. Instances whose cells are all empty are dropped.
pub fn record_instances(t: &crate::template::Template, r: &Record) -> Vec<EntityInstance> {
    let mut slot_cache: HashMap<*const ColumnSpec, Vec<Slot<'_>>> = HashMap::new();
    let mut out = Vec::new();
    walk_rows(t, r, |row| {
        let slots = slot_cache
            .entry(row.columns.as_ptr())
            .or_insert_with(|| crate::template::scope_slots(row.columns));
        let mut pending: Vec<Pending> = Vec::new();
        for slot in slots.iter() {
            let ColumnKind::Plain {
                value_type: ValueType::Entity { entity_type, property },
            } = &slot.spec.kind
            else {
                continue;
            };
            let key = (slot.groups.first().copied(), entity_type.as_str());
            let mut path = row.scope.clone();
            path.columns.extend(slot.groups.iter().map(|g| g.to_string()));
            path.columns.push(slot.spec.id.clone());
            let value = row.row.value(&slot.spec.id);
            let open = pending
                .iter_mut()
                .rev()
                .find(|p| p.key == key)
                .filter(|p| !p.cells.contains_key(property));
            match open {
                Some(p) => {
                    p.cells.insert(property.clone(), (path, value));
                }
                None => {
                    let anchor = match key.0 {
                        Some(group) => row.scope.child(group),
                        None => path.clone(),
                    };
                    pending.push(Pending {
                        key,
                        anchor,
                        cells: [(property.clone(), (path, value))].into(),
                    });
                }
            }
        }
        for p in pending {
            let properties: BTreeMap<String, String> = p
                .cells
                .iter()
                .filter_map(|(k, (_, v))| match v {
                    CellValue::Text { raw } if !raw.is_empty() => Some((k.clone(), raw.clone())),
                    _ => None,
                })
                .collect();
            if properties.is_empty() {
                continue;
            }
            let entity_type = p.key.1.to_string();
            out.push(EntityInstance {
                instance_id: instance_id(&r.meta.record_id, &p.anchor, &row.rows, &entity_type),
                entity_type,
                properties,
                occurrences: vec![Occurrence {
                    record_id: r.meta.record_id.clone(),
                    template_id: r.meta.template_id.clone(),
                    template_version: r.meta.template_version,
                    path: p.anchor,
                    rows: row.rows.clone(),
                    cells: p.cells.into_iter().map(|(k, (path, _))| (k, path)).collect(),
                }],
            });
        }
    });
    out
}

/// Extract instances from the shared records among `records`; private
/// records are skipped. Each instance starts in its own cluster.
pub fn extract_instances<'a>(
    records: impl IntoIterator<Item = &'a Record>,
    templates: &TemplateSet,
) -> Result<Registry, CurationError> {
    let mut all = Vec::new();
    for r in records {
        if !r.meta.shared {
            continue;
        }
        let t = templates
            .get(&r.meta.template_id, r.meta.template_version)
            .ok_or_else(|| CurationError::DanglingTemplate {
                record_id: r.meta.record_id.clone(),
                template_id: r.meta.template_id.clone(),
                version: r.meta.template_version,
            })?;
        all.extend(record_instances(t, r));
    }
    Ok(Registry::from_instances(all))
}

/// Read the cells an occurrence points at, verbatim. `None` when the record
/// no longer has them.
pub fn resolve_occurrence(
    occ: &Occurrence,
    t: &crate::template::Template,
    r: &Record,
) -> Option<BTreeMap<String, CellValue>> {
    if r.meta.record_id != occ.record_id {
        return None;
    }
    occ.cells
        .iter()
        .map(|(prop, path)| {
            let rows = occ.rows.clone();
            r.cell(t, &CellAddress::new(path.clone(), rows))
                .ok()
                .map(|v| (prop.clone(), v.clone()))
        })
        .collect()
}

/// One CSV per entity type: a row per instance with its cluster, source
/// location, raw properties and the cluster's preferred values.
pub fn export_entities_csv(reg: &Registry, entity_type: &str) -> Vec<u8> {
    let instances: Vec<&EntityInstance> = reg.instances_of_type(entity_type).collect();
    let mut props: BTreeSet<&str> = BTreeSet::new();
    for i in &instances {
        props.extend(i.properties.keys().map(String::as_str));
    }
    for c in reg.clusters_of_type(entity_type) {
        props.extend(c.curated.keys().map(String::as_str));
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    let mut header = vec!["cluster_id".to_string(), "instance_id".into(), "record_id".into(), "template".into(), "path".into(), "rows".into()];
    header.extend(props.iter().map(|p| p.to_string()));
    header.extend(props.iter().map(|p| format!("preferred_{p}")));
    w.write_record(&header).expect("in-memory write");
    for i in instances {
        let cid = reg.cluster_of(&i.instance_id).expect("partition");
        let cluster = &reg.clusters[&cid];
        let occ = &i.occurrences[0];
        let rows: Vec<String> = occ.rows.iter().map(|r| (r + 1).to_string()).collect();
        let mut line = vec![
            cid.to_string(),
            i.instance_id.clone(),
            occ.record_id.clone(),
            format!("{} v{}", occ.template_id, occ.template_version),
            occ.path.to_string(),
            rows.join("."),
        ];
        line.extend(props.iter().map(|p| i.properties.get(*p).cloned().unwrap_or_default()));
        line.extend(props.iter().map(|p| reg.effective_value(cluster, p).unwrap_or_default().to_string()));
        w.write_record(&line).expect("in-memory write");
    }
    w.into_inner().expect("in-memory write")
}
