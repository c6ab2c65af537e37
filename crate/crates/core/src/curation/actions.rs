//! Curator actions and the append-only curation log.
//!
//! The registry is always `replay(base, effective log)`: the extraction
//! state plus every logged action not cancelled by an undo. Undo cancels the
//! latest effective action, so replay never meets an action whose inputs
//! were undone underneath it.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matching::{auto_match, AutoMatchReport, MatchRule};
use super::{ClusterId, CuratedValue, CurationError, Origin, Provenance, Registry};
use crate::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    AutoMatch {
        rules: Vec<MatchRule>,
    },
    Merge {
        clusters: Vec<ClusterId>,
        preferred: BTreeMap<String, String>,
    },
    Detach {
        instance_id: String,
    },
    Correct {
        cluster_id: ClusterId,
        property: String,
        value: String,
    },
    Undo {
        target: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub actor: String,
    pub at: Timestamp,
    #[serde(flatten)]
    pub action: Action,
    /// Cluster produced or changed by the action, when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<ClusterId>,
    /// Set for corrections that repeat the current value.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub noop: bool,
}

struct Applied {
    result: Option<ClusterId>,
    noop: bool,
    report: Option<AutoMatchReport>,
}

fn merge(reg: &mut Registry, ids: &[ClusterId], preferred: &BTreeMap<String, String>, actor: &str) -> Result<ClusterId, CurationError> {
    let distinct: BTreeSet<ClusterId> = ids.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(CurationError::NeedTwoClusters);
    }
    for id in &distinct {
        if !reg.clusters.contains_key(id) {
            return Err(CurationError::UnknownCluster(*id));
        }
    }
    let types: BTreeSet<&str> = distinct.iter().map(|id| reg.clusters[id].entity_type.as_str()).collect();
    if types.len() > 1 {
        return Err(CurationError::TypeMixing(types.into_iter().map(String::from).collect()));
    }
    let keep = *distinct.first().expect("two ids");
    let mut props: BTreeSet<String> = BTreeSet::new();
    for id in &distinct {
        props.extend(reg.property_names(&reg.clusters[id]).into_iter().map(String::from));
    }
    if let Some(p) = preferred.keys().find(|p| !props.contains(*p)) {
        return Err(CurationError::UnknownProperty {
            cluster: keep,
            property: p.clone(),
        });
    }
    let mut conflicts = Vec::new();
    for p in &props {
        let mut values: BTreeSet<&str> = BTreeSet::new();
        for id in &distinct {
            let c = &reg.clusters[id];
            match c.curated.get(p) {
                Some(v) => {
                    values.insert(&v.value);
                }
                None => values.extend(reg.raw_values(c, p)),
            }
        }
        if values.len() > 1 && !preferred.contains_key(p) {
            conflicts.push(p.clone());
        }
    }
    if !conflicts.is_empty() {
        return Err(CurationError::UnresolvedPropertyConflict(conflicts));
    }
    let members: Vec<String> = distinct
        .iter()
        .flat_map(|id| reg.clusters[id].members.iter().cloned())
        .collect();
    for id in distinct.iter().skip(1) {
        reg.union(keep, *id);
    }
    // an explicit merge overrides earlier splits among these members
    for m in &members {
        if let Some(ex) = reg.exclusions.get_mut(m) {
            ex.retain(|x| !members.contains(x));
        }
    }
    reg.exclusions.retain(|_, ex| !ex.is_empty());
    let cluster = reg.clusters.get_mut(&keep).expect("kept cluster");
    cluster.origin = Origin::Manual;
    for (p, v) in preferred {
        let mut provenance = cluster.curated.remove(p).map(|c| c.provenance).unwrap_or_default();
        provenance.push(Provenance::ManualMerge { actor: actor.to_string() });
        cluster.curated.insert(
            p.clone(),
            CuratedValue {
                value: v.clone(),
                provenance,
            },
        );
    }
    Ok(keep)
}

fn detach(reg: &mut Registry, instance_id: &str) -> Result<ClusterId, CurationError> {
    let cid = reg
        .cluster_of(instance_id)
        .ok_or_else(|| CurationError::UnknownInstance(instance_id.to_string()))?;
    let cluster = reg.clusters.get_mut(&cid).expect("partition");
    if cluster.members.len() < 2 {
        return Err(CurationError::AlreadySingleton(instance_id.to_string()));
    }
    cluster.members.remove(instance_id);
    let rest: Vec<String> = cluster.members.iter().cloned().collect();
    let entity_type = cluster.entity_type.clone();
    for other in &rest {
        reg.exclude(instance_id, other);
    }
    Ok(reg.new_cluster(entity_type, [instance_id.to_string()].into(), Origin::Manual))
}

fn correct(reg: &mut Registry, cluster_id: ClusterId, property: &str, value: &str, actor: &str, at: Timestamp) -> Result<bool, CurationError> {
    let cluster = reg.clusters.get(&cluster_id).ok_or(CurationError::UnknownCluster(cluster_id))?;
    if !reg.property_names(cluster).contains(property) {
        return Err(CurationError::UnknownProperty {
            cluster: cluster_id,
            property: property.to_string(),
        });
    }
    let old = reg.effective_value(cluster, property).map(String::from);
    if old.as_deref() == Some(value) {
        return Ok(true);
    }
    let cluster = reg.clusters.get_mut(&cluster_id).expect("checked above");
    let mut provenance = cluster.curated.remove(property).map(|c| c.provenance).unwrap_or_default();
    provenance.push(Provenance::Correction {
        actor: actor.to_string(),
        old,
        new: value.to_string(),
        at,
    });
    cluster.curated.insert(
        property.to_string(),
        CuratedValue {
            value: value.to_string(),
            provenance,
        },
    );
    Ok(false)
}

fn apply(reg: &mut Registry, entry: &LogEntry) -> Result<Applied, CurationError> {
    let mut applied = Applied {
        result: None,
        noop: false,
        report: None,
    };
    match &entry.action {
        Action::AutoMatch { rules } => {
            let (next, report) = auto_match(reg, rules)?;
            *reg = next;
            applied.report = Some(report);
        }
        Action::Merge { clusters, preferred } => {
            applied.result = Some(merge(reg, clusters, preferred, &entry.actor)?);
        }
        Action::Detach { instance_id } => applied.result = Some(detach(reg, instance_id)?),
        Action::Correct {
            cluster_id,
            property,
            value,
        } => {
            applied.noop = correct(reg, *cluster_id, property, value, &entry.actor, entry.at)?;
            applied.result = Some(*cluster_id);
        }
        Action::Undo { .. } => unreachable!("undo entries are resolved before replay"),
    }
    Ok(applied)
}

/// Entries still in force: every action minus those cancelled by undos.
pub fn effective_entries(log: &[LogEntry]) -> Result<Vec<&LogEntry>, CurationError> {
    let mut stack: Vec<&LogEntry> = Vec::new();
    for e in log {
        match e.action {
            Action::Undo { target } => match stack.pop() {
                Some(top) if top.seq == target => {}
                _ => {
                    return Err(CurationError::ReplayFailed {
                        seq: e.seq,
                        reason: format!("undo target {target} is not the latest action"),
                    })
                }
            },
            _ => stack.push(e),
        }
    }
    Ok(stack)
}

/// Rebuild the registry from the extraction state and the log.
pub fn replay(base: &Registry, log: &[LogEntry]) -> Result<Registry, CurationError> {
    let mut reg = base.clone();
    for e in effective_entries(log)? {
        let applied = apply(&mut reg, e).map_err(|err| CurationError::ReplayFailed {
            seq: e.seq,
            reason: err.to_string(),
        })?;
        if applied.result != e.result || applied.noop != e.noop {
            return Err(CurationError::ReplayFailed {
                seq: e.seq,
                reason: "outcome differs from the logged one".into(),
            });
        }
    }
    Ok(reg)
}

/// A registry under curation, with its log.
#[derive(Debug)]
pub struct Curation {
    base: Registry,
    registry: Registry,
    log: Vec<LogEntry>,
    file: Option<File>,
}

impl Curation {
    pub fn new(base: Registry) -> Curation {
        Curation {
            registry: base.clone(),
            base,
            log: Vec::new(),
            file: None,
        }
    }

    /// Attach the log file at `path`, replaying whatever it holds on top of
    /// `base`. A torn final line is ignored.
    pub fn open(base: Registry, path: &Path) -> Result<Curation, CurationError> {
        let io = |e: std::io::Error| CurationError::Io(e.to_string());
        let mut log = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(io)?);
            for line in reader.split(b'\n') {
                let line = line.map_err(io)?;
                match serde_json::from_slice::<LogEntry>(&line) {
                    Ok(e) => log.push(e),
                    Err(_) => break,
                }
            }
        }
        let registry = replay(&base, &log)?;
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok(Curation {
            base,
            registry,
            log,
            file: Some(file),
        })
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn base(&self) -> &Registry {
        &self.base
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    fn record(&mut self, actor: &str, at: Timestamp, action: Action) -> Result<(LogEntry, Applied), CurationError> {
        let mut entry = LogEntry {
            seq: self.log.last().map_or(1, |e| e.seq + 1),
            actor: actor.to_string(),
            at,
            action,
            result: None,
            noop: false,
        };
        // every action validates before it mutates, so a failed one leaves
        // the registry untouched
        let applied = apply(&mut self.registry, &entry)?;
        entry.result = applied.result;
        entry.noop = applied.noop;
        if let Err(e) = self.append(&entry) {
            self.registry = replay(&self.base, &self.log)?;
            return Err(e);
        }
        Ok((entry, applied))
    }

    fn append(&mut self, entry: &LogEntry) -> Result<(), CurationError> {
        if let Some(f) = &mut self.file {
            let mut line = serde_json::to_vec(entry).expect("log entries serialize");
            line.push(b'\n');
            f.write_all(&line)
                .and_then(|_| f.sync_data())
                .map_err(|e| CurationError::Io(e.to_string()))?;
        }
        self.log.push(entry.clone());
        Ok(())
    }

    pub fn auto_match(&mut self, rules: &[MatchRule], actor: &str, at: Timestamp) -> Result<AutoMatchReport, CurationError> {
        let (_, applied) = self.record(actor, at, Action::AutoMatch { rules: rules.to_vec() })?;
        Ok(applied.report.expect("auto-match reports"))
    }

    pub fn merge(
        &mut self,
        clusters: &[ClusterId],
        preferred: BTreeMap<String, String>,
        actor: &str,
        at: Timestamp,
    ) -> Result<ClusterId, CurationError> {
        let action = Action::Merge {
            clusters: clusters.to_vec(),
            preferred,
        };
        Ok(self.record(actor, at, action)?.0.result.expect("merge result"))
    }

    pub fn detach(&mut self, instance_id: &str, actor: &str, at: Timestamp) -> Result<ClusterId, CurationError> {
        let action = Action::Detach {
            instance_id: instance_id.to_string(),
        };
        Ok(self.record(actor, at, action)?.0.result.expect("detach result"))
    }

    pub fn correct(
        &mut self,
        cluster_id: ClusterId,
        property: &str,
        value: &str,
        actor: &str,
        at: Timestamp,
    ) -> Result<LogEntry, CurationError> {
        let action = Action::Correct {
            cluster_id,
            property: property.to_string(),
            value: value.to_string(),
        };
        Ok(self.record(actor, at, action)?.0)
    }

    /// Cancel the latest action still in force.
    pub fn undo(&mut self, actor: &str, at: Timestamp) -> Result<LogEntry, CurationError> {
        let target = effective_entries(&self.log)?
            .last()
            .map(|e| e.seq)
            .ok_or(CurationError::NothingToUndo)?;
        let entry = LogEntry {
            seq: self.log.last().map_or(1, |e| e.seq + 1),
            actor: actor.to_string(),
            at,
            action: Action::Undo { target },
            result: None,
            noop: false,
        };
        let mut log = self.log.clone();
        log.push(entry.clone());
        let registry = replay(&self.base, &log)?;
        self.append(&entry)?;
        self.registry = registry;
        Ok(entry)
    }
}
