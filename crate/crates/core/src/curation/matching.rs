//! Rule-based identity matching.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ClusterId, CuratedValue, CurationError, EntityInstance, Origin, Provenance, Registry};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    #[default]
    SameRecord,
    SameTemplate,
    Global,
}

/// Instances of `entity_type` whose trimmed `key_properties` are all
/// non-empty and equal, within `scope`, are the same entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchRule {
    pub rule_id: String,
    pub entity_type: String,
    #[serde(default)]
    pub scope: Scope,
    pub key_properties: Vec<String>,
}

impl MatchRule {
    pub fn validate(&self) -> Result<(), CurationError> {
        if self.rule_id.trim().is_empty() {
            return Err(CurationError::InvalidRule("empty rule id".into()));
        }
        if self.key_properties.is_empty() {
            return Err(CurationError::InvalidRule(format!("{}: no key properties", self.rule_id)));
        }
        Ok(())
    }

    /// Grouping key of an instance, or `None` if a key property is missing
    /// or blank.
    fn key(&self, inst: &EntityInstance) -> Option<(String, Vec<String>)> {
        let scope = match self.scope {
            Scope::SameRecord => inst.occurrences[0].record_id.clone(),
            Scope::SameTemplate => inst.occurrences[0].template_id.clone(),
            Scope::Global => String::new(),
        };
        let values = self
            .key_properties
            .iter()
            .map(|p| {
                let v = inst.properties.get(p)?.trim();
                (!v.is_empty()).then(|| v.to_string())
            })
            .collect::<Option<Vec<String>>>()?;
        Some((scope, values))
    }
}

/// Parse a JSON array of rules.
pub fn load_rules(json: &str) -> Result<Vec<MatchRule>, CurationError> {
    let rules: Vec<MatchRule> =
        serde_json::from_str(json).map_err(|e| CurationError::InvalidRule(e.to_string()))?;
    for r in &rules {
        r.validate()?;
    }
    Ok(rules)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutoMatchReport {
    pub unions: usize,
    /// Unions skipped because a curator had split the instances apart.
    pub blocked_by_split: usize,
    pub clusters_before: usize,
    pub clusters_after: usize,
}

/// Apply `rules` and return the new registry. Without curator splits the
/// result is the equivalence closure of key equality; with splits, members
/// of a key group join the first compatible component in instance-id order.
/// Running it twice changes nothing.
pub fn auto_match(reg: &Registry, rules: &[MatchRule]) -> Result<(Registry, AutoMatchReport), CurationError> {
    for r in rules {
        r.validate()?;
    }
    let mut out = reg.clone();
    let mut report = AutoMatchReport {
        clusters_before: reg.clusters.len(),
        ..AutoMatchReport::default()
    };
    for rule in rules {
        let mut groups: BTreeMap<(String, Vec<String>), Vec<&str>> = BTreeMap::new();
        for inst in reg.instances_of_type(&rule.entity_type) {
            if let Some(key) = rule.key(inst) {
                groups.entry(key).or_default().push(&inst.instance_id);
            }
        }
        for ((_, values), members) in groups {
            if members.len() < 2 {
                continue;
            }
            let mut components: Vec<ClusterId> = Vec::new();
            for m in members {
                let c = out.cluster_of(m).expect("partition");
                if components.contains(&c) {
                    continue;
                }
                match components.iter().position(|&b| out.can_union(b, c)) {
                    Some(i) => {
                        let merged = out.union(components[i], c);
                        components[i] = merged;
                        let cluster = out.clusters.get_mut(&merged).expect("merged cluster");
                        cluster.origin = Origin::AutoRule {
                            rule_id: rule.rule_id.clone(),
                        };
                        for (p, v) in rule.key_properties.iter().zip(&values) {
                            cluster.curated.entry(p.clone()).or_insert_with(|| CuratedValue {
                                value: v.clone(),
                                provenance: vec![Provenance::AutoRule {
                                    rule_id: rule.rule_id.clone(),
                                }],
                            });
                        }
                        report.unions += 1;
                    }
                    None => {
                        if !components.is_empty() {
                            report.blocked_by_split += 1;
                        }
                        components.push(c);
                    }
                }
            }
        }
    }
    report.clusters_after = out.clusters.len();
    Ok((out, report))
}
