//! End-to-end checks over the fixture corpus and synthetic data. Each check
//! returns a one-line summary on success and the reason on failure; the
//! thresholds they enforce are the constants below.
#![allow(dead_code)]

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use factrix_core::canonical::to_canonical_string;
use factrix_core::curation::vocab::{export_skos, VocabTerm, Vocabulary};
use factrix_core::curation::{auto_match, extract_instances, replay, Curation, CurationError, EntityInstance, MatchRule, Registry, Scope};
use factrix_core::pipeline::{Config, ConfigPaths};
use factrix_core::rdf::{ns, parse_nquads, parse_ntriples, to_nquads, to_ntriples, Graph, Term};
use factrix_core::record::export::{export_xml, import_xml};
use factrix_core::record::{parse_record, serialize_record, CellAddress, CellValue, Record, RecordDraft};
use factrix_core::store::{replicate, DocBody, Policy, RevisionedDoc, Store};
use factrix_core::synth::Synth;
use factrix_core::template::{column_inventory, ColumnPath, Multiplicity, Template, ValueType};
use factrix_core::transform::validate_corpus_mappings;
use factrix_core::Timestamp;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Outcome = Result<String, String>;

pub const FIXTURE_BUDGET: Duration = Duration::from_secs(5);
pub const ROUND_TRIP_CASES: u32 = 100;
pub const RECORDS_PER_CASE: usize = 5;
pub const SYNC_SCENARIOS: u64 = 1_000;
pub const SYNC_BUDGET: Duration = Duration::from_secs(60);
pub const MATCH_TRIALS: u64 = 100;
pub const MATCH_PERSONS: usize = 200;
pub const SCALE_COUNTS: [(&str, usize); 4] =
    [("Person", 76_643), ("Location", 8_814), ("Ship", 2_354), ("LegalEntity", 1_197)];
pub const SCALE_BUDGET: Duration = Duration::from_secs(60);
pub const FUZZ_ACTIONS: usize = 500;
pub const VOCABULARY_COUNT: usize = 52;
pub const HIERARCHIES: u64 = 100;

/// Records per template in the published corpus.
pub const CORPUS_COUNTS: [(&str, usize); 20] = [
    ("accounts_book", 14),
    ("census_la_ciotat", 63),
    ("civil_register", 29),
    ("crew_displacement_roll", 35),
    ("crew_list", 98),
    ("employment_records_ciotat", 50),
    ("russian_census", 6),
    ("general_spanish_crew_list", 64),
    ("maritime_register_ciotat", 1),
    ("list_of_ships", 71),
    ("logbook", 17),
    ("naval_ship_register", 2),
    ("notarial_deeds", 10),
    ("payroll", 7),
    ("payroll_russian_steam", 14),
    ("register_maritime_personel", 4),
    ("register_maritime_workers", 6),
    ("sailors_register", 52),
    ("seagoing_personel", 52),
    ("students_register", 10),
];

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn config() -> Config {
    Config::load(&ConfigPaths::under(&fixtures())).expect("fixture configuration loads")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn t0() -> Timestamp {
    Timestamp::from_millis(1_617_000_000_000)
}

fn draft(id: &str, shared: bool) -> RecordDraft {
    RecordDraft {
        record_id: id.into(),
        title: format!("{id} title"),
        author_name: "Maria Rossi".into(),
        author_role: "transcriber".into(),
        shared,
        language: None,
    }
}

fn write(t: &Template, r: &mut Record, path: &ColumnPath, rows: Vec<usize>, v: CellValue) -> Result<(), String> {
    r.write_cell(t, &CellAddress::new(path.clone(), rows), v, t0())
        .map_err(|e| format!("{}: {e}", path))
}

fn sha(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

// ---------------------------------------------------------------- fixtures

pub const CREW_LIST_TABLES: [&str; 6] = [
    "FastCat Record Information",
    "Source Identity",
    "Ship Identity",
    "Crew List",
    "Documented Navigation",
    "Route",
];

pub fn fixture_fidelity() -> Outcome {
    let start = Instant::now();
    let c = config();
    let t = c.templates.latest("crew_list").ok_or("no crew_list template")?;
    let titles: Vec<&str> = t.tables.iter().map(|tb| tb.title.as_str()).collect();
    ensure(titles == CREW_LIST_TABLES, || format!("crew_list tables are {titles:?}"))?;
    let report = factrix_core::template::validate_template(t);
    ensure(report.is_empty(), || format!("crew_list report: {report:?}"))?;
    ensure(c.templates.len() == 20, || format!("{} templates parse", c.templates.len()))?;
    for (id, _) in CORPUS_COUNTS {
        ensure(c.templates.latest(id).is_some(), || format!("template {id} missing"))?;
    }
    let m = validate_corpus_mappings(&c.mappings, &c.templates, &c.ontology);
    ensure(m.is_ok(), || format!("mapping errors: {:?}", m.errors))?;
    let split = (m.template_mappings, m.entity_mappings, m.vocabulary_mappings);
    ensure(m.mapping_count == 25 && split == (20, 4, 1), || format!("{} mappings, split {split:?}", m.mapping_count))?;
    let took = start.elapsed();
    ensure(took < FIXTURE_BUDGET, || format!("took {took:?}"))?;
    Ok(format!("6 crew list tables, 20 templates, 25 mappings (20+4+1), {} ms", took.as_millis()))
}

// ------------------------------------------------------------ round trips

pub fn round_trip_one(c: &Config, r: &Record) -> Result<(), String> {
    let t = c.templates.get(&r.meta.template_id, r.meta.template_version).ok_or("unknown template")?;
    let back = parse_record(&serialize_record(r)).map_err(|e| e.to_string())?;
    ensure(&back == r, || format!("{}: record serialize/parse differs", r.meta.record_id))?;
    let xml = export_xml(r, t);
    let back = import_xml(&xml).map_err(|e| format!("{}: {e}", r.meta.record_id))?;
    ensure(&back == r, || format!("{}: XML export/import differs", r.meta.record_id))?;
    let tr = c.transformer().map_err(|e| e.to_string())?;
    let g = tr.transform_record(r, &Default::default()).map_err(|e| e.to_string())?;
    let nt = to_ntriples(&g);
    let parsed = parse_ntriples(&nt).map_err(|e| format!("{}: {e}", r.meta.record_id))?;
    ensure(parsed == g, || format!("{}: graph serialize/parse differs", r.meta.record_id))?;
    ensure(to_ntriples(&parsed) == nt, || "N-Triples not idempotent".into())?;
    Ok(())
}

/// Property test over random corpora: every record survives JSON, XML and
/// its RDF graph survives N-Triples and N-Quads.
pub fn round_trips() -> Outcome {
    use proptest::prelude::*;
    use proptest::test_runner::{Config as RunnerConfig, TestRunner};
    let c = config();
    let terms: BTreeMap<String, Vec<String>> =
        c.vocabularies.iter().map(|(id, v)| (id.clone(), v.terms.keys().cloned().collect())).collect();
    let templates: Vec<&Template> = c.templates.iter().collect();
    let mut runner = TestRunner::new(RunnerConfig {
        cases: ROUND_TRIP_CASES,
        failure_persistence: None,
        ..RunnerConfig::default()
    });
    let checked = std::cell::Cell::new(0usize);
    runner
        .run(&(any::<u64>(), 0..templates.len()), |(seed, first)| {
            let mut synth = Synth::new(seed).with_terms(terms.clone());
            let rotated: Vec<&Template> = templates.iter().cycle().skip(first).take(templates.len()).copied().collect();
            let records = synth.corpus(&rotated, RECORDS_PER_CASE);
            for r in &records {
                round_trip_one(&c, r).map_err(TestCaseError::fail)?;
            }
            let ds = c.transform(&records).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let nq = to_nquads(&ds);
            let back = parse_nquads(&nq).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(to_nquads(&back), nq);
            checked.set(checked.get() + records.len());
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let n = checked.get();
    ensure(n >= 500, || format!("only {n} records checked"))?;
    Ok(format!("{ROUND_TRIP_CASES} cases, {n} records: JSON, XML, N-Triples and N-Quads round-trip"))
}

// ------------------------------------------------------------------- sync

fn sync_template() -> Template {
    let path = fixtures().join("templates/list_of_ships.json");
    factrix_core::template::parse_template(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn body(t: &Template, doc: Option<&RevisionedDoc>, id: &str, title: String, at: Timestamp) -> DocBody {
    let mut r = match doc.and_then(|d| d.record()) {
        Some(r) => r.clone(),
        None => Record::new(t, draft(id, true), at),
    };
    r.meta.title = title;
    r.meta.last_modified = at;
    DocBody::Record(r)
}

/// The current revision the store policy prescribes, computed from the raw
/// revision graph: newest live leaf by last-modified time, ties to the
/// lower replica id, then to the larger revision.
fn expected_winner<'a>(revs: &[&'a RevisionedDoc]) -> &'a RevisionedDoc {
    let inner: BTreeSet<_> = revs.iter().flat_map(|d| d.parents.iter()).collect();
    let leaves: Vec<&RevisionedDoc> = revs.iter().copied().filter(|d| !inner.contains(&d.revision)).collect();
    let live: Vec<&RevisionedDoc> = leaves.iter().copied().filter(|d| !d.tombstone).collect();
    let pool = if live.is_empty() { leaves } else { live };
    pool.into_iter()
        .max_by(|a, b| {
            (a.last_modified, Reverse(&a.replica), &a.revision).cmp(&(b.last_modified, Reverse(&b.replica), &b.revision))
        })
        .expect("non-empty")
}

fn gossip(stores: &mut [Store]) -> Result<(), String> {
    for _ in 0..6 {
        let mut moved = 0;
        for i in 0..stores.len() {
            for j in 0..stores.len() {
                if i != j {
                    let (a, b) = pair(stores, i, j);
                    moved += replicate(a, b).map_err(|e| e.to_string())?.transferred;
                }
            }
        }
        if moved == 0 {
            return Ok(());
        }
    }
    Err("replication did not quiesce".into())
}

fn pair(stores: &mut [Store], i: usize, j: usize) -> (&mut Store, &mut Store) {
    if i < j {
        let (l, r) = stores.split_at_mut(j);
        (&mut l[i], &mut r[0])
    } else {
        let (l, r) = stores.split_at_mut(i);
        (&mut r[0], &mut l[j])
    }
}

fn same_everywhere(stores: &[Store]) -> Result<(), String> {
    let digest = stores[0].state_digest();
    ensure(stores.iter().all(|s| s.state_digest() == digest), || "state digests differ".into())?;
    for id in stores[0].doc_ids() {
        let bytes = |s: &Store| {
            s.revisions(id)
                .iter()
                .map(|d| to_canonical_string(&***d))
                .collect::<Vec<_>>()
        };
        let first = bytes(&stores[0]);
        ensure(stores.iter().all(|s| bytes(s) == first), || format!("{id}: revision bytes differ"))?;
    }
    Ok(())
}

/// One random schedule; returns (accepted revisions, conflicts resolved).
pub fn sync_scenario(t: &Template, seed: u64) -> Result<(usize, usize), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stores: Vec<Store> = ["A", "B", "C"].into_iter().map(Store::in_memory).collect();
    let mut accepted: Vec<(String, factrix_core::store::Revision)> = Vec::new();
    let mut resolved = 0;
    let docs = ["r1", "r2", "r3"];
    let steps = rng.gen_range(8..30);
    for step in 0..steps {
        let i = rng.gen_range(0..3);
        let id = docs[rng.gen_range(0..docs.len())];
        let doc_id = format!("record/{id}");
        // few distinct minutes so equal timestamps are common
        let at = Timestamp::from_millis(1_614_592_800_000 + rng.gen_range(0..6) * 60_000);
        match rng.gen_range(0..10) {
            0..=4 => {
                let s = &mut stores[i];
                let current = s.get(&doc_id).cloned();
                let b = body(t, current.as_deref().filter(|d| !d.tombstone), id, format!("{seed}-{step}"), at);
                let doc = s.put(b, current.as_ref().map(|d| &d.revision), at).map_err(|e| e.to_string())?;
                accepted.push((doc_id, doc.revision.clone()));
            }
            5 => {
                let s = &mut stores[i];
                if let Some(cur) = s.get_live(&doc_id).cloned() {
                    let doc = s.delete(&doc_id, &cur.revision, at).map_err(|e| e.to_string())?;
                    accepted.push((doc_id, doc.revision.clone()));
                }
            }
            6..=8 => {
                let j = (i + rng.gen_range(1..3)) % 3;
                let (a, b) = pair(&mut stores, i, j);
                replicate(a, b).map_err(|e| e.to_string())?;
            }
            _ => {
                let s = &mut stores[i];
                if let Some(c) = s.conflicts().into_iter().next() {
                    let (doc, _) = s.resolve(&c, &Policy::NewestLastModified).map_err(|e| e.to_string())?;
                    accepted.push((c.doc_id.clone(), doc.revision.clone()));
                    resolved += 1;
                }
            }
        }
    }
    gossip(&mut stores)?;
    same_everywhere(&stores)?;
    for id in stores[0].doc_ids() {
        let revs: Vec<&RevisionedDoc> = stores[0].revisions(id).into_iter().map(|d| &**d).collect();
        let want = expected_winner(&revs);
        let got = stores[0].get(id).unwrap();
        ensure(got.revision == want.revision, || format!("seed {seed}: {id} current {} but policy picks {}", got.revision, want.revision))?;
    }
    for (doc, rev) in &accepted {
        ensure(stores.iter().all(|s| s.contains(doc, rev)), || format!("seed {seed}: lost {doc} {rev}"))?;
    }
    // every replica settles its conflicts on its own; they must agree
    for s in stores.iter_mut() {
        while let Some(c) = s.conflicts().into_iter().next() {
            s.resolve(&c, &Policy::NewestLastModified).map_err(|e| e.to_string())?;
            resolved += 1;
        }
    }
    gossip(&mut stores)?;
    same_everywhere(&stores)?;
    ensure(stores.iter().all(|s| s.conflicts().is_empty()), || format!("seed {seed}: conflicts remain after resolution"))?;
    Ok((accepted.len(), resolved))
}

pub fn sync_convergence() -> Outcome {
    let start = Instant::now();
    let t = sync_template();
    let (mut revisions, mut conflicts) = (0, 0);
    for seed in 0..SYNC_SCENARIOS {
        let (r, c) = sync_scenario(&t, seed)?;
        revisions += r;
        conflicts += c;
    }
    ensure(conflicts > 0, || "no scenario produced a concurrent edit".into())?;
    let took = start.elapsed();
    ensure(took < SYNC_BUDGET, || format!("took {took:?}"))?;
    Ok(format!(
        "{SYNC_SCENARIOS} scenarios on 3 replicas converged, {conflicts} conflicts settled newest-wins, {revisions} accepted revisions kept, {} ms",
        took.as_millis()
    ))
}

// --------------------------------------------------------------- matching

const FIRST: [&str; 4] = ["Nicola", "Pietro", "Antonio", "Giuseppe"];
const LAST: [&str; 4] = ["Vianello", "Russo", "Bianchi", "Esposito"];
const FATHER: [&str; 2] = ["Giovanni", "Marco"];
const BORN: [&str; 2] = ["1850", "1851"];

/// Crew records holding `n` persons drawn from small pools, so that key
/// collisions are frequent; one value in ten is left empty.
pub fn person_records(t: &Template, rng: &mut ChaCha8Rng, n: usize, per_record: usize) -> Result<Vec<Record>, String> {
    let mut out = Vec::new();
    for k in 0..n.div_ceil(per_record) {
        let mut r = Record::new(t, draft(&format!("p{k:03}"), true), t0());
        for _ in 0..per_record.min(n - k * per_record) {
            let row = r.append_row(t, "crew_list", t0()).map_err(|e| e.to_string())?;
            let values = [
                ("lastname", LAST.choose(rng).unwrap()),
                ("firstname", FIRST.choose(rng).unwrap()),
                ("fathers_name", FATHER.choose(rng).unwrap()),
                ("birth_date", BORN.choose(rng).unwrap()),
            ];
            for (i, (col, v)) in values.into_iter().enumerate() {
                // lastname always set, so every row is one person
                if i > 0 && rng.gen_bool(0.1) {
                    continue;
                }
                let path: ColumnPath = format!("crew_list/person/{col}").parse().unwrap();
                write(t, &mut r, &path, vec![row], CellValue::text(*v))?;
            }
        }
        out.push(r);
    }
    Ok(out)
}

/// Pairwise comparison of keys, closed under transitivity by relabelling;
/// quadratic on purpose.
pub fn brute_force_partition(reg: &Registry, rules: &[MatchRule]) -> BTreeSet<BTreeSet<String>> {
    let ids: Vec<&String> = reg.instances.keys().collect();
    let key = |rule: &MatchRule, i: &EntityInstance| -> Option<(String, Vec<String>)> {
        if i.entity_type != rule.entity_type {
            return None;
        }
        let occ = &i.occurrences[0];
        let scope = match rule.scope {
            Scope::SameRecord => occ.record_id.clone(),
            Scope::SameTemplate => occ.template_id.clone(),
            Scope::Global => String::new(),
        };
        let mut vals = Vec::new();
        for p in &rule.key_properties {
            let v = i.properties.get(p)?.trim();
            if v.is_empty() {
                return None;
            }
            vals.push(v.to_string());
        }
        Some((scope, vals))
    };
    let mut label: Vec<usize> = (0..ids.len()).collect();
    loop {
        let mut changed = false;
        for a in 0..ids.len() {
            for b in a + 1..ids.len() {
                let (ia, ib) = (&reg.instances[ids[a]], &reg.instances[ids[b]]);
                let same = rules.iter().any(|r| key(r, ia).is_some() && key(r, ia) == key(r, ib));
                if same && label[a] != label[b] {
                    let (lo, hi) = (label[a].min(label[b]), label[a].max(label[b]));
                    label.iter_mut().filter(|l| **l == hi).for_each(|l| *l = lo);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut groups: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    for (i, l) in label.iter().enumerate() {
        groups.entry(*l).or_default().insert(ids[i].clone());
    }
    groups.into_values().collect()
}

pub fn matching_trial(c: &Config, trial: u64) -> Result<(), String> {
    let t = c.templates.latest("crew_list").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10_000 + trial);
    let records = person_records(t, &mut rng, MATCH_PERSONS, 50)?;
    let mut rules: Vec<MatchRule> = c.match_rules.iter().filter(|r| r.entity_type == "Person").cloned().collect();
    if trial % 2 == 1 {
        for r in &mut rules {
            r.scope = Scope::Global;
        }
    }
    let reg = extract_instances(&records, &c.templates).map_err(|e| e.to_string())?;
    let persons = reg.instances_of_type("Person").count();
    ensure(persons == MATCH_PERSONS, || format!("{persons} persons extracted"))?;
    let (matched, _) = auto_match(&reg, &rules).map_err(|e| e.to_string())?;
    let oracle = brute_force_partition(&reg, &rules);
    ensure(matched.partition() == oracle, || format!("trial {trial}: partition differs from brute force"))?;
    let (again, report) = auto_match(&matched, &rules).map_err(|e| e.to_string())?;
    ensure(again.partition() == matched.partition() && report.unions == 0, || format!("trial {trial}: not idempotent"))?;
    let mut shuffled: Vec<EntityInstance> = reg.instances.values().cloned().collect();
    shuffled.shuffle(&mut rng);
    let (permuted, _) = auto_match(&Registry::from_instances(shuffled), &rules).map_err(|e| e.to_string())?;
    ensure(permuted.partition() == oracle, || format!("trial {trial}: depends on input order"))?;
    Ok(())
}

pub fn matching_oracle() -> Outcome {
    let c = config();
    for trial in 0..MATCH_TRIALS {
        matching_trial(&c, trial)?;
    }
    Ok(format!(
        "{MATCH_TRIALS}/{MATCH_TRIALS} trials of {MATCH_PERSONS} persons equal the brute-force closure; idempotent, order-independent"
    ))
}

// ------------------------------------------------------------------ scale

/// Entity columns of `t` that can hold any number of instances of
/// `entity_type`: the first such column in a multi-row root table, plus the
/// other columns of that type in its colspan group.
fn repeatable_slot(t: &Template, entity_type: &str) -> Option<Vec<ColumnPath>> {
    let inventory = column_inventory(t);
    let is_type = |vt: &ValueType| matches!(vt, ValueType::Entity { entity_type: e, .. } if e == entity_type);
    let (anchor, _) = inventory.iter().find(|(p, vt)| {
        is_type(vt)
            && t.resolve(p).is_ok_and(|r| r.nested_hops.is_empty())
            && t.table(&p.table).is_some_and(|tb| tb.multiplicity == Multiplicity::MultiRow)
    })?;
    let group = anchor.parent().filter(|g| !g.columns.is_empty());
    let mut props = BTreeSet::new();
    let mut out = Vec::new();
    for (p, vt) in &inventory {
        let ValueType::Entity { property, .. } = vt else { continue };
        let same = p == anchor || (group.is_some() && p.parent() == group);
        if same && is_type(vt) && props.insert(property.clone()) {
            out.push(p.clone());
        }
    }
    Some(out)
}

/// Records in the published proportions (605 over the 20 templates) holding
/// exactly the published number of instances per entity type.
pub fn scale_corpus(c: &Config, seed: u64) -> Result<Vec<Record>, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for (id, n) in CORPUS_COUNTS {
        let t = c.templates.latest(id).ok_or(format!("no template {id}"))?;
        for k in 0..n {
            records.push(Record::new(t, draft(&format!("{id}-{k:03}"), true), t0()));
        }
    }
    let names = ["Andrea", "Antonio", "Genova", "Trieste", "Odessa", "Marsiglia", "Vianello", "Russo", "Bianchi", "Costa"];
    for (ty, target) in SCALE_COUNTS {
        let holders: Vec<(usize, Vec<ColumnPath>)> = records
            .iter()
            .enumerate()
            .filter_map(|(i, r)| {
                let t = c.templates.get(&r.meta.template_id, r.meta.template_version)?;
                repeatable_slot(t, ty).map(|s| (i, s))
            })
            .collect();
        ensure(!holders.is_empty(), || format!("no template can hold {ty}"))?;
        for (k, (i, slot)) in holders.iter().enumerate() {
            let n = target / holders.len() + usize::from(k < target % holders.len());
            let r = &mut records[*i];
            let t = c.templates.get(&r.meta.template_id, r.meta.template_version).unwrap();
            for _ in 0..n {
                let row = r.append_row(t, &slot[0].table, t0()).map_err(|e| e.to_string())?;
                for p in slot {
                    let v = format!("{} {}", names[rng.gen_range(0..names.len())], rng.gen_range(0..40));
                    write(t, r, p, vec![row], CellValue::text(v))?;
                }
            }
        }
    }
    Ok(records)
}

pub fn registry_scale() -> Outcome {
    let c = config();
    let records = scale_corpus(&c, 5)?;
    ensure(records.len() == 605, || format!("{} records", records.len()))?;
    let start = Instant::now();
    let reg = extract_instances(&records, &c.templates).map_err(|e| e.to_string())?;
    let (matched, report) = auto_match(&reg, &c.match_rules).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let counts = matched.counts();
    for (ty, want) in SCALE_COUNTS {
        let got = counts.get(ty).copied().unwrap_or(0);
        ensure(got == want, || format!("{ty}: {got} instances, expected {want}"))?;
    }
    ensure(counts.len() == 4, || format!("unexpected types {counts:?}"))?;
    ensure(took < SCALE_BUDGET, || format!("took {took:?}"))?;
    Ok(format!(
        "76,643 / 8,814 / 2,354 / 1,197 instances over 605 records, {} clusters after matching, {} ms",
        report.clusters_after,
        took.as_millis()
    ))
}

// ------------------------------------------------------------- provenance

/// Random merges, detaches and corrections (with an occasional undo) until
/// `actions` of them have succeeded.
pub fn fuzz_curation(cur: &mut Curation, rng: &mut ChaCha8Rng, actions: usize) -> Result<usize, String> {
    let mut done = 0;
    let mut attempts = 0;
    while done < actions {
        attempts += 1;
        if attempts > actions * 20 {
            return Err(format!("only {done} actions succeeded"));
        }
        let at = Timestamp::from_millis(t0().millis() + attempts as i64);
        let reg = cur.registry().clone();
        let ids: Vec<u64> = reg.clusters.keys().copied().collect();
        match rng.gen_range(0..10) {
            0..=3 => {
                let a = reg.clusters[ids.choose(rng).unwrap()].clone();
                let same: Vec<u64> = reg
                    .clusters_of_type(&a.entity_type)
                    .map(|c| c.cluster_id)
                    .filter(|id| *id != a.cluster_id)
                    .collect();
                let Some(b) = same.choose(rng) else { continue };
                let pair = [a.cluster_id, *b];
                let r = match cur.merge(&pair, BTreeMap::new(), "fuzz", at) {
                    Err(CurationError::UnresolvedPropertyConflict(props)) => {
                        let preferred = props
                            .iter()
                            .map(|p| {
                                let vals: Vec<&str> = pair
                                    .iter()
                                    .flat_map(|c| reg.raw_values(&reg.clusters[c], p))
                                    .collect();
                                (p.clone(), vals.choose(rng).unwrap().to_string())
                            })
                            .collect();
                        cur.merge(&pair, preferred, "fuzz", at)
                    }
                    other => other,
                };
                r.map_err(|e| format!("merge: {e}"))?;
            }
            4..=6 => {
                let multi: Vec<&String> = reg.clusters.values().filter(|c| c.members.len() > 1).flat_map(|c| &c.members).collect();
                let Some(inst) = multi.choose(rng) else { continue };
                cur.detach(inst, "fuzz", at).map_err(|e| format!("detach: {e}"))?;
            }
            7..=8 => {
                let c = &reg.clusters[ids.choose(rng).unwrap()];
                let props: Vec<&str> = reg.property_names(c).into_iter().collect();
                let Some(p) = props.choose(rng) else { continue };
                cur.correct(c.cluster_id, p, &format!("corrected {}", rng.gen_range(0..5)), "fuzz", at)
                    .map_err(|e| format!("correct: {e}"))?;
            }
            _ => {
                // undo is not one of the counted actions
                let _ = cur.undo("fuzz", at);
                continue;
            }
        }
        done += 1;
    }
    Ok(done)
}

/// Bytes of every file under `dir`, by relative path.
fn tree_hashes(dir: &Path) -> BTreeMap<PathBuf, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), sha(&std::fs::read(&p).unwrap()));
            }
        }
    }
    out
}

pub fn provenance() -> Outcome {
    let c = config();
    let t = c.templates.latest("crew_list").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let records = person_records(t, &mut rng, 120, 30)?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store_dir = dir.path().join("store");
    let mut store = Store::open(&store_dir, "A").map_err(|e| e.to_string())?;
    for r in &records {
        store.put(DocBody::Record(r.clone()), None, t0()).map_err(|e| e.to_string())?;
    }
    let files_before = tree_hashes(&store_dir);
    let records_before: Vec<String> = store.records().map(|r| sha(serialize_record(r).as_bytes())).collect();

    let stored: Vec<Record> = store.records().cloned().collect();
    let base = extract_instances(&stored, &c.templates).map_err(|e| e.to_string())?;
    let log_path = dir.path().join("curation.jsonl");
    let mut cur = Curation::open(base.clone(), &log_path).map_err(|e| e.to_string())?;
    cur.auto_match(&c.match_rules, "fuzz", t0()).map_err(|e| e.to_string())?;
    let n = fuzz_curation(&mut cur, &mut rng, FUZZ_ACTIONS)?;
    cur.registry().check_invariants()?;

    let records_after: Vec<String> = store.records().map(|r| sha(serialize_record(r).as_bytes())).collect();
    ensure(records_before == records_after, || "stored records changed in memory".into())?;
    drop(store);
    ensure(tree_hashes(&store_dir) == files_before, || "store files changed on disk".into())?;

    let replayed = replay(&base, cur.log()).map_err(|e| e.to_string())?;
    ensure(&replayed == cur.registry(), || "replay differs from the live registry".into())?;
    let reopened = Curation::open(base, &log_path).map_err(|e| e.to_string())?;
    ensure(reopened.registry() == cur.registry(), || "reopening the log differs".into())?;
    Ok(format!(
        "{n} merge/detach/correct actions ({} log entries): record bytes unchanged, replay reconstructs the registry",
        cur.log().len()
    ))
}

// ------------------------------------------------------------ golden two-ship list

pub const TWO_SHIPS_SHIPS: [(&str, &str, &str, &str); 2] =
    [("Andrea", "brigantine", "Genova", "1870"), ("Antonio", "schooner", "Genova", "1868")];

pub fn two_ships_record(t: &Template) -> Result<Record, String> {
    let mut r = Record::new(t, draft("two_ships", true), t0());
    for (name, ty, place, year) in TWO_SHIPS_SHIPS {
        let row = r.append_row(t, "ships", t0()).map_err(|e| e.to_string())?;
        let p = |c: &str| -> ColumnPath { format!("ships/{c}").parse().unwrap() };
        write(t, &mut r, &p("ship_name"), vec![row], CellValue::text(name))?;
        write(t, &mut r, &p("ship_type"), vec![row], CellValue::term("ship_type", ty))?;
        write(t, &mut r, &p("construction_location"), vec![row], CellValue::text(place))?;
        write(t, &mut r, &p("construction_year"), vec![row], CellValue::text(year))?;
    }
    Ok(r)
}

pub fn two_ships_ntriples() -> Result<String, String> {
    let c = config();
    let t = c.templates.get("list_of_ships", 1).ok_or("no list_of_ships")?;
    let r = two_ships_record(t)?;
    let tr = c.transformer().map_err(|e| e.to_string())?;
    let reg = extract_instances([&r], &c.templates).map_err(|e| e.to_string())?;
    let iris = tr.entity_iris(&reg).map_err(|e| e.to_string())?;
    let g = tr.transform_record(&r, &iris).map_err(|e| e.to_string())?;
    Ok(to_ntriples(&g))
}

pub fn golden_two_ships() -> Outcome {
    let golden = std::fs::read_to_string(fixtures().join("golden/two_ships.nt")).map_err(|e| e.to_string())?;
    let runs = [two_ships_ntriples()?, two_ships_ntriples()?];
    ensure(runs.iter().all(|r| *r == golden), || "output differs from the golden file".into())?;
    let g = parse_ntriples(&golden).map_err(|e| e.to_string())?;
    let onto = config().ontology;
    let class = |c: &str| Term::iri(onto.class_iri(c));
    let typed = |c: &str| g.with_predicate(ns::RDF_TYPE).filter(|t| t.object == class(c)).count();
    let at = onto.property_iri("took_place_at");
    let places: BTreeSet<&Term> = g.with_predicate(&at).map(|t| &t.object).collect();
    ensure(typed("ShipConstruction") == 2, || format!("{} ShipConstruction nodes", typed("ShipConstruction")))?;
    ensure(g.with_predicate(&at).count() == 2 && places.len() == 1, || "constructions do not share one place".into())?;
    let genova = places.into_iter().next().unwrap().as_iri().unwrap();
    ensure(g.objects(genova, ns::RDFS_LABEL).any(|l| *l == Term::string("Genova")), || "shared place is not Genova".into())?;
    Ok(format!("{} triples, 2 ShipConstruction nodes sharing Genova, byte-identical over 2 runs", g.len()))
}

// ------------------------------------------------------------------- SKOS

pub const SKOS_BASE: &str = "https://data.factrix.example/";

/// Triples [`export_skos`] should produce, counted from the vocabulary.
pub fn skos_count(v: &Vocabulary) -> usize {
    let mut n = 2;
    for t in v.terms.values() {
        let en_repeats_preferred = t.labels.get("en").is_some_and(|l| Some(l) == t.preferred_en.as_ref());
        n += 2 + t.labels.len() - usize::from(en_repeats_preferred);
        n += usize::from(t.preferred_en.is_some()) + usize::from(t.broader.is_some()) + usize::from(t.deprecated);
    }
    n
}

/// Broader edges of a parsed SKOS graph, as term ids.
fn broader_edges(g: &Graph, v: &Vocabulary) -> BTreeSet<(String, String)> {
    let prefix = format!("{SKOS_BASE}vocabulary/{}/", v.vocab_id);
    let broader = format!("{}broader", ns::SKOS);
    g.with_predicate(&broader)
        .filter_map(|t| {
            let s = t.subject.as_iri()?.strip_prefix(&prefix)?;
            let o = t.object.as_iri()?.strip_prefix(&prefix)?;
            Some((s.to_string(), o.to_string()))
        })
        .collect()
}

/// Independent Turtle parse of the SKOS output.
fn turtle_triples(ttl: &str) -> Result<Vec<(String, String, String)>, String> {
    oxttl::TurtleParser::new()
        .for_slice(ttl.as_bytes())
        .map(|t| {
            let t = t.map_err(|e| e.to_string())?;
            Ok((t.subject.to_string(), t.predicate.to_string(), t.object.to_string()))
        })
        .collect()
}

/// Narrower closure by recursive depth-first search over child lists.
pub fn dfs_narrower(v: &Vocabulary, term: &str) -> BTreeSet<String> {
    fn visit(children: &BTreeMap<&str, Vec<&str>>, at: &str, out: &mut BTreeSet<String>) {
        for c in children.get(at).into_iter().flatten() {
            if out.insert(c.to_string()) {
                visit(children, c, out);
            }
        }
    }
    let mut children: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (id, t) in &v.terms {
        if let Some(b) = &t.broader {
            children.entry(b).or_default().push(id);
        }
    }
    let mut out = BTreeSet::new();
    visit(&children, term, &mut out);
    out
}

pub fn random_hierarchy(seed: u64) -> Vocabulary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Vocabulary::new(&format!("h{seed}"), "Random hierarchy");
    let n = rng.gen_range(1..60);
    for i in 0..n {
        let term = VocabTerm {
            labels: [("en".to_string(), format!("term {i}"))].into(),
            ..VocabTerm::default()
        };
        v.add_term(&format!("t{i}"), term).unwrap();
    }
    // only earlier terms as parents keeps it acyclic; some edits are then
    // re-pointed at random, and cyclic ones must be refused
    for i in 1..n {
        if rng.gen_bool(0.8) {
            let b = format!("t{}", rng.gen_range(0..i));
            v.set_broader(&format!("t{i}"), Some(&b)).unwrap();
        }
    }
    for _ in 0..n / 3 {
        let (a, b) = (format!("t{}", rng.gen_range(0..n)), format!("t{}", rng.gen_range(0..n)));
        let cyclic = a == b || dfs_narrower(&v, &a).contains(&b);
        let r = v.set_broader(&a, Some(&b));
        assert_eq!(r.is_err(), cyclic, "set_broader({a}, {b})");
    }
    v
}

pub fn skos_export() -> Outcome {
    let c = config();
    ensure(c.vocabularies.len() == VOCABULARY_COUNT, || format!("{} vocabularies", c.vocabularies.len()))?;
    let mut triples = 0;
    let mut edges = 0;
    for v in c.vocabularies.values() {
        let g = export_skos(v, SKOS_BASE);
        ensure(g.len() == skos_count(v), || format!("{}: {} triples, oracle says {}", v.vocab_id, g.len(), skos_count(v)))?;
        triples += g.len();
        let expected: BTreeSet<(String, String)> = v
            .terms
            .iter()
            .filter_map(|(id, t)| Some((id.clone(), t.broader.clone()?)))
            .collect();
        let parsed = parse_ntriples(&to_ntriples(&g)).map_err(|e| e.to_string())?;
        ensure(broader_edges(&parsed, v) == expected, || format!("{}: broader edges lost in N-Triples", v.vocab_id))?;
        let ttl = factrix_core::rdf::to_turtle(&g, &factrix_core::curation::vocab::skos_prefixes(SKOS_BASE));
        let tt = turtle_triples(&ttl)?;
        ensure(tt.len() == g.len(), || format!("{}: Turtle parses to {} triples", v.vocab_id, tt.len()))?;
        let broader = format!("<{}broader>", ns::SKOS);
        let ttl_edges = tt.iter().filter(|(_, p, _)| *p == broader).count();
        ensure(ttl_edges == expected.len(), || format!("{}: broader edges lost in Turtle", v.vocab_id))?;
        edges += expected.len();
    }
    for seed in 0..HIERARCHIES {
        let v = random_hierarchy(seed);
        for id in v.terms.keys() {
            let got = v.narrower_closure(id).map_err(|e| e.to_string())?;
            ensure(got == dfs_narrower(&v, id), || format!("hierarchy {seed}: closure of {id} differs"))?;
        }
    }
    Ok(format!(
        "52 vocabularies, {triples} triples as counted, {edges} broader edges round-trip; closure = DFS on {HIERARCHIES} hierarchies"
    ))
}
