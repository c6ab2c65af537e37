mod common;

use std::collections::BTreeMap;

use reqwest::StatusCode;
use serde_json::{json, Value};

use common::{blank_record, fixture_records, ok, templates, Api, Options, Server};
use factrix_core::curation::{auto_match, extract_instances};
use factrix_core::pipeline::{Config, ConfigPaths};
use factrix_core::record::{Record, RecordStatus};
use factrix_core::synth::Synth;
use factrix_core::template::Template;

fn template(id: &str) -> Template {
    templates().into_iter().find(|t| t.id == id).unwrap()
}

fn error_code(resp: reqwest::blocking::Response) -> (StatusCode, Value) {
    let status = resp.status();
    (status, resp.json().unwrap())
}

#[test]
fn fresh_store_has_no_templates() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(dir.path());
    let resp = server.api().get("/templates");
    assert_eq!(resp.status(), StatusCode::OK);
    let body: Vec<Value> = resp.json().unwrap();
    assert!(body.is_empty());
}

#[test]
fn posted_record_reads_back_equal() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(dir.path());
    let api = server.api();
    api.seed_templates();
    let listed: Vec<Template> = api.json("/templates");
    assert_eq!(listed.len(), templates().len());
    for r in fixture_records() {
        let resp = api.post("/records", &r);
        assert_eq!(resp.status(), StatusCode::CREATED);
        let doc: Value = api.json(&format!("/records/{}", r.id()));
        let back: Record = serde_json::from_value(doc["record"].clone()).unwrap();
        assert_eq!(back, r);
    }
}

#[test]
fn template_versions_are_immutable() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(dir.path());
    let api = server.api();
    let t = template("logbook");
    assert_eq!(api.post("/templates", &t).status(), StatusCode::CREATED);
    assert_eq!(api.post("/templates", &t).status(), StatusCode::OK);
    let mut changed = t.clone();
    changed.title = "Changed".into();
    let (status, body) = error_code(api.post("/templates", &changed));
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "VersionExists");
    let mut broken = t;
    broken.version = 0;
    let (status, body) = error_code(api.post("/templates", &broken));
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "ValidationFailed");
    assert!(body["locus"].is_string());
}

#[test]
fn status_filter_returns_exactly_the_matching_records() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(dir.path());
    let api = server.api();
    api.seed_templates();
    let t = template("logbook");
    let mut expected = BTreeMap::new();
    for k in 0..9 {
        let r = blank_record(&t, &format!("lb{k}"), k % 3 != 0, 1_700_000_000_000 + k);
        let doc = api.post_ok("/records", &r);
        let to = RecordStatus::ALL[(k as usize) % 4];
        let mut status = RecordStatus::UnderProcessing;
        if to != RecordStatus::UnderProcessing {
            let body = json!({ "status": to, "actor": "curator", "revision": doc["revision"] });
            let after = api.post_ok(&format!("/records/lb{k}/status"), &body);
            assert_eq!(after["record"]["meta"]["status"], to.as_str());
            assert_eq!(after["record"]["status_history"].as_array().unwrap().len(), 1);
            status = to;
        }
        expected.insert(format!("lb{k}"), (status, k % 3 != 0));
    }
    for st in RecordStatus::ALL {
        let page: Value = api.json(&format!("/records?status={}", st.as_str()));
        let got: Vec<String> = page["items"]
            .as_array()
            .unwrap()
            .iter()
            .map(|m| m["record_id"].as_str().unwrap().to_string())
            .collect();
        let mut want: Vec<String> = expected
            .iter()
            .filter(|(_, (s, _))| *s == st)
            .map(|(id, _)| id.clone())
            .collect();
        let mut sorted = got.clone();
        sorted.sort();
        want.sort();
        assert_eq!(sorted, want, "{st:?}");
        assert_eq!(page["total"], want.len());
    }
    let page: Value = api.json("/records?status=ReadyForReview&shared=true");
    let n = expected
        .values()
        .filter(|(s, sh)| *s == RecordStatus::ReadyForReview && *sh)
        .count();
    assert_eq!(page["total"], n);
    let (status, body) = error_code(api.get("/records?status=Finished"));
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["locus"], "status");
}

#[test]
fn stale_writes_are_refused_with_409() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(dir.path());
    let api = server.api();
    api.seed_templates();
    let t = template("logbook");
    let r = blank_record(&t, "lb", true, 1_700_000_000_000);
    let first = api.post_ok("/records", &r);
    // creating again is a write against a revision the caller did not see
    let (status, body) = error_code(api.post("/records", &r));
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "RevisionMismatch");
    assert_eq!(body["locus"], "record/lb");

    let mut r2 = r.clone();
    r2.meta.title = "second".into();
    let second: Value = ok(api.put("/records", &json!({ "record": r2, "revision": first["revision"] })));
    assert_ne!(second["revision"], first["revision"]);
    let (status, _) = error_code(api.put("/records", &json!({ "record": r, "revision": first["revision"] })));
    assert_eq!(status, StatusCode::CONFLICT);
    let body = json!({ "status": "Published", "actor": "x", "revision": first["revision"] });
    let (status, _) = error_code(api.post("/records/lb/status", &body));
    assert_eq!(status, StatusCode::CONFLICT);

    // vocabularies carry a content revision
    let vocabs: Vec<Value> = api.json("/vocabularies");
    let v = &vocabs[0];
    let id = v["vocabulary"]["vocab_id"].as_str().unwrap();
    let term = json!({ "term_id": "zz_new", "term": { "labels": { "en": "New" } }, "revision": "0".repeat(64) });
    let (status, body) = error_code(api.post(&format!("/vocabularies/{id}/terms"), &term));
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "RevisionMismatch");
    let (status, _) = error_code(api.post("/vocabularies", &json!({ "vocabulary": v["vocabulary"] })));
    assert_eq!(status, StatusCode::CONFLICT);
}

#[test]
fn records_need_a_known_conforming_template() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(dir.path());
    let api = server.api();
    let t = template("logbook");
    let r = blank_record(&t, "lb", true, 0);
    let (status, body) = error_code(api.post("/records", &r));
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "ValidationFailed");
    assert_eq!(body["locus"], "template/logbook/1");
    api.post_ok("/templates", &t);
    let mut bad = r.clone();
    bad.tables.insert("no_such_table".into(), Vec::new());
    let (status, _) = error_code(api.post("/records", &bad));
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, body) = error_code(api.post("/records", &json!({ "meta": 1 })));
    assert!(status.is_client_error());
    assert_eq!(body["code"], "BadRequest");
}

#[test]
fn token_guards_every_route() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start_with(
        dir.path(),
        Options {
            token: Some("s3cret"),
            ..Options::default()
        },
    );
    let anon = server.api();
    let (status, body) = error_code(anon.get("/templates"));
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert_eq!(body["code"], "Unauthorized");
    assert_eq!(anon.get("/sync/changes").status(), StatusCode::UNAUTHORIZED);
    let wrong = Api::new(&server.url, Some("nope"));
    assert_eq!(wrong.get("/templates").status(), StatusCode::UNAUTHORIZED);
    let authed = Api::new(&server.url, Some("s3cret"));
    assert_eq!(authed.get("/templates").status(), StatusCode::OK);
}

#[test]
fn job_with_unknown_template_fails_validation_before_queueing() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(dir.path());
    let api = server.api();
    let (status, body) = error_code(api.post("/jobs", &json!({ "kind": "transform", "template_id": "nope" })));
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "ValidationFailed");
    assert_eq!(body["locus"], "nope");
    let (status, _) = error_code(api.post("/jobs", &json!({ "kind": "export", "record_id": "nope", "format": "xml" })));
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let jobs: Vec<Value> = api.json("/jobs");
    assert!(jobs.is_empty(), "nothing was queued");
    assert_eq!(api.get("/jobs/99").status(), StatusCode::NOT_FOUND);
    assert_eq!(api.get("/artifacts/..%2Fstore%2Flog.jsonl").status(), StatusCode::NOT_FOUND);
}

#[test]
fn curation_flow_merges_and_undoes_without_touching_records() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(dir.path());
    let api = server.api();
    api.seed_templates();
    let two_ships = fixture_records().into_iter().find(|r| r.id() == "two_ships").unwrap();
    api.post_ok("/records", &two_ships);
    let before: Value = api.json("/records/two_ships");

    let empty: Value = api.json("/entities/Ship");
    assert_eq!(empty["clusters"].as_array().unwrap().len(), 0);
    let (status, body) = error_code(api.post("/entities/undo", &json!({ "actor": "c", "log_seq": 0 })));
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "NoRegistry");

    let done = api.run_job(json!({ "kind": "extract" }));
    assert_eq!(done["state"], "done", "{done}");
    let ships: Value = api.json("/entities/Ship");
    let ids: Vec<u64> = ships["clusters"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["cluster_id"].as_u64().unwrap())
        .collect();
    let mut names: Vec<&str> = ships["clusters"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["values"]["name"].as_str().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["Andrea", "Antonio"], "{ships}");
    let seq = ships["log_seq"].as_u64().unwrap();

    // the names disagree, so a merge needs a preferred value
    let (status, body) = error_code(api.post(
        "/entities/merge",
        &json!({ "clusters": ids, "actor": "curator", "log_seq": seq }),
    ));
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "UnresolvedPropertyConflict");
    assert_eq!(body["locus"], "name");
    let merge = json!({ "clusters": ids, "preferred": { "name": "Andrea" }, "actor": "curator", "log_seq": seq });
    let merged = api.post_ok("/entities/merge", &merge);
    let (status, _) = error_code(api.post("/entities/merge", &merge));
    assert_eq!(status, StatusCode::CONFLICT, "stale log position");
    let after: Value = api.json("/entities/Ship");
    let one = after["clusters"].as_array().unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0]["members"].as_array().unwrap().len(), 2);
    assert_eq!(one[0]["values"]["name"], "Andrea");
    assert_eq!(one[0]["cluster_id"], merged["cluster_id"]);

    let filtered: Value = api.json("/entities/Ship?record_id=nope");
    assert_eq!(filtered["clusters"].as_array().unwrap().len(), 0);
    let by_template: Value = api.json("/entities/Ship?template_id=list_of_ships");
    assert_eq!(by_template["clusters"].as_array().unwrap().len(), 1);
    let csv = api.get("/entities/Ship?format=csv").text().unwrap();
    assert!(csv.contains("Andrea"));

    let undo = api.post_ok("/entities/undo", &json!({ "actor": "curator", "log_seq": merged["log_seq"] }));
    assert_eq!(undo["entry"]["action"], "undo");
    let back: Value = api.json("/entities/Ship");
    assert_eq!(back["clusters"].as_array().unwrap().len(), 2);
    let (status, body) = error_code(api.post(
        "/entities/correct",
        &json!({ "cluster_id": 999_999, "property": "name", "value": "x", "actor": "c", "log_seq": undo["log_seq"] }),
    ));
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "UnknownCluster");

    let after_record: Value = api.json("/records/two_ships");
    assert_eq!(after_record, before, "curation never writes records");
}

#[test]
fn vocabulary_edits_reject_cycles() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(dir.path());
    let api = server.api();
    let v: Value = api.json("/vocabularies/ship_type");
    let rev = v["revision"].clone();
    let added = api.post_ok(
        "/vocabularies/ship_type/terms",
        &json!({ "term_id": "polacca", "term": { "labels": { "it": "Polacca" }, "broader": "sailing_vessel" }, "revision": rev }),
    );
    assert!(added["vocabulary"]["terms"]["polacca"].is_object());
    let cycle = json!({ "term": "sailing_vessel", "broader": "polacca", "revision": added["revision"] });
    let (status, body) = error_code(api.post("/vocabularies/ship_type/broader", &cycle));
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "CycleDetected");
    let now: Value = api.json("/vocabularies/ship_type");
    assert_eq!(now["revision"], added["revision"], "a refused edit changes nothing");
    let (status, _) = error_code(api.get("/vocabularies/nope"));
    assert_eq!(status, StatusCode::NOT_FOUND);
}

/// Records in the published per-template proportions.
fn corpus_605() -> Vec<Record> {
    let counts = [
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
    let mut synth = Synth::new(605);
    let mut out = Vec::new();
    for (id, n) in counts {
        let t = template(id);
        for k in 0..n {
            let mut r = synth.record(&t, &format!("{id}-{k:03}"));
            r.meta.shared = true;
            out.push(r);
        }
    }
    out
}

#[test]
fn extract_and_auto_match_over_the_full_corpus() {
    let records = corpus_605();
    assert_eq!(records.len(), 605);
    let config = Config::load(&ConfigPaths::under(&common::fixtures())).unwrap();
    let base = extract_instances(&records, &config.templates).unwrap();
    let (matched, _) = auto_match(&base, &config.match_rules).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(dir.path());
    let api = server.api();
    api.seed_templates();
    for r in &records {
        api.post_ok("/records", r);
    }
    let extracted = api.run_job(json!({ "kind": "extract" }));
    assert_eq!(extracted["state"], "done", "{extracted}");
    assert_eq!(extracted["summary"]["instances"], base.instances.len());
    assert_eq!(extracted["summary"]["counts"], serde_json::to_value(base.counts()).unwrap());
    let matched_job = api.run_job(json!({ "kind": "auto_match" }));
    assert_eq!(matched_job["state"], "done", "{matched_job}");
    assert_eq!(matched_job["summary"]["clusters"], matched.clusters.len());
    assert_eq!(
        matched_job["summary"]["report"]["clusters_after"],
        matched.clusters.len()
    );
    let artifact: Value = serde_json::from_slice(&api.artifact(&matched_job)).unwrap();
    assert_eq!(artifact, matched_job["summary"]);
}
