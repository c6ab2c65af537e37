use super::export::{export_csv, export_xml, import_xml};
use super::*;
use crate::template::parse_template;

fn template(name: &str) -> Template {
    let path = format!("{}/../../fixtures/templates/{name}.json", env!("CARGO_MANIFEST_DIR"));
    parse_template(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn t0() -> Timestamp {
    Timestamp::from_millis(1_617_000_000_000)
}

fn draft(id: &str) -> RecordDraft {
    RecordDraft {
        record_id: id.into(),
        title: format!("Record {id}"),
        author_name: "Maria Rossi".into(),
        author_role: "transcriber".into(),
        shared: false,
        language: Some("it".into()),
    }
}

fn addr(path: &str, rows: &[usize]) -> CellAddress {
    CellAddress::new(path.parse().unwrap(), rows.to_vec())
}

#[test]
fn create_on_crew_list() {
    let t = template("crew_list");
    let set: TemplateSet = [t.clone()].into_iter().collect();
    let r = create_record(&set, "crew_list", 1, draft("r1"), t0()).unwrap();
    assert_eq!(r.tables.len(), 6);
    assert!(r.tables.values().all(Vec::is_empty));
    assert_eq!(r.meta.status, RecordStatus::UnderProcessing);
    assert_eq!(r.meta.creation_date, r.meta.last_modified);
    assert!(!r.meta.shared);

    assert_eq!(
        create_record(&set, "crew_list", 2, draft("r2"), t0()),
        Err(RecordError::UnknownTemplate {
            id: "crew_list".into(),
            version: 2
        })
    );

    let again = parse_record(&serialize_record(&r)).unwrap();
    assert_eq!(again, r);
}

#[test]
fn write_cell_keeps_raw_text() {
    let t = template("crew_list");
    let mut r = Record::new(&t, draft("r1"), t0());
    r.append_row(&t, "crew_list", t0()).unwrap();
    let a = addr("crew_list/person/firstname", &[0]);
    r.write_cell(&t, &a, CellValue::text("G??rge"), t0()).unwrap();
    let stored = r.cell(&t, &a).unwrap();
    assert_eq!(stored.raw(), Some("G??rge"));
    assert!(stored.uncertainty().has_unknown_chars);

    r.write_cell(&t, &a, CellValue::Empty, t0()).unwrap();
    assert_eq!(r.cell(&t, &a).unwrap(), &CellValue::Empty);
}

#[test]
fn write_cell_errors() {
    let t = template("crew_list");
    let mut r = Record::new(&t, draft("r1"), t0());
    r.append_row(&t, "crew_list", t0()).unwrap();
    assert!(matches!(
        r.write_cell(&t, &addr("crew_list/total_duration/months", &[0]), CellValue::text("12a"), t0()),
        Err(RecordError::TypeMismatch { .. })
    ));
    r.write_cell(&t, &addr("crew_list/total_duration/months", &[0]), CellValue::text("12"), t0())
        .unwrap();
    assert!(matches!(
        r.write_cell(&t, &addr("crew_list/person/firstname", &[1]), CellValue::text("x"), t0()),
        Err(RecordError::RowOutOfBounds { .. })
    ));
    assert!(matches!(
        r.write_cell(&t, &addr("crew_list/person/nickname", &[0]), CellValue::text("x"), t0()),
        Err(RecordError::PathNotFound(_))
    ));
    assert!(matches!(
        r.write_cell(&t, &addr("crew_list/person", &[0]), CellValue::text("x"), t0()),
        Err(RecordError::TypeMismatch { .. })
    ));
    let new_term = CellValue::NewTerm {
        vocabulary_id: "payment_form".into(),
        label: "in natura".into(),
        language: "it".into(),
    };
    assert_eq!(
        r.write_cell(&t, &addr("crew_list/wage/payment_form", &[0]), new_term, t0()),
        Err(RecordError::NewTermOnPredefinedVocabulary("payment_form".into()))
    );
    let other = template("logbook");
    assert!(matches!(
        r.write_cell(&other, &addr("crew_list/person/firstname", &[0]), CellValue::text("x"), t0()),
        Err(RecordError::TemplateMismatch { .. })
    ));
}

#[test]
fn single_row_tables_hold_one_row() {
    let t = template("crew_list");
    let mut r = Record::new(&t, draft("r1"), t0());
    r.append_row(&t, "ship_identity", t0()).unwrap();
    assert_eq!(
        r.append_row(&t, "ship_identity", t0()),
        Err(RecordError::SingleRowTableFull("ship_identity".into()))
    );
}

#[test]
fn nested_rows() {
    let t = template("census_la_ciotat");
    let mut r = Record::new(&t, draft("c1"), t0());
    r.append_row(&t, "households", t0()).unwrap();
    let children: ColumnPath = "households/children".parse().unwrap();
    let i = r.append_nested_row(&t, &children, &[0], t0()).unwrap();
    assert_eq!(i, 0);
    let row = &r.rows("households")[0].nested("children")[0];
    let keys: Vec<&str> = row.0.keys().map(String::as_str).collect();
    assert_eq!(keys, ["child_birth_date", "child_firstname", "child_lastname"]);

    assert_eq!(
        r.append_nested_row(&t, &"households/street".parse().unwrap(), &[0], t0()),
        Err(RecordError::NotNestedColumn("households/street".into()))
    );

    // list semantics: appends keep insertion order
    let mut model: Vec<String> = vec![String::new()];
    for name in ["Jean", "Marie", "Paul"] {
        let j = r.append_nested_row(&t, &children, &[0], t0()).unwrap();
        r.write_cell(&t, &addr("households/children/child_firstname", &[0, j]), CellValue::text(name), t0())
            .unwrap();
        model.push(name.to_string());
    }
    let got: Vec<String> = r.rows("households")[0]
        .nested("children")
        .iter()
        .map(|row| row.value("child_firstname").display_text().to_string())
        .collect();
    assert_eq!(got, model);
    assert_eq!(got.len(), 4);
}

#[test]
fn depth_three_nesting() {
    let t = template("students_register");
    let mut r = Record::new(&t, draft("s1"), t0());
    r.append_row(&t, "courses", t0()).unwrap();
    r.append_nested_row(&t, &"courses/students".parse().unwrap(), &[0], t0()).unwrap();
    r.append_nested_row(&t, &"courses/students/grades".parse().unwrap(), &[0, 0], t0())
        .unwrap();
    r.write_cell(&t, &addr("courses/students/grades/grade", &[0, 0, 0]), CellValue::text("8.5"), t0())
        .unwrap();
    r.write_cell(&t, &addr("courses/students/person/lastname", &[0, 0]), CellValue::text("Mar[in]i"), t0())
        .unwrap();
    assert_eq!(
        r.cell(&t, &addr("courses/students/grades/grade", &[0, 0, 0])).unwrap().raw(),
        Some("8.5")
    );
    let hits = scan_uncertain_cells(&t, &r);
    assert_eq!(hits.len(), 1);
    assert_eq!(hits[0].path.to_string(), "courses/students/person/lastname");
    assert_eq!(hits[0].rows, [0, 0]);
    assert!(hits[0].flags.has_guessed_span);
    r.check_conformance(&t).unwrap();
}

#[test]
fn scan_examples() {
    let t = template("crew_list");
    let mut r = Record::new(&t, draft("r1"), t0());
    r.append_row(&t, "route", t0()).unwrap();
    r.write_cell(&t, &addr("route/departure_port", &[0]), CellValue::text("Genova"), t0())
        .unwrap();
    assert!(scan_uncertain_cells(&t, &r).is_empty());
    r.write_cell(&t, &addr("route/arrival_port", &[0]), CellValue::text("Vodowice?"), t0())
        .unwrap();
    let hits = scan_uncertain_cells(&t, &r);
    assert_eq!(hits.len(), 1);
    assert!(hits[0].flags.has_unknown_chars);
    assert!(!hits[0].flags.has_guessed_span);
}

#[test]
fn status_transitions() {
    let t = template("crew_list");
    for from in RecordStatus::ALL {
        for to in RecordStatus::ALL {
            let mut r = Record::new(&t, draft("r1"), t0());
            r.transition_status(from, "alice", t0());
            let before = r.meta.last_modified;
            r.transition_status(to, "bob", t0());
            assert_eq!(r.meta.status, to);
            assert!(r.meta.last_modified > before);
            let last = r.status_history.last().unwrap();
            assert_eq!((last.from, last.to, last.actor.as_str()), (from, to, "bob"));
            assert_eq!(r.status_history.len(), 2);
        }
    }
    let mut r = Record::new(&t, draft("r1"), t0());
    r.transition_status(RecordStatus::Published, "alice", t0());
    r.transition_status(RecordStatus::UnderProcessing, "alice", t0());
    assert_eq!(r.meta.status, RecordStatus::UnderProcessing);
}

#[test]
fn last_modified_strictly_increases_with_a_frozen_clock() {
    let t = template("crew_list");
    let mut r = Record::new(&t, draft("r1"), t0());
    let mut seen = vec![r.meta.last_modified];
    r.append_row(&t, "crew_list", t0()).unwrap();
    seen.push(r.meta.last_modified);
    r.write_cell(&t, &addr("crew_list/person/lastname", &[0]), CellValue::text("Rossi"), t0())
        .unwrap();
    seen.push(r.meta.last_modified);
    r.set_shared(true, t0());
    seen.push(r.meta.last_modified);
    r.transition_status(RecordStatus::ReadyForReview, "a", t0());
    seen.push(r.meta.last_modified);
    assert!(seen.windows(2).all(|w| w[0] < w[1]), "{seen:?}");
    assert!(r.meta.last_modified >= r.meta.creation_date);
}

fn sample_crew_record() -> (Template, Record) {
    let t = template("crew_list");
    let mut r = Record::new(&t, draft("r1"), t0());
    r.append_row(&t, "ship_identity", t0()).unwrap();
    r.write_cell(&t, &addr("ship_identity/ship_name", &[0]), CellValue::text("Andrea"), t0())
        .unwrap();
    r.write_cell(&t, &addr("ship_identity/ship_type", &[0]), CellValue::term("ship_type", "brigantine"), t0())
        .unwrap();
    r.append_nested_row(&t, &"ship_identity/owners".parse().unwrap(), &[0], t0()).unwrap();
    r.write_cell(&t, &addr("ship_identity/owners/owner_name", &[0, 0]), CellValue::text("Fratelli \"Rocca\" & C."), t0())
        .unwrap();
    for (i, name) in ["G??rge", "Luigi\nBianchi", " spaced "].iter().enumerate() {
        r.append_row(&t, "crew_list", t0()).unwrap();
        r.write_cell(&t, &addr("crew_list/person/firstname", &[i]), CellValue::text(*name), t0())
            .unwrap();
    }
    r.write_cell(
        &t,
        &addr("crew_list/profession", &[1]),
        CellValue::NewTerm {
            vocabulary_id: "profession".into(),
            label: "mozzo".into(),
            language: "it".into(),
        },
        t0(),
    )
    .unwrap();
    r.transition_status(RecordStatus::ReadyForReview, "alice <a@b>", t0());
    (t, r)
}

#[test]
fn xml_export_shape_and_round_trip() {
    let (t, r) = sample_crew_record();
    let xml = String::from_utf8(export_xml(&r, &t)).unwrap();
    assert_eq!(xml.matches("<table ").count(), 6);
    assert!(xml.contains("<cell column=\"firstname\" kind=\"text\">G??rge</cell>"));
    assert_eq!(import_xml(xml.as_bytes()).unwrap(), r);

    let empty = Record::new(&t, draft("e"), t0());
    let xml = String::from_utf8(export_xml(&empty, &t)).unwrap();
    assert_eq!(xml.matches("<table ").count(), 6);
    assert_eq!(xml.matches("/>").count(), 6);
    assert_eq!(import_xml(xml.as_bytes()).unwrap(), empty);
}

#[test]
fn xml_import_rejects_garbage() {
    assert!(import_xml(b"<record").is_err());
    assert!(import_xml(b"<?xml version=\"1.0\"?><nope/>").is_err());
    assert!(import_xml(b"").is_err());
}

#[test]
fn csv_bundle_layout() {
    let (t, r) = sample_crew_record();
    let bundle = export_csv(&r, &t);
    let names: Vec<&str> = bundle.files.keys().map(String::as_str).collect();
    assert!(names.contains(&"r1/crew_list.csv"));
    assert!(names.contains(&"r1/ship_identity.owners.csv"));
    assert!(names.contains(&"r1/documented_navigation.planned_destinations.csv"));
    assert_eq!(names.len(), 8);

    let owners = String::from_utf8(bundle.files["r1/ship_identity.owners.csv"].clone()).unwrap();
    assert_eq!(owners, "row,parent_row,owner_name\r\n1.1,1,\"Fratelli \"\"Rocca\"\" & C.\"\r\n");

    let crew = String::from_utf8(bundle.files["r1/crew_list.csv"].clone()).unwrap();
    let mut reader = csv::Reader::from_reader(crew.as_bytes());
    let header = reader.headers().unwrap().clone();
    assert_eq!(&header[0], "row");
    let first = header.iter().position(|h| h == "firstname").unwrap();
    let values: Vec<String> = reader.records().map(|r| r.unwrap()[first].to_string()).collect();
    assert_eq!(values, ["G??rge", "Luigi\nBianchi", " spaced "]);
}

#[test]
fn conformance() {
    let (t, mut r) = sample_crew_record();
    r.check_conformance(&t).unwrap();
    r.tables.get_mut("crew_list").unwrap()[0]
        .0
        .insert("bogus".into(), Cell::Value(CellValue::Empty));
    assert!(matches!(r.check_conformance(&t), Err(RecordError::Nonconforming(_))));
}
