//! Record exports: a self-describing XML document (which can be imported
//! back) and a CSV bundle with one file per table.
//!
//! CSV layout: `<record_id>/<table_id>.csv` for each root table, and
//! `<record_id>/<table_id>.<nested column>[.<nested column>].csv` for nested
//! tables. Every file starts with a `row` column holding a 1-based dotted row
//! number (`3`, `3.1`, ...); nested files add `parent_row`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use crate::template::{scope_slots, ColumnKind, ColumnSpec, Template};

use super::{Cell, CellValue, Record, RecordError, RecordMeta, RecordStatus, Row, StatusChange};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Xml,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Export {
    Xml(Vec<u8>),
    Csv(CsvBundle),
}

/// CSV files keyed by relative path.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CsvBundle {
    pub files: BTreeMap<String, Vec<u8>>,
}

impl CsvBundle {
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        for (rel, bytes) in &self.files {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(path, bytes)?;
        }
        Ok(())
    }
}

pub fn export_record(r: &Record, t: &Template, format: ExportFormat) -> Export {
    match format {
        ExportFormat::Xml => Export::Xml(export_xml(r, t)),
        ExportFormat::Csv => Export::Csv(export_csv(r, t)),
    }
}

fn escape(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            '\r' => out.push_str("&#13;"),
            '\n' => out.push_str("&#10;"),
            '\t' => out.push_str("&#9;"),
            c => out.push(c),
        }
    }
}

fn attr(out: &mut String, name: &str, value: &str) {
    out.push(' ');
    out.push_str(name);
    out.push_str("=\"");
    escape(value, out);
    out.push('"');
}

pub fn export_xml(r: &Record, t: &Template) -> Vec<u8> {
    let m = &r.meta;
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<record");
    attr(&mut out, "id", &m.record_id);
    attr(&mut out, "title", &m.title);
    attr(&mut out, "template", &m.template_id);
    attr(&mut out, "template-version", &m.template_version.to_string());
    attr(&mut out, "creation-date", &m.creation_date.to_string());
    attr(&mut out, "last-modified", &m.last_modified.to_string());
    attr(&mut out, "author-name", &m.author_name);
    attr(&mut out, "author-role", &m.author_role);
    attr(&mut out, "status", m.status.as_str());
    attr(&mut out, "shared", if m.shared { "true" } else { "false" });
    if let Some(lang) = &m.language {
        attr(&mut out, "language", lang);
    }
    out.push_str(">\n");
    let mut tables: Vec<(&str, Option<&[ColumnSpec]>)> =
        t.tables.iter().map(|tb| (tb.id.as_str(), Some(tb.columns.as_slice()))).collect();
    for id in r.tables.keys() {
        if t.table(id).is_none() {
            tables.push((id, None));
        }
    }
    for (id, columns) in tables {
        let _ = write!(out, "  <table");
        attr(&mut out, "id", id);
        let rows = r.rows(id);
        if rows.is_empty() {
            out.push_str("/>\n");
            continue;
        }
        out.push_str(">\n");
        write_rows(&mut out, rows, columns, 2);
        out.push_str("  </table>\n");
    }
    if !r.status_history.is_empty() {
        out.push_str("  <status-history>\n");
        for ch in &r.status_history {
            out.push_str("    <status-change");
            attr(&mut out, "actor", &ch.actor);
            attr(&mut out, "at", &ch.at.to_string());
            attr(&mut out, "from", ch.from.as_str());
            attr(&mut out, "to", ch.to.as_str());
            out.push_str("/>\n");
        }
        out.push_str("  </status-history>\n");
    }
    out.push_str("</record>\n");
    out.into_bytes()
}

/// Column ids of a row in template order, followed by any ids the template
/// does not know (sorted).
fn ordered_keys<'a>(row: &'a Row, columns: Option<&'a [ColumnSpec]>) -> Vec<(&'a str, Option<&'a ColumnSpec>)> {
    let mut keys = Vec::new();
    if let Some(columns) = columns {
        for slot in scope_slots(columns) {
            if row.0.contains_key(&slot.spec.id) {
                keys.push((slot.spec.id.as_str(), Some(slot.spec)));
            }
        }
    }
    for k in row.0.keys() {
        if !keys.iter().any(|(id, _)| id == k) {
            keys.push((k.as_str(), None));
        }
    }
    keys
}

fn write_rows(out: &mut String, rows: &[Row], columns: Option<&[ColumnSpec]>, depth: usize) {
    let pad = "  ".repeat(depth);
    for row in rows {
        if row.0.is_empty() {
            let _ = writeln!(out, "{pad}<row/>");
            continue;
        }
        let _ = writeln!(out, "{pad}<row>");
        for (key, spec) in ordered_keys(row, columns) {
            let _ = write!(out, "{pad}  <cell");
            attr(out, "column", key);
            match &row.0[key] {
                Cell::Nested(nested) => {
                    attr(out, "kind", "nested");
                    if nested.is_empty() {
                        out.push_str("/>\n");
                    } else {
                        out.push_str(">\n");
                        let children = spec.and_then(|s| match &s.kind {
                            ColumnKind::Nested { children, .. } => Some(children.as_slice()),
                            _ => None,
                        });
                        write_rows(out, nested, children, depth + 2);
                        let _ = writeln!(out, "{pad}  </cell>");
                    }
                }
                Cell::Value(CellValue::Text { raw }) => {
                    attr(out, "kind", "text");
                    out.push('>');
                    escape(raw, out);
                    out.push_str("</cell>\n");
                }
                Cell::Value(CellValue::TermRef { vocabulary_id, term_id }) => {
                    attr(out, "kind", "term");
                    attr(out, "vocabulary", vocabulary_id);
                    attr(out, "term", term_id);
                    out.push_str("/>\n");
                }
                Cell::Value(CellValue::NewTerm {
                    vocabulary_id,
                    label,
                    language,
                }) => {
                    attr(out, "kind", "new-term");
                    attr(out, "vocabulary", vocabulary_id);
                    attr(out, "label", label);
                    attr(out, "language", language);
                    out.push_str("/>\n");
                }
                Cell::Value(CellValue::Empty) => {
                    attr(out, "kind", "empty");
                    out.push_str("/>\n");
                }
            }
        }
        let _ = writeln!(out, "{pad}</row>");
    }
}

fn malformed(msg: impl std::fmt::Display) -> RecordError {
    RecordError::Malformed(msg.to_string())
}

fn attrs(e: &BytesStart) -> Result<BTreeMap<String, String>, RecordError> {
    let mut map = BTreeMap::new();
    for a in e.attributes() {
        let a = a.map_err(malformed)?;
        let key = String::from_utf8(a.key.as_ref().to_vec()).map_err(malformed)?;
        let value = a.unescape_value().map_err(malformed)?.into_owned();
        map.insert(key, value);
    }
    Ok(map)
}

fn take(map: &mut BTreeMap<String, String>, key: &str) -> Result<String, RecordError> {
    map.remove(key).ok_or_else(|| malformed(format!("missing attribute `{key}`")))
}

fn parse_attr<T: std::str::FromStr>(map: &mut BTreeMap<String, String>, key: &str) -> Result<T, RecordError>
where
    T::Err: std::fmt::Display,
{
    take(map, key)?.parse().map_err(|e| malformed(format!("attribute `{key}`: {e}")))
}

enum Frame {
    Table(String, Vec<Row>),
    Row(Row),
    Nested(String, Vec<Row>),
    Text(String, String),
}

/// Parse a document produced by [`export_xml`] back into a record.
pub fn import_xml(bytes: &[u8]) -> Result<Record, RecordError> {
    let text = std::str::from_utf8(bytes).map_err(malformed)?;
    let mut reader = Reader::from_str(text);
    reader.config_mut().trim_text(false);

    let mut meta: Option<RecordMeta> = None;
    let mut tables: BTreeMap<String, Vec<Row>> = BTreeMap::new();
    let mut history: Vec<StatusChange> = Vec::new();
    let mut stack: Vec<Frame> = Vec::new();

    loop {
        let event = reader.read_event().map_err(malformed)?;
        let (start, empty) = match &event {
            Event::Start(e) => (Some(e.clone()), false),
            Event::Empty(e) => (Some(e.clone()), true),
            _ => (None, false),
        };
        if let Some(e) = start {
            let mut a = attrs(&e)?;
            match e.name().as_ref() {
                b"record" => {
                    meta = Some(RecordMeta {
                        record_id: take(&mut a, "id")?,
                        title: take(&mut a, "title")?,
                        template_id: take(&mut a, "template")?,
                        template_version: parse_attr(&mut a, "template-version")?,
                        creation_date: parse_attr(&mut a, "creation-date")?,
                        last_modified: parse_attr(&mut a, "last-modified")?,
                        author_name: take(&mut a, "author-name")?,
                        author_role: take(&mut a, "author-role")?,
                        status: parse_attr(&mut a, "status")?,
                        shared: parse_attr(&mut a, "shared")?,
                        language: a.remove("language"),
                    });
                }
                b"table" => {
                    let id = take(&mut a, "id")?;
                    if empty {
                        tables.insert(id, Vec::new());
                    } else {
                        stack.push(Frame::Table(id, Vec::new()));
                    }
                }
                b"row" => {
                    if empty {
                        push_row(&mut stack, Row::default())?;
                    } else {
                        stack.push(Frame::Row(Row::default()));
                    }
                }
                b"cell" => {
                    let column = take(&mut a, "column")?;
                    let kind = take(&mut a, "kind")?;
                    let value = match kind.as_str() {
                        "text" if empty => Some(CellValue::text("")),
                        "text" => {
                            stack.push(Frame::Text(column.clone(), String::new()));
                            None
                        }
                        "nested" if empty => {
                            insert_cell(&mut stack, column.clone(), Cell::Nested(Vec::new()))?;
                            None
                        }
                        "nested" => {
                            stack.push(Frame::Nested(column.clone(), Vec::new()));
                            None
                        }
                        "term" => Some(CellValue::TermRef {
                            vocabulary_id: take(&mut a, "vocabulary")?,
                            term_id: take(&mut a, "term")?,
                        }),
                        "new-term" => Some(CellValue::NewTerm {
                            vocabulary_id: take(&mut a, "vocabulary")?,
                            label: take(&mut a, "label")?,
                            language: take(&mut a, "language")?,
                        }),
                        "empty" => Some(CellValue::Empty),
                        other => return Err(malformed(format!("unknown cell kind `{other}`"))),
                    };
                    if let Some(v) = value {
                        insert_cell(&mut stack, column, Cell::Value(v))?;
                        if !empty {
                            // Non-text cells carry no content; consume up to the end tag.
                            reader.read_to_end(e.name()).map_err(malformed)?;
                        }
                    }
                }
                b"status-history" => {}
                b"status-change" => history.push(StatusChange {
                    actor: take(&mut a, "actor")?,
                    at: parse_attr(&mut a, "at")?,
                    from: parse_attr(&mut a, "from")?,
                    to: parse_attr(&mut a, "to")?,
                }),
                other => {
                    return Err(malformed(format!(
                        "unexpected element `{}`",
                        String::from_utf8_lossy(other)
                    )))
                }
            }
            continue;
        }
        match event {
            Event::Text(t) => {
                if let Some(Frame::Text(_, buf)) = stack.last_mut() {
                    buf.push_str(&t.unescape().map_err(malformed)?);
                }
            }
            Event::End(e) => match e.name().as_ref() {
                b"table" => match stack.pop() {
                    Some(Frame::Table(id, rows)) => {
                        tables.insert(id, rows);
                    }
                    _ => return Err(malformed("unbalanced </table>")),
                },
                b"row" => match stack.pop() {
                    Some(Frame::Row(row)) => push_row(&mut stack, row)?,
                    _ => return Err(malformed("unbalanced </row>")),
                },
                b"cell" => match stack.pop() {
                    Some(Frame::Text(col, raw)) => insert_cell(&mut stack, col, Cell::Value(CellValue::Text { raw }))?,
                    Some(Frame::Nested(col, rows)) => insert_cell(&mut stack, col, Cell::Nested(rows))?,
                    _ => return Err(malformed("unbalanced </cell>")),
                },
                _ => {}
            },
            Event::Eof => break,
            _ => {}
        }
    }
    let meta = meta.ok_or_else(|| malformed("missing <record> element"))?;
    Ok(Record {
        meta,
        tables,
        status_history: history,
    })
}

fn push_row(stack: &mut [Frame], row: Row) -> Result<(), RecordError> {
    match stack.last_mut() {
        Some(Frame::Table(_, rows)) | Some(Frame::Nested(_, rows)) => {
            rows.push(row);
            Ok(())
        }
        _ => Err(malformed("<row> outside a table or nested cell")),
    }
}

fn insert_cell(stack: &mut [Frame], column: String, cell: Cell) -> Result<(), RecordError> {
    match stack.last_mut() {
        Some(Frame::Row(row)) => {
            row.0.insert(column, cell);
            Ok(())
        }
        _ => Err(malformed("<cell> outside a row")),
    }
}

pub fn export_csv(r: &Record, t: &Template) -> CsvBundle {
    let mut bundle = CsvBundle::default();
    for table in &t.tables {
        let rows: Vec<(String, Option<String>, &Row)> = r
            .rows(&table.id)
            .iter()
            .enumerate()
            .map(|(i, row)| ((i + 1).to_string(), None, row))
            .collect();
        write_csv_table(&mut bundle, &r.meta.record_id, &table.id, &table.columns, rows, false);
    }
    bundle
}

fn write_csv_table(
    bundle: &mut CsvBundle,
    record_id: &str,
    name: &str,
    columns: &[ColumnSpec],
    rows: Vec<(String, Option<String>, &Row)>,
    nested: bool,
) {
    let slots = scope_slots(columns);
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    let mut header = vec!["row".to_string()];
    if nested {
        header.push("parent_row".into());
    }
    for slot in &slots {
        if matches!(slot.spec.kind, ColumnKind::Plain { .. }) {
            header.push(slot.spec.id.clone());
        }
    }
    w.write_record(&header).expect("in-memory csv write");
    for (number, parent, row) in &rows {
        let mut fields = vec![number.clone()];
        if nested {
            fields.push(parent.clone().unwrap_or_default());
        }
        for slot in &slots {
            if matches!(slot.spec.kind, ColumnKind::Plain { .. }) {
                fields.push(row.value(&slot.spec.id).display_text().to_string());
            }
        }
        w.write_record(&fields).expect("in-memory csv write");
    }
    bundle.files.insert(
        format!("{record_id}/{name}.csv"),
        w.into_inner().expect("in-memory csv flush"),
    );
    for slot in &slots {
        if let ColumnKind::Nested { children, .. } = &slot.spec.kind {
            let child_rows: Vec<(String, Option<String>, &Row)> = rows
                .iter()
                .flat_map(|(number, _, row)| {
                    row.nested(&slot.spec.id)
                        .iter()
                        .enumerate()
                        .map(move |(j, child)| (format!("{number}.{}", j + 1), Some(number.clone()), child))
                })
                .collect();
            let child_name = format!("{name}.{}", slot.spec.id);
            write_csv_table(bundle, record_id, &child_name, children, child_rows, true);
        }
    }
}

/// Status strings accepted in XML attributes.
impl std::fmt::Display for RecordStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
