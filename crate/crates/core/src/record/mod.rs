//! Transcribed records.
//!
//! A record pins one `(template id, version)` and stores, per table, an
//! ordered list of rows. A row maps column ids of its table scope to a cell:
//! either a value or, for nested-table columns, a list of nested rows.

mod cell;
pub mod export;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::to_canonical_string;
use crate::template::{
    scope_slots, ColumnKind, ColumnPath, ColumnSpec, Multiplicity, Template, TemplateError, TemplateSet,
};
use crate::Timestamp;

pub use cell::{check_value, literal_is_valid, CellValue, UncertaintyFlags};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecordError {
    #[error("unknown template {id} v{version}")]
    UnknownTemplate { id: String, version: u32 },
    #[error("record pins template {expected} but {found} was supplied")]
    TemplateMismatch { expected: String, found: String },
    #[error("path not found at `{0}`")]
    PathNotFound(String),
    #[error("row {rows:?} out of bounds for `{path}`")]
    RowOutOfBounds { path: String, rows: Vec<usize> },
    #[error("type mismatch: expected {expected}, found {found}")]
    TypeMismatch { expected: String, found: String },
    #[error("vocabulary `{0}` is predefined and accepts no new terms")]
    NewTermOnPredefinedVocabulary(String),
    #[error("`{0}` is not a nested-table column")]
    NotNestedColumn(String),
    #[error("single-row table `{0}` already has a row")]
    SingleRowTableFull(String),
    #[error("record does not conform to its template: {0}")]
    Nonconforming(String),
    #[error("malformed record document: {0}")]
    Malformed(String),
}

impl From<TemplateError> for RecordError {
    fn from(e: TemplateError) -> Self {
        match e {
            TemplateError::PathNotFound(p) => RecordError::PathNotFound(p),
            other => RecordError::Malformed(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RecordStatus {
    UnderProcessing,
    ReadyForReview,
    ReviewedReadyForPublishing,
    Published,
}

impl RecordStatus {
    pub const ALL: [RecordStatus; 4] = [
        RecordStatus::UnderProcessing,
        RecordStatus::ReadyForReview,
        RecordStatus::ReviewedReadyForPublishing,
        RecordStatus::Published,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RecordStatus::UnderProcessing => "UnderProcessing",
            RecordStatus::ReadyForReview => "ReadyForReview",
            RecordStatus::ReviewedReadyForPublishing => "ReviewedReadyForPublishing",
            RecordStatus::Published => "Published",
        }
    }
}

impl std::str::FromStr for RecordStatus {
    type Err = RecordError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RecordStatus::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| RecordError::Malformed(format!("unknown status `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub record_id: String,
    pub title: String,
    pub template_id: String,
    pub template_version: u32,
    pub creation_date: Timestamp,
    pub last_modified: Timestamp,
    pub author_name: String,
    pub author_role: String,
    pub status: RecordStatus,
    /// Shared records are visible to curation.
    #[serde(default)]
    pub shared: bool,
    /// Language of the transcription, when known (BCP 47 tag).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusChange {
    pub actor: String,
    pub at: Timestamp,
    pub from: RecordStatus,
    pub to: RecordStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Row(pub BTreeMap<String, Cell>);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Nested(Vec<Row>),
    Value(CellValue),
}

static EMPTY: CellValue = CellValue::Empty;

impl Row {
    /// A row for `columns` with every plain cell empty and every nested
    /// table without rows.
    pub fn empty_for(columns: &[ColumnSpec]) -> Row {
        let cells = scope_slots(columns)
            .into_iter()
            .map(|slot| {
                let cell = match slot.spec.kind {
                    ColumnKind::Nested { .. } => Cell::Nested(Vec::new()),
                    _ => Cell::Value(CellValue::Empty),
                };
                (slot.spec.id.clone(), cell)
            })
            .collect();
        Row(cells)
    }

    pub fn value(&self, column: &str) -> &CellValue {
        match self.0.get(column) {
            Some(Cell::Value(v)) => v,
            _ => &EMPTY,
        }
    }

    pub fn nested(&self, column: &str) -> &[Row] {
        match self.0.get(column) {
            Some(Cell::Nested(rows)) => rows,
            _ => &[],
        }
    }
}

/// Fields supplied by the user when creating a record.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordDraft {
    pub record_id: String,
    pub title: String,
    pub author_name: String,
    pub author_role: String,
    #[serde(default)]
    pub shared: bool,
    #[serde(default)]
    pub language: Option<String>,
}

/// Position of one cell: a column path plus one row index per table level
/// (root row, then one per nested table crossed).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellAddress {
    pub path: ColumnPath,
    pub rows: Vec<usize>,
}

impl CellAddress {
    pub fn new(path: ColumnPath, rows: Vec<usize>) -> Self {
        CellAddress { path, rows }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub meta: RecordMeta,
    pub tables: BTreeMap<String, Vec<Row>>,
    #[serde(default)]
    pub status_history: Vec<StatusChange>,
}

/// A cell visited by [`walk_cells`].
#[derive(Debug, Clone)]
pub struct CellRef<'a> {
    pub path: ColumnPath,
    pub rows: Vec<usize>,
    pub spec: &'a ColumnSpec,
    pub value: &'a CellValue,
}

/// A row visited by [`walk_rows`]: `scope` is the path of the table holding
/// the row (a root table id or a nested-table column path).
#[derive(Debug, Clone)]
pub struct RowRef<'a> {
    pub scope: ColumnPath,
    pub columns: &'a [ColumnSpec],
    pub rows: Vec<usize>,
    pub row: &'a Row,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UncertainCell {
    pub path: ColumnPath,
    pub rows: Vec<usize>,
    pub flags: UncertaintyFlags,
}

pub fn create_record(
    templates: &TemplateSet,
    template_id: &str,
    template_version: u32,
    draft: RecordDraft,
    now: Timestamp,
) -> Result<Record, RecordError> {
    let t = templates
        .get(template_id, template_version)
        .ok_or_else(|| RecordError::UnknownTemplate {
            id: template_id.into(),
            version: template_version,
        })?;
    Ok(Record::new(t, draft, now))
}

pub fn serialize_record(r: &Record) -> String {
    to_canonical_string(r)
}

pub fn parse_record(doc: &str) -> Result<Record, RecordError> {
    serde_json::from_str(doc).map_err(|e| RecordError::Malformed(e.to_string()))
}

impl Record {
    pub fn new(t: &Template, draft: RecordDraft, now: Timestamp) -> Record {
        Record {
            meta: RecordMeta {
                record_id: draft.record_id,
                title: draft.title,
                template_id: t.id.clone(),
                template_version: t.version,
                creation_date: now,
                last_modified: now,
                author_name: draft.author_name,
                author_role: draft.author_role,
                status: RecordStatus::UnderProcessing,
                shared: draft.shared,
                language: draft.language,
            },
            tables: t.tables.iter().map(|tb| (tb.id.clone(), Vec::new())).collect(),
            status_history: Vec::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.meta.record_id
    }

    pub fn rows(&self, table: &str) -> &[Row] {
        self.tables.get(table).map(Vec::as_slice).unwrap_or(&[])
    }

    fn touch(&mut self, now: Timestamp) {
        self.meta.last_modified = self.meta.last_modified.advance(now);
    }

    fn check_template(&self, t: &Template) -> Result<(), RecordError> {
        if t.id != self.meta.template_id || t.version != self.meta.template_version {
            return Err(RecordError::TemplateMismatch {
                expected: format!("{} v{}", self.meta.template_id, self.meta.template_version),
                found: format!("{} v{}", t.id, t.version),
            });
        }
        Ok(())
    }

    pub fn set_shared(&mut self, shared: bool, now: Timestamp) {
        self.meta.shared = shared;
        self.touch(now);
    }

    /// Append an empty row to a root table and return its index.
    pub fn append_row(&mut self, t: &Template, table: &str, now: Timestamp) -> Result<usize, RecordError> {
        self.check_template(t)?;
        let spec = t
            .table(table)
            .ok_or_else(|| RecordError::PathNotFound(table.to_string()))?;
        let rows = self.tables.entry(table.to_string()).or_default();
        if spec.multiplicity == Multiplicity::SingleRow && !rows.is_empty() {
            return Err(RecordError::SingleRowTableFull(table.to_string()));
        }
        rows.push(Row::empty_for(&spec.columns));
        let index = rows.len() - 1;
        self.touch(now);
        Ok(index)
    }

    /// Append an empty nested row under `parent_rows` (one index per table
    /// level down to the row owning the nested cell) and return its index.
    pub fn append_nested_row(
        &mut self,
        t: &Template,
        path: &ColumnPath,
        parent_rows: &[usize],
        now: Timestamp,
    ) -> Result<usize, RecordError> {
        self.check_template(t)?;
        let resolved = t.resolve(path)?;
        let children = match &resolved.spec.kind {
            ColumnKind::Nested { children, .. } => children,
            _ => return Err(RecordError::NotNestedColumn(path.to_string())),
        };
        let row = self.row_mut(path, &resolved.nested_hops, parent_rows)?;
        let slot = row
            .0
            .entry(resolved.spec.id.clone())
            .or_insert_with(|| Cell::Nested(Vec::new()));
        if !matches!(slot, Cell::Nested(_)) {
            *slot = Cell::Nested(Vec::new());
        }
        let Cell::Nested(list) = slot else { unreachable!() };
        list.push(Row::empty_for(children));
        let index = list.len() - 1;
        self.touch(now);
        Ok(index)
    }

    pub fn write_cell(
        &mut self,
        t: &Template,
        address: &CellAddress,
        value: CellValue,
        now: Timestamp,
    ) -> Result<(), RecordError> {
        self.check_template(t)?;
        let resolved = t.resolve(&address.path)?;
        let vt = resolved.spec.value_type().ok_or_else(|| RecordError::TypeMismatch {
            expected: "a plain column".into(),
            found: address.path.to_string(),
        })?;
        check_value(vt, &value)?;
        let row = self.row_mut(&address.path, &resolved.nested_hops, &address.rows)?;
        row.0.insert(resolved.spec.id.clone(), Cell::Value(value));
        self.touch(now);
        Ok(())
    }

    pub fn cell(&self, t: &Template, address: &CellAddress) -> Result<&CellValue, RecordError> {
        let resolved = t.resolve(&address.path)?;
        let out_of_bounds = || RecordError::RowOutOfBounds {
            path: address.path.to_string(),
            rows: address.rows.clone(),
        };
        if address.rows.len() != resolved.nested_hops.len() + 1 {
            return Err(out_of_bounds());
        }
        let mut row = self.rows(&address.path.table).get(address.rows[0]).ok_or_else(out_of_bounds)?;
        for (hop, idx) in resolved.nested_hops.iter().zip(&address.rows[1..]) {
            row = row.nested(hop).get(*idx).ok_or_else(out_of_bounds)?;
        }
        Ok(row.value(&resolved.spec.id))
    }

    fn row_mut(&mut self, path: &ColumnPath, hops: &[&str], rows: &[usize]) -> Result<&mut Row, RecordError> {
        let out_of_bounds = || RecordError::RowOutOfBounds {
            path: path.to_string(),
            rows: rows.to_vec(),
        };
        if rows.len() != hops.len() + 1 {
            return Err(out_of_bounds());
        }
        let mut row = self
            .tables
            .get_mut(&path.table)
            .and_then(|r| r.get_mut(rows[0]))
            .ok_or_else(out_of_bounds)?;
        for (hop, idx) in hops.iter().zip(&rows[1..]) {
            row = match row.0.get_mut(*hop) {
                Some(Cell::Nested(list)) => list.get_mut(*idx).ok_or_else(out_of_bounds)?,
                _ => return Err(out_of_bounds()),
            };
        }
        Ok(row)
    }

    /// Any-to-any status transition; always recorded in the status history.
    pub fn transition_status(&mut self, to: RecordStatus, actor: &str, now: Timestamp) {
        self.touch(now);
        self.status_history.push(StatusChange {
            actor: actor.to_string(),
            at: self.meta.last_modified,
            from: self.meta.status,
            to,
        });
        self.meta.status = to;
    }

    /// Check every row against the pinned template version.
    pub fn check_conformance(&self, t: &Template) -> Result<(), RecordError> {
        self.check_template(t)?;
        for table in &t.tables {
            let rows = self.rows(&table.id);
            if table.multiplicity == Multiplicity::SingleRow && rows.len() > 1 {
                return Err(RecordError::Nonconforming(format!(
                    "single-row table `{}` has {} rows",
                    table.id,
                    rows.len()
                )));
            }
            check_rows(rows, &table.columns, &ColumnPath::new(&table.id, &[]))?;
        }
        if let Some(extra) = self.tables.keys().find(|k| t.table(k).is_none()) {
            return Err(RecordError::Nonconforming(format!("unknown table `{extra}`")));
        }
        Ok(())
    }
}

fn check_rows(rows: &[Row], columns: &[ColumnSpec], scope: &ColumnPath) -> Result<(), RecordError> {
    let slots = scope_slots(columns);
    for row in rows {
        for (key, cell) in &row.0 {
            let slot = slots
                .iter()
                .find(|s| &s.spec.id == key)
                .ok_or_else(|| RecordError::Nonconforming(format!("unknown column `{scope}/{key}`")))?;
            match (&slot.spec.kind, cell) {
                (ColumnKind::Plain { value_type }, Cell::Value(v)) => check_value(value_type, v)?,
                (ColumnKind::Nested { children, .. }, Cell::Nested(nested)) => {
                    check_rows(nested, children, &scope.child(key))?
                }
                _ => {
                    return Err(RecordError::Nonconforming(format!(
                        "cell shape mismatch at `{scope}/{key}`"
                    )))
                }
            }
        }
    }
    Ok(())
}

/// Visit every row of every table, depth first, in document order.
pub fn walk_rows<'a>(t: &'a Template, r: &'a Record, mut f: impl FnMut(RowRef<'a>)) {
    fn walk<'a>(
        rows: &'a [Row],
        columns: &'a [ColumnSpec],
        scope: ColumnPath,
        prefix: &mut Vec<usize>,
        f: &mut dyn FnMut(RowRef<'a>),
    ) {
        let slots = scope_slots(columns);
        for (i, row) in rows.iter().enumerate() {
            prefix.push(i);
            f(RowRef {
                scope: scope.clone(),
                columns,
                rows: prefix.clone(),
                row,
            });
            for slot in &slots {
                if let ColumnKind::Nested { children, .. } = &slot.spec.kind {
                    let mut nested_scope = scope.clone();
                    nested_scope.columns.extend(slot.groups.iter().map(|g| g.to_string()));
                    nested_scope.columns.push(slot.spec.id.clone());
                    walk(row.nested(&slot.spec.id), children, nested_scope, prefix, f);
                }
            }
            prefix.pop();
        }
    }
    for table in &t.tables {
        walk(
            r.rows(&table.id),
            &table.columns,
            ColumnPath::new(&table.id, &[]),
            &mut Vec::new(),
            &mut f,
        );
    }
}

/// Visit every plain cell in document order: tables in template order, rows
/// in order, columns in template order with nested rows visited at the
/// position of their nested column.
pub fn walk_cells<'a>(t: &'a Template, r: &'a Record, mut f: impl FnMut(CellRef<'a>)) {
    fn walk<'a>(
        rows: &'a [Row],
        columns: &'a [ColumnSpec],
        scope: &ColumnPath,
        prefix: &mut Vec<usize>,
        f: &mut dyn FnMut(CellRef<'a>),
    ) {
        let slots = scope_slots(columns);
        for (i, row) in rows.iter().enumerate() {
            prefix.push(i);
            for slot in &slots {
                let mut path = scope.clone();
                path.columns.extend(slot.groups.iter().map(|g| g.to_string()));
                path.columns.push(slot.spec.id.clone());
                match &slot.spec.kind {
                    ColumnKind::Nested { children, .. } => {
                        walk(row.nested(&slot.spec.id), children, &path, prefix, f)
                    }
                    _ => f(CellRef {
                        path,
                        rows: prefix.clone(),
                        spec: slot.spec,
                        value: row.value(&slot.spec.id),
                    }),
                }
            }
            prefix.pop();
        }
    }
    for table in &t.tables {
        walk(
            r.rows(&table.id),
            &table.columns,
            &ColumnPath::new(&table.id, &[]),
            &mut Vec::new(),
            &mut f,
        );
    }
}

/// Cells carrying an uncertainty marker, in document order.
pub fn scan_uncertain_cells(t: &Template, r: &Record) -> Vec<UncertainCell> {
    let mut out = Vec::new();
    walk_cells(t, r, |c| {
        let flags = c.value.uncertainty();
        if flags.any() {
            out.push(UncertainCell {
                path: c.path,
                rows: c.rows,
                flags,
            });
        }
    });
    out
}

#[cfg(test)]
mod tests;
