//! Template structures: the schema of one archival source type.
//!
//! A template is an ordered list of tables, each an ordered list of columns.
//! Columns come in three variants: colspan (a value-less header grouping
//! child columns), plain (holds one typed value per row) and nested (holds a
//! whole sub-table per row). Colspan grouping never affects storage: within a
//! table scope every column id is unique, so a row is a flat map from column
//! id to cell even when the header groups columns visually.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::canonical::to_canonical_string;

pub const RECORD_INFORMATION_TITLE: &str = "FastCat Record Information";
pub const SOURCE_IDENTITY_TITLE: &str = "Source Identity";

/// Tables along any path: root, full-nested, plain-columns.
pub const MAX_NESTING_DEPTH: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemplateError {
    #[error("malformed template document: {0}")]
    MalformedDocument(String),
    #[error("template invariants violated: {}", format_violations(.0))]
    InvariantViolation(Vec<Violation>),
    #[error("path not found at `{0}`")]
    PathNotFound(String),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub id: String,
    pub title: String,
    #[serde(default = "default_version")]
    pub version: u32,
    pub tables: Vec<TableSpec>,
    #[serde(default)]
    pub entity_types: BTreeSet<String>,
    #[serde(default)]
    pub vocabulary_refs: BTreeSet<String>,
}

fn default_version() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Multiplicity {
    SingleRow,
    #[default]
    MultiRow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSpec {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub multiplicity: Multiplicity,
    pub columns: Vec<ColumnSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub id: String,
    pub title: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ColumnKind {
    Colspan { children: Vec<ColumnSpec> },
    Plain { value_type: ValueType },
    Nested { kind: NestedKind, children: Vec<ColumnSpec> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NestedKind {
    PlainColumns,
    FullNested,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ValueType {
    Entity {
        entity_type: String,
        property: String,
    },
    VocabularyTerm {
        vocabulary_id: String,
        mode: VocabularyMode,
    },
    Literal {
        kind: LiteralKind,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocabularyMode {
    Predefined,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiteralKind {
    String,
    Integer,
    Decimal,
    Date,
    Boolean,
}

impl ColumnSpec {
    pub fn plain(id: &str, title: &str, value_type: ValueType) -> Self {
        ColumnSpec {
            id: id.into(),
            title: title.into(),
            kind: ColumnKind::Plain { value_type },
        }
    }

    pub fn colspan(id: &str, title: &str, children: Vec<ColumnSpec>) -> Self {
        ColumnSpec {
            id: id.into(),
            title: title.into(),
            kind: ColumnKind::Colspan { children },
        }
    }

    pub fn nested(id: &str, title: &str, kind: NestedKind, children: Vec<ColumnSpec>) -> Self {
        ColumnSpec {
            id: id.into(),
            title: title.into(),
            kind: ColumnKind::Nested { kind, children },
        }
    }

    pub fn value_type(&self) -> Option<&ValueType> {
        match &self.kind {
            ColumnKind::Plain { value_type } => Some(value_type),
            _ => None,
        }
    }

    pub fn is_colspan(&self) -> bool {
        matches!(self.kind, ColumnKind::Colspan { .. })
    }

    fn children(&self) -> &[ColumnSpec] {
        match &self.kind {
            ColumnKind::Colspan { children } | ColumnKind::Nested { children, .. } => children,
            ColumnKind::Plain { .. } => &[],
        }
    }
}

impl ValueType {
    pub fn string() -> Self {
        ValueType::Literal {
            kind: LiteralKind::String,
        }
    }

    pub fn literal(kind: LiteralKind) -> Self {
        ValueType::Literal { kind }
    }

    pub fn entity(entity_type: &str, property: &str) -> Self {
        ValueType::Entity {
            entity_type: entity_type.into(),
            property: property.into(),
        }
    }

    pub fn vocabulary(vocabulary_id: &str, mode: VocabularyMode) -> Self {
        ValueType::VocabularyTerm {
            vocabulary_id: vocabulary_id.into(),
            mode,
        }
    }
}

/// Address of a column: root table id followed by column ids, descending
/// through colspan groups and nested-table columns. Written `table/col/col`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ColumnPath {
    pub table: String,
    pub columns: Vec<String>,
}

impl ColumnPath {
    pub fn new(table: &str, columns: &[&str]) -> Self {
        ColumnPath {
            table: table.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
        }
    }

    pub fn child(&self, column: &str) -> Self {
        let mut p = self.clone();
        p.columns.push(column.into());
        p
    }

    pub fn parent(&self) -> Option<ColumnPath> {
        let mut p = self.clone();
        p.columns.pop()?;
        Some(p)
    }

    pub fn leaf(&self) -> Option<&str> {
        self.columns.last().map(String::as_str)
    }

    fn display_prefix(&self, steps: usize) -> String {
        let mut s = self.table.clone();
        for c in self.columns.iter().take(steps) {
            s.push('/');
            s.push_str(c);
        }
        s
    }
}

impl fmt::Display for ColumnPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display_prefix(self.columns.len()))
    }
}

impl FromStr for ColumnPath {
    type Err = TemplateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split('/');
        let table = parts.next().unwrap_or_default();
        if table.is_empty() {
            return Err(TemplateError::PathNotFound(s.to_string()));
        }
        let columns: Vec<String> = parts.map(str::to_string).collect();
        if columns.iter().any(String::is_empty) {
            return Err(TemplateError::PathNotFound(s.to_string()));
        }
        Ok(ColumnPath {
            table: table.to_string(),
            columns,
        })
    }
}

impl Serialize for ColumnPath {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ColumnPath {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Template id, table id or column path where the problem sits.
    pub locus: String,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "detail", rename_all = "snake_case")]
pub enum ViolationKind {
    TablesEmpty,
    InvalidId(String),
    ZeroVersion,
    MissingMetadataTable(String),
    DuplicateTableId,
    DuplicateColumnId,
    NoValueColumns,
    EmptyColspan,
    EmptyNestedTable,
    NonPlainInPlainColumns,
    MaxDepthExceeded,
    UndeclaredEntityType(String),
    UndeclaredVocabulary(String),
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::TablesEmpty => write!(f, "tables empty"),
            ViolationKind::InvalidId(id) => write!(f, "invalid id `{id}`"),
            ViolationKind::ZeroVersion => write!(f, "version must be at least 1"),
            ViolationKind::MissingMetadataTable(t) => write!(f, "expected metadata table `{t}`"),
            ViolationKind::DuplicateTableId => write!(f, "duplicate table id"),
            ViolationKind::DuplicateColumnId => write!(f, "duplicate column id in table scope"),
            ViolationKind::NoValueColumns => write!(f, "table has no plain or nested column"),
            ViolationKind::EmptyColspan => write!(f, "colspan without children"),
            ViolationKind::EmptyNestedTable => write!(f, "nested table without columns"),
            ViolationKind::NonPlainInPlainColumns => {
                write!(f, "plain-columns nested table holds a non-plain column")
            }
            ViolationKind::MaxDepthExceeded => write!(f, "max depth exceeded"),
            ViolationKind::UndeclaredEntityType(t) => write!(f, "entity type `{t}` not declared"),
            ViolationKind::UndeclaredVocabulary(v) => write!(f, "vocabulary `{v}` not declared"),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.locus, self.kind)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, locus: impl Into<String>, kind: ViolationKind) {
        self.violations.push(Violation {
            locus: locus.into(),
            kind,
        });
    }
}

/// A column as seen from its table scope: colspan groups are flattened
/// away, leaving the plain and nested columns a row actually stores.
#[derive(Debug, Clone)]
pub struct Slot<'a> {
    pub spec: &'a ColumnSpec,
    /// Colspan ancestors within the scope, outermost first.
    pub groups: Vec<&'a str>,
}

/// Result of resolving a [`ColumnPath`].
#[derive(Debug, Clone)]
pub struct Resolved<'a> {
    pub table: &'a TableSpec,
    pub spec: &'a ColumnSpec,
    /// Ids of the nested-table columns crossed before reaching `spec`.
    pub nested_hops: Vec<&'a str>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && !id.chars().any(|c| c == '/' || c.is_whitespace() || c.is_control())
}

impl Template {
    pub fn table(&self, id: &str) -> Option<&TableSpec> {
        self.tables.iter().find(|t| t.id == id)
    }

    pub fn validate(&self) -> ValidationReport {
        validate_template(self)
    }

    pub fn resolve(&self, path: &ColumnPath) -> Result<Resolved<'_>, TemplateError> {
        let table = self
            .table(&path.table)
            .ok_or_else(|| TemplateError::PathNotFound(path.table.clone()))?;
        if path.columns.is_empty() {
            return Err(TemplateError::PathNotFound(path.to_string()));
        }
        let mut siblings: &[ColumnSpec] = &table.columns;
        let mut nested_hops = Vec::new();
        let mut current: Option<&ColumnSpec> = None;
        for (step, id) in path.columns.iter().enumerate() {
            if let Some(prev) = current {
                match &prev.kind {
                    ColumnKind::Plain { .. } => {
                        return Err(TemplateError::PathNotFound(path.display_prefix(step + 1)))
                    }
                    ColumnKind::Nested { .. } => nested_hops.push(prev.id.as_str()),
                    ColumnKind::Colspan { .. } => {}
                }
                siblings = prev.children();
            }
            let found = siblings
                .iter()
                .find(|c| &c.id == id)
                .ok_or_else(|| TemplateError::PathNotFound(path.display_prefix(step + 1)))?;
            current = Some(found);
        }
        Ok(Resolved {
            table,
            spec: current.expect("non-empty path"),
            nested_hops,
        })
    }
}

/// Plain and nested columns of one table scope, in document order, with
/// their colspan ancestry.
pub fn scope_slots(columns: &[ColumnSpec]) -> Vec<Slot<'_>> {
    fn walk<'a>(columns: &'a [ColumnSpec], groups: &mut Vec<&'a str>, out: &mut Vec<Slot<'a>>) {
        for c in columns {
            match &c.kind {
                ColumnKind::Colspan { children } => {
                    groups.push(&c.id);
                    walk(children, groups, out);
                    groups.pop();
                }
                _ => out.push(Slot {
                    spec: c,
                    groups: groups.clone(),
                }),
            }
        }
    }
    let mut out = Vec::new();
    walk(columns, &mut Vec::new(), &mut out);
    out
}

pub fn parse_template(doc: &str) -> Result<Template, TemplateError> {
    let template: Template =
        serde_json::from_str(doc).map_err(|e| TemplateError::MalformedDocument(e.to_string()))?;
    let report = validate_template(&template);
    if report.is_empty() {
        Ok(template)
    } else {
        Err(TemplateError::InvariantViolation(report.violations))
    }
}

pub fn serialize_template(t: &Template) -> String {
    to_canonical_string(t)
}

pub fn resolve_column<'a>(t: &'a Template, path: &ColumnPath) -> Result<&'a ColumnSpec, TemplateError> {
    t.resolve(path).map(|r| r.spec)
}

/// One entry per plain column, in document order, descending into nested
/// tables.
pub fn column_inventory(t: &Template) -> Vec<(ColumnPath, ValueType)> {
    fn walk(columns: &[ColumnSpec], prefix: &ColumnPath, out: &mut Vec<(ColumnPath, ValueType)>) {
        for c in columns {
            let path = prefix.child(&c.id);
            match &c.kind {
                ColumnKind::Plain { value_type } => out.push((path, value_type.clone())),
                ColumnKind::Colspan { children } | ColumnKind::Nested { children, .. } => {
                    walk(children, &path, out)
                }
            }
        }
    }
    let mut out = Vec::new();
    for table in &t.tables {
        walk(&table.columns, &ColumnPath::new(&table.id, &[]), &mut out);
    }
    out
}

pub fn validate_template(t: &Template) -> ValidationReport {
    let mut report = ValidationReport::default();
    if !valid_id(&t.id) {
        report.push(&t.id, ViolationKind::InvalidId(t.id.clone()));
    }
    if t.version == 0 {
        report.push(&t.id, ViolationKind::ZeroVersion);
    }
    if t.tables.is_empty() {
        report.push(&t.id, ViolationKind::TablesEmpty);
        return report;
    }
    for (i, expected) in [RECORD_INFORMATION_TITLE, SOURCE_IDENTITY_TITLE].iter().enumerate() {
        if t.tables.get(i).map(|tb| tb.title.as_str()) != Some(*expected) {
            report.push(&t.id, ViolationKind::MissingMetadataTable(expected.to_string()));
        }
    }
    let mut table_ids = HashSet::new();
    for table in &t.tables {
        if !valid_id(&table.id) {
            report.push(&table.id, ViolationKind::InvalidId(table.id.clone()));
        }
        if !table_ids.insert(table.id.as_str()) {
            report.push(&table.id, ViolationKind::DuplicateTableId);
        }
        let root = ColumnPath::new(&table.id, &[]);
        check_scope(t, &table.columns, &root, 1, false, &mut report);
    }
    report
}

fn check_scope(
    t: &Template,
    columns: &[ColumnSpec],
    scope_path: &ColumnPath,
    depth: usize,
    plain_only: bool,
    report: &mut ValidationReport,
) {
    if columns.is_empty() {
        let kind = if depth == 1 {
            ViolationKind::NoValueColumns
        } else {
            ViolationKind::EmptyNestedTable
        };
        report.push(scope_path.to_string(), kind);
        return;
    }
    let mut ids = HashSet::new();
    let mut value_columns = 0usize;
    check_columns(
        t,
        columns,
        scope_path,
        depth,
        plain_only,
        &mut ids,
        &mut value_columns,
        report,
    );
    if value_columns == 0 {
        report.push(scope_path.to_string(), ViolationKind::NoValueColumns);
    }
}

#[allow(clippy::too_many_arguments)]
fn check_columns<'a>(
    t: &Template,
    columns: &'a [ColumnSpec],
    prefix: &ColumnPath,
    depth: usize,
    plain_only: bool,
    ids: &mut HashSet<&'a str>,
    value_columns: &mut usize,
    report: &mut ValidationReport,
) {
    for c in columns {
        let path = prefix.child(&c.id);
        if !valid_id(&c.id) {
            report.push(path.to_string(), ViolationKind::InvalidId(c.id.clone()));
        }
        if !ids.insert(c.id.as_str()) {
            report.push(path.to_string(), ViolationKind::DuplicateColumnId);
        }
        if plain_only && !matches!(c.kind, ColumnKind::Plain { .. }) {
            report.push(path.to_string(), ViolationKind::NonPlainInPlainColumns);
            continue;
        }
        match &c.kind {
            ColumnKind::Colspan { children } => {
                if children.is_empty() {
                    report.push(path.to_string(), ViolationKind::EmptyColspan);
                }
                check_columns(t, children, &path, depth, plain_only, ids, value_columns, report);
            }
            ColumnKind::Plain { value_type } => {
                *value_columns += 1;
                match value_type {
                    ValueType::Entity { entity_type, .. } if !t.entity_types.contains(entity_type) => {
                        report.push(
                            path.to_string(),
                            ViolationKind::UndeclaredEntityType(entity_type.clone()),
                        );
                    }
                    ValueType::VocabularyTerm { vocabulary_id, .. }
                        if !t.vocabulary_refs.contains(vocabulary_id) =>
                    {
                        report.push(
                            path.to_string(),
                            ViolationKind::UndeclaredVocabulary(vocabulary_id.clone()),
                        );
                    }
                    _ => {}
                }
            }
            ColumnKind::Nested { kind, children } => {
                *value_columns += 1;
                if depth + 1 > MAX_NESTING_DEPTH {
                    report.push(path.to_string(), ViolationKind::MaxDepthExceeded);
                    continue;
                }
                check_scope(
                    t,
                    children,
                    &path,
                    depth + 1,
                    *kind == NestedKind::PlainColumns,
                    report,
                );
            }
        }
    }
}

/// Templates keyed by `(id, version)`.
#[derive(Debug, Clone, Default)]
pub struct TemplateSet {
    templates: BTreeMap<(String, u32), Template>,
}

impl TemplateSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, t: Template) {
        self.templates.insert((t.id.clone(), t.version), t);
    }

    pub fn get(&self, id: &str, version: u32) -> Option<&Template> {
        self.templates.get(&(id.to_string(), version))
    }

    pub fn latest(&self, id: &str) -> Option<&Template> {
        self.templates
            .range((id.to_string(), 0)..=(id.to_string(), u32::MAX))
            .next_back()
            .map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Template> {
        self.templates.values()
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }
}

impl FromIterator<Template> for TemplateSet {
    fn from_iter<I: IntoIterator<Item = Template>>(iter: I) -> Self {
        let mut set = TemplateSet::new();
        for t in iter {
            set.insert(t);
        }
        set
    }
}
