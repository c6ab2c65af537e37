use serde::{Deserialize, Serialize};

use crate::template::{LiteralKind, ValueType, VocabularyMode};

use super::RecordError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CellValue {
    Text {
        raw: String,
    },
    TermRef {
        vocabulary_id: String,
        term_id: String,
    },
    /// Only accepted by columns bound to a dynamic vocabulary.
    NewTerm {
        vocabulary_id: String,
        label: String,
        language: String,
    },
    Empty,
}

impl CellValue {
    pub fn text(raw: impl Into<String>) -> Self {
        CellValue::Text { raw: raw.into() }
    }

    pub fn term(vocabulary_id: &str, term_id: &str) -> Self {
        CellValue::TermRef {
            vocabulary_id: vocabulary_id.into(),
            term_id: term_id.into(),
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, CellValue::Empty)
    }

    pub fn raw(&self) -> Option<&str> {
        match self {
            CellValue::Text { raw } => Some(raw),
            _ => None,
        }
    }

    pub fn uncertainty(&self) -> UncertaintyFlags {
        match self {
            CellValue::Text { raw } => UncertaintyFlags::of(raw),
            _ => UncertaintyFlags::default(),
        }
    }

    /// Plain-text rendering used by exports: raw text, term id, or the label
    /// of a new term.
    pub fn display_text(&self) -> &str {
        match self {
            CellValue::Text { raw } => raw,
            CellValue::TermRef { term_id, .. } => term_id,
            CellValue::NewTerm { label, .. } => label,
            CellValue::Empty => "",
        }
    }
}

/// Transcription uncertainty markers: `?` for an unreadable character and a
/// `[...]` span for a group of characters the transcriber is unsure about.
/// Both flags are derived from the raw text, which is never rewritten.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UncertaintyFlags {
    pub has_unknown_chars: bool,
    pub has_guessed_span: bool,
}

impl UncertaintyFlags {
    pub fn of(raw: &str) -> Self {
        UncertaintyFlags {
            has_unknown_chars: raw.contains('?'),
            has_guessed_span: has_bracket_span(raw),
        }
    }

    pub fn any(self) -> bool {
        self.has_unknown_chars || self.has_guessed_span
    }
}

/// True if some `[` is later closed by a matching `]` with at least one
/// character in between.
fn has_bracket_span(raw: &str) -> bool {
    let mut open: Vec<usize> = Vec::new();
    for (i, c) in raw.char_indices() {
        match c {
            '[' => open.push(i),
            ']' => {
                if let Some(start) = open.pop() {
                    if i > start + 1 {
                        return true;
                    }
                }
            }
            _ => {}
        }
    }
    false
}

/// Check that `value` may be stored in a column of type `vt`.
pub fn check_value(vt: &ValueType, value: &CellValue) -> Result<(), RecordError> {
    let mismatch = |expected: &str| RecordError::TypeMismatch {
        expected: expected.to_string(),
        found: describe(value),
    };
    match (vt, value) {
        (_, CellValue::Empty) => Ok(()),
        (ValueType::Entity { .. }, CellValue::Text { .. }) => Ok(()),
        (ValueType::Literal { kind }, CellValue::Text { raw }) => {
            if literal_is_valid(*kind, raw) {
                Ok(())
            } else {
                Err(mismatch(literal_name(*kind)))
            }
        }
        (ValueType::VocabularyTerm { vocabulary_id, .. }, CellValue::TermRef { vocabulary_id: v, .. })
            if v == vocabulary_id =>
        {
            Ok(())
        }
        (
            ValueType::VocabularyTerm { vocabulary_id, mode },
            CellValue::NewTerm { vocabulary_id: v, label, .. },
        ) if v == vocabulary_id => match mode {
            VocabularyMode::Dynamic if !label.trim().is_empty() => Ok(()),
            VocabularyMode::Dynamic => Err(mismatch("non-empty term label")),
            VocabularyMode::Predefined => Err(RecordError::NewTermOnPredefinedVocabulary(v.clone())),
        },
        (ValueType::VocabularyTerm { vocabulary_id, .. }, _) => {
            Err(mismatch(&format!("term of vocabulary `{vocabulary_id}`")))
        }
        (ValueType::Entity { .. }, _) => Err(mismatch("text")),
        (ValueType::Literal { kind }, _) => Err(mismatch(literal_name(*kind))),
    }
}

fn describe(value: &CellValue) -> String {
    match value {
        CellValue::Text { raw } => format!("text `{raw}`"),
        CellValue::TermRef { vocabulary_id, term_id } => format!("term {vocabulary_id}:{term_id}"),
        CellValue::NewTerm { vocabulary_id, label, .. } => format!("new term {vocabulary_id}:{label}"),
        CellValue::Empty => "empty".into(),
    }
}

fn literal_name(kind: LiteralKind) -> &'static str {
    match kind {
        LiteralKind::String => "string",
        LiteralKind::Integer => "integer",
        LiteralKind::Decimal => "decimal",
        LiteralKind::Date => "date",
        LiteralKind::Boolean => "boolean",
    }
}

/// Lexical check for literal columns. Uncertainty markers are tolerated: `?`
/// stands in for an unreadable digit and square brackets are ignored.
pub fn literal_is_valid(kind: LiteralKind, raw: &str) -> bool {
    let text: String = raw.chars().filter(|c| *c != '[' && *c != ']').collect();
    let digitish = |c: char| c.is_ascii_digit() || c == '?';
    match kind {
        LiteralKind::String => true,
        LiteralKind::Boolean => matches!(text.as_str(), "true" | "false"),
        LiteralKind::Integer => {
            let body = text.strip_prefix(['+', '-']).unwrap_or(&text);
            !body.is_empty() && body.chars().all(digitish)
        }
        LiteralKind::Decimal => {
            let body = text.strip_prefix(['+', '-']).unwrap_or(&text);
            let mut parts = body.splitn(2, ['.', ',']);
            let int = parts.next().unwrap_or_default();
            let frac = parts.next();
            let int_ok = int.chars().all(digitish);
            let frac_ok = frac.is_none_or(|f| !f.is_empty() && f.chars().all(digitish));
            int_ok && frac_ok && (!int.is_empty() || frac.is_some())
        }
        LiteralKind::Date => date_is_valid(&text),
    }
}

/// ISO-8601 calendar date with optional reduced precision: `YYYY`,
/// `YYYY-MM` or `YYYY-MM-DD`.
fn date_is_valid(text: &str) -> bool {
    let parts: Vec<&str> = text.split('-').collect();
    let widths = [4, 2, 2];
    if parts.is_empty() || parts.len() > 3 {
        return false;
    }
    for (part, width) in parts.iter().zip(widths) {
        if part.len() != width || !part.chars().all(|c| c.is_ascii_digit() || c == '?') {
            return false;
        }
    }
    let known = |p: &str| p.chars().all(|c| c.is_ascii_digit());
    if let Some(month) = parts.get(1).filter(|m| known(m)) {
        let m: u32 = month.parse().unwrap();
        if !(1..=12).contains(&m) {
            return false;
        }
    }
    if let Some(day) = parts.get(2).filter(|d| known(d)) {
        let d: u32 = day.parse().unwrap();
        if !(1..=31).contains(&d) {
            return false;
        }
        if parts.iter().all(|p| known(p)) {
            return chrono::NaiveDate::parse_from_str(text, "%Y-%m-%d").is_ok();
        }
    }
    true
}
