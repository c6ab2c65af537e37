//! Seeded synthetic records, for demos, load tests and property tests.
//!
//! Values are drawn from small name pools and sprinkled with the
//! transcription markers (`?`, `[..]`) the record model preserves, plus
//! characters that stress the exporters (quotes, ampersands, newlines,
//! non-ASCII letters).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::record::{Cell, CellValue, Record, RecordDraft, RecordStatus, Row};
use crate::template::{
    scope_slots, ColumnKind, ColumnSpec, LiteralKind, Multiplicity, Template, ValueType, VocabularyMode,
};
use crate::Timestamp;

const FIRST_NAMES: &[&str] = &[
    "Andrea", "Antonio", "Giovanni", "Giuseppe", "Maria", "Jean", "Pierre", "Marie", "Ivan", "Nikolai",
    "Anna", "Luigi", "Josep", "Dimitrios", "Frane", "Ante",
];
const LAST_NAMES: &[&str] = &[
    "Rossi", "Bianchi", "Esposito", "Ferrari", "Martin", "Bernard", "Dubois", "Ivanov", "Petrov",
    "Papadakis", "Marinović", "Garcia", "Costa", "Rocca", "D'Amico", "Müller",
];
const PLACES: &[&str] = &[
    "Genova", "Trieste", "Marseille", "La Ciotat", "Odessa", "Barcelona", "Syros", "Šibenik",
    "Vodowice", "Livorno", "Napoli", "Piraeus", "Fiume", "Toulon",
];
const SHIPS: &[&str] = &[
    "Andrea", "Antonio", "Stella Maris", "Due Fratelli", "Speranza", "Sainte Anne", "Nikolaos",
    "Aurora", "Providenza", "Fortuna",
];
const COMPANIES: &[&str] = &[
    "Fratelli Rocca & C.", "Messageries Maritimes", "Lloyd Austriaco", "Società \"La Veloce\"",
    "Compagnie Fraissinet", "Russian Steam Navigation Co.",
];
const WORDS: &[&str] = &[
    "per", "carico", "grano", "vino", "olio", "noli", "saldo", "avaria", "<illeggibile>", "ca.",
    "note\nsu due righe", "5 & 6", "fine",
];

/// Deterministic generator of synthetic records.
pub struct Synth {
    rng: ChaCha8Rng,
    terms: BTreeMap<String, Vec<String>>,
    /// Probability that a plain cell is left empty.
    pub empty_ratio: f64,
    /// Probability that a text value carries an uncertainty marker.
    pub uncertain_ratio: f64,
    /// Maximum rows generated per multi-row table or nested table.
    pub max_rows: usize,
}

impl Synth {
    pub fn new(seed: u64) -> Synth {
        Synth {
            rng: ChaCha8Rng::seed_from_u64(seed),
            terms: BTreeMap::new(),
            empty_ratio: 0.25,
            uncertain_ratio: 0.1,
            max_rows: 3,
        }
    }

    /// Use these term ids for vocabulary cells; vocabularies without an
    /// entry get `t1`..`t5`.
    pub fn with_terms(mut self, terms: BTreeMap<String, Vec<String>>) -> Synth {
        self.terms = terms;
        self
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn timestamp(&mut self) -> Timestamp {
        // 2019-01-01 .. 2022-01-01
        Timestamp::from_millis(self.rng.gen_range(1_546_300_800_000..1_640_995_200_000))
    }

    pub fn record(&mut self, t: &Template, record_id: &str) -> Record {
        let created = self.timestamp();
        let draft = RecordDraft {
            record_id: record_id.to_string(),
            title: format!("{} {}", t.title, self.rng.gen_range(1800..1950)),
            author_name: format!("{} {}", self.pick(FIRST_NAMES), self.pick(LAST_NAMES)),
            author_role: self.pick(&["transcriber", "researcher", "curator"]).to_string(),
            shared: self.rng.gen_bool(0.5),
            language: self.pick(&[None, Some("it"), Some("fr"), Some("ru"), Some("es"), Some("el")]).map(str::to_string),
        };
        let mut r = Record::new(t, draft, created);
        for table in &t.tables {
            let n = match table.multiplicity {
                Multiplicity::SingleRow => self.rng.gen_range(0..=1),
                Multiplicity::MultiRow => self.rng.gen_range(0..=self.max_rows),
            };
            let rows = (0..n).map(|_| self.row(&table.columns)).collect();
            r.tables.insert(table.id.clone(), rows);
        }
        let mut at = created;
        for _ in 0..self.rng.gen_range(0..3) {
            at = Timestamp::from_millis(at.millis() + self.rng.gen_range(1..86_400_000));
            let to = *self.pick(&RecordStatus::ALL);
            r.transition_status(to, "curator", at);
        }
        r.meta.last_modified = Timestamp::from_millis(at.millis() + self.rng.gen_range(0..86_400_000));
        r
    }

    /// `n` records spread round-robin over `templates`, ids `rec-00001`...
    pub fn corpus(&mut self, templates: &[&Template], n: usize) -> Vec<Record> {
        (0..n)
            .map(|i| self.record(templates[i % templates.len()], &format!("rec-{:05}", i + 1)))
            .collect()
    }

    pub fn row(&mut self, columns: &[ColumnSpec]) -> Row {
        let mut row = Row::default();
        for slot in scope_slots(columns) {
            let cell = match &slot.spec.kind {
                ColumnKind::Nested { children, .. } => {
                    let n = self.rng.gen_range(0..=self.max_rows.min(2));
                    Cell::Nested((0..n).map(|_| self.row(children)).collect())
                }
                ColumnKind::Plain { value_type } => Cell::Value(self.value(value_type)),
                ColumnKind::Colspan { .. } => unreachable!("slots skip colspans"),
            };
            row.0.insert(slot.spec.id.clone(), cell);
        }
        row
    }

    pub fn value(&mut self, vt: &ValueType) -> CellValue {
        if self.rng.gen_bool(self.empty_ratio) {
            return CellValue::Empty;
        }
        match vt {
            ValueType::Entity { entity_type, property } => {
                let raw = self.entity_text(entity_type, property);
                CellValue::text(self.mark(raw))
            }
            ValueType::VocabularyTerm { vocabulary_id, mode } => {
                if *mode == VocabularyMode::Dynamic && self.rng.gen_bool(0.15) {
                    return CellValue::NewTerm {
                        vocabulary_id: vocabulary_id.clone(),
                        label: self.pick(WORDS).to_string(),
                        language: "it".into(),
                    };
                }
                let term = match self.terms.get(vocabulary_id) {
                    Some(ids) if !ids.is_empty() => ids[self.rng.gen_range(0..ids.len())].clone(),
                    _ => format!("t{}", self.rng.gen_range(1..=5)),
                };
                CellValue::term(vocabulary_id, &term)
            }
            ValueType::Literal { kind } => CellValue::text(self.literal(*kind)),
        }
    }

    fn entity_text(&mut self, entity_type: &str, property: &str) -> String {
        let p = property.to_ascii_lowercase();
        if p.contains("date") {
            return self.date();
        }
        if p.contains("first") || p.contains("father") || p.contains("mother") {
            return self.pick(FIRST_NAMES).to_string();
        }
        if p.contains("last") || p.contains("surname") {
            return self.pick(LAST_NAMES).to_string();
        }
        match entity_type {
            "Ship" => self.pick(SHIPS).to_string(),
            "Location" => self.pick(PLACES).to_string(),
            "LegalEntity" => self.pick(COMPANIES).to_string(),
            _ => format!("{} {}", self.pick(FIRST_NAMES), self.pick(LAST_NAMES)),
        }
    }

    fn literal(&mut self, kind: LiteralKind) -> String {
        match kind {
            LiteralKind::String => {
                let raw = match self.rng.gen_range(0..3) {
                    0 => self.pick(PLACES).to_string(),
                    1 => self.pick(WORDS).to_string(),
                    _ => format!("{} {}", self.pick(WORDS), self.pick(WORDS)),
                };
                self.mark(raw)
            }
            LiteralKind::Integer => {
                let n = self.rng.gen_range(0..2000).to_string();
                if self.rng.gen_bool(self.uncertain_ratio) {
                    unknown_digit(&n, &mut self.rng)
                } else {
                    n
                }
            }
            LiteralKind::Decimal => format!("{}.{:02}", self.rng.gen_range(0..1000), self.rng.gen_range(0..100)),
            LiteralKind::Date => self.date(),
            LiteralKind::Boolean => self.rng.gen_bool(0.5).to_string(),
        }
    }

    fn date(&mut self) -> String {
        let y = self.rng.gen_range(1800..1950);
        let m = self.rng.gen_range(1..=12);
        let d = self.rng.gen_range(1..=28);
        let s = match self.rng.gen_range(0..6) {
            0 => format!("{y}"),
            1 => format!("{y}-{m:02}"),
            _ => format!("{y}-{m:02}-{d:02}"),
        };
        if self.rng.gen_bool(self.uncertain_ratio) {
            unknown_digit(&s, &mut self.rng)
        } else {
            s
        }
    }

    /// Maybe add an uncertainty marker: an unreadable character or a
    /// bracketed guess.
    fn mark(&mut self, raw: String) -> String {
        if !self.rng.gen_bool(self.uncertain_ratio) || raw.is_empty() {
            return raw;
        }
        let chars: Vec<char> = raw.chars().collect();
        if self.rng.gen_bool(0.5) {
            let i = self.rng.gen_range(0..chars.len());
            chars.iter().enumerate().map(|(j, c)| if i == j { '?' } else { *c }).collect()
        } else {
            let a = self.rng.gen_range(0..chars.len());
            let b = self.rng.gen_range(a + 1..=chars.len());
            let mut out: String = chars[..a].iter().collect();
            out.push('[');
            out.extend(&chars[a..b]);
            out.push(']');
            out.extend(&chars[b..]);
            out
        }
    }

    fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        items.choose(&mut self.rng).expect("non-empty pool")
    }
}

fn unknown_digit(s: &str, rng: &mut ChaCha8Rng) -> String {
    let digits: Vec<usize> = s.char_indices().filter(|(_, c)| c.is_ascii_digit()).map(|(i, _)| i).collect();
    let i = digits[rng.gen_range(0..digits.len())];
    let mut out = s.to_string();
    out.replace_range(i..i + 1, "?");
    out
}
