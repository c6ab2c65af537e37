//! N-Triples / N-Quads reading and canonical writing.

use std::fmt;

use thiserror::Error;

use super::{ns, Dataset, Graph, Literal, Term, Triple};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

pub(super) fn write_term<W: fmt::Write>(w: &mut W, t: &Term) -> fmt::Result {
    match t {
        Term::Iri(i) => write_iri(w, i),
        Term::Blank(b) => write!(w, "_:{b}"),
        Term::Literal(l) => {
            w.write_char('"')?;
            for c in l.lexical.chars() {
                match c {
                    '"' => w.write_str("\\\"")?,
                    '\\' => w.write_str("\\\\")?,
                    '\n' => w.write_str("\\n")?,
                    '\r' => w.write_str("\\r")?,
                    '\t' => w.write_str("\\t")?,
                    '\u{8}' => w.write_str("\\b")?,
                    '\u{c}' => w.write_str("\\f")?,
                    c if c < ' ' || c == '\u{7f}' => write!(w, "\\u{:04X}", c as u32)?,
                    c => w.write_char(c)?,
                }
            }
            w.write_char('"')?;
            match &l.lang {
                Some(lang) => write!(w, "@{lang}"),
                None if l.datatype == ns::XSD_STRING => Ok(()),
                None => {
                    w.write_str("^^")?;
                    write_iri(w, &l.datatype)
                }
            }
        }
    }
}

fn write_iri<W: fmt::Write>(w: &mut W, iri: &str) -> fmt::Result {
    w.write_char('<')?;
    for c in iri.chars() {
        if c <= ' ' || matches!(c, '<' | '>' | '"' | '{' | '}' | '|' | '^' | '`' | '\\') {
            write!(w, "\\u{:04X}", c as u32)?;
        } else {
            w.write_char(c)?;
        }
    }
    w.write_char('>')
}

fn triple_line(t: &Triple, graph: Option<&str>) -> String {
    let mut s = String::new();
    write_term(&mut s, &t.subject).unwrap();
    s.push(' ');
    write_iri(&mut s, &t.predicate).unwrap();
    s.push(' ');
    write_term(&mut s, &t.object).unwrap();
    if let Some(g) = graph.filter(|g| !g.is_empty()) {
        s.push(' ');
        write_iri(&mut s, g).unwrap();
    }
    s.push_str(" .\n");
    s
}

/// Canonical N-Triples: one triple per line, lines sorted bytewise.
pub fn to_ntriples(g: &Graph) -> String {
    let mut lines: Vec<String> = g.iter().map(|t| triple_line(t, None)).collect();
    lines.sort();
    lines.concat()
}

/// N-Quads with sorted lines; the graph named `""` is the default graph.
pub fn to_nquads(d: &Dataset) -> String {
    let mut lines: Vec<String> = d
        .graphs()
        .flat_map(|(name, g)| g.iter().map(move |t| triple_line(t, Some(name))))
        .collect();
    lines.sort();
    lines.concat()
}

pub fn parse_ntriples(text: &str) -> Result<Graph, ParseError> {
    let mut g = Graph::new();
    for (n, line) in text.lines().enumerate() {
        if let Some((t, graph)) = parse_line(line, n + 1)? {
            if graph.is_some() {
                return Err(ParseError {
                    line: n + 1,
                    message: "graph label in N-Triples".into(),
                });
            }
            g.insert(t);
        }
    }
    Ok(g)
}

pub fn parse_nquads(text: &str) -> Result<Dataset, ParseError> {
    let mut d = Dataset::new();
    for (n, line) in text.lines().enumerate() {
        if let Some((t, graph)) = parse_line(line, n + 1)? {
            d.graph_mut(graph.as_deref().unwrap_or("")).insert(t);
        }
    }
    Ok(d)
}

struct Cursor<'a> {
    s: &'a str,
    pos: usize,
    line: usize,
}

impl Cursor<'_> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            line: self.line,
            message: format!("{} (column {})", message.into(), self.pos + 1),
        })
    }

    fn peek(&self) -> Option<char> {
        self.s[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(' ' | '\t')) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if self.bump() == Some(c) {
            Ok(())
        } else {
            self.err(format!("expected `{c}`"))
        }
    }

    fn uchar(&mut self, len: usize) -> Result<char, ParseError> {
        let start = self.pos;
        for _ in 0..len {
            match self.bump() {
                Some(c) if c.is_ascii_hexdigit() => {}
                _ => return self.err("bad \\u escape"),
            }
        }
        let code = u32::from_str_radix(&self.s[start..self.pos], 16).expect("hex digits");
        match char::from_u32(code) {
            Some(c) => Ok(c),
            None => self.err("escape is not a character"),
        }
    }

    fn iri(&mut self) -> Result<String, ParseError> {
        self.expect('<')?;
        let mut out = String::new();
        loop {
            match self.bump() {
                Some('>') => return Ok(out),
                Some('\\') => match self.bump() {
                    Some('u') => out.push(self.uchar(4)?),
                    Some('U') => out.push(self.uchar(8)?),
                    _ => return self.err("bad escape in IRI"),
                },
                Some(c) if c <= ' ' || matches!(c, '<' | '"' | '{' | '}' | '|' | '^' | '`') => {
                    return self.err("character not allowed in IRI")
                }
                Some(c) => out.push(c),
                None => return self.err("unterminated IRI"),
            }
        }
    }

    fn blank(&mut self) -> Result<String, ParseError> {
        self.expect('_')?;
        self.expect(':')?;
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_alphanumeric() || matches!(c, '_' | '-' | '.')) {
            self.bump();
        }
        while self.pos > start && self.s[..self.pos].ends_with('.') {
            self.pos -= 1;
        }
        if self.pos == start {
            return self.err("empty blank node label");
        }
        Ok(self.s[start..self.pos].to_string())
    }

    fn literal(&mut self) -> Result<Literal, ParseError> {
        self.expect('"')?;
        let mut lexical = String::new();
        loop {
            match self.bump() {
                Some('"') => break,
                Some('\\') => {
                    let c = match self.bump() {
                        Some('t') => '\t',
                        Some('b') => '\u{8}',
                        Some('n') => '\n',
                        Some('r') => '\r',
                        Some('f') => '\u{c}',
                        Some('"') => '"',
                        Some('\'') => '\'',
                        Some('\\') => '\\',
                        Some('u') => self.uchar(4)?,
                        Some('U') => self.uchar(8)?,
                        _ => return self.err("bad escape in literal"),
                    };
                    lexical.push(c);
                }
                Some('\n' | '\r') => return self.err("raw line break in literal"),
                Some(c) => lexical.push(c),
                None => return self.err("unterminated literal"),
            }
        }
        match self.peek() {
            Some('@') => {
                self.bump();
                let start = self.pos;
                while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '-') {
                    self.bump();
                }
                let tag = &self.s[start..self.pos];
                let valid = !tag.is_empty()
                    && tag.split('-').enumerate().all(|(i, part)| {
                        !part.is_empty()
                            && (i > 0 || part.chars().all(|c| c.is_ascii_alphabetic()))
                    });
                if !valid {
                    return self.err("bad language tag");
                }
                Ok(Literal {
                    lexical,
                    datatype: ns::RDF_LANG_STRING.into(),
                    lang: Some(tag.to_ascii_lowercase()),
                })
            }
            Some('^') => {
                self.bump();
                self.expect('^')?;
                let datatype = self.iri()?;
                Ok(Literal {
                    lexical,
                    datatype,
                    lang: None,
                })
            }
            _ => Ok(Literal {
                lexical,
                datatype: ns::XSD_STRING.into(),
                lang: None,
            }),
        }
    }

    fn term(&mut self) -> Result<Term, ParseError> {
        match self.peek() {
            Some('<') => Ok(Term::Iri(self.iri()?)),
            Some('_') => Ok(Term::Blank(self.blank()?)),
            Some('"') => Ok(Term::Literal(self.literal()?)),
            _ => self.err("expected a term"),
        }
    }
}

fn parse_line(line: &str, n: usize) -> Result<Option<(Triple, Option<String>)>, ParseError> {
    let mut c = Cursor { s: line, pos: 0, line: n };
    c.skip_ws();
    if matches!(c.peek(), None | Some('#')) {
        return Ok(None);
    }
    let subject = c.term()?;
    if subject.is_literal() {
        return c.err("literal in subject position");
    }
    c.skip_ws();
    let predicate = c.iri()?;
    c.skip_ws();
    let object = c.term()?;
    c.skip_ws();
    let graph = if c.peek() == Some('<') {
        let g = c.iri()?;
        c.skip_ws();
        Some(g)
    } else {
        None
    };
    c.expect('.')?;
    c.skip_ws();
    if !matches!(c.peek(), None | Some('#')) {
        return c.err("trailing characters");
    }
    Ok(Some((Triple::new(subject, predicate, object), graph)))
}
