//! Turtle writer. Output is deterministic: prefixes, subjects, predicates
//! and objects all come out sorted.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::ntriples::write_term;
use super::{ns, Graph, Literal, Term};

/// Prefix → namespace IRI.
pub type PrefixMap = BTreeMap<String, String>;

fn local_ok(local: &str) -> bool {
    !local.starts_with('-')
        && local
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn compact(iri: &str, prefixes: &PrefixMap) -> String {
    let best = prefixes
        .iter()
        .filter(|(_, ns)| iri.starts_with(ns.as_str()) && local_ok(&iri[ns.len()..]))
        .max_by_key(|(_, ns)| ns.len());
    match best {
        Some((p, ns)) => format!("{p}:{}", &iri[ns.len()..]),
        None => {
            let mut s = String::new();
            write_term(&mut s, &Term::Iri(iri.to_string())).unwrap();
            s
        }
    }
}

fn term(t: &Term, prefixes: &PrefixMap) -> String {
    match t {
        Term::Iri(i) => compact(i, prefixes),
        Term::Literal(Literal {
            lexical,
            datatype,
            lang: None,
        }) if datatype != ns::XSD_STRING => {
            let mut s = String::new();
            write_term(&mut s, &Term::string(lexical.clone())).unwrap();
            format!("{s}^^{}", compact(datatype, prefixes))
        }
        other => {
            let mut s = String::new();
            write_term(&mut s, other).unwrap();
            s
        }
    }
}

pub fn to_turtle(g: &Graph, prefixes: &PrefixMap) -> String {
    let mut out = String::new();
    for (p, ns) in prefixes {
        writeln!(out, "@prefix {p}: <{ns}> .").unwrap();
    }
    let mut subjects: BTreeMap<String, BTreeMap<(bool, String), Vec<String>>> = BTreeMap::new();
    for t in g {
        let s = term(&t.subject, prefixes);
        let is_type = t.predicate == ns::RDF_TYPE;
        let p = if is_type {
            "a".to_string()
        } else {
            compact(&t.predicate, prefixes)
        };
        subjects
            .entry(s)
            .or_default()
            .entry((!is_type, p))
            .or_default()
            .push(term(&t.object, prefixes));
    }
    for (s, preds) in subjects {
        out.push('\n');
        out.push_str(&s);
        let n = preds.len();
        for (i, ((_, p), mut objects)) in preds.into_iter().enumerate() {
            objects.sort();
            write!(out, "\n    {p} {}", objects.join(", ")).unwrap();
            out.push_str(if i + 1 == n { " .\n" } else { " ;" });
        }
    }
    out
}
