//! Canonical JSON encoding: sorted object keys, two-space indentation,
//! UTF-8, LF line endings and a trailing newline.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Serialize `value` to canonical JSON bytes.
///
/// Keys come out sorted because `serde_json::Value` objects are backed by a
/// `BTreeMap` (the `preserve_order` feature must stay disabled).
pub fn to_canonical_json<T: Serialize>(value: &T) -> Vec<u8> {
    let value = serde_json::to_value(value).expect("model types always serialize");
    let mut out = serde_json::to_vec_pretty(&value).expect("json values always serialize");
    out.push(b'\n');
    out
}

pub fn to_canonical_string<T: Serialize>(value: &T) -> String {
    String::from_utf8(to_canonical_json(value)).expect("serde_json emits UTF-8")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
