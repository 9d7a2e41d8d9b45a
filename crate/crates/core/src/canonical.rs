//! Canonical JSON output: object keys sorted lexicographically, two-space
//! indentation, `\n` line endings and a single trailing newline.
//!
//! Key ordering is enforced here rather than relying on `serde_json::Map`
//! iteration order, which changes if any crate in the build enables the
//! `preserve_order` feature.

use serde::ser::{Serialize, SerializeMap, SerializeSeq, Serializer};
use serde_json::Value;

struct Sorted<'a>(&'a Value);

impl Serialize for Sorted<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            Value::Object(map) => {
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort();
                let mut out = serializer.serialize_map(Some(keys.len()))?;
                for key in keys {
                    out.serialize_entry(key, &Sorted(&map[key]))?;
                }
                out.end()
            }
            Value::Array(items) => {
                let mut out = serializer.serialize_seq(Some(items.len()))?;
                for item in items {
                    out.serialize_element(&Sorted(item))?;
                }
                out.end()
            }
            other => other.serialize(serializer),
        }
    }
}

/// Pretty, sorted, newline-terminated bytes.
pub fn to_canonical_bytes(value: &Value) -> Vec<u8> {
    let mut buf = Vec::new();
    let formatter = serde_json::ser::PrettyFormatter::with_indent(b"  ");
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, formatter);
    Sorted(value).serialize(&mut ser).expect("serializing a json value into memory cannot fail");
    buf.push(b'\n');
    buf
}

/// Compact form with sorted keys, no insignificant whitespace.
pub fn to_compact_sorted(value: &Value) -> Vec<u8> {
    serde_json::to_vec(&Sorted(value)).expect("serializing a json value into memory cannot fail")
}
