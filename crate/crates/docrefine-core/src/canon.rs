//! Canonical JSON encoding.
//!
//! Every artifact this crate writes to disk (`*.ir.json`, `*.sem.json`,
//! `*.ops.json`, `report.json`, `trace.json`, mock scripts) goes through this
//! encoder so that structurally equal values always produce identical bytes:
//! object keys are emitted in sorted order and every non-integer number is
//! rendered with exactly three decimal places.

use serde::Serialize;
use serde_json::Value;

/// Serializes a value to canonical JSON bytes.
///
/// Keys are sorted, floats are rendered as `{:.3}`, integers verbatim.
/// The output carries no insignificant whitespace and no trailing newline.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<Vec<u8>, serde_json::Error> {
    let value = serde_json::to_value(value)?;
    let mut out = Vec::new();
    write_value(&value, &mut out);
    Ok(out)
}

/// Convenience wrapper returning a `String`.
pub fn to_canonical_string<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    // write_value emits valid UTF-8 only.
    Ok(String::from_utf8(to_canonical_json(value)?).expect("canonical JSON is UTF-8"))
}

fn write_value(value: &Value, out: &mut Vec<u8>) {
    match value {
        Value::Null => out.extend_from_slice(b"null"),
        Value::Bool(true) => out.extend_from_slice(b"true"),
        Value::Bool(false) => out.extend_from_slice(b"false"),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.extend_from_slice(i.to_string().as_bytes());
            } else if let Some(u) = n.as_u64() {
                out.extend_from_slice(u.to_string().as_bytes());
            } else {
                // Fixed three-decimal rendering keeps coordinate and score
                // output stable across construction paths.
                let f = n.as_f64().unwrap_or(0.0);
                out.extend_from_slice(format!("{f:.3}").as_bytes());
            }
        }
        Value::String(s) => write_string(s, out),
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_value(item, out);
            }
            out.push(b']');
        }
        Value::Object(map) => {
            // serde_json's default map is already sorted, but sort explicitly
            // so the encoding does not depend on feature unification.
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push(b'{');
            for (i, key) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_string(key, out);
                out.push(b':');
                write_value(&map[key.as_str()], out);
            }
            out.push(b'}');
        }
    }
}

fn write_string(s: &str, out: &mut Vec<u8>) {
    // Reuse serde_json's escaping rules.
    let escaped = serde_json::to_string(s).expect("string serialization cannot fail");
    out.extend_from_slice(escaped.as_bytes());
}

/// Rounds a coordinate to the canonical 3-decimal grid.
pub fn quantize(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn sorts_keys_and_fixes_decimals() {
        let v = json!({"b": 1, "a": {"z": 2.5, "y": [1.0, 3]}});
        let s = to_canonical_string(&v).unwrap();
        assert_eq!(s, r#"{"a":{"y":[1.000,3],"z":2.500},"b":1}"#);
    }

    #[test]
    fn identical_bytes_for_reordered_maps() {
        let a = json!({"x": 1, "y": 2});
        let b = json!({"y": 2, "x": 1});
        assert_eq!(to_canonical_json(&a).unwrap(), to_canonical_json(&b).unwrap());
    }

    #[test]
    fn escapes_strings() {
        let v = json!({"k": "line\n\"quote\""});
        let s = to_canonical_string(&v).unwrap();
        assert_eq!(s, r#"{"k":"line\n\"quote\""}"#);
    }

    #[test]
    fn quantize_rounds_to_millipoints() {
        assert_eq!(quantize(1.23456), 1.235);
        assert_eq!(quantize(-0.0004), -0.0);
        assert_eq!(quantize(7.0), 7.0);
    }
}
