//! Canonical structured text: sorted keys, two-space indent, floats with 17
//! significant digits, scalar arrays on one line.

use std::fmt::Write;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

pub(crate) fn to_canonical<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)
        .map_err(|e| Error::contract(format!("serialization failed: {e}")))?;
    let mut out = String::new();
    write_value(&mut out, &v, 0)?;
    out.push('\n');
    Ok(out)
}

fn write_number(out: &mut String, n: &serde_json::Number) -> Result<()> {
    if let Some(u) = n.as_u64() {
        write!(out, "{u}").unwrap();
    } else if let Some(i) = n.as_i64() {
        write!(out, "{i}").unwrap();
    } else {
        let f = n
            .as_f64()
            .ok_or_else(|| Error::contract("unrepresentable number"))?;
        write!(out, "{}", format_f64(f)).unwrap();
    }
    Ok(())
}

/// `d.ddddddddddddddddde±x`, enough digits to reproduce every bit.
pub(crate) fn format_f64(f: f64) -> String {
    format!("{f:.16e}")
}

fn is_scalar(v: &Value) -> bool {
    !matches!(v, Value::Array(_) | Value::Object(_))
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn write_value(out: &mut String, v: &Value, level: usize) -> Result<()> {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => write_number(out, n)?,
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string encodes")),
        Value::Array(items) if items.iter().all(is_scalar) => {
            out.push('[');
            for (k, item) in items.iter().enumerate() {
                if k > 0 {
                    out.push_str(", ");
                }
                write_value(out, item, level)?;
            }
            out.push(']');
        }
        Value::Array(items) => {
            out.push_str("[\n");
            for (k, item) in items.iter().enumerate() {
                indent(out, level + 1);
                write_value(out, item, level + 1)?;
                out.push_str(if k + 1 < items.len() { ",\n" } else { "\n" });
            }
            indent(out, level);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return Ok(());
            }
            out.push_str("{\n");
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            for (k, key) in keys.iter().enumerate() {
                indent(out, level + 1);
                out.push_str(&serde_json::to_string(key).expect("string encodes"));
                out.push_str(": ");
                write_value(out, &map[*key], level + 1)?;
                out.push_str(if k + 1 < keys.len() { ",\n" } else { "\n" });
            }
            indent(out, level);
            out.push('}');
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn floats_keep_every_bit() {
        for f in [
            0.1,
            1.0 / 3.0,
            -2.5e-300,
            6.02214076e23,
            f64::MIN_POSITIVE,
            -0.0,
        ] {
            let s = format_f64(f);
            let back: f64 = serde_json::from_str(&s).unwrap();
            assert_eq!(back.to_bits(), f.to_bits(), "{s}");
        }
    }

    #[test]
    fn keys_are_sorted() {
        let mut m = BTreeMap::new();
        m.insert("b", vec![1.5]);
        m.insert("a", vec![]);
        let s = to_canonical(&m).unwrap();
        assert_eq!(s, "{\n  \"a\": [],\n  \"b\": [1.5000000000000000e0]\n}\n");
    }
}
