//! JSON and CSV encoders for reports and tables.

use std::fmt::Write as _;

use anyhow::{Context, Result};
use clap::ValueEnum;
use serde::Serialize;
use serde_json::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// Rows of a table command. JSON nests them under `rows`; CSV uses the
/// struct field order as the column order.
#[derive(Serialize)]
pub struct Table<R: Serialize> {
    pub command: &'static str,
    pub rows: Vec<R>,
}

pub fn render<T: Serialize>(value: &T, fmt: Format) -> Result<String> {
    match fmt {
        Format::Json => Ok(serde_json::to_string_pretty(value)? + "\n"),
        Format::Csv => {
            let v = serde_json::to_value(value)?;
            let rows: Vec<Value> = match v.get("rows") {
                Some(Value::Array(rows)) => rows.clone(),
                _ => vec![flatten(&v)],
            };
            csv(&rows)
        }
    }
}

// Nested objects become `outer.inner` columns.
fn flatten(v: &Value) -> Value {
    fn go(prefix: &str, v: &Value, out: &mut serde_json::Map<String, Value>) {
        match v {
            Value::Object(m) => {
                for (k, x) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    go(&key, x, out);
                }
            }
            Value::Array(a) => {
                let s: Vec<String> = a.iter().map(cell).collect();
                out.insert(prefix.to_string(), Value::String(s.join(";")));
            }
            other => {
                out.insert(prefix.to_string(), other.clone());
            }
        }
    }
    let mut out = serde_json::Map::new();
    go("", v, &mut out);
    Value::Object(out)
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn csv(rows: &[Value]) -> Result<String> {
    let mut out = String::new();
    let Some(first) = rows.first() else {
        return Ok(out);
    };
    let first = flatten(first);
    let cols: Vec<String> = first.as_object().context("row is not an object")?.keys().cloned().collect();
    writeln!(out, "{}", cols.join(","))?;
    for r in rows {
        let r = flatten(r);
        let line: Vec<String> = cols.iter().map(|c| r.get(c).map(cell).unwrap_or_default()).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        b: u32,
        a: Option<f64>,
        s: &'static str,
    }

    #[test]
    fn csv_keeps_field_order() {
        let t = Table {
            command: "x",
            rows: vec![Row { b: 1, a: Some(0.5), s: "u" }, Row { b: 2, a: None, s: "v" }],
        };
        assert_eq!(render(&t, Format::Csv).unwrap(), "b,a,s\n1,0.5,u\n2,,v\n");
    }

    #[test]
    fn csv_flattens_objects() {
        let v = serde_json::json!({"n": 3, "flops": {"id": 1, "qr": 2}, "ranks": [1, 2]});
        assert_eq!(render(&v, Format::Csv).unwrap(), "n,flops.id,flops.qr,ranks\n3,1,2,1;2\n");
    }
}
