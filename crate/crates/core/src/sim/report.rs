//! Report tables: comma-separated with a header row, or an equivalent JSON
//! array of row objects. Reals are written with 6 significant digits.

use std::io;
use std::path::Path;

use serde_json::{Map, Number, Value};

#[derive(Clone, Debug, PartialEq)]
pub enum Field {
    Str(String),
    Int(i64),
    Real(f64),
    Bool(bool),
}

impl Field {
    fn render(&self) -> String {
        match self {
            Field::Str(s) => s.clone(),
            Field::Int(i) => i.to_string(),
            Field::Real(x) => format_sig(*x),
            Field::Bool(b) => b.to_string(),
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Field::Str(s) => Value::String(s.clone()),
            Field::Int(i) => Value::from(*i),
            Field::Real(x) => {
                let text = format_sig(*x);
                text.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .and_then(Number::from_f64)
                    .map(Value::Number)
                    .unwrap_or(Value::String(text))
            }
            Field::Bool(b) => Value::Bool(*b),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Field>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Delimited,
    Structured,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Delimited => "csv",
            ReportFormat::Structured => "json",
        }
    }

    /// Structured for a `.json` path, delimited otherwise.
    pub fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => ReportFormat::Structured,
            _ => ReportFormat::Delimited,
        }
    }
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Field::render)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("fields are UTF-8")
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let mut obj = Map::new();
                for (c, f) in self.columns.iter().zip(row) {
                    obj.insert((*c).to_string(), f.to_json());
                }
                Value::Object(obj)
            })
            .collect();
        let mut s = serde_json::to_string_pretty(&Value::Array(rows)).expect("serialisable");
        s.push('\n');
        s
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Delimited => self.to_csv(),
            ReportFormat::Structured => self.to_json(),
        }
    }

    /// Writes the table to `path`. An empty table still gets its header.
    pub fn write(&self, path: &Path, format: ReportFormat) -> io::Result<()> {
        if self.rows.is_empty() {
            log::warn!("writing empty report to {}", path.display());
        }
        std::fs::write(path, self.render(format))
    }
}

/// Formats `x` with 6 significant digits, without exponent notation for
/// magnitudes between 1e-6 and 1e15, trimming trailing zeros.
pub fn format_sig(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.5e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-6..15).contains(&exp) {
        let m = mantissa.trim_end_matches('0').trim_end_matches('.');
        return format!("{m}e{exp}");
    }
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let point = exp + 1;
    let mut s = if point <= 0 {
        format!("0.{}{}", "0".repeat((-point) as usize), digits)
    } else if point as usize >= digits.len() {
        format!("{}{}", digits, "0".repeat(point as usize - digits.len()))
    } else {
        format!("{}.{}", &digits[..point as usize], &digits[point as usize..])
    };
    if s.contains('.') {
        s = s.trim_end_matches('0').trim_end_matches('.').to_string();
    }
    if negative {
        s.insert(0, '-');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(format_sig(0.123456789), "0.123457");
        assert_eq!(format_sig(123456789.0), "123457000");
        assert_eq!(format_sig(9.9999996), "10");
        assert_eq!(format_sig(-0.5), "-0.5");
        assert_eq!(format_sig(1.0), "1");
        assert_eq!(format_sig(0.0001234564), "0.000123456");
        assert_eq!(format_sig(1.5e-9), "1.5e-9");
        assert_eq!(format_sig(2e20), "2e20");
        assert_eq!(format_sig(f64::INFINITY), "inf");
        assert_eq!(format_sig(0.1 / 3.0_f64.sqrt()), "0.057735");
    }

    #[test]
    fn csv_and_json() {
        let t = Table {
            columns: vec!["name", "x", "n", "ok"],
            rows: vec![
                vec![Field::Str("a,b".into()), Field::Real(1.0 / 3.0), Field::Int(4), Field::Bool(true)],
                vec![Field::Str("c".into()), Field::Real(f64::NAN), Field::Int(-1), Field::Bool(false)],
            ],
        };
        assert_eq!(t.to_csv(), "name,x,n,ok\n\"a,b\",0.333333,4,true\nc,nan,-1,false\n");
        let v: Value = serde_json::from_str(&t.to_json()).unwrap();
        assert_eq!(v[0]["x"], 0.333333);
        assert_eq!(v[1]["x"], "nan");
        let empty = Table { columns: vec!["a"], rows: vec![] };
        assert_eq!(empty.to_csv(), "a\n");
        assert_eq!(empty.to_json(), "[]\n");
    }
}
