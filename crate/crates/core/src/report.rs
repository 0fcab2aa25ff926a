//! Report records (TOML text, floats at 17 significant digits) and CSV series.
//!
//! The record body is deterministic; wall-clock content goes only in the
//! trailing `[metadata]` table, which [`strip_metadata`] removes.

use std::fmt::Write as _;
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::{Complex, DMatrix, DVector};

use crate::settings::Settings;

pub const SCHEMA: &str = "hybrid-averager/1";
const METADATA_HEADER: &str = "[metadata]";

/// Float with 17 significant digits; `nan`, `inf`, `-inf` otherwise.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c if c.is_control() => {
                let _ = write!(out, "\\u{:04X}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn key(k: &str) -> String {
    if !k.is_empty() && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        k.to_string()
    } else {
        quote(k)
    }
}

fn array(values: impl IntoIterator<Item = String>) -> String {
    format!("[{}]", values.into_iter().collect::<Vec<_>>().join(", "))
}

/// Builder for one top-level record.
#[derive(Debug, Clone)]
pub struct Record {
    body: String,
}

impl Record {
    pub fn new(kind: &str) -> Self {
        let mut r = Record { body: String::new() };
        r.str("schema", SCHEMA);
        r.str("kind", kind);
        r
    }

    fn line(&mut self, k: &str, v: String) -> &mut Self {
        let _ = writeln!(self.body, "{} = {}", key(k), v);
        self
    }

    pub fn section(&mut self, name: &str) -> &mut Self {
        let _ = writeln!(self.body, "\n[{}]", name.split('.').map(key).collect::<Vec<_>>().join("."));
        self
    }

    pub fn str(&mut self, k: &str, v: &str) -> &mut Self {
        self.line(k, quote(v))
    }

    pub fn num(&mut self, k: &str, v: f64) -> &mut Self {
        self.line(k, fmt_f64(v))
    }

    pub fn opt_num(&mut self, k: &str, v: Option<f64>) -> &mut Self {
        self.num(k, v.unwrap_or(f64::NAN))
    }

    pub fn int(&mut self, k: &str, v: i64) -> &mut Self {
        self.line(k, v.to_string())
    }

    pub fn bool(&mut self, k: &str, v: bool) -> &mut Self {
        self.line(k, v.to_string())
    }

    pub fn nums(&mut self, k: &str, v: &[f64]) -> &mut Self {
        self.line(k, array(v.iter().map(|x| fmt_f64(*x))))
    }

    pub fn strs(&mut self, k: &str, v: &[String]) -> &mut Self {
        self.line(k, array(v.iter().map(|s| quote(s))))
    }

    pub fn vector(&mut self, k: &str, v: &DVector<f64>) -> &mut Self {
        self.nums(k, v.as_slice())
    }

    /// Matrix as an array of rows.
    pub fn matrix(&mut self, k: &str, m: &DMatrix<f64>) -> &mut Self {
        let rows = m.row_iter().map(|r| array(r.iter().map(|x| fmt_f64(*x))));
        self.line(k, array(rows))
    }

    /// Complex values as `[re, im]` pairs.
    pub fn complex(&mut self, k: &str, v: &[Complex<f64>]) -> &mut Self {
        self.line(k, array(v.iter().map(|c| array([fmt_f64(c.re), fmt_f64(c.im)]))))
    }

    /// `[settings]` table listing every tolerance in effect; unset options are omitted.
    pub fn settings(&mut self, settings: &Settings) -> &mut Self {
        self.section("settings");
        let table = toml::Table::try_from(settings).expect("settings serialize to a table");
        for (k, v) in &table {
            match v {
                toml::Value::Float(f) => self.num(k, *f),
                toml::Value::Integer(i) => self.int(k, *i),
                other => self.line(k, other.to_string()),
            };
        }
        self
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// Body followed by a metadata table carrying the current time.
    pub fn render(&self) -> String {
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        self.render_with_timestamp(now)
    }

    pub fn render_with_timestamp(&self, unix_seconds: u64) -> String {
        format!(
            "{}\n{METADATA_HEADER}\ngenerator = {}\ntimestamp_unix = {unix_seconds}\n",
            self.body,
            quote(concat!("hybrid-averager ", env!("CARGO_PKG_VERSION")))
        )
    }
}

/// Record text with the metadata table removed.
pub fn strip_metadata(text: &str) -> &str {
    match text.find(&format!("\n{METADATA_HEADER}\n")) {
        Some(i) => &text[..i],
        None => text,
    }
}

/// Comma-separated table with a header row and LF line endings.
#[derive(Debug, Clone)]
pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Csv { text: format!("{}\n", header.join(",")), columns: header.len() }
    }

    /// Append a row of preformatted cells.
    pub fn row(&mut self, cells: &[String]) {
        assert_eq!(cells.len(), self.columns, "CSV row width");
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn into_text(self) -> String {
        self.text
    }
}

/// CSV cell for a float; NaN renders as an empty cell.
pub fn csv_num(v: f64) -> String {
    if v.is_nan() { String::new() } else { fmt_f64(v) }
}
