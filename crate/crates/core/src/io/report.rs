//! NDJSON and CSV emitters, and the seeds file reader.
//!
//! NDJSON lines are flat objects. Non-finite numbers are written as the
//! strings `"NaN"`, `"inf"` and `"-inf"`, absent optionals as `null`.

use std::io::{self, Write};

use super::fmt_f64;
use crate::flux::{DiagnosticsRecord, RecordSink, DIAGNOSTICS_COLUMNS};
use crate::trajectory::{TrajectoryBundle, TRAJECTORY_COLUMNS};

pub const TRAJECTORY_SCHEMA_VERSION: u32 = 1;

/// Builder for one flat JSON object.
#[derive(Clone, Debug, Default)]
pub struct JsonLine {
    buf: String,
}

fn escape_into(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
}

impl JsonLine {
    pub fn new() -> Self {
        Self::default()
    }

    fn key(&mut self, k: &str) {
        self.buf.push(if self.buf.is_empty() { '{' } else { ',' });
        escape_into(&mut self.buf, k);
        self.buf.push(':');
    }

    pub fn num(mut self, k: &str, x: f64) -> Self {
        self.key(k);
        if x.is_finite() {
            self.buf.push_str(&fmt_f64(x));
        } else {
            escape_into(&mut self.buf, &fmt_f64(x));
        }
        self
    }

    pub fn opt(self, k: &str, x: Option<f64>) -> Self {
        match x {
            Some(x) => self.num(k, x),
            None => self.null(k),
        }
    }

    pub fn null(mut self, k: &str) -> Self {
        self.key(k);
        self.buf.push_str("null");
        self
    }

    pub fn int(mut self, k: &str, x: i64) -> Self {
        self.key(k);
        self.buf.push_str(&x.to_string());
        self
    }

    pub fn boolean(mut self, k: &str, x: bool) -> Self {
        self.key(k);
        self.buf.push_str(if x { "true" } else { "false" });
        self
    }

    pub fn str(mut self, k: &str, v: &str) -> Self {
        self.key(k);
        escape_into(&mut self.buf, v);
        self
    }

    /// The finished object, without a trailing newline.
    pub fn finish(mut self) -> String {
        if self.buf.is_empty() {
            self.buf.push('{');
        }
        self.buf.push('}');
        self.buf
    }
}

fn is_integer_column(c: &str) -> bool {
    matches!(c, "step" | "schema" | "seed")
}

/// Diagnostics as NDJSON, one record per line.
pub struct NdjsonSink<W: Write> {
    pub out: W,
}

impl<W: Write> NdjsonSink<W> {
    pub fn new(out: W) -> Self {
        NdjsonSink { out }
    }
}

pub(crate) fn diagnostics_line(r: &DiagnosticsRecord) -> String {
    let mut j = JsonLine::new();
    for (c, v) in DIAGNOSTICS_COLUMNS.iter().zip(r.row()) {
        j = match v {
            Some(x) if is_integer_column(c) => j.int(c, x as i64),
            v => j.opt(c, v),
        };
    }
    j.finish()
}

impl<W: Write> RecordSink for NdjsonSink<W> {
    fn write(&mut self, r: &DiagnosticsRecord) -> io::Result<()> {
        writeln!(self.out, "{}", diagnostics_line(r))
    }

    fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

/// Diagnostics as a wide CSV with the NDJSON column set; the header is
/// written before the first row. Absent optionals are empty cells.
pub struct CsvSink<W: Write> {
    pub out: W,
    header_done: bool,
}

impl<W: Write> CsvSink<W> {
    pub fn new(out: W) -> Self {
        CsvSink { out, header_done: false }
    }

    /// Appends rows to a table that already has its header.
    pub fn continuing(out: W) -> Self {
        CsvSink { out, header_done: true }
    }
}

impl<W: Write> RecordSink for CsvSink<W> {
    fn write(&mut self, r: &DiagnosticsRecord) -> io::Result<()> {
        if !self.header_done {
            writeln!(self.out, "{}", DIAGNOSTICS_COLUMNS.join(","))?;
            self.header_done = true;
        }
        let cells: Vec<String> = DIAGNOSTICS_COLUMNS
            .iter()
            .zip(r.row())
            .map(|(c, v)| match v {
                Some(x) if is_integer_column(c) => (x as i64).to_string(),
                Some(x) => fmt_f64(x),
                None => String::new(),
            })
            .collect();
        writeln!(self.out, "{}", cells.join(","))
    }

    fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

/// One NDJSON record per seed per sample time, in [`TRAJECTORY_COLUMNS`]
/// order followed by `schema`.
pub fn write_trajectory_ndjson(out: &mut impl Write, b: &TrajectoryBundle) -> io::Result<()> {
    for row in b.rows() {
        let mut j = JsonLine::new();
        for (c, &x) in TRAJECTORY_COLUMNS.iter().zip(&row) {
            j = if is_integer_column(c) { j.int(c, x as i64) } else { j.num(c, x) };
        }
        writeln!(out, "{}", j.int("schema", TRAJECTORY_SCHEMA_VERSION as i64).finish())?;
    }
    out.flush()
}

/// Seeds file: one `x1 x2` pair per line (whitespace or comma separated);
/// `#` comments and blank lines are skipped.
pub fn read_seeds(text: &str) -> Result<Vec<[f64; 2]>, String> {
    let mut seeds = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let parts: Vec<&str> = body.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        let [a, b] = parts.as_slice() else {
            return Err(format!("line {}: expected two coordinates, got {body:?}", i + 1));
        };
        let p = |s: &str| s.parse::<f64>().map_err(|e| format!("line {}: {s:?}: {e}", i + 1));
        let x = [p(a)?, p(b)?];
        if !x.iter().all(|v| v.is_finite()) {
            return Err(format!("line {}: non-finite coordinate", i + 1));
        }
        seeds.push(x);
    }
    if seeds.is_empty() {
        return Err("seeds file lists no seeds".into());
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_line_shapes() {
        let s = JsonLine::new()
            .num("a", 0.25)
            .int("n", -3)
            .str("s", "q\"\\\n")
            .opt("o", None)
            .num("x", f64::NAN)
            .boolean("b", true)
            .finish();
        assert_eq!(s, r#"{"a":2.5000000000000000e-1,"n":-3,"s":"q\"\\\n","o":null,"x":"NaN","b":true}"#);
        assert_eq!(JsonLine::new().finish(), "{}");
    }

    #[test]
    fn diagnostics_ndjson_and_csv_share_columns() {
        let r = DiagnosticsRecord { t: 0.5, step: 7, energy: 1.0 / 3.0, holder_bound: Some(2.0), ..Default::default() };
        let mut nd = NdjsonSink::new(Vec::new());
        nd.write(&r).unwrap();
        let line = String::from_utf8(nd.out).unwrap();
        assert!(line.ends_with('\n') && line.matches('\n').count() == 1);
        assert!(line.contains(r#""step":7,"#));
        assert!(line.contains(r#""holder_measured":null"#));
        assert!(line.contains(r#""schema":1}"#));

        let mut csv = CsvSink::new(Vec::new());
        csv.write(&r).unwrap();
        csv.write(&r).unwrap();
        let text = String::from_utf8(csv.out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].split(',').count(), DIAGNOSTICS_COLUMNS.len());
        let cells: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(cells.len(), DIAGNOSTICS_COLUMNS.len());
        assert_eq!(cells[1], "7");
        assert_eq!(cells[24], "");
        assert_eq!(cells[6].parse::<f64>().unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn seeds_parse() {
        let s = read_seeds("# corners\n0 0\n3.14, 0\n\n1e-1\t2 # tail\n").unwrap();
        assert_eq!(s, vec![[0.0, 0.0], [3.14, 0.0], [0.1, 2.0]]);
        assert!(read_seeds("1 2 3").is_err());
        assert!(read_seeds("# none").is_err());
        assert!(read_seeds("nan 1").is_err());
    }
}
