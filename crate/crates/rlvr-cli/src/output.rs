//! File emission: JSON with fixed float formatting, JSONL, CSV.
//!
//! All output is UTF-8 with LF line endings, floats are rendered with 17
//! significant digits (`{:.16e}`), and every file starts with the resolved
//! config and master seed so a run can be reproduced from its outputs
//! alone. Files are written atomically (temp file + rename).

use std::fs;
use std::io::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use serde_json::Value;

/// 17 significant digits; round-trips any f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// JSON value for a float that may be infinite (advantage ratios).
pub fn ratio_value(x: f64) -> Value {
    if x.is_finite() {
        Value::from(x)
    } else if x > 0.0 {
        Value::from("inf")
    } else {
        Value::from("-inf")
    }
}

struct SciFormatter;

impl serde_json::ser::Formatter for SciFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

/// Serializes a JSON value on one line with the fixed float format.
pub fn json_line(value: &Value) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SciFormatter);
    serde::Serialize::serialize(value, &mut ser).expect("JSON serialization cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Writes `contents` to `path` atomically.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .with_context(|| format!("creating output directory {}", parent.display()))?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f =
            fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(contents.as_bytes())?;
        f.sync_all().ok();
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// A JSONL document whose first line carries the resolved config.
pub struct JsonlDoc {
    lines: Vec<String>,
}

impl JsonlDoc {
    pub fn new(schema_version: u32, seed: u64, config: &Value) -> Self {
        let meta = serde_json::json!({
            "schema_version": schema_version,
            "master_seed": seed,
            "config": config,
        });
        JsonlDoc {
            lines: vec![json_line(&meta)],
        }
    }

    pub fn push(&mut self, record: &Value) {
        self.lines.push(json_line(record));
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut body = self.lines.join("\n");
        body.push('\n');
        write_atomic(path, &body)
    }
}

/// A CSV table with a `#`-comment preamble embedding the resolved config.
pub struct CsvDoc {
    preamble: Vec<String>,
    header: String,
    rows: Vec<String>,
}

impl CsvDoc {
    pub fn new(schema_version: u32, seed: u64, config: &Value, columns: &[&str]) -> Self {
        CsvDoc {
            preamble: vec![
                format!("# schema_version: {schema_version}"),
                format!("# master_seed: {seed}"),
                format!("# config: {}", json_line(config)),
            ],
            header: columns.join(","),
            rows: Vec::new(),
        }
    }

    /// Cells must already be formatted (no quoting/escaping is applied).
    pub fn push_row(&mut self, cells: &[String]) {
        self.rows.push(cells.join(","));
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut body = String::new();
        for line in &self.preamble {
            body.push_str(line);
            body.push('\n');
        }
        body.push_str(&self.header);
        body.push('\n');
        for row in &self.rows {
            body.push_str(row);
            body.push('\n');
        }
        write_atomic(path, &body)
    }
}
