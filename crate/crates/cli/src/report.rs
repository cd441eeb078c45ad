//! CSV output with a `#` metadata header.

use std::io::Write;

/// Bumped whenever a column is added, removed or reordered.
pub const SCHEMA_VERSION: u32 = 1;

pub struct Report {
    command: String,
    seed: u64,
    config: Vec<(String, String)>,
    columns: Vec<&'static str>,
    rows: Vec<Vec<String>>,
    footer: Vec<String>,
}

impl Report {
    pub fn new(command: &str, seed: u64, columns: &[&'static str]) -> Self {
        Self {
            command: command.into(),
            seed,
            config: Vec::new(),
            columns: columns.to_vec(),
            rows: Vec::new(),
            footer: Vec::new(),
        }
    }

    /// Echoed in the header, in insertion order.
    pub fn config(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.config.push((key.into(), value.to_string()));
        self
    }

    pub fn row(&mut self, fields: Vec<String>) {
        debug_assert_eq!(fields.len(), self.columns.len());
        self.rows.push(fields);
    }

    /// A `#` line after the data, for summaries.
    pub fn note(&mut self, line: impl Into<String>) {
        self.footer.push(line.into());
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> anyhow::Result<()> {
        writeln!(out, "# lrusim-csv v{SCHEMA_VERSION}")?;
        writeln!(out, "# command: {}", self.command)?;
        writeln!(out, "# version: {}", env!("CARGO_PKG_VERSION"))?;
        writeln!(out, "# seed: {}", self.seed)?;
        for (k, v) in &self.config {
            writeln!(out, "# config: {k}={v}")?;
        }
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(&self.columns)?;
            for r in &self.rows {
                w.write_record(r)?;
            }
            w.flush()?;
        }
        for f in &self.footer {
            writeln!(out, "# {f}")?;
        }
        Ok(())
    }
}

/// Fixed-precision float so output never depends on formatting shortcuts.
pub fn f(x: f64) -> String {
    format!("{x:.6}")
}

pub fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}
