//! CSV tables: header row, comma separator, LF line endings, shortest
//! round-trip float text.

use std::path::Path;

/// Shortest decimal text that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> csv::Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `prefix0, prefix1, …` for a `d`-vector.
pub fn columns(prefix: &str, d: usize) -> impl Iterator<Item = String> + '_ {
    (0..d).map(move |i| format!("{prefix}{i}"))
}

pub fn cells(values: &[f64]) -> impl Iterator<Item = String> + '_ {
    values.iter().map(|v| fmt_f64(*v))
}
