//! Reproducibility metadata written as `#` comment lines ahead of CSV output.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::mc::McConfig;

/// Run metadata attached to every output file. Contains nothing
/// time-dependent so identical runs produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetadata {
    pub command: String,
    pub seed: u64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub horizon: f64,
    pub build: String,
    /// Extra key/value pairs in insertion order.
    pub extra: Vec<(String, String)>,
}

impl RunMetadata {
    pub fn new(command: &str, mc: &McConfig, horizon: f64, build: &str) -> Self {
        RunMetadata {
            command: command.to_string(),
            seed: mc.seed,
            n_steps: mc.n_steps,
            n_paths: mc.n_paths,
            horizon,
            build: build.to_string(),
            extra: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.extra.push((key.to_string(), value.to_string()));
        self
    }

    /// Writes the header. Readers skip it with `csv::ReaderBuilder::comment(Some(b'#'))`.
    pub fn write_header<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "# command: {}", self.command)?;
        writeln!(w, "# seed: {}", self.seed)?;
        writeln!(w, "# grid: {} steps on [0, {}]", self.n_steps, self.horizon)?;
        writeln!(w, "# paths: {}", self.n_paths)?;
        writeln!(w, "# build: {}", self.build)?;
        for (k, v) in &self.extra {
            writeln!(w, "# {k}: {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_lines_are_comments() {
        let meta = RunMetadata::new("solve", &McConfig::new(100, 50, 3), 1.0, "v0-test").with("region", "outperforming");
        let mut buf = Vec::new();
        meta.write_header(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.lines().all(|l| l.starts_with("# ")));
        assert!(text.contains("# seed: 3\n"));
        assert!(text.contains("# region: outperforming\n"));
    }

    #[test]
    fn csv_reader_skips_header() {
        let meta = RunMetadata::new("curve", &McConfig::new(10, 10, 1), 1.0, "x");
        let mut buf = Vec::new();
        meta.write_header(&mut buf).unwrap();
        buf.extend_from_slice(b"r,x\n1,2\n");
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(buf.as_slice());
        let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 1);
        assert_eq!(&rows[0][1], "2");
    }
}
