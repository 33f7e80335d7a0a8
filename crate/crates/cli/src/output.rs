use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use asyncoord::metrics::CSV_COLUMNS;
use asyncoord::RunMetrics;
use serde::Serialize;

use crate::CliError;

/// CSV output with `#`-prefixed header comments.
pub struct Sink {
    out: Box<dyn Write>,
}

impl Sink {
    /// Writes to `path`, or to stdout when it is `None` or `-`.
    pub fn open(path: Option<&Path>) -> Result<Self, CliError> {
        let out: Box<dyn Write> = match path {
            Some(p) if p.as_os_str() != "-" => {
                let f = File::create(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
                Box::new(BufWriter::new(f))
            }
            _ => Box::new(BufWriter::new(io::stdout())),
        };
        Ok(Sink { out })
    }

    pub fn comment(&mut self, text: &str) -> Result<(), CliError> {
        for line in text.lines() {
            writeln!(self.out, "# {line}")?;
        }
        Ok(())
    }

    /// Echoes a serializable value as one JSON comment line.
    pub fn echo<T: Serialize>(&mut self, key: &str, value: &T) -> Result<(), CliError> {
        let json = serde_json::to_string(value).map_err(|e| CliError::Config(e.to_string()))?;
        self.comment(&format!("{key}: {json}"))
    }

    pub fn table<H, R, C>(&mut self, header: H, rows: R) -> Result<(), CliError>
    where
        H: IntoIterator,
        H::Item: AsRef<[u8]>,
        R: IntoIterator<Item = C>,
        C: IntoIterator,
        C::Item: AsRef<[u8]>,
    {
        let mut w = csv::Writer::from_writer(&mut self.out);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn metrics(&mut self, m: &RunMetrics) -> Result<(), CliError> {
        self.table(CSV_COLUMNS, m.rows.iter().map(|r| r.csv_record()))?;
        let s = &m.summary;
        self.comment(&format!(
            "summary: final_residual={:e} total_ms={:.3} updates={} max_staleness={} aux_drift={:e}",
            s.final_residual,
            s.total_ms,
            s.updates,
            s.max_staleness.map(|v| v.to_string()).unwrap_or_default(),
            s.aux_drift
        ))?;
        for w in &s.warnings {
            self.comment(&format!("warning: {w}"))?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_precede_table() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut sink = Sink::open(Some(&path)).unwrap();
        sink.comment("one\ntwo").unwrap();
        sink.echo("config", &serde_json::json!({"a": 1})).unwrap();
        sink.table(["x", "y"], [["1", "2"], ["3", "4,5"]]).unwrap();
        sink.finish().unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "# one\n# two\n# config: {\"a\":1}\nx,y\n1,2\n3,\"4,5\"\n");
    }

    #[test]
    fn unwritable_destination_is_a_data_error() {
        let err = Sink::open(Some(Path::new("/no/such/dir/out.csv"))).err().unwrap();
        assert!(matches!(err, CliError::Data(_)));
    }
}
