//! CSV tables and JSON run manifests.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

/// Column layout of gain sweep tables.
pub const GAIN_HEADER: &str = "policy,p,q,s,r_db,lambda,mean_error,std_error,gain_db,bound_gain_db,trials,seed";
/// Column layout of analytic bound tables.
pub const BOUNDS_HEADER: &str =
    "p,q,s,r_db,lambda_star,c0,cp_exact,cp_prop1,cp_prop1_weak,cp_prop2,gain_bound_db,undetermined_lambda";

/// Row-at-a-time CSV writer that flushes after every row, so an interrupted
/// run leaves every completed row on disk.
pub struct CsvSink<W: Write> {
    writer: csv::Writer<W>,
    rows: usize,
}

impl CsvSink<File> {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(CsvSink::new(File::create(path)?))
    }
}

impl<W: Write> CsvSink<W> {
    pub fn new(inner: W) -> Self {
        CsvSink {
            writer: csv::Writer::from_writer(inner),
            rows: 0,
        }
    }

    pub fn push<T: Serialize>(&mut self, row: &T) -> Result<()> {
        self.writer.serialize(row)?;
        self.writer.flush()?;
        self.rows += 1;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn into_inner(self) -> Result<W> {
        self.writer
            .into_inner()
            .map_err(|e| crate::Error::Io(e.into_error()))
    }
}

/// Serialize `rows` to a CSV string (header included).
pub fn to_csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut sink = CsvSink::new(Vec::new());
    for r in rows {
        sink.push(r)?;
    }
    Ok(String::from_utf8(sink.into_inner()?).expect("csv output is UTF-8"))
}

/// Everything needed to re-run a command, plus what it produced.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub parameters: serde_json::Value,
    pub outputs: Vec<String>,
    pub rows_written: usize,
    pub complete: bool,
    pub error: Option<String>,
    pub wall_time_s: f64,
}

impl Manifest {
    pub fn new(command: &str, parameters: serde_json::Value) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            parameters,
            outputs: Vec::new(),
            rows_written: 0,
            complete: false,
            error: None,
            wall_time_s: 0.0,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }
}
