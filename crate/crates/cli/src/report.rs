use std::io::Write;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Everything a command prints. Only `wall_time_ms` depends on the machine,
/// and it is present only on request.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: Vec<String>,
    pub model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub results: Table,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<u64>,
}

impl RunReport {
    pub fn new(model: impl Into<String>, columns: &[&str]) -> Self {
        RunReport {
            command: Vec::new(),
            model: model.into(),
            seed: None,
            results: Table {
                columns: columns.iter().map(|c| c.to_string()).collect(),
                rows: Vec::new(),
            },
            checks: Vec::new(),
            notes: Vec::new(),
            wall_time_ms: None,
        }
    }

    pub fn row<I, S>(&mut self, cells: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let row: Vec<String> = cells.into_iter().map(Into::into).collect();
        debug_assert_eq!(row.len(), self.results.columns.len());
        self.results.rows.push(row);
    }

    pub fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// JSON goes to `out` whole. CSV writes only the table to `out`; checks
    /// and notes go to `err` as `#` lines.
    pub fn write(&self, format: Format, out: &mut impl Write, err: &mut impl Write) -> anyhow::Result<()> {
        match format {
            Format::Json => {
                serde_json::to_writer_pretty(&mut *out, self)?;
                writeln!(out)?;
            }
            Format::Csv => {
                let mut w = csv::Writer::from_writer(&mut *out);
                w.write_record(&self.results.columns)?;
                for row in &self.results.rows {
                    w.write_record(row)?;
                }
                w.flush()?;
                for c in &self.checks {
                    writeln!(
                        err,
                        "# check {}: {} ({})",
                        c.name,
                        if c.passed { "pass" } else { "FAIL" },
                        c.detail
                    )?;
                }
                for n in &self.notes {
                    writeln!(err, "# note: {n}")?;
                }
            }
        }
        Ok(())
    }
}
