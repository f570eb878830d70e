//! Report writing. CSV tables start with a `# schema: sgld.<command>.v1`
//! line and get a sibling JSON summary; `--format json` writes the whole
//! report. Without `--out` the JSON summary goes to stdout.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::commands::{AnyReport, Report};
use crate::config::{ExperimentConfig, Format};
use crate::error::CliError;

#[derive(Serialize)]
struct SummaryView<'a, S> {
    schema: &'a str,
    config: &'a ExperimentConfig,
    summary: &'a S,
}

impl<'a, S, R> From<&'a Report<S, R>> for SummaryView<'a, S> {
    fn from(r: &'a Report<S, R>) -> Self {
        SummaryView {
            schema: &r.schema,
            config: &r.config,
            summary: &r.summary,
        }
    }
}

/// Path of the JSON summary written next to a CSV table.
pub fn summary_path(out: &Path) -> PathBuf {
    let candidate = out.with_extension("json");
    if candidate == out {
        out.with_extension("summary.json")
    } else {
        candidate
    }
}

pub fn write(report: &AnyReport, cfg: &ExperimentConfig) -> Result<(), CliError> {
    match report {
        AnyReport::Quantile(r) => write_report(r, cfg),
        AnyReport::VarCvar(r) => write_report(r, cfg),
        AnyReport::Portfolio(r) => write_report(r, cfg),
        AnyReport::Rate(r) => write_report(r, cfg),
        AnyReport::OracleGrid(r) => write_report(r, cfg),
    }
}

fn write_report<S: Serialize, R: Serialize>(report: &Report<S, R>, cfg: &ExperimentConfig) -> Result<(), CliError> {
    let Some(out) = &cfg.out else {
        let mut stdout = io::stdout().lock();
        serde_json::to_writer_pretty(&mut stdout, &SummaryView::from(report))?;
        writeln!(stdout)?;
        return Ok(());
    };
    match cfg.format {
        Format::Json => {
            let mut w = BufWriter::new(File::create(out)?);
            serde_json::to_writer_pretty(&mut w, report)?;
            writeln!(w)?;
            w.flush()?;
        }
        Format::Csv => {
            write_csv(out, &report.schema, &report.rows)?;
            let mut w = BufWriter::new(File::create(summary_path(out))?);
            serde_json::to_writer_pretty(&mut w, &SummaryView::from(report))?;
            writeln!(w)?;
            w.flush()?;
        }
    }
    log::info!("wrote {}", out.display());
    Ok(())
}

pub fn write_csv<R: Serialize>(path: &Path, schema: &str, rows: &[R]) -> Result<(), CliError> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "# schema: {schema}")?;
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_sits_next_to_table() {
        assert_eq!(summary_path(Path::new("out/run.csv")), Path::new("out/run.json"));
        assert_eq!(summary_path(Path::new("run.json")), Path::new("run.summary.json"));
        assert_eq!(summary_path(Path::new("run")), Path::new("run.json"));
    }
}
