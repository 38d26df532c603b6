//! `report`: merge the metrics of several evaluation runs into one
//! plot-ready comparison table, labeled from each run's manifest and ordered
//! by effect severity.

use std::path::{Path, PathBuf};

use crate::config::load_sections;
use crate::error::{CliError, Result};
use crate::manifest::RUN_MANIFEST_FILE;

use super::evaluate::METRICS_FILE;

#[derive(Debug, clap::Args)]
pub struct ReportArgs {
    /// Evaluation run directories to aggregate.
    #[arg(required = true, value_name = "RUN_DIR")]
    pub runs: Vec<PathBuf>,
    /// Write the table here instead of standard output.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

struct RunRow {
    label: String,
    condition: String,
    effect: String,
    level: f64,
    /// Metric values as written, preserving the run's exact formatting.
    values: Vec<String>,
}

fn read_metrics(dir: &Path) -> Result<(Vec<String>, Vec<String>)> {
    let path = dir.join(METRICS_FILE);
    let text =
        std::fs::read_to_string(&path).map_err(|e| CliError::io_at(&path, e))?;
    let bad = |what: String| CliError::invalid(format!("{}: {what}", path.display()));
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(text.as_bytes());
    let mut rows = rdr.records();
    let header = rows
        .next()
        .ok_or_else(|| bad("missing header".into()))?
        .map_err(|e| bad(format!("{e}")))?;
    if header.iter().collect::<Vec<_>>() != ["metric", "value"] {
        return Err(bad("expected header metric,value".into()));
    }
    let (mut names, mut values) = (Vec::new(), Vec::new());
    for row in rows {
        let row = row.map_err(|e| bad(format!("{e}")))?;
        if row.len() != 2 {
            return Err(bad(format!("expected 2 fields, found {}", row.len())));
        }
        names.push(row.get(0).unwrap_or("").to_string());
        values.push(row.get(1).unwrap_or("").to_string());
    }
    if names.is_empty() {
        return Err(bad("no metric rows".into()));
    }
    Ok((names, values))
}

fn read_run(dir: &Path) -> Result<(Vec<String>, RunRow)> {
    let (names, values) = read_metrics(dir)?;
    let manifest_path = dir.join(RUN_MANIFEST_FILE);
    let manifest = load_sections(&manifest_path, false)?;
    let get = |section: &str, key: &str, fallback: &str| {
        manifest.get(section, key).unwrap_or(fallback).to_string()
    };
    let level_raw = get("effect", "level", "0");
    let level = level_raw.parse::<f64>().map_err(|_| {
        CliError::invalid(format!(
            "{}: effect.level is not a number: {level_raw:?}",
            manifest_path.display()
        ))
    })?;
    Ok((
        names,
        RunRow {
            label: get("evaluate", "label", "-"),
            condition: get("evaluate", "queries", "-"),
            effect: get("effect", "kind", "none"),
            level,
            values,
        },
    ))
}

pub fn run(args: &ReportArgs) -> Result<()> {
    let mut schema: Option<(Vec<String>, &Path)> = None;
    let mut rows: Vec<RunRow> = Vec::new();
    for dir in &args.runs {
        let (names, row) = read_run(dir)?;
        match &schema {
            None => schema = Some((names, dir)),
            Some((expected, first_dir)) => {
                if *expected != names {
                    return Err(CliError::invalid(format!(
                        "metric schema mismatch: {} has [{}], {} has [{}]",
                        first_dir.display(),
                        expected.join(", "),
                        dir.display(),
                        names.join(", ")
                    )));
                }
            }
        }
        rows.push(row);
    }
    let (metric_names, _) = schema.expect("at least one run dir is required");

    rows.sort_by(|a, b| {
        (&a.label, &a.condition, &a.effect)
            .cmp(&(&b.label, &b.condition, &b.effect))
            .then(a.level.total_cmp(&b.level))
    });

    let mut header = vec![
        "label".to_string(),
        "condition".to_string(),
        "effect".to_string(),
        "level".to_string(),
    ];
    header.extend(metric_names);
    let mut out: Vec<u8> = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(&header).map_err(|e| CliError::invalid(format!("{e}")))?;
        for row in &rows {
            let mut record =
                vec![row.label.clone(), row.condition.clone(), row.effect.clone(), row.level.to_string()];
            record.extend(row.values.iter().cloned());
            w.write_record(&record).map_err(|e| CliError::invalid(format!("{e}")))?;
        }
        w.flush().map_err(|e| CliError::io(format!("{e}")))?;
    }
    match &args.out {
        Some(path) => std::fs::write(path, &out).map_err(|e| CliError::io_at(path, e))?,
        None => print!("{}", String::from_utf8_lossy(&out)),
    }
    Ok(())
}
