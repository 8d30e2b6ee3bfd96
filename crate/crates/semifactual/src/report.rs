//! Summary tables as CSV and Markdown, plus the per-record log.

use std::fs;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};

use crate::harness::{ExperimentOutput, MetricsRow, MetricsTable, RecordLog};
use crate::io;

/// Metric names in report order.
pub const METRICS: [&str; 11] = [
    "records",
    "generated",
    "generated_pct",
    "validity",
    "temporal_distance",
    "fidelity",
    "stochastic_uncertainty",
    "exceptionality",
    "gain",
    "diversity",
    "path_not_found",
];

fn cell(row: &MetricsRow, metric: &str) -> Option<f64> {
    match metric {
        "records" => Some(row.records as f64),
        "generated" => Some(row.generated as f64),
        "generated_pct" => Some(row.generated_pct),
        "validity" => row.validity,
        "temporal_distance" => row.temporal_distance,
        "fidelity" => row.fidelity,
        "stochastic_uncertainty" => row.stochastic_uncertainty,
        "exceptionality" => row.exceptionality,
        "gain" => row.gain,
        "diversity" => row.diversity,
        "path_not_found" => Some(row.path_not_found as f64),
        _ => None,
    }
}

/// Long format: `env,method,metric,value`, empty value for undefined means.
/// Floats use the shortest representation that parses back exactly.
pub fn write_csv(table: &MetricsTable, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["env", "method", "metric", "value"])?;
    for row in &table.rows {
        for m in METRICS {
            let v = cell(row, m).map(|v| v.to_string()).unwrap_or_default();
            out.write_record([row.env.as_str(), row.method.name(), m, v.as_str()])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv(r: impl Read) -> Result<MetricsTable> {
    let mut reader = csv::Reader::from_reader(r);
    let mut rows: Vec<MetricsRow> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != 4 {
            bail!("row {}: expected 4 fields", i + 2);
        }
        let env = rec[0].to_string();
        let method = rec[1].parse()?;
        let value: Option<f64> = match &rec[3] {
            "" => None,
            v => Some(v.parse().with_context(|| format!("row {}: bad value", i + 2))?),
        };
        if !rows.last().is_some_and(|r| r.env == env && r.method == method) {
            rows.push(MetricsRow {
                env,
                method,
                records: 0,
                generated: 0,
                generated_pct: 0.0,
                validity: None,
                temporal_distance: None,
                stochastic_uncertainty: None,
                fidelity: None,
                exceptionality: None,
                gain: None,
                diversity: None,
                path_not_found: 0,
            });
        }
        let row = rows.last_mut().expect("just pushed");
        let count = || value.map(|v| v as usize).context("count field is empty");
        match &rec[2] {
            "records" => row.records = count()?,
            "generated" => row.generated = count()?,
            "generated_pct" => row.generated_pct = value.unwrap_or(0.0),
            "validity" => row.validity = value,
            "temporal_distance" => row.temporal_distance = value,
            "fidelity" => row.fidelity = value,
            "stochastic_uncertainty" => row.stochastic_uncertainty = value,
            "exceptionality" => row.exceptionality = value,
            "gain" => row.gain = value,
            "diversity" => row.diversity = value,
            "path_not_found" => row.path_not_found = count()?,
            other => bail!("row {}: unknown metric `{other}`", i + 2),
        }
    }
    Ok(MetricsTable { rows })
}

fn fmt_metric(metric: &str, v: Option<f64>) -> String {
    match (metric, v) {
        (_, None) => "n/a".to_string(),
        ("records" | "generated" | "path_not_found", Some(v)) => format!("{v:.0}"),
        ("generated_pct", Some(v)) => format!("{v:.2}"),
        (_, Some(v)) => format!("{v:.3}"),
    }
}

/// One header row, one separator, then one row per metric with a column
/// per (environment, method) cell.
pub fn write_markdown(table: &MetricsTable, mut w: impl Write) -> Result<()> {
    let heads: Vec<String> = table.rows.iter().map(|r| format!("{} {}", r.env, r.method)).collect();
    writeln!(w, "| metric | {} |", heads.join(" | "))?;
    writeln!(w, "|---|{}", "---:|".repeat(heads.len()))?;
    for m in METRICS {
        let vals: Vec<String> = table.rows.iter().map(|r| fmt_metric(m, cell(r, m))).collect();
        writeln!(w, "| {m} | {} |", vals.join(" | "))?;
    }
    Ok(())
}

pub fn write_log(logs: &[RecordLog], mut w: impl Write) -> Result<()> {
    for l in logs {
        writeln!(w, "{}", serde_json::to_string(l)?)?;
    }
    Ok(())
}

pub fn read_log(r: impl BufRead) -> Result<Vec<RecordLog>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Writes `summary.csv`, `summary.md`, `records.jsonl`, `timings.csv`,
/// `factuals.jsonl` and one `<env>.qtable` per policy into `dir`.
pub fn write_outputs(out: &ExperimentOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let create = |name: &str| -> Result<std::io::BufWriter<fs::File>> {
        let p = dir.join(name);
        Ok(std::io::BufWriter::new(fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?))
    };
    write_csv(&out.table, create("summary.csv")?)?;
    write_markdown(&out.table, create("summary.md")?)?;
    write_log(&out.logs, create("records.jsonl")?)?;
    let mut t = csv::Writer::from_writer(create("timings.csv")?);
    t.write_record(["env", "method", "seconds"])?;
    for tm in &out.timings {
        t.write_record([tm.env.as_str(), tm.method.name(), &format!("{:.3}", tm.seconds)])?;
    }
    t.flush()?;
    let mut f = create("factuals.jsonl")?;
    for r in &out.records {
        writeln!(f, "{}", serde_json::to_string(r)?)?;
    }
    f.flush()?;
    for (name, q) in &out.policies {
        io::save_qtable(q, &dir.join(format!("{name}.qtable")))?;
    }
    Ok(())
}
