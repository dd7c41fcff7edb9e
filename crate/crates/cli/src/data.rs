//! CSV in and out. Every file has a header row; each further row is one vector.

use std::path::Path;

use anyhow::{bail, Context, Result};
use rgl_core::lstm_vanilla::StandardizationStats;
use rgl_core::Vector;

pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vector>,
}

pub fn read_vectors(path: &Path) -> Result<Table> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("cannot open {}", path.display()))?;
    let header: Vec<String> = reader
        .headers()
        .with_context(|| format!("cannot read header of {}", path.display()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{}: bad CSV record", path.display()))?;
        let values = record
            .iter()
            .enumerate()
            .map(|(j, field)| {
                field
                    .trim()
                    .parse::<f64>()
                    .with_context(|| format!("{}: row {}, column {}: `{field}` is not a number", path.display(), i + 2, j + 1))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(Vector::new(values).with_context(|| format!("{}: row {} is empty", path.display(), i + 2))?);
    }
    if rows.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    Ok(Table { header, rows })
}

pub fn write_vectors(path: &Path, header: &[String], rows: &[Vector]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `column,mean,std_dev`, one row per feature; values round-trip exactly.
pub fn write_stats(path: &Path, header: &[String], stats: &StandardizationStats) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    w.write_record(["column", "mean", "std_dev"])?;
    for (i, name) in header.iter().enumerate() {
        w.write_record([name.clone(), stats.mean[i].to_string(), stats.std_dev[i].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_stats(path: &Path) -> Result<StandardizationStats> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("cannot open {}", path.display()))?;
    let (mut mean, mut std_dev) = (Vec::new(), Vec::new());
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| -> Result<f64> {
            record
                .get(i)
                .context("stats rows need three fields")?
                .parse()
                .with_context(|| format!("{}: bad number", path.display()))
        };
        mean.push(field(1)?);
        std_dev.push(field(2)?);
    }
    Ok(StandardizationStats {
        mean: Vector::new(mean)?,
        std_dev: Vector::new(std_dev)?,
    })
}
