//! Published mR@K / PR@K numbers for the PSG SGDet task, kept as a CSV
//! fixture for comparison against harness output.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

/// The bundled fixture.
pub const FIXTURE: &str = include_str!("../fixtures/reported_results.csv");

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ReportedRow {
    pub model: String,
    /// `plain`, `ietrans` or `ours`.
    pub variant: String,
    pub mr20: f64,
    pub mr50: f64,
    pub mr100: f64,
    pub pr20: f64,
    pub pr50: f64,
    pub pr100: f64,
}

impl ReportedRow {
    pub fn mean_recall(&self) -> [f64; 3] {
        [self.mr20, self.mr50, self.mr100]
    }

    pub fn percentile_recall(&self) -> [f64; 3] {
        [self.pr20, self.pr50, self.pr100]
    }
}

pub fn parse(text: &str) -> Result<Vec<ReportedRow>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<ReportedRow>().enumerate() {
        // header is line 1
        rows.push(rec.with_context(|| format!("reported results line {}", i + 2))?);
    }
    Ok(rows)
}

pub fn load(path: &Path) -> Result<Vec<ReportedRow>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text).with_context(|| format!("in {}", path.display()))
}

pub fn bundled() -> Result<Vec<ReportedRow>> {
    parse(FIXTURE)
}

pub fn find<'a>(rows: &'a [ReportedRow], model: &str, variant: &str) -> Result<&'a ReportedRow> {
    match rows.iter().find(|r| r.model == model && r.variant == variant) {
        Some(r) => Ok(r),
        None => bail!("no reported row for {model} / {variant}"),
    }
}
