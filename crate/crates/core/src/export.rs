//! CSV and JSON writers (and readers) for every artifact the pipeline emits.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::MatchResult;
use crate::propensity::OverlapReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Config(format!("unknown format `{other}`"))),
        }
    }
}

pub fn write_csv_records<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = csv::Writer::from_writer(BufWriter::new(file));
    for record in records {
        out.serialize(record)?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_csv_records<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(BufReader::new(file));
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// Writes records as CSV, or as a JSON array.
pub fn write_records<T: Serialize>(path: impl AsRef<Path>, records: &[T], format: Format) -> Result<()> {
    match format {
        Format::Csv => write_csv_records(path, records),
        Format::Json => write_json(path, records),
    }
}

pub fn read_records<T: DeserializeOwned>(path: impl AsRef<Path>, format: Format) -> Result<Vec<T>> {
    match format {
        Format::Csv => read_csv_records(path),
        Format::Json => read_json(path),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub focal_id: usize,
    pub match_id: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KCountRecord {
    pub unit_id: usize,
    pub k: f64,
}

pub fn pair_records(result: &MatchResult) -> Vec<PairRecord> {
    result
        .pairs
        .iter()
        .map(|p| PairRecord {
            focal_id: p.focal,
            match_id: p.matched,
            weight: p.weight,
        })
        .collect()
}

pub fn k_count_records(result: &MatchResult) -> Vec<KCountRecord> {
    result
        .k_counts
        .iter()
        .enumerate()
        .map(|(unit_id, &k)| KCountRecord { unit_id, k })
        .collect()
}

/// One row per arm of an [`OverlapReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapRecord {
    pub arm: u8,
    pub n: usize,
    pub lo: f64,
    pub hi: f64,
    pub below: usize,
    pub above: usize,
    pub fraction_outside: f64,
    pub min: f64,
    pub q05: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q95: f64,
    pub max: f64,
    pub poor_overlap: bool,
}

pub fn overlap_records(report: &OverlapReport) -> Vec<OverlapRecord> {
    let (lo, hi) = report.thresholds;
    report
        .arms
        .iter()
        .map(|a| OverlapRecord {
            arm: a.arm,
            n: a.n,
            lo,
            hi,
            below: a.below,
            above: a.above,
            fraction_outside: a.fraction_outside,
            min: a.min,
            q05: a.quantiles[0],
            q25: a.quantiles[1],
            q50: a.quantiles[2],
            q75: a.quantiles[3],
            q95: a.quantiles[4],
            max: a.max,
            poor_overlap: report.poor_overlap,
        })
        .collect()
}
