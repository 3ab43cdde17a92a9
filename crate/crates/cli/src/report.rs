//! Flat CSV rows with fixed headers, and the output sink shared by commands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// A CSV row type. `HEADER` lists the serialized field names in order.
pub trait Row: Serialize {
    const HEADER: &'static [&'static str];
}

pub fn csv_bytes<R: Row>(rows: &[R]) -> Result<Vec<u8>> {
    let mut wtr = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    wtr.write_record(R::HEADER)?;
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.into_inner().context("flushing CSV buffer")
}

pub fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

/// A named CSV table of a report.
pub struct Table {
    pub name: &'static str,
    pub bytes: Vec<u8>,
}

impl Table {
    pub fn new<R: Row>(name: &'static str, rows: &[R]) -> Result<Self> {
        Ok(Self {
            name,
            bytes: csv_bytes(rows)?,
        })
    }
}

/// Where a command's report goes.
///
/// Without an output directory the report is printed: the full JSON
/// document, or the first table for CSV. With one, `<command>.json` or
/// every table as `<name>.csv` is written there.
pub struct Sink {
    pub dir: Option<PathBuf>,
    pub format: Format,
}

impl Sink {
    pub fn emit<T: Serialize>(&self, command: &str, json: &T, tables: &[Table]) -> Result<()> {
        match (&self.dir, self.format) {
            (None, Format::Json) => stdout(&json_bytes(json)?),
            (None, Format::Csv) => stdout(&tables[0].bytes),
            (Some(dir), Format::Json) => {
                write_file(dir, &format!("{command}.json"), &json_bytes(json)?)
            }
            (Some(dir), Format::Csv) => {
                for t in tables {
                    write_file(dir, &format!("{}.csv", t.name), &t.bytes)?;
                }
                Ok(())
            }
        }
    }
}

pub fn stdout(bytes: &[u8]) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(bytes)?;
    out.flush()?;
    Ok(())
}

pub fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
}

macro_rules! rows {
    ($( $name:ident { $( $field:ident : $ty:ty ),* $(,)? } )*) => {
        $(
            #[derive(Debug, Clone, Serialize)]
            pub struct $name {
                $( pub $field: $ty, )*
            }

            impl Row for $name {
                const HEADER: &'static [&'static str] = &[$( stringify!($field) ),*];
            }
        )*
    };
}

rows! {
    OracleRow { treatment: usize, ate: f64, wate: f64, cov_tau_gamma: f64 }
    StratumRow { treatment: usize, source: String, stratum: i64, probability: f64, tau: f64, gamma: f64 }
    ReversalRow {
        treatment_j: usize, treatment_k: usize,
        ate_j: f64, ate_k: f64, wate_j: f64, wate_k: f64, cov_j: f64, cov_k: f64,
        reversed: bool, margin: f64, condition: bool, sufficient: Option<bool>,
    }
    EstimateRow {
        method: String, treatment: usize, versus: usize, estimand: String,
        point: Option<f64>, std_error: Option<f64>, n_used: Option<usize>, error: Option<String>,
    }
    DecompositionRow {
        treatment: usize, source: String, ate: Option<f64>, cov_tau_gamma: Option<f64>, wate: Option<f64>,
        dropped_strata: Option<usize>, error: Option<String>,
    }
    RankRow { ordering: String, position: usize, treatment: usize }
    SummaryCsvRow {
        method: String, treatment: usize, n_ok: usize, mean: f64, sd: f64, q025: f64, q50: f64, q975: f64,
        oracle_ate: f64, oracle_wate: f64, bias_vs_ate: f64, bias_vs_wate: f64, correct_ranking_rate: f64,
    }
    ReplicateRow {
        replicate: usize, seed: u64, method: String, treatment: usize,
        point: Option<f64>, std_error: Option<f64>, error: Option<String>,
        clipped_count: usize, fallback_count: usize,
    }
    HistogramRow { method: String, treatment: usize, bin: usize, lower: f64, upper: f64, count: usize }
    RateRow { method: String, correct_ranking_rate: f64, failure_rate: f64 }
}
