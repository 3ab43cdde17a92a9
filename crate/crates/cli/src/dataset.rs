//! Dataset CSV files.
//!
//! Import accepts `y,w,x` (arm label, one row per unit; arm 0 is control) or
//! `y,w1,...,wK,x` with one 0/1 column per independently assigned treatment.
//! Export writes the layout matching the dataset's assignment mode.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use anyhow::{bail, Context, Result};
use treatrank::dgp::{AssignmentMode, Dataset};

enum Layout {
    Arm(usize),
    Binary(Vec<usize>),
}

fn field<'a>(record: &'a csv::StringRecord, col: usize, name: &str, row: usize) -> Result<&'a str> {
    let v = record.get(col).unwrap_or("").trim();
    if v.is_empty() {
        bail!("row {row}: column `{name}` is blank");
    }
    Ok(v)
}

pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().context("reading CSV header")?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let y_col = find("y").context("dataset header needs a `y` column")?;
    let x_col = find("x").context("dataset header needs an `x` column")?;
    let layout = if let Some(w) = find("w") {
        Layout::Arm(w)
    } else {
        let mut cols = Vec::new();
        while let Some(c) = find(&format!("w{}", cols.len() + 1)) {
            cols.push(c);
        }
        if cols.is_empty() {
            bail!("dataset header needs a `w` column or `w1..wK` columns");
        }
        Layout::Binary(cols)
    };

    let mut y = Vec::new();
    let mut codes = Vec::new();
    let mut arms = Vec::new();
    let mut binary: Vec<Vec<u8>> = match &layout {
        Layout::Binary(cols) => vec![Vec::new(); cols.len()],
        Layout::Arm(_) => Vec::new(),
    };
    for (r, record) in rdr.records().enumerate() {
        let row = r + 2;
        let record = record.with_context(|| format!("reading row {row}"))?;
        let yv: f64 = field(&record, y_col, "y", row)?
            .parse()
            .with_context(|| format!("row {row}: `y` is not a number"))?;
        if !yv.is_finite() {
            bail!("row {row}: `y` must be finite");
        }
        y.push(yv);
        codes.push(
            field(&record, x_col, "x", row)?
                .parse::<i64>()
                .with_context(|| format!("row {row}: `x` must be an integer stratum code"))?,
        );
        match &layout {
            Layout::Arm(c) => arms.push(
                field(&record, *c, "w", row)?
                    .parse::<usize>()
                    .with_context(|| format!("row {row}: `w` must be a non-negative arm label"))?,
            ),
            Layout::Binary(cols) => {
                for (j, c) in cols.iter().enumerate() {
                    let name = format!("w{}", j + 1);
                    let v = match field(&record, *c, &name, row)? {
                        "0" => 0,
                        "1" => 1,
                        other => bail!("row {row}: `{name}` must be 0 or 1, got `{other}`"),
                    };
                    binary[j].push(v);
                }
            }
        }
    }
    if y.is_empty() {
        bail!("dataset has no rows");
    }
    let strata_codes: Vec<i64> = codes
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let stratum = codes
        .iter()
        .map(|c| strata_codes.binary_search(c).expect("code collected above"))
        .collect();
    let data = match layout {
        Layout::Arm(_) => Dataset::from_arms(strata_codes, stratum, &arms, y)?,
        Layout::Binary(_) => Dataset::new(
            AssignmentMode::ParallelBinary,
            strata_codes,
            stratum,
            binary,
            y,
        )?,
    };
    Ok(data)
}

pub fn header(data: &Dataset) -> Vec<String> {
    let mut h = vec!["y".to_string()];
    match data.mode() {
        AssignmentMode::Multinomial => h.push("w".into()),
        AssignmentMode::ParallelBinary => {
            h.extend((1..=data.num_treatments()).map(|j| format!("w{j}")))
        }
    }
    h.push("x".into());
    h
}

pub fn write_dataset<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(header(data))?;
    let k = data.num_treatments();
    for i in 0..data.len() {
        let mut rec = vec![data.y()[i].to_string()];
        match data.mode() {
            AssignmentMode::Multinomial => rec.push(data.arm(i).to_string()),
            AssignmentMode::ParallelBinary => {
                rec.extend((1..=k).map(|j| data.treated(j)[i].to_string()))
            }
        }
        rec.push(data.strata_codes()[data.strata()[i]].to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}
