//! CSV formats for designs, input specs and datasets.
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! write → parse reproduces every value bit for bit.
//!
//! Dataset files start with `#` header lines declaring the format, the
//! replication count and each input's range, followed by a table whose
//! input columns are in physical units:
//!
//! ```text
//! # mgpkit-dataset-v1
//! # reps,5
//! # input,pressure_mpa,10,35
//! pressure_mpa,...,hpt,ipt,lpt
//! 22.5,...,41.2,38.9,17.3
//! ```
//!
//! An empty output cell means that output was not observed on that row.

use csv::{ReaderBuilder, StringRecord, WriterBuilder};
use nalgebra::{DMatrix, DVector};

use crate::design::InputSpec;
use crate::error::{Error, Result};
use crate::mgp::Dataset;

pub const DATASET_FORMAT: &str = "mgpkit-dataset-v1";

fn parse_err(line: u64, column: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse { line, column: column.into(), message: message.into() }
}

fn csv_err(e: csv::Error, offset: u64) -> Error {
    let line = e.position().map_or(0, |p| p.line()) + offset;
    parse_err(line, "-", e.to_string())
}

/// Writes rows of strings as CSV text.
fn write_rows(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = WriterBuilder::new().from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

/// A parsed table: header, records with their 1-based line numbers.
struct Table {
    header: Vec<String>,
    records: Vec<(u64, StringRecord)>,
}

fn read_table(text: &str, offset: u64) -> Result<Table> {
    let mut r = ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> =
        r.headers().map_err(|e| csv_err(e, offset))?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(parse_err(offset + 1, "-", "missing header row"));
    }
    let mut records = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(e, offset))?;
        let line = rec.position().map_or(0, |p| p.line()) + offset;
        if rec.len() != header.len() {
            return Err(parse_err(
                line,
                "-",
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        records.push((line, rec));
    }
    Ok(Table { header, records })
}

fn number(cell: &str, line: u64, column: &str) -> Result<f64> {
    let v: f64 = cell.parse().map_err(|_| parse_err(line, column, format!("'{cell}' is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(line, column, format!("'{cell}' is not finite")));
    }
    Ok(v)
}

/// Header names and a numeric matrix, one row per record.
pub fn write_matrix_csv(names: &[String], m: &DMatrix<f64>) -> String {
    write_rows(names, (0..m.nrows()).map(|r| m.row(r).iter().map(|v| v.to_string()).collect()))
}

/// Parses an all-numeric CSV with a header row.
pub fn parse_matrix_csv(text: &str) -> Result<(Vec<String>, DMatrix<f64>)> {
    let t = read_table(text, 0)?;
    let mut m = DMatrix::zeros(t.records.len(), t.header.len());
    for (r, (line, rec)) in t.records.iter().enumerate() {
        for (c, cell) in rec.iter().enumerate() {
            m[(r, c)] = number(cell, *line, &t.header[c])?;
        }
    }
    Ok((t.header, m))
}

/// Parses a unit-hypercube design; every value must lie in `[0, 1]`.
pub fn parse_unit_design_csv(text: &str) -> Result<(Vec<String>, DMatrix<f64>)> {
    let (names, m) = parse_matrix_csv(text)?;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let v = m[(r, c)];
            if !(0.0..=1.0).contains(&v) {
                return Err(parse_err(
                    r as u64 + 2,
                    names[c].clone(),
                    format!("{v} lies outside the unit interval"),
                ));
            }
        }
    }
    Ok((names, m))
}

/// `name,lower,upper` per input.
pub fn write_specs_csv(specs: &[InputSpec]) -> String {
    let header = ["name", "lower", "upper"].map(String::from);
    write_rows(&header, specs.iter().map(|s| vec![s.name.clone(), s.lower.to_string(), s.upper.to_string()]))
}

pub fn parse_specs_csv(text: &str) -> Result<Vec<InputSpec>> {
    let t = read_table(text, 0)?;
    if t.header != ["name", "lower", "upper"] {
        return Err(parse_err(1, "-", "header must be name,lower,upper"));
    }
    t.records
        .iter()
        .map(|(line, rec)| {
            let lower = number(&rec[1], *line, "lower")?;
            let upper = number(&rec[2], *line, "upper")?;
            InputSpec::new(rec[0].to_string(), lower, upper)
                .map_err(|e| parse_err(*line, "name", e.to_string()))
        })
        .collect()
}

/// Maps the named columns of a physical-unit table onto `specs`, returning
/// unit-hypercube points. Columns may appear in any order; extra columns are
/// rejected.
pub fn points_to_unit(names: &[String], phys: &DMatrix<f64>, specs: &[InputSpec]) -> Result<DMatrix<f64>> {
    let mut order = Vec::with_capacity(specs.len());
    for s in specs {
        let c = names
            .iter()
            .position(|n| n == &s.name)
            .ok_or_else(|| parse_err(1, s.name.clone(), "input column missing"))?;
        order.push(c);
    }
    if names.len() != specs.len() {
        let extra = names.iter().find(|n| !specs.iter().any(|s| &s.name == *n));
        return Err(parse_err(1, extra.cloned().unwrap_or_default(), "unknown column"));
    }
    Ok(DMatrix::from_fn(phys.nrows(), specs.len(), |r, v| specs[v].to_unit(phys[(r, order[v])])))
}

/// Serializes a dataset in the documented format.
///
/// Isotopic datasets get one row per observation with every output filled;
/// otherwise each output's observations are listed separately with the other
/// output cells empty.
pub fn write_dataset_csv(data: &Dataset) -> String {
    let mut out = format!("# {DATASET_FORMAT}\n# reps,{}\n", data.reps);
    for s in &data.specs {
        out.push_str(&format!("# input,{},{},{}\n", s.name, s.lower, s.upper));
    }
    let header: Vec<String> =
        data.specs.iter().map(|s| s.name.clone()).chain(data.output_names.iter().cloned()).collect();
    let phys_row = |x: &DMatrix<f64>, r: usize| -> Vec<String> {
        data.specs.iter().enumerate().map(|(c, s)| s.to_physical(x[(r, c)]).to_string()).collect()
    };
    let mut rows = Vec::new();
    if data.is_isotopic() {
        for r in 0..data.x[0].nrows() {
            let mut row = phys_row(&data.x[0], r);
            row.extend(data.y.iter().map(|y| y[r].to_string()));
            rows.push(row);
        }
    } else {
        for k in 0..data.k() {
            for r in 0..data.x[k].nrows() {
                let mut row = phys_row(&data.x[k], r);
                row.extend(
                    (0..data.k()).map(|j| if j == k { data.y[k][r].to_string() } else { String::new() }),
                );
                rows.push(row);
            }
        }
    }
    out.push_str(&write_rows(&header, rows));
    out
}

pub fn parse_dataset_csv(text: &str) -> Result<Dataset> {
    let mut reps = None;
    let mut specs = Vec::new();
    let mut offset = 0u64;
    let mut seen_format = false;
    let mut body_start = 0;
    for line in text.split_inclusive('\n') {
        let Some(rest) = line.trim_end().strip_prefix('#') else {
            break;
        };
        offset += 1;
        body_start += line.len();
        let fields: Vec<&str> = rest.split(',').map(str::trim).collect();
        match fields.as_slice() {
            [f] if *f == DATASET_FORMAT => seen_format = true,
            ["reps", v] => {
                reps = Some(
                    v.parse::<usize>()
                        .ok()
                        .filter(|r| *r >= 1)
                        .ok_or_else(|| parse_err(offset, "reps", format!("'{v}' is not a count >= 1")))?,
                )
            }
            ["input", name, lo, hi] => {
                let lo = number(lo, offset, "lower")?;
                let hi = number(hi, offset, "upper")?;
                specs.push(
                    InputSpec::new(*name, lo, hi).map_err(|e| parse_err(offset, *name, e.to_string()))?,
                );
            }
            _ => {
                return Err(parse_err(offset, "-", format!("unrecognized header line '{}'", line.trim_end())))
            }
        }
    }
    if !seen_format {
        return Err(parse_err(1, "-", format!("missing '# {DATASET_FORMAT}' line")));
    }
    if specs.is_empty() {
        return Err(parse_err(offset.max(1), "-", "no '# input' lines"));
    }
    let t = read_table(&text[body_start..], offset)?;
    let l = specs.len();
    for (c, s) in specs.iter().enumerate() {
        if t.header.get(c) != Some(&s.name) {
            return Err(parse_err(
                offset + 1,
                t.header.get(c).cloned().unwrap_or_default(),
                format!("column {} must be input '{}'", c + 1, s.name),
            ));
        }
    }
    let names: Vec<String> = t.header[l..].to_vec();
    if names.is_empty() {
        return Err(parse_err(offset + 1, "-", "no output columns"));
    }
    let k = names.len();
    let mut xs: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut ys: Vec<Vec<f64>> = vec![Vec::new(); k];
    for (line, rec) in &t.records {
        let mut unit = Vec::with_capacity(l);
        for (c, s) in specs.iter().enumerate() {
            unit.push(s.to_unit(number(&rec[c], *line, &s.name)?));
        }
        for j in 0..k {
            let cell = &rec[l + j];
            if cell.is_empty() {
                continue;
            }
            ys[j].push(number(cell, *line, &names[j])?);
            xs[j].extend_from_slice(&unit);
        }
    }
    for (j, y) in ys.iter().enumerate() {
        if y.is_empty() {
            return Err(parse_err(offset + 1, names[j].clone(), "output has no observations"));
        }
    }
    let x = xs.into_iter().zip(&ys).map(|(v, y)| DMatrix::from_row_slice(y.len(), l, &v)).collect();
    let y = ys.into_iter().map(DVector::from_vec).collect();
    Dataset::new(specs, x, y, reps.unwrap_or(1), names)
}
