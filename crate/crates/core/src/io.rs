//! CSV ingestion and persistence.
//!
//! Two file formats are supported:
//!
//! * labelled source data — header `x1,...,xd,label`, one row per point,
//!   labels are 1-based integer class ids;
//! * plain point clouds — header `x1,...,xd`, read as a uniform measure.
//!
//! Floats are written with round-trip precision so that re-reading a file
//! reproduces the values bit for bit.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, LabeledSample};

fn parse_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path)?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn header_dim(path: &Path, headers: &csv::StringRecord, labeled: bool) -> Result<usize> {
    let cols = headers.len();
    let d = if labeled { cols.checked_sub(1) } else { Some(cols) }
        .filter(|&d| d > 0)
        .ok_or_else(|| parse_err(path, "too few columns"))?;
    for (i, name) in headers.iter().take(d).enumerate() {
        let expect = format!("x{}", i + 1);
        if name != expect {
            return Err(parse_err(
                path,
                format!("column {} is named {name:?}, expected {expect:?}", i + 1),
            ));
        }
    }
    if labeled && headers.get(d) != Some("label") {
        return Err(parse_err(path, "last column must be named \"label\""));
    }
    Ok(d)
}

/// Reads a labelled source file (`x1,...,xd,label`).
pub fn read_labeled_csv(path: impl AsRef<Path>) -> Result<LabeledSample> {
    let path = path.as_ref();
    let mut reader = open_reader(path)?;
    let headers = reader.headers().map_err(|e| parse_err(path, e.to_string()))?.clone();
    let d = header_dim(path, &headers, true)?;

    let mut coords = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(path, e.to_string()))?;
        if record.len() != d + 1 {
            return Err(parse_err(path, format!("row {}: wrong column count", row + 2)));
        }
        for field in record.iter().take(d) {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(path, format!("row {}: bad number {field:?}", row + 2)))?;
            coords.push(v);
        }
        let label: usize = record[d]
            .parse()
            .map_err(|_| parse_err(path, format!("row {}: bad label {:?}", row + 2, &record[d])))?;
        labels.push(label);
    }
    let n = labels.len();
    if n == 0 {
        return Err(parse_err(path, "no data rows"));
    }
    let points = Array2::from_shape_vec((n, d), coords)
        .map_err(|e| parse_err(path, e.to_string()))?;
    LabeledSample::new(points, labels)
}

/// Reads a plain point file (`x1,...,xd`) as a uniform measure.
pub fn read_points_csv(path: impl AsRef<Path>) -> Result<DiscreteMeasure> {
    let path = path.as_ref();
    let mut reader = open_reader(path)?;
    let headers = reader.headers().map_err(|e| parse_err(path, e.to_string()))?.clone();
    let d = header_dim(path, &headers, false)?;

    let mut coords = Vec::new();
    let mut n = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(path, e.to_string()))?;
        if record.len() != d {
            return Err(parse_err(path, format!("row {}: wrong column count", row + 2)));
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(path, format!("row {}: bad number {field:?}", row + 2)))?;
            coords.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(parse_err(path, "no data rows"));
    }
    let points = Array2::from_shape_vec((n, d), coords)
        .map_err(|e| parse_err(path, e.to_string()))?;
    DiscreteMeasure::uniform(points)
}

/// Reads a one-column `label` file (as written next to simulated targets).
pub fn read_labels_csv(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let mut reader = open_reader(path)?;
    let headers = reader.headers().map_err(|e| parse_err(path, e.to_string()))?.clone();
    if headers.len() != 1 || headers.get(0) != Some("label") {
        return Err(parse_err(path, "expected a single column named \"label\""));
    }
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(path, e.to_string()))?;
        let label: usize = record[0]
            .parse()
            .map_err(|_| parse_err(path, format!("row {}: bad label {:?}", row + 2, &record[0])))?;
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(parse_err(path, "no data rows"));
    }
    Ok(labels)
}

fn write_header(out: &mut impl Write, d: usize, label: bool) -> Result<()> {
    for i in 0..d {
        if i > 0 {
            write!(out, ",")?;
        }
        write!(out, "x{}", i + 1)?;
    }
    if label {
        write!(out, ",label")?;
    }
    writeln!(out)?;
    Ok(())
}

/// Writes points and labels in the labelled source format.
pub fn write_labeled_csv(path: impl AsRef<Path>, sample: &LabeledSample) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    write_header(&mut out, sample.dim(), true)?;
    for (row, label) in sample.points().rows().into_iter().zip(sample.labels()) {
        for x in row.iter() {
            write!(out, "{x},")?;
        }
        writeln!(out, "{label}")?;
    }
    out.flush()?;
    Ok(())
}

/// Writes the atoms of a measure in the plain point format (weights are
/// not persisted; the format is for uniform samples).
pub fn write_points_csv(path: impl AsRef<Path>, points: &Array2<f64>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    write_header(&mut out, points.ncols(), false)?;
    for row in points.rows() {
        let mut first = true;
        for x in row.iter() {
            if !first {
                write!(out, ",")?;
            }
            write!(out, "{x}")?;
            first = false;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes a one-column label file.
pub fn write_labels_csv(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    writeln!(out, "label")?;
    for l in labels {
        writeln!(out, "{l}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a flat `key=value` configuration file. Blank lines and lines
/// starting with `#` are ignored.
pub fn read_kv_config(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(parse_err(
                path,
                format!("line {}: expected key=value, got {line:?}", lineno + 1),
            ));
        };
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}
