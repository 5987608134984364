//! Numeric CSV tables: one point per row, one coordinate per column.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Metric, PointCloud};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CsvOptions {
    /// Skip the first row.
    pub has_header: bool,
    pub metric: Metric,
}

pub fn read_csv(path: impl AsRef<Path>, options: CsvOptions) -> Result<PointCloud> {
    let bytes = fs::read(path.as_ref())?;
    parse_csv(&bytes, options)
}

/// Parses CSV bytes. Rows and columns in errors are 1-based and count the
/// header row when present.
pub fn parse_csv(bytes: &[u8], options: CsvOptions) -> Result<PointCloud> {
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(options.has_header)
        .flexible(true)
        .trim(::csv::Trim::All)
        .from_reader(bytes);
    let row_offset = if options.has_header { 2 } else { 1 };
    let mut dim = None;
    let mut coords = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + row_offset;
        let record = record.map_err(|e| Error::Parse { row, column: 0, reason: e.to_string() })?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let expected = *dim.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::Parse {
                row,
                column: record.len().min(expected) + 1,
                reason: format!("row has {} columns, expected {expected}", record.len()),
            });
        }
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: col + 1,
                reason: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse { row, column: col + 1, reason: format!("non-finite value {cell:?}") });
            }
            coords.push(v);
        }
    }
    let Some(dim) = dim else {
        return Err(Error::Parse { row: row_offset, column: 1, reason: "no data rows".into() });
    };
    PointCloud::from_flat(dim, coords, options.metric)
}

/// Formats rows of numbers; `Display` for `f64` is the shortest string
/// that parses back to the same value.
pub fn format_rows<'a, I, R>(header: Option<&[&str]>, rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = &'a f64>,
{
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&h.join(","));
        out.push('\n');
    }
    for row in rows {
        for (j, v) in row.into_iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v}").expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

pub fn write_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    fs::write(path, format_rows(None, cloud.points()))?;
    Ok(())
}

/// One value per line.
pub fn write_column(path: impl AsRef<Path>, header: Option<&str>, values: &[f64]) -> Result<()> {
    let h = header.map(|h| [h]);
    fs::write(path, format_rows(h.as_ref().map(|h| &h[..]), values.iter().map(std::slice::from_ref)))?;
    Ok(())
}

/// Reads a single-column file of distances (or any values).
pub fn read_column(path: impl AsRef<Path>, has_header: bool) -> Result<Vec<f64>> {
    let cloud = read_csv(path, CsvOptions { has_header, ..Default::default() })?;
    if cloud.dim() != 1 {
        return Err(Error::Parse {
            row: 1,
            column: 2,
            reason: format!("expected a single column, found {}", cloud.dim()),
        });
    }
    Ok(cloud.coords().to_vec())
}
