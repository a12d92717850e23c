//! Dense CSV and Matrix Market readers and writers.
//!
//! Dense CSV: header row `id,<col ids...>`, then one row per record with the
//! record id first. Matrix Market files (`.mtx`) carry their ids in the
//! sidecar files `<path>.rows` and `<path>.cols`, one id per line.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};

use crate::error::{DotError, Result};

/// A matrix with identifiers for its rows and columns.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub values: Array2<f64>,
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
}

fn io_err(path: &Path, source: std::io::Error) -> DotError {
    DotError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> DotError {
    DotError::Parse {
        path: path.display().to_string(),
        line: line as usize,
        message: message.into(),
    }
}

fn check_unique(path: &Path, ids: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(parse_err(path, 0, format!("duplicate {what} id `{id}`")));
        }
    }
    Ok(())
}

fn is_mtx(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("mtx"))
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn csv_line(path: &Path, e: csv::Error) -> DotError {
    let line = e.position().map_or(0, |p| p.line());
    parse_err(path, line, e.to_string())
}

fn parse_value(path: &Path, line: u64, raw: &str, row: &str, col: &str) -> Result<f64> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("`{raw}` is not a number (row `{row}`, column `{col}`)")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite value in row `{row}`, column `{col}`")));
    }
    if v < 0.0 {
        return Err(parse_err(path, line, format!("negative value {v} in row `{row}`, column `{col}`")));
    }
    Ok(v)
}

/// Reads a non-negative matrix from dense CSV or Matrix Market.
pub fn read_expression_matrix(path: &Path) -> Result<LabeledMatrix> {
    let m = if is_mtx(path) { read_mtx(path)? } else { read_dense_csv(path)? };
    check_unique(path, &m.row_ids, "row")?;
    check_unique(path, &m.col_ids, "column")?;
    Ok(m)
}

fn read_dense_csv(path: &Path) -> Result<LabeledMatrix> {
    let mut reader = csv_reader(path)?;
    let header = reader.headers().map_err(|e| csv_line(path, e))?.clone();
    if header.len() < 2 {
        return Err(parse_err(path, 1, "header needs an id column and at least one data column"));
    }
    let col_ids: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut row_ids = Vec::new();
    let mut data = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_line(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec[0].trim().to_string();
        for (k, raw) in rec.iter().skip(1).enumerate() {
            data.push(parse_value(path, line, raw, &id, &col_ids[k])?);
        }
        row_ids.push(id);
    }
    let values = Array2::from_shape_vec((row_ids.len(), col_ids.len()), data)
        .map_err(|e| DotError::Internal(e.to_string()))?;
    Ok(LabeledMatrix { values, row_ids, col_ids })
}

fn read_id_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut ids = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| io_err(path, e))?;
        let t = line.trim();
        if !t.is_empty() {
            ids.push(t.to_string());
        }
    }
    Ok(ids)
}

fn read_mtx(path: &Path) -> Result<LabeledMatrix> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let (_, banner) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let banner = banner.map_err(|e| io_err(path, e))?.to_lowercase();
    let fields: Vec<&str> = banner.split_whitespace().collect();
    if fields.len() < 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" || fields[2] != "coordinate" {
        return Err(parse_err(path, 1, "expected a `%%MatrixMarket matrix coordinate` header"));
    }
    if !matches!(fields[3], "real" | "integer") || fields[4] != "general" {
        return Err(parse_err(path, 1, "only real or integer general matrices are supported"));
    }

    let mut shape: Option<(usize, usize, usize)> = None;
    let mut values = Array2::zeros((0, 0));
    let mut seen = 0usize;
    for (k, line) in lines {
        let line_no = k as u64 + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let parts: Vec<&str> = t.split_whitespace().collect();
        let bad = || parse_err(path, line_no, format!("malformed line `{t}`"));
        match shape {
            None => {
                if parts.len() != 3 {
                    return Err(bad());
                }
                let dims: Vec<usize> = parts
                    .iter()
                    .map(|p| p.parse().map_err(|_| bad()))
                    .collect::<Result<_>>()?;
                shape = Some((dims[0], dims[1], dims[2]));
                values = Array2::zeros((dims[0], dims[1]));
            }
            Some((rows, cols, _)) => {
                if parts.len() != 3 {
                    return Err(bad());
                }
                let r: usize = parts[0].parse().map_err(|_| bad())?;
                let c: usize = parts[1].parse().map_err(|_| bad())?;
                if r == 0 || c == 0 || r > rows || c > cols {
                    return Err(parse_err(path, line_no, format!("entry ({r}, {c}) outside {rows}x{cols}")));
                }
                values[[r - 1, c - 1]] = parse_value(path, line_no, parts[2], &r.to_string(), &c.to_string())?;
                seen += 1;
            }
        }
    }
    let (rows, cols, nnz) = shape.ok_or_else(|| parse_err(path, 0, "missing size line"))?;
    if seen != nnz {
        return Err(parse_err(path, 0, format!("expected {nnz} entries, found {seen}")));
    }
    let rows_path = sidecar(path, ".rows");
    let cols_path = sidecar(path, ".cols");
    let row_ids = read_id_lines(&rows_path)?;
    let col_ids = read_id_lines(&cols_path)?;
    if row_ids.len() != rows {
        return Err(parse_err(&rows_path, 0, format!("{} ids for {rows} rows", row_ids.len())));
    }
    if col_ids.len() != cols {
        return Err(parse_err(&cols_path, 0, format!("{} ids for {cols} columns", col_ids.len())));
    }
    Ok(LabeledMatrix { values, row_ids, col_ids })
}

/// Reads `id,x,y[,z]` rows and returns them in the order of `spot_ids`.
pub fn read_coordinates(path: &Path, spot_ids: &[String]) -> Result<Array2<f64>> {
    let mut reader = csv_reader(path)?;
    let header = reader.headers().map_err(|e| csv_line(path, e))?.clone();
    let dims = header.len().saturating_sub(1);
    if !(2..=3).contains(&dims) {
        return Err(parse_err(path, 1, "expected columns id,x,y or id,x,y,z"));
    }
    let mut by_id: HashMap<String, Vec<f64>> = HashMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_line(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec[0].trim().to_string();
        let mut xyz = Vec::with_capacity(dims);
        for raw in rec.iter().skip(1) {
            let v: f64 = raw
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("`{raw}` is not a coordinate")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, "non-finite coordinate"));
            }
            xyz.push(v);
        }
        if by_id.insert(id.clone(), xyz).is_some() {
            return Err(parse_err(path, line, format!("duplicate spot id `{id}`")));
        }
    }
    let missing: Vec<&str> = spot_ids
        .iter()
        .filter(|id| !by_id.contains_key(*id))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(DotError::invalid(format!(
            "{}: no coordinates for spots {}",
            path.display(),
            missing.join(", ")
        )));
    }
    if by_id.len() > spot_ids.len() {
        log::warn!(
            "{}: ignoring {} coordinate rows without a matching spot",
            path.display(),
            by_id.len() - spot_ids.len()
        );
    }
    Ok(Array2::from_shape_fn((spot_ids.len(), dims), |(i, d)| by_id[&spot_ids[i]][d]))
}

/// Two-column `key,value` table, keyed in file order.
fn read_pairs(path: &Path) -> Result<Vec<(String, String, u64)>> {
    let mut reader = csv_reader(path)?;
    let header = reader.headers().map_err(|e| csv_line(path, e))?.clone();
    if header.len() != 2 {
        return Err(parse_err(path, 1, "expected exactly two columns"));
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_line(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push((rec[0].trim().to_string(), rec[1].trim().to_string(), line));
    }
    Ok(out)
}

/// Reads `cell_id,label` rows and returns the labels in `cell_ids` order.
pub fn read_labels(path: &Path, cell_ids: &[String]) -> Result<Vec<String>> {
    let mut by_id = HashMap::new();
    for (id, label, line) in read_pairs(path)? {
        if by_id.insert(id.clone(), label).is_some() {
            return Err(parse_err(path, line, format!("duplicate cell id `{id}`")));
        }
    }
    cell_ids
        .iter()
        .map(|id| {
            by_id
                .get(id)
                .cloned()
                .ok_or_else(|| DotError::invalid(format!("{}: no label for cell `{id}`", path.display())))
        })
        .collect()
}

/// Reads `population,abundance` rows and returns them in `populations` order.
pub fn read_prior(path: &Path, populations: &[String]) -> Result<Vec<f64>> {
    let mut by_label = HashMap::new();
    for (label, raw, line) in read_pairs(path)? {
        let v = parse_value(path, line, &raw, &label, "abundance")?;
        if by_label.insert(label.clone(), v).is_some() {
            return Err(parse_err(path, line, format!("duplicate population `{label}`")));
        }
    }
    populations
        .iter()
        .map(|p| {
            by_label
                .get(p)
                .copied()
                .ok_or_else(|| DotError::invalid(format!("{}: no prior for population `{p}`", path.display())))
        })
        .collect()
}

/// Scientific notation with 17 significant digits, exact on re-read.
pub fn format_number(v: f64) -> String {
    format!("{v:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?))
}

/// Writes a dense CSV with header `id,<col_ids>`.
pub fn write_matrix_csv(path: &Path, row_ids: &[String], col_ids: &[String], values: ArrayView2<f64>) -> Result<()> {
    if values.dim() != (row_ids.len(), col_ids.len()) {
        return Err(DotError::dim("ids do not match the matrix shape"));
    }
    let mut w = csv::Writer::from_writer(create(path)?);
    let wrap = |e: csv::Error| io_err(path, std::io::Error::other(e.to_string()));
    w.write_record(std::iter::once("id").chain(col_ids.iter().map(String::as_str)))
        .map_err(wrap)?;
    for (id, row) in row_ids.iter().zip(values.rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|&v| format_number(v)));
        w.write_record(&rec).map_err(wrap)?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Writes the non-zero entries as Matrix Market plus id sidecars.
pub fn write_mtx(path: &Path, row_ids: &[String], col_ids: &[String], values: ArrayView2<f64>) -> Result<()> {
    if values.dim() != (row_ids.len(), col_ids.len()) {
        return Err(DotError::dim("ids do not match the matrix shape"));
    }
    let nnz = values.iter().filter(|&&v| v != 0.0).count();
    let mut w = create(path)?;
    let e = |err| io_err(path, err);
    writeln!(w, "%%MatrixMarket matrix coordinate real general").map_err(e)?;
    writeln!(w, "{} {} {nnz}", values.nrows(), values.ncols()).map_err(e)?;
    for ((r, c), &v) in values.indexed_iter() {
        if v != 0.0 {
            writeln!(w, "{} {} {}", r + 1, c + 1, format_number(v)).map_err(e)?;
        }
    }
    w.flush().map_err(e)?;
    for (suffix, ids) in [(".rows", row_ids), (".cols", col_ids)] {
        let p = sidecar(path, suffix);
        let mut f = create(&p)?;
        for id in ids {
            writeln!(f, "{id}").map_err(|err| io_err(&p, err))?;
        }
        f.flush().map_err(|err| io_err(&p, err))?;
    }
    Ok(())
}

/// Writes `key,value` rows under the given header.
pub fn write_pairs(path: &Path, header: [&str; 2], rows: &[(String, String)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let wrap = |e: csv::Error| io_err(path, std::io::Error::other(e.to_string()));
    w.write_record(header).map_err(wrap)?;
    for (a, b) in rows {
        w.write_record([a, b]).map_err(wrap)?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Writes coordinates as `id,x,y[,z]`.
pub fn write_coordinates(path: &Path, ids: &[String], coordinates: ArrayView2<f64>) -> Result<()> {
    let axes: Vec<String> = ["x", "y", "z"][..coordinates.ncols().min(3)]
        .iter()
        .map(|s| s.to_string())
        .collect();
    write_matrix_csv(path, ids, &axes, coordinates)
}
