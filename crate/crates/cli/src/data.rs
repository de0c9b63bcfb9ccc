//! Dataset and group-file ingestion, and CSV dataset output.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use tisp::GroupSpec;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

/// Reads a CSV file whose header names the features `x1..xp` and the
/// response `y`. Column order is free; other column names are rejected.
pub fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Data(format!("{}: bad header: {e}", path.display())))?
        .clone();
    let p = headers.len().saturating_sub(1);
    let mut slot = vec![usize::MAX; headers.len()];
    let mut y_col = None;
    for (c, name) in headers.iter().enumerate() {
        if name == "y" {
            if y_col.replace(c).is_some() {
                return Err(CliError::Data("column 'y' appears twice".into()));
            }
            continue;
        }
        let j = name
            .strip_prefix('x')
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&j| (1..=p).contains(&j))
            .ok_or_else(|| {
                CliError::Data(format!(
                    "{}: unexpected column '{name}' (want x1..x{p} and y)",
                    path.display()
                ))
            })?;
        if slot.contains(&(j - 1)) {
            return Err(CliError::Data(format!("column '{name}' appears twice")));
        }
        slot[c] = j - 1;
    }
    let y_col = y_col.ok_or_else(|| CliError::Data(format!("{}: no 'y' column", path.display())))?;
    if p == 0 {
        return Err(CliError::Data(format!("{}: no feature columns", path.display())));
    }

    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| CliError::Data(format!("{}: row {}: {e}", path.display(), r + 2)))?;
        let mut row = vec![0.0; p];
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                CliError::Data(format!(
                    "{}: row {}, column '{}': not a finite number: '{field}'",
                    path.display(),
                    r + 2,
                    &headers[c]
                ))
            })?;
            if c == y_col {
                ys.push(v);
            } else {
                row[slot[c]] = v;
            }
        }
        xs.extend(row);
    }
    if ys.is_empty() {
        return Err(CliError::Data(format!("{}: no observations", path.display())));
    }
    let n = ys.len();
    Ok(Dataset {
        x: DMatrix::from_row_slice(n, p, &xs),
        y: DVector::from_vec(ys),
    })
}

/// Parses a group file: one group per line, whitespace-separated 1-based
/// column indices. Blank lines and `#` comments are ignored.
pub fn read_groups(path: &Path, p: usize) -> Result<GroupSpec, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read group file {}: {e}", path.display())))?;
    let mut groups = Vec::new();
    for (l, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let group = line
            .split_whitespace()
            .map(|tok| match tok.parse::<usize>() {
                Ok(j) if (1..=p).contains(&j) => Ok(j - 1),
                _ => Err(CliError::Data(format!(
                    "{}: line {}: '{tok}' is not a column index in 1..={p}",
                    path.display(),
                    l + 1
                ))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        groups.push(group);
    }
    GroupSpec::new(groups, p).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Writes `x1..xp,y` rows with shortest round-trip float formatting.
pub fn write_dataset(out: &mut dyn Write, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header).map_err(CliError::io)?;
    for i in 0..x.nrows() {
        let mut row: Vec<String> = x.row(i).iter().map(|v| v.to_string()).collect();
        row.push(y[i].to_string());
        w.write_record(&row).map_err(CliError::io)?;
    }
    w.flush().map_err(|e| CliError::io(e.into()))?;
    Ok(())
}
