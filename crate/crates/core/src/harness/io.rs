//! CSV export of grids and run traces.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! written grid reads back bit-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::inversion::{IterationRecord, StepKind};

/// Square array of values, row `j` holding `y`-index `j` from the bottom.
#[derive(Clone, Debug, PartialEq)]
pub struct GridCsv {
    pub side: usize,
    /// `full` or `partial`.
    pub setting: String,
    pub values: Vec<f64>,
}

pub fn grid_to_string(grid: &GridCsv) -> Result<String> {
    if grid.values.len() != grid.side * grid.side {
        return Err(Error::Format(format!("{} values do not fill a {0}x{0} grid", grid.side)));
    }
    let mut out = format!("n,{}\nsetting,{}\n", grid.side, grid.setting);
    for row in grid.values.chunks(grid.side.max(1)) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

pub fn grid_from_str(text: &str) -> Result<GridCsv> {
    let mut lines = text.lines();
    let header = |line: Option<&str>, key: &str| -> Result<String> {
        line.and_then(|l| l.strip_prefix(key))
            .and_then(|l| l.strip_prefix(','))
            .map(str::to_owned)
            .ok_or_else(|| Error::Format(format!("missing `{key}` header line")))
    };
    let side: usize = header(lines.next(), "n")?.parse().map_err(|e| Error::Format(format!("bad grid size: {e}")))?;
    let setting = header(lines.next(), "setting")?;
    let mut values = Vec::with_capacity(side * side);
    for (row, line) in lines.enumerate() {
        let before = values.len();
        for cell in line.split(',') {
            values.push(cell.trim().parse::<f64>().map_err(|e| Error::Format(format!("row {row}: {e}")))?);
        }
        if values.len() - before != side {
            return Err(Error::Format(format!("row {row} has {} cells, expected {side}", values.len() - before)));
        }
    }
    if values.len() != side * side {
        return Err(Error::Format(format!("expected {side} rows, found {}", values.len() / side.max(1))));
    }
    Ok(GridCsv { side, setting, values })
}

pub fn write_grid(path: &Path, grid: &GridCsv) -> Result<()> {
    Ok(fs::write(path, grid_to_string(grid)?)?)
}

pub fn read_grid(path: &Path) -> Result<GridCsv> {
    grid_from_str(&fs::read_to_string(path)?)
}

pub const TRACE_HEADER: &str = "iter,kind,residual,reduced_residual,delta_N,update_error,t_wall_ns";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn trace_to_string(records: &[IterationRecord]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.iter,
            r.kind.as_str(),
            opt(r.residual),
            opt(r.reduced_residual),
            opt(r.delta_n),
            opt(r.update_error),
            r.t_wall_ns
        );
    }
    out
}

pub fn trace_from_str(text: &str) -> Result<Vec<IterationRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(TRACE_HEADER) {
        return Err(Error::Format("unexpected trace header".into()));
    }
    let num = |s: &str, row: usize| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|e| Error::Format(format!("trace row {row}: {e}")))
        }
    };
    lines
        .enumerate()
        .map(|(row, line)| {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 7 {
                return Err(Error::Format(format!("trace row {row} has {} cells", cells.len())));
            }
            let bad = |e: std::num::ParseIntError| Error::Format(format!("trace row {row}: {e}"));
            Ok(IterationRecord {
                iter: cells[0].parse().map_err(bad)?,
                kind: StepKind::parse(cells[1]).ok_or_else(|| Error::Format(format!("trace row {row}: bad kind")))?,
                residual: num(cells[2], row)?,
                reduced_residual: num(cells[3], row)?,
                delta_n: num(cells[4], row)?,
                update_error: num(cells[5], row)?,
                t_wall_ns: cells[6].parse().map_err(bad)?,
            })
        })
        .collect()
}

/// Trace text without the wall-time column, for reproducibility checks.
pub fn trace_without_timing(text: &str) -> String {
    text.lines().map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head)).collect::<Vec<_>>().join("\n")
}

pub fn write_trace(path: &Path, records: &[IterationRecord]) -> Result<()> {
    Ok(fs::write(path, trace_to_string(records))?)
}

pub fn read_trace(path: &Path) -> Result<Vec<IterationRecord>> {
    trace_from_str(&fs::read_to_string(path)?)
}
