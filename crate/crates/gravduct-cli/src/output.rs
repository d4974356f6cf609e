//! Deterministic run artifacts: CSV field exports and a JSON run summary.
//!
//! Identical inputs must produce byte-identical outputs, so nothing here
//! records wall-clock time or host details. Floats are written with the
//! shortest round-trip representation, JSON objects with sorted keys.
//!
//! Field CSVs open with a comment line carrying the grid metadata needed to
//! recompute derivative stencils offline:
//!
//! ```text
//!   # n1=64 n2=64 length=0.5 domain=[0,length]x[-1,1]
//!   x1,x2,rho
//!   0,-1,2
//!   ...
//! ```

use gravduct::{Grid, ScalarField};

use serde_json::Value;
use sha2::{Digest, Sha256};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

/// Current layout version of `summary.json`; bumped on breaking changes.
pub const SCHEMA_VERSION: u32 = 1;

/// Hex SHA-256 of the raw config file, recorded in every summary.
pub fn config_sha256(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn create(path: &Path) -> std::io::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn grid_comment(grid: Grid) -> String {
    format!(
        "# n1={} n2={} length={} domain=[0,length]x[-1,1]",
        grid.n1, grid.n2, grid.length
    )
}

/// Write `summary.json` (pretty-printed, trailing newline) into `out_dir`.
pub fn write_summary(out_dir: &Path, summary: &Value) -> std::io::Result<PathBuf> {
    let path = out_dir.join("summary.json");
    let mut w = create(&path)?;
    let text = serde_json::to_string_pretty(summary).expect("summary serialization");
    writeln!(w, "{text}")?;
    w.flush()?;
    Ok(path)
}

/// One nodal field as `(x1, x2, value)` triples, x2 varying fastest.
pub fn write_field_csv(out_dir: &Path, stem: &str, field: &ScalarField) -> std::io::Result<PathBuf> {
    let grid = field.grid();
    let path = out_dir.join(format!("{stem}.csv"));
    let mut w = create(&path)?;
    writeln!(w, "{}", grid_comment(grid))?;
    writeln!(w, "x1,x2,{}", field.name())?;
    for i in 0..=grid.n1 {
        for j in 0..=grid.n2 {
            writeln!(w, "{},{},{}", grid.x1(i), grid.x2(j), field.at(i, j))?;
        }
    }
    w.flush()?;
    Ok(path)
}

/// All nodal fields side by side in one wide CSV.
pub fn write_fields_csv(
    out_dir: &Path,
    stem: &str,
    fields: &[&ScalarField],
) -> std::io::Result<PathBuf> {
    assert!(!fields.is_empty());
    let grid = fields[0].grid();
    for f in fields {
        assert_eq!(f.grid(), grid, "field grids must agree");
    }
    let path = out_dir.join(format!("{stem}.csv"));
    let mut w = create(&path)?;
    writeln!(w, "{}", grid_comment(grid))?;
    let names: Vec<&str> = fields.iter().map(|f| f.name()).collect();
    writeln!(w, "x1,x2,{}", names.join(","))?;
    for i in 0..=grid.n1 {
        for j in 0..=grid.n2 {
            write!(w, "{},{}", grid.x1(i), grid.x2(j))?;
            for f in fields {
                write!(w, ",{}", f.at(i, j))?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(path)
}

/// Tabular CSV from parallel columns (used for 1D profiles and scans).
pub fn write_table_csv(
    out_dir: &Path,
    stem: &str,
    comment: Option<&str>,
    columns: &[(&str, &[f64])],
) -> std::io::Result<PathBuf> {
    assert!(!columns.is_empty());
    let rows = columns[0].1.len();
    for (name, vals) in columns {
        assert_eq!(vals.len(), rows, "column {name} length mismatch");
    }
    let path = out_dir.join(format!("{stem}.csv"));
    let mut w = create(&path)?;
    if let Some(c) = comment {
        writeln!(w, "# {c}")?;
    }
    let names: Vec<&str> = columns.iter().map(|(n, _)| *n).collect();
    writeln!(w, "{}", names.join(","))?;
    for r in 0..rows {
        let mut first = true;
        for (_, vals) in columns {
            if first {
                write!(w, "{}", vals[r])?;
                first = false;
            } else {
                write!(w, ",{}", vals[r])?;
            }
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(path)
}

/// Plain text lines (iteration logs).
pub fn write_lines(out_dir: &Path, name: &str, lines: &[String]) -> std::io::Result<PathBuf> {
    let path = out_dir.join(name);
    let mut w = create(&path)?;
    for line in lines {
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(path)
}
