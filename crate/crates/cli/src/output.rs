//! Atomic file output, slice CSV dumps and reloading of a solved stack.

use crate::config::GridSpec;
use crate::error::{CliError, CliResult};
use infogame::model::{GameModel, ModelConfig};
use infogame::solver::{ProductGrids, Solution, SolveDiagnostics, ValueField};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

pub const SOLVE_RECORD: &str = "diagnostics.json";
pub const SLICE_DIR: &str = "slices";

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes)
        .and_then(|_| f.sync_all())
        .map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

/// Config echoed into every solve record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub model: ModelConfig,
    pub grid: GridSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveRecord {
    pub command: String,
    pub config: SolveConfig,
    pub input_sha256: String,
    pub boundary_policy: String,
    pub diagnostics: SolveDiagnostics,
    /// Slice files in increasing time.
    pub slices: Vec<String>,
}

pub fn slice_name(k: usize) -> String {
    format!("{SLICE_DIR}/slice_{k:05}.csv")
}

/// One row per product-grid node: `t, x_1.., p_1.., q_1.., w`.
pub fn slice_csv(grids: &ProductGrids, field: &ValueField) -> String {
    let (n, ni, nj) = (grids.state.dim(), grids.p.dim(), grids.q.dim());
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|d| format!("x_{d}")));
    header.extend((1..=ni).map(|i| format!("p_{i}")));
    header.extend((1..=nj).map(|j| format!("q_{j}")));
    header.push("w".into());
    let mut out = header.join(",");
    out.push('\n');
    let mut row = String::new();
    for ix in 0..grids.state.len() {
        let x = grids.state.coord(ix);
        for ip in 0..grids.p.len() {
            for iq in 0..grids.q.len() {
                row.clear();
                row.push_str(&field.t.to_string());
                for v in x.iter().chain(grids.p.point(ip)).chain(grids.q.point(iq)) {
                    row.push(',');
                    row.push_str(&v.to_string());
                }
                row.push(',');
                row.push_str(&field.get(grids, ix, ip, iq).to_string());
                row.push('\n');
                out.push_str(&row);
            }
        }
    }
    out
}

pub fn write_solution(
    dir: &Path,
    record_base: SolveRecord,
    sol: &Solution,
) -> CliResult<SolveRecord> {
    let mut record = record_base;
    record.slices.clear();
    for (k, field) in sol.slices.iter().rev().enumerate() {
        let name = slice_name(k);
        write_atomic(&dir.join(&name), slice_csv(&sol.grids, field).as_bytes())?;
        record.slices.push(name);
    }
    write_atomic(&dir.join(SOLVE_RECORD), to_json(&record).as_bytes())?;
    Ok(record)
}

fn read_slice(path: &Path, grids: &ProductGrids) -> CliResult<(f64, Vec<f64>)> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut t = f64::NAN;
    let mut values = Vec::with_capacity(grids.len());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("{}: bad number {s:?}", path.display())))
        };
        t = parse(&rec[0])?;
        values.push(parse(&rec[rec.len() - 1])?);
    }
    if values.len() != grids.len() {
        return Err(CliError::Config(format!(
            "{}: expected {} rows, found {}",
            path.display(),
            grids.len(),
            values.len()
        )));
    }
    Ok((t, values))
}

/// A stack written by `solve`, with its model.
pub struct LoadedSolution {
    pub record: SolveRecord,
    pub model: GameModel,
    pub solution: Solution,
}

pub fn load_solution(dir: &Path) -> CliResult<LoadedSolution> {
    let path = dir.join(SOLVE_RECORD);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let record: SolveRecord = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let model = record.config.model.build()?;
    let grids = record.config.grid.grids(&model)?;
    let mut slices = Vec::with_capacity(record.slices.len());
    for name in record.slices.iter().rev() {
        let (t, values) = read_slice(&dir.join(name), &grids)?;
        slices.push(ValueField::with_certificates(t, values, &grids, None));
    }
    if slices.is_empty() {
        return Err(CliError::Config(format!(
            "{}: no slices listed",
            path.display()
        )));
    }
    let solution = Solution {
        grids,
        slices,
        diagnostics: record.diagnostics.clone(),
    };
    Ok(LoadedSolution {
        record,
        model,
        solution,
    })
}
