//! CSV and JSON artifacts. Floats are written in shortest round-trip form, so
//! identical inputs give byte-identical files.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::paths::{StatePaths, TimeGrid};

/// Long-format CSV `path,node,time,value` over the first `max_paths` paths.
pub fn write_long_csv(path: &Path, process: &StatePaths, grid: &TimeGrid, max_paths: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["path", "node", "time", "value"])?;
    let m = process.n_paths().min(max_paths);
    for p in 0..m {
        for k in 0..process.n_nodes() {
            w.write_record([
                p.to_string(),
                k.to_string(),
                grid.t(k).to_string(),
                process.get(k, p).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-node `node,time,series,mean,std` over all paths.
pub fn write_summary_csv(path: &Path, grid: &TimeGrid, series: &[(String, &StatePaths)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["node", "time", "series", "mean", "std"])?;
    for (name, s) in series {
        for k in 0..s.n_nodes() {
            let (mean, std) = s.node_stats(k);
            w.write_record([
                k.to_string(),
                grid.t(k).to_string(),
                name.clone(),
                mean.to_string(),
                std.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}
