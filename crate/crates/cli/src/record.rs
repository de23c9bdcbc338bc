use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use vesicle_core::atomic::write_bytes_atomic;

/// Contents of `run.json`: which tool made an output and with what
/// resolved settings. Keys appear in field order.
#[derive(Debug, Serialize)]
pub struct RunRecord<'a, C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub workers: usize,
    pub config: &'a C,
    pub summary: Value,
}

/// `run.json` inside an output directory, or `<file>.run.json` beside an
/// output file.
pub fn record_path(out: &Path, out_is_dir: bool) -> PathBuf {
    if out_is_dir {
        out.join("run.json")
    } else {
        let mut s = out.as_os_str().to_owned();
        s.push(".run.json");
        s.into()
    }
}

pub fn write_record<C: Serialize>(
    path: &Path,
    subcommand: &'static str,
    workers: usize,
    config: &C,
    summary: Value,
) -> Result<()> {
    let record = RunRecord {
        tool: "vesicle",
        version: env!("CARGO_PKG_VERSION"),
        subcommand,
        workers,
        config,
        summary,
    };
    let mut json = serde_json::to_vec_pretty(&record).context("serializing run record")?;
    json.push(b'\n');
    write_bytes_atomic(path, &json)?;
    Ok(())
}
