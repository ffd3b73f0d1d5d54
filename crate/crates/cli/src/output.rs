//! File writers shared by the commands. CSV uses LF line endings and the
//! shortest round-trip scientific notation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        for (c, v) in row.iter().enumerate() {
            if c > 0 {
                s.push(',');
            }
            write!(s, "{v:e}")?;
        }
        s.push('\n');
    }
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
pub struct InputRef {
    pub path: PathBuf,
    pub sha256: String,
}

impl InputRef {
    pub fn file(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(InputRef { path: path.to_path_buf(), sha256: stochid_core::database::sha256_hex(&bytes) })
    }
}

/// Written as `run.json` next to every command's outputs.
#[derive(Serialize)]
pub struct RunManifest<'a, C: Serialize, A: Serialize> {
    pub command: &'a str,
    pub software_version: &'a str,
    pub seed: u64,
    pub inputs: Vec<InputRef>,
    pub arguments: A,
    pub config: &'a C,
}

pub fn write_run_manifest<C: Serialize, A: Serialize>(
    dir: &Path,
    command: &str,
    seed: u64,
    inputs: Vec<InputRef>,
    arguments: A,
    config: &C,
) -> Result<()> {
    let m = RunManifest { command, software_version: env!("CARGO_PKG_VERSION"), seed, inputs, arguments, config };
    write_json(&dir.join("run.json"), &m)
}
