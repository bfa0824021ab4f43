//! Output plumbing: CSV tables with a trailing digest line, whitespace data
//! files, a gnuplot stub and the run manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Environment variable overriding the output root.
pub const OUTPUT_ROOT_ENV: &str = "SUPERDIFF_OUTPUT_ROOT";

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// An in-memory table rendered as CSV. Floats use Rust's shortest
/// round-trip formatting so output bytes are platform independent.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// CSV bytes with a final `# manifest-digest: <digest>` line.
    pub fn to_csv(&self, digest: &str) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        let mut out = w.into_inner().expect("in-memory flush");
        out.extend_from_slice(format!("# manifest-digest: {digest}\n").as_bytes());
        out
    }

    /// Whitespace-separated columns for plotting; non-numeric cells become `nan`.
    pub fn to_dat(&self) -> Vec<u8> {
        let mut s = format!("# {}\n", self.header.join(" "));
        for r in &self.rows {
            let cells: Vec<&str> = r.iter().map(|c| if c.parse::<f64>().is_ok() { c.as_str() } else { "nan" }).collect();
            s.push_str(&cells.join(" "));
            s.push('\n');
        }
        s.into_bytes()
    }
}

/// Format a float for output.
pub fn f(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub seed: u64,
    pub version: String,
    pub kind: String,
    pub caps: Option<crate::branching::Caps>,
    pub files: Vec<FileEntry>,
    pub wall_time_s: f64,
    pub caps_hit: Option<String>,
}

/// Write tables (CSV + .dat), a gnuplot stub, the summary and the manifest.
pub fn write_outputs(
    dir: &Path,
    digest: &str,
    tables: &[Table],
    summary: &serde_json::Value,
    mut manifest: RunManifest,
) -> Result<RunManifest> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut plot = String::from("# gnuplot stub; `gnuplot -p plot.gp`\nset key autotitle columnhead\n");
    for t in tables {
        let csv = t.to_csv(digest);
        let name = format!("{}.csv", t.name);
        std::fs::write(dir.join(&name), &csv)?;
        files.push(FileEntry {
            name,
            sha256: sha256_hex(&csv),
        });
        let dat = format!("{}.dat", t.name);
        std::fs::write(dir.join(&dat), t.to_dat())?;
        if t.header.len() >= 2 {
            plot.push_str(&format!("plot '{dat}' using 1:2 with linespoints title '{}'\n", t.header[1]));
        }
    }
    std::fs::write(dir.join("plot.gp"), plot)?;
    let summary_bytes = serde_json::to_vec_pretty(summary)?;
    std::fs::write(dir.join("summary.json"), &summary_bytes)?;
    files.push(FileEntry {
        name: "summary.json".into(),
        sha256: sha256_hex(&summary_bytes),
    });
    manifest.files = files;
    std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}
