//! Output files: CSV tables, JSON documents and the run manifest.
//!
//! Every file is written to a temporary name in the output directory and then
//! renamed, so readers never see a partial file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hypobridge::config::KvConfig;
use hypobridge::Result;
use serde_json::{json, Map, Value};

/// Version of the CSV layouts; bumped when a column changes.
pub const CSV_SCHEMA: u32 = 1;

pub struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
    started: Instant,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Shortest representation that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v}")
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.files.push(name.to_string());
        log::info!("wrote {}", self.dir.join(name).display());
        Ok(())
    }

    pub fn write_csv<I>(&mut self, name: &str, header: &[String], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).map_err(std::io::Error::from)?;
        for r in rows {
            w.write_record(&r).map_err(std::io::Error::from)?;
        }
        let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        self.write(name, &bytes)
    }

    pub fn write_json(&mut self, name: &str, value: &Value) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    /// Write `manifest.json`: the command, resolved config, seed, version,
    /// outputs and wall-clock time, plus command-specific `extra` fields.
    pub fn finish(self, command: &str, cfg: &KvConfig, seed: u64, extra: Value) -> Result<()> {
        let config: Map<String, Value> = cfg.entries().map(|(k, v)| (k.to_string(), json!(v))).collect();
        let mut m = json!({
            "command": command,
            "config": config,
            "seed": seed,
            "version": env!("CARGO_PKG_VERSION"),
            "csv_schema": CSV_SCHEMA,
            "outputs": self.files,
            "wall_clock_seconds": self.started.elapsed().as_secs_f64(),
        });
        if let (Value::Object(m), Value::Object(e)) = (&mut m, extra) {
            m.extend(e);
        }
        let mut s = serde_json::to_string_pretty(&m)?;
        s.push('\n');
        write_atomic(&self.dir.join("manifest.json"), s.as_bytes())
    }
}

