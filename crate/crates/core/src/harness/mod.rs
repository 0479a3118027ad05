//! Command-line experiment harness: configuration, artifact writing and the
//! drivers behind each subcommand.

pub mod arrayfile;
pub mod commands;
pub mod config;
pub mod experiments;

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use arrayfile::ArrayFile;
pub use config::ExperimentConfig;

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_ill_posed() {
        3
    } else if matches!(err, Error::Config(_) | Error::Geometry(_)) {
        2
    } else {
        1
    }
}

/// Writes the artifacts of one command into the output directory, embedding
/// the resolved config and its hash in each of them.
pub struct Artifacts {
    dir: PathBuf,
    command: String,
    config: serde_json::Value,
    hash: String,
    seed: u64,
    written: Vec<PathBuf>,
}

impl Artifacts {
    pub fn create(command: &str, cfg: &ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(&cfg.output)?;
        Ok(Artifacts {
            dir: cfg.output.clone(),
            command: command.to_string(),
            config: serde_json::to_value(cfg)?,
            hash: cfg.hash(),
            seed: cfg.seed,
            written: Vec::new(),
        })
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn path(&mut self, name: &str) -> Result<PathBuf> {
        let plain = Path::new(name)
            .file_name()
            .is_some_and(|f| f == name && name != "." && name != "..");
        if !plain {
            return Err(Error::InvalidInput(format!("artifact name '{name}' is not a plain file name")));
        }
        let p = self.dir.join(name);
        self.written.push(p.clone());
        Ok(p)
    }

    fn provenance(&self) -> serde_json::Value {
        json!({
            "command": self.command,
            "config_sha256": self.hash,
            "seed": self.seed,
            "config": self.config,
        })
    }

    /// A CSV file preceded by `#` comment lines carrying the provenance.
    pub fn csv(&mut self, name: &str, header: &str, rows: &[String]) -> Result<()> {
        let mut text = format!(
            "# command: {}\n# config_sha256: {}\n# seed: {}\n# config: {}\n{header}\n",
            self.command,
            self.hash,
            self.seed,
            serde_json::to_string(&self.config)?
        );
        for r in rows {
            text.push_str(r);
            text.push('\n');
        }
        let p = self.path(name)?;
        fs::write(p, text)?;
        Ok(())
    }

    /// A JSON document `{provenance..., "result": value}`.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut doc = self.provenance();
        doc["result"] = serde_json::to_value(value)?;
        let p = self.path(name)?;
        fs::write(p, serde_json::to_string_pretty(&doc)? + "\n")?;
        Ok(())
    }

    /// An array file plus a `.json` sidecar with provenance and a description.
    pub fn array(&mut self, name: &str, array: &ArrayFile, description: &str) -> Result<()> {
        let p = self.path(&format!("{name}.hfar"))?;
        fs::write(p, array.to_bytes())?;
        let mut doc = self.provenance();
        doc["array"] = json!({
            "file": format!("{name}.hfar"),
            "dtype": array.dtype().as_str(),
            "dims": array.dims,
            "description": description,
        });
        let p = self.path(&format!("{name}.json"))?;
        fs::write(p, serde_json::to_string_pretty(&doc)? + "\n")?;
        Ok(())
    }
}

/// Formats a float for CSV output with full round-trip precision.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}
