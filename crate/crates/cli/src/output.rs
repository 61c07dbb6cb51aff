use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Written next to every command's outputs; `herald replay` re-runs it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    /// Effective argument list after config-file expansion.
    pub args: Vec<String>,
    pub parameters: serde_json::Value,
    pub outputs: Vec<PathBuf>,
}

/// Collects files written by a command so the manifest can list them.
pub struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes through a temp file in the same directory, then renames.
    pub fn write<F>(&mut self, name: &str, body: F) -> std::io::Result<PathBuf>
    where
        F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    {
        let path = self.path(name);
        let tmp = self.dir.join(format!(".{name}.tmp-{}", std::process::id()));
        let result = (|| {
            let mut w = BufWriter::new(File::create(&tmp)?);
            body(&mut w)?;
            w.flush()?;
            w.into_inner().map_err(|e| e.into_error())?.sync_all()
        })();
        if let Err(e) = result {
            let _ = fs::remove_file(&tmp);
            return Err(e);
        }
        fs::rename(&tmp, &path)?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> std::io::Result<PathBuf> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)
        })
    }

    pub fn finish(
        mut self,
        command: &str,
        seed: Option<u64>,
        args: &[String],
        parameters: serde_json::Value,
    ) -> std::io::Result<PathBuf> {
        let manifest = RunManifest {
            command: command.to_string(),
            version: VERSION.to_string(),
            seed,
            args: args.to_vec(),
            parameters,
            outputs: self.written.clone(),
        };
        self.write_json(&format!("{command}.manifest.json"), &manifest)
    }
}
