//! Shared state of one command run: configuration, output directory and
//! the manifest.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use smal_core::config::PipelineConfig;
use smal_core::smal::MODEL_VERSION;
use smal_core::{Error, Result};

pub struct Context {
    pub config: PipelineConfig,
    pub out_dir: PathBuf,
    pub command: &'static str,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    core_version: &'static str,
    model_version: u32,
    command: &'a str,
    seed: u64,
    config_sha256: String,
    outputs: Vec<String>,
}

impl Context {
    pub fn new(config: PipelineConfig, out_dir: PathBuf, command: &'static str) -> Result<Self> {
        std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
        Ok(Self {
            config,
            out_dir,
            command,
        })
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.out_dir.join(rel)
    }

    /// Effective configuration as TOML, independent of the output directory.
    fn config_text(&self) -> Result<String> {
        let mut c = self.config.clone();
        c.paths.output = PathBuf::from(".");
        c.to_toml()
    }

    /// Write `config.toml` and `manifest.json` listing every file under the
    /// output directory.
    pub fn finish(&self) -> Result<()> {
        let text = self.config_text()?;
        write_text(&self.path("config.toml"), &text)?;
        let mut outputs = Vec::new();
        list_files(&self.out_dir, &self.out_dir, &mut outputs)?;
        outputs.retain(|p| p != "manifest.json");
        outputs.sort();
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            core_version: smal_core::VERSION,
            model_version: MODEL_VERSION,
            command: self.command,
            seed: self.config.seed,
            config_sha256: hex::encode(Sha256::digest(text.as_bytes())),
            outputs,
        };
        write_json(&self.path("manifest.json"), &manifest)
    }
}

fn list_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            list_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("under root");
            out.push(
                rel.components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/"),
            );
        }
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
