//! Reading datasets written by `synth`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smal_core::config::require_path;
use smal_core::mesh::{read_obj, Mesh, Vec3};
use smal_core::synth::{read_keypoints3d, Family, TemplateSpec, TruthFile};
use smal_core::{Error, Result};

use crate::context::read_json;

/// Contents of `dataset.json` at the dataset root.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub template: TemplateSpec,
    pub seed: u64,
    pub animals: Vec<String>,
}

pub struct Dataset {
    pub dir: PathBuf,
    /// Template the scans were generated from.
    pub template: TemplateSpec,
    pub ids: Vec<String>,
}

/// One animal's scan and keypoints.
pub struct Animal {
    pub scan: Mesh,
    pub keypoints: Vec<(String, Vec3)>,
    pub family: Option<Family>,
}

impl Dataset {
    /// Open a dataset; without `dataset.json` every subdirectory is an
    /// animal and `fallback` is the template.
    pub fn open(dir: &Path, fallback: &TemplateSpec) -> Result<Self> {
        require_path(dir, "dataset")?;
        let index_path = dir.join("dataset.json");
        if index_path.exists() {
            let index: DatasetIndex = read_json(&index_path)?;
            if index.template != *fallback {
                log::info!(
                    "using the template of the dataset (resolution {})",
                    index.template.resolution
                );
            }
            return Ok(Self {
                dir: dir.to_path_buf(),
                template: index.template,
                ids: index.animals,
            });
        }
        let mut ids = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                ids.push(
                    path.file_name()
                        .expect("entry name")
                        .to_string_lossy()
                        .into_owned(),
                );
            }
        }
        ids.sort();
        Ok(Self {
            dir: dir.to_path_buf(),
            template: *fallback,
            ids,
        })
    }

    /// Restrict to `only`, keeping dataset order; unknown ids are an error.
    pub fn select(&mut self, only: &[String]) -> Result<()> {
        if only.is_empty() {
            return Ok(());
        }
        if let Some(missing) = only.iter().find(|id| !self.ids.contains(id)) {
            return Err(Error::InvalidArgument(format!(
                "animal `{missing}` is not in the dataset"
            )));
        }
        self.ids.retain(|id| only.contains(id));
        Ok(())
    }

    pub fn load(&self, id: &str) -> Result<Animal> {
        let dir = self.dir.join(id);
        let load = || -> Result<Animal> {
            let scan = read_obj(&dir.join("scan.obj"))?;
            let keypoints = read_keypoints3d(&dir.join("keypoints3d.json"))?;
            let truth_path = dir.join("truth.json");
            let family = if truth_path.exists() {
                read_json::<TruthFile>(&truth_path)?.animal.family
            } else {
                None
            };
            Ok(Animal {
                scan,
                keypoints,
                family,
            })
        };
        load().map_err(|e| e.context(format!("scan `{id}`")))
    }
}
