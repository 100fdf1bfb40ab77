//! On-disk synthetic datasets.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::animal::{sample_animal, AnimalTruth, SynthSpec};
use super::render::{place_in_view, render_annotation};
use super::template::Template;
use crate::imagefit::{default_focal, save_annotation, Camera};
use crate::mesh::{write_obj, Vec3};
use crate::{Error, Result};

/// One rendered view of every animal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub name: String,
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub animal: SynthSpec,
    pub views: Vec<ViewSpec>,
    /// Image size `[width, height]`.
    pub resolution: [usize; 2],
    /// Fraction of the shorter image side spanned by the animal.
    pub fill: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            animal: SynthSpec {
                remesh: true,
                ..SynthSpec::default()
            },
            views: vec![
                ViewSpec {
                    name: "side".into(),
                    yaw: std::f64::consts::FRAC_PI_2,
                },
                ViewSpec {
                    name: "three_quarter".into(),
                    yaw: std::f64::consts::FRAC_PI_4,
                },
            ],
            resolution: [512, 512],
            fill: 0.8,
        }
    }
}

/// Camera and placement of a rendered view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewTruth {
    pub camera: Camera,
    /// Row-major rotation applied to the posed animal.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

/// Contents of `truth.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    #[serde(flatten)]
    pub animal: AnimalTruth,
    pub views: BTreeMap<String, ViewTruth>,
}

/// Seed of animal `index` in a dataset seeded with `seed`.
pub fn animal_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index as u64)
}

pub fn animal_id(index: usize) -> String {
    format!("animal_{index:03}")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Write `count` animals under `dir` as `{id}/scan.obj`, `keypoints3d.json`,
/// `truth.json`, `truth.obj` and `render_{view}.json` with its mask.
pub fn write_dataset(
    dir: &Path,
    template: &Template,
    spec: &DatasetSpec,
    count: usize,
    seed: u64,
) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let [w, h] = spec.resolution;
    let camera = Camera::centered(default_focal(spec.resolution), w, h);
    let mut ids = Vec::with_capacity(count);
    for i in 0..count {
        let id = animal_id(i);
        let s = animal_seed(seed, i);
        let animal = sample_animal(template, &spec.animal, s)
            .map_err(|e| e.context(format!("animal `{id}`")))?;
        let out = dir.join(&id);
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        write_obj(&out.join("scan.obj"), &animal.scan)?;
        write_obj(&out.join("truth.obj"), &animal.posed)?;
        let kps: BTreeMap<&str, [f64; 3]> = animal
            .keypoints
            .iter()
            .map(|(n, p)| (n.as_str(), [p.x, p.y, p.z]))
            .collect();
        write_json(&out.join("keypoints3d.json"), &kps)?;
        let mut views = BTreeMap::new();
        for view in &spec.views {
            let (mesh, r, t) = place_in_view(&animal.posed, view.yaw, &camera, spec.fill);
            let obs = render_annotation(&mesh, &template.image_keypoints, &camera)
                .map_err(|e| e.context(format!("animal `{id}`, view `{}`", view.name)))?;
            save_annotation(
                &out.join(format!("render_{}.json", view.name)),
                &obs,
                &format!("render_{}.pgm", view.name),
                None,
            )?;
            let rt = r.transpose();
            views.insert(
                view.name.clone(),
                ViewTruth {
                    camera,
                    rotation: rt.as_slice().try_into().expect("3x3"),
                    translation: [t.x, t.y, t.z],
                },
            );
        }
        let truth = TruthFile {
            animal: AnimalTruth {
                family: animal.family,
                recipe: animal.recipe,
                theta: animal.theta,
                seed: s,
                noise: spec.animal.noise,
                remeshed: spec.animal.remesh,
                template_resolution: template.spec.resolution,
            },
            views,
        };
        write_json(&out.join("truth.json"), &truth)?;
        ids.push(id);
    }
    Ok(ids)
}

/// Read `keypoints3d.json`.
pub fn read_keypoints3d(path: &Path) -> Result<Vec<(String, Vec3)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let map: BTreeMap<String, [f64; 3]> =
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    Ok(map
        .into_iter()
        .map(|(n, p)| (n, Vec3::new(p[0], p[1], p[2])))
        .collect())
}
