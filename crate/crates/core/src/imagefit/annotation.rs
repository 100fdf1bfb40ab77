//! Annotation files: keypoints in JSON and a binary silhouette image.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::energy::{ImageObservation, Keypoint2};
use super::raster::Mask;
use crate::{Error, Result};

/// On-disk annotation; `silhouette` is a PNG or PGM path relative to the
/// annotation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    #[serde(default)]
    pub image: Option<String>,
    pub resolution: [usize; 2],
    pub keypoints: BTreeMap<String, Option<[f64; 2]>>,
    pub silhouette: String,
}

/// Read a binary mask; pixels at or above half intensity are inside. The
/// format follows the file contents.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: format!("cannot decode mask: {e}"),
        })?;
    Ok(Mask::from_image(&img.to_luma8()))
}

/// Write a mask as PGM or PNG according to the extension.
pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("png") => image::ImageFormat::Png,
        _ => image::ImageFormat::Pnm,
    };
    let mut bytes = std::io::Cursor::new(Vec::new());
    if format == image::ImageFormat::Pnm {
        let encoder = image::codecs::pnm::PnmEncoder::new(&mut bytes).with_subtype(
            image::codecs::pnm::PnmSubtype::Graymap(image::codecs::pnm::SampleEncoding::Binary),
        );
        mask.to_image().write_with_encoder(encoder)?;
    } else {
        mask.to_image().write_to(&mut bytes, format)?;
    }
    std::fs::write(path, bytes.into_inner()).map_err(|e| Error::io(path, e))
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// Load an annotation and its silhouette into an observation.
pub fn load_annotation(path: &Path) -> Result<(Annotation, ImageObservation)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ann: Annotation = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mask_path = resolve(path, &ann.silhouette);
    let silhouette = read_mask(&mask_path)?;
    let obs = ImageObservation {
        resolution: ann.resolution,
        keypoints: ann
            .keypoints
            .iter()
            .map(|(name, p)| Keypoint2 {
                name: name.clone(),
                position: *p,
            })
            .collect(),
        silhouette,
    };
    obs.validate()
        .map_err(|e| e.context(format!("annotation {}", path.display())))?;
    Ok((ann, obs))
}

/// Write `obs` as an annotation JSON at `path` with its mask beside it.
pub fn save_annotation(
    path: &Path,
    obs: &ImageObservation,
    mask_name: &str,
    image: Option<&str>,
) -> Result<Annotation> {
    let ann = Annotation {
        image: image.map(str::to_string),
        resolution: obs.resolution,
        keypoints: obs
            .keypoints
            .iter()
            .map(|k| (k.name.clone(), k.position))
            .collect(),
        silhouette: mask_name.to_string(),
    };
    write_mask(&resolve(path, mask_name), &obs.silhouette)?;
    let text = serde_json::to_string_pretty(&ann)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
    Ok(ann)
}
