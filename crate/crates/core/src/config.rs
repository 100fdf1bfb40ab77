//! Pipeline configuration: one TOML document with every tunable value.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::imagefit::ImageFitConfig;
use crate::pipeline::RegistrationConfig;
use crate::smal::CoregConfig;
use crate::synth::{DatasetSpec, TemplateSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Generated dataset, one directory per animal.
    pub dataset: PathBuf,
    /// Root of all command outputs.
    pub output: PathBuf,
    /// Model file used by image fitting and rendering.
    pub model: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dataset: "dataset".into(),
            output: "out".into(),
            model: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub count: usize,
    #[serde(flatten)]
    pub dataset: DatasetSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 10,
            dataset: DatasetSpec::default(),
        }
    }
}

/// Optional pipeline stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stages {
    /// ARAP refinement after the part-model fit.
    pub arap: bool,
    /// Alternating registration and model building.
    pub coregistration: bool,
    /// Per-family shape priors in the built model.
    pub family_priors: bool,
    /// Silhouette stage of the image fit.
    pub silhouette: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Self {
            arap: true,
            coregistration: true,
            family_priors: true,
            silhouette: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub paths: Paths,
    pub template: TemplateSpec,
    pub stages: Stages,
    pub synth: SynthConfig,
    pub registration: RegistrationConfig,
    pub model: CoregConfig,
    pub image: ImageFitConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            jobs: 0,
            paths: Paths::default(),
            template: TemplateSpec::default(),
            stages: Stages::default(),
            synth: SynthConfig::default(),
            registration: RegistrationConfig::default(),
            model: CoregConfig::default(),
            image: ImageFitConfig::default(),
        }
    }
}

fn parse_error(path: &Path, message: impl ToString) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// Parse `text` as a TOML value, falling back to a bare string.
fn override_value(text: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts = key.split('.').peekable();
    let mut current = table;
    while let Some(part) = parts.next() {
        if part.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "malformed override key `{key}`"
            )));
        }
        if parts.peek().is_none() {
            current.insert(part.to_string(), value);
            return Ok(());
        }
        let entry = current
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        current = entry.as_table_mut().ok_or_else(|| {
            Error::InvalidArgument(format!("override `{key}`: `{part}` is not a table"))
        })?;
    }
    Ok(())
}

/// Every numeric leaf under a `weights` table, or under a key ending in
/// `weight`, must be finite and non-negative.
fn check_weights(
    value: &serde_json::Value,
    path: &str,
    in_weights: bool,
    errors: &mut Vec<String>,
) {
    match value {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                let p = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                let weighty = in_weights || k == "weights" || k.ends_with("weight");
                check_weights(v, &p, weighty, errors);
            }
        }
        serde_json::Value::Number(n)
            if in_weights && !n.as_f64().is_some_and(|x| x.is_finite() && x >= 0.0) =>
        {
            errors.push(format!("{path} = {n} must be a non-negative number"));
        }
        _ => {}
    }
}

/// Keys of `input` with no counterpart in the serialized configuration.
fn unknown_keys(input: &toml::Table, known: &serde_json::Value, path: &str, out: &mut Vec<String>) {
    for (k, v) in input {
        let p = if path.is_empty() {
            k.clone()
        } else {
            format!("{path}.{k}")
        };
        match known.get(k) {
            None => out.push(p),
            Some(inner) => {
                if let (Some(t), true) = (v.as_table(), inner.is_object()) {
                    unknown_keys(t, inner, &p, out);
                }
            }
        }
    }
}

impl PipelineConfig {
    /// Defaults overridden by an optional TOML file and then by `key=value`
    /// pairs with dotted keys, e.g. `image.weights.silhouette=50`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| parse_error(p, e))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (key, value) = o.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("override `{o}` is not of the form key=value"))
            })?;
            set_dotted(&mut table, key.trim(), override_value(value.trim()))?;
        }
        Self::from_table(table, path.unwrap_or(Path::new("<overrides>")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let source = Path::new("<string>");
        Self::from_table(
            toml::from_str(text).map_err(|e| parse_error(source, e))?,
            source,
        )
    }

    fn from_table(table: toml::Table, source: &Path) -> Result<Self> {
        let config: Self = toml::Value::Table(table.clone())
            .try_into()
            .map_err(|e: toml::de::Error| parse_error(source, e.message()))?;
        let mut unknown = Vec::new();
        unknown_keys(&table, &serde_json::to_value(&config)?, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(parse_error(
                source,
                format!("unknown keys: {}", unknown.join(", ")),
            ));
        }
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self)
            .map_err(|e| Error::InvalidArgument(format!("config not representable as TOML: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        check_weights(&serde_json::to_value(self)?, "", false, &mut errors);
        let mut check = |what: &str, r: Result<()>| {
            if let Err(e) = r {
                errors.push(format!("{what}: {e}"));
            }
        };
        check("template.recipe", self.template.recipe.validate());
        check("synth", self.synth.dataset.animal.validate());
        check(
            "registration.gloss.solver",
            self.registration.gloss.solver.validate(),
        );
        check("model.fit.solver", self.model.fit.solver.validate());
        check("image.solver", self.image.solver.validate());
        if self.template.resolution == 0 {
            errors.push("template.resolution must be positive".into());
        }
        if self.synth.dataset.resolution.contains(&0) {
            errors.push("synth.resolution must be positive".into());
        }
        if !(self.synth.dataset.fill > 0.0 && self.synth.dataset.fill <= 1.0) {
            errors.push("synth.fill must lie in (0, 1]".into());
        }
        for (name, sigma) in [
            ("image.keypoint_sigma", self.image.keypoint_sigma),
            ("image.silhouette_sigma", self.image.silhouette_sigma),
            (
                "registration.arap.weights.sigma_fraction",
                self.registration.arap.weights.sigma_fraction,
            ),
        ] {
            if !(sigma.is_finite() && sigma > 0.0) {
                errors.push(format!("{name} must be positive"));
            }
        }
        if self
            .image
            .focal
            .is_some_and(|f| !(f.is_finite() && f > 0.0))
        {
            errors.push("image.focal must be positive".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid configuration: {}",
                errors.join("; ")
            )))
        }
    }

    /// Model-building settings with the stage toggles applied.
    pub fn effective_coreg(&self) -> CoregConfig {
        let mut c = self.model.clone();
        if !self.stages.coregistration {
            c.rounds = 0;
        }
        c
    }

    /// Image-fit settings with the stage toggles applied.
    pub fn effective_image(&self) -> ImageFitConfig {
        let mut c = self.image.clone();
        if !self.stages.silhouette {
            c.pyramid_levels = 0;
        }
        c
    }
}

/// Fail unless `path` exists.
pub fn require_path(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{what} `{}` does not exist",
            path.display()
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        let text = c.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = PipelineConfig::from_toml("seed = 3\n[image.weights]\nsilhouette = 5.0\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.image.weights.silhouette, 5.0);
        assert_eq!(
            c.image.weights.keypoint,
            ImageFitConfig::default().weights.keypoint
        );
        assert_eq!(c.model, CoregConfig::default());
    }

    #[test]
    fn overrides_apply_after_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 3\njobs = 2\n").unwrap();
        let c = PipelineConfig::load(
            Some(&path),
            &[
                "seed=9".into(),
                "model.rounds = 2".into(),
                "paths.output=results".into(),
                "image.family=feline".into(),
            ],
        )
        .unwrap();
        assert_eq!((c.seed, c.jobs, c.model.rounds), (9, 2, 2));
        assert_eq!(c.paths.output, PathBuf::from("results"));
        assert_eq!(c.image.family.as_deref(), Some("feline"));
    }

    #[test]
    fn negative_weights_are_rejected() {
        for o in [
            "image.weights.silhouette=-1.0",
            "model.coupling_weight=-0.5",
            "registration.gloss.weights.stitch=-2.0",
        ] {
            let err = PipelineConfig::load(None, &[o.into()]).unwrap_err();
            assert!(matches!(err, Error::InvalidArgument(_)), "{o}: {err}");
        }
        let ok = PipelineConfig::load(None, &["model.coupling_weight=0.0".into()]).unwrap();
        assert_eq!(ok.model.coupling_weight, 0.0);
    }

    #[test]
    fn malformed_input_is_reported() {
        assert!(PipelineConfig::load(None, &["noequals".into()]).is_err());
        assert!(PipelineConfig::load(None, &["seed.x=1".into()]).is_err());
        assert!(PipelineConfig::load(None, &["seed=\"abc\"".into()]).is_err());
        assert!(PipelineConfig::load(None, &["image.keypoint_sigma=0.0".into()]).is_err());
        assert!(PipelineConfig::load(None, &["synth.animal.noise=0.5".into()]).is_err());
        let typo = PipelineConfig::load(None, &["image.wieghts.keypoint=1.0".into()]).unwrap_err();
        assert!(typo.to_string().contains("image.wieghts"), "{typo}");
        let missing =
            PipelineConfig::load(Some(Path::new("/nonexistent/c.toml")), &[]).unwrap_err();
        assert!(matches!(missing, Error::Io { .. }));
    }

    #[test]
    fn stage_toggles_disable_stages() {
        let mut c = PipelineConfig::default();
        assert_eq!(c.effective_coreg().rounds, c.model.rounds);
        c.stages.coregistration = false;
        c.stages.silhouette = false;
        assert_eq!(c.effective_coreg().rounds, 0);
        assert_eq!(c.effective_image().pyramid_levels, 0);
    }
}
