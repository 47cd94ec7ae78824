//! System configuration files: either a named builtin with parameters or an
//! inline manifold plus symbolic generator definitions.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::expr::{self, ExprError};
use crate::fields::{ControlSystem, FieldError, VectorField};
use crate::manifold::Manifold;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("config is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config error: {0}")]
    Invalid(String),
    #[error("in generator {index}, component {component}: {source}")]
    BadComponent { index: usize, component: usize, source: ExprError },
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Top-level config document. Exactly one of the two shapes must be used:
/// `{"builtin": name, "params": {...}}` or
/// `{"manifold": {...}, "generators": [...]}`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub manifold: Option<Manifold>,
    #[serde(default)]
    pub generators: Option<Vec<GeneratorSpec>>,
    #[serde(default)]
    pub builtin: Option<String>,
    #[serde(default)]
    pub params: Option<serde_json::Value>,
}

/// One vector field given componentwise, with optional frozen control
/// values keyed "u1", "u2", ....
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub components: Vec<String>,
    #[serde(default)]
    pub controls: BTreeMap<String, f64>,
}

impl RunConfig {
    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        Self::from_str(&std::fs::read_to_string(path)?)
    }

    /// Build the control system the config describes.
    pub fn build(&self) -> Result<ControlSystem, ConfigError> {
        match (&self.builtin, &self.manifold, &self.generators) {
            (Some(name), None, None) => {
                let params = self.params.clone().unwrap_or(serde_json::Value::Null);
                Ok(crate::fields::builtin(name, &params)?)
            }
            (None, Some(manifold), Some(generators)) => {
                if self.params.is_some() {
                    return Err(ConfigError::Invalid(
                        "`params` is only valid together with `builtin`".into(),
                    ));
                }
                if generators.is_empty() {
                    return Err(ConfigError::Invalid("`generators` must not be empty".into()));
                }
                let mut fields = Vec::with_capacity(generators.len());
                for (index, spec) in generators.iter().enumerate() {
                    let controls = control_vector(&spec.controls, index)?;
                    let mut comps = Vec::with_capacity(spec.components.len());
                    for (component, text) in spec.components.iter().enumerate() {
                        let e = expr::parse(text)
                            .map_err(|source| ConfigError::BadComponent { index, component, source })?;
                        comps.push(e);
                    }
                    fields.push(VectorField::symbolic(manifold.clone(), comps, controls)?);
                }
                Ok(ControlSystem::new(manifold.clone(), fields, "config")?)
            }
            (Some(_), _, _) => Err(ConfigError::Invalid(
                "`builtin` cannot be combined with `manifold`/`generators`".into(),
            )),
            _ => Err(ConfigError::Invalid(
                "config needs either `builtin` or both `manifold` and `generators`".into(),
            )),
        }
    }
}

/// Turn {"u1": a, "u2": b} into [a, b]; keys must be exactly u1..uk.
fn control_vector(map: &BTreeMap<String, f64>, gen_index: usize) -> Result<Vec<f64>, ConfigError> {
    let mut out = vec![0.0; map.len()];
    for (key, &value) in map {
        let idx: usize = key
            .strip_prefix('u')
            .and_then(|s| s.parse().ok())
            .filter(|&i| i >= 1 && i <= map.len())
            .ok_or_else(|| {
                ConfigError::Invalid(format!(
                    "generator {gen_index}: control key `{key}` is not u1..u{}",
                    map.len()
                ))
            })?;
        out[idx - 1] = value;
    }
    Ok(out)
}

/// Convenience: read and build in one step.
pub fn load_system(path: &Path) -> Result<ControlSystem, ConfigError> {
    RunConfig::from_path(path)?.build()
}
