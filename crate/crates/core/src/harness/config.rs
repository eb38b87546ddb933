use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EchoBackend, GenerationParams, HttpJsonBackend, LocalModelBackend, ModelBackend, ReplayBackend};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Local,
    Http,
    Replay,
    Echo,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationOverrides {
    pub max_new_tokens: Option<usize>,
    pub temperature: Option<f64>,
}

/// One model backend, as written in a TOML provider file or a `[[models]]` table:
///
/// ```toml
/// name = "zephyr"
/// kind = "http"            # local | http | replay | echo
/// endpoint = "http://127.0.0.1:8080/generate"
/// auth_env = "ZEPHYR_TOKEN"
/// [generation]
/// temperature = 0.0
/// ```
///
/// `local` reads `model_path` (the bundled model when absent) and optionally `adapter_path`; `replay` reads `path`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub name: String,
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model_path: Option<PathBuf>,
    #[serde(default)]
    pub adapter_path: Option<PathBuf>,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default)]
    pub generation: GenerationOverrides,
}

impl ProviderConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Makes relative paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.model_path, &mut self.adapter_path, &mut self.path]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn generation_params(&self, defaults: GenerationParams) -> Result<GenerationParams> {
        let params = GenerationParams {
            max_new_tokens: self.generation.max_new_tokens.unwrap_or(defaults.max_new_tokens),
            temperature: self.generation.temperature.unwrap_or(defaults.temperature),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn build(&self, seed: u64) -> Result<Box<dyn ModelBackend>> {
        if self.name.trim().is_empty() {
            return Err(Error::Config("model name is empty".into()));
        }
        let need = |field: &str| Error::Config(format!("{} backend {:?} needs {field}", kind_name(self.kind), self.name));
        Ok(match self.kind {
            BackendKind::Echo => Box::new(EchoBackend::new(&self.name)),
            BackendKind::Replay => {
                let path = self.path.as_ref().ok_or_else(|| need("path"))?;
                Box::new(ReplayBackend::open(path)?.with_name(&self.name))
            }
            BackendKind::Http => {
                let endpoint = self.endpoint.clone().ok_or_else(|| need("endpoint"))?;
                Box::new(HttpJsonBackend::new(&self.name, endpoint, self.auth_env.clone()))
            }
            BackendKind::Local => {
                Box::new(LocalModelBackend::load(
                    &self.name,
                    self.model_path.as_deref(),
                    self.adapter_path.as_deref(),
                    seed,
                )?)
            }
        })
    }
}

fn kind_name(kind: BackendKind) -> &'static str {
    match kind {
        BackendKind::Local => "local",
        BackendKind::Http => "http",
        BackendKind::Replay => "replay",
        BackendKind::Echo => "echo",
    }
}
