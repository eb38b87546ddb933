//! TOML run configuration. Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ce_core::finetune::{LoraConfig, TrainConfig};
use ce_core::harness::{BackendKind, CollectOptions, GenerationOverrides, GenerationParams, ProviderConfig};
use ce_core::metrics::{CeWeights, Correlation};
use ce_core::report::ProjectionMethod;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    /// JSON-lines file of posts.
    Fixture,
    /// Live forum listings.
    Reddit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub source: SourceKind,
    #[serde(default)]
    pub posts: Option<PathBuf>,
    /// Defaults to the subreddits named in the fixture, or the built-in list for live sources.
    #[serde(default)]
    pub subreddits: Option<Vec<String>>,
    /// Size of the evaluated subset; every question when absent.
    #[serde(default)]
    pub subset_size: Option<usize>,
    #[serde(default)]
    pub include_list: Option<PathBuf>,
    #[serde(default = "one")]
    pub parallelism: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferencesSection {
    pub user_responses: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconSection {
    pub latin_american: PathBuf,
    pub western: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProvidersSection {
    pub sentiment: String,
    pub embedding: String,
    pub sentiment_endpoint: Option<String>,
    pub embedding_endpoint: Option<String>,
    pub auth_env: Option<String>,
    /// Persist provider outputs under `<run>/cache/`.
    pub cache: bool,
}

impl Default for ProvidersSection {
    fn default() -> Self {
        ProvidersSection {
            sentiment: "double:lexicon".into(),
            embedding: "double:hashed-bow".into(),
            sentiment_endpoint: None,
            embedding_endpoint: None,
            auth_env: None,
            cache: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectSection {
    pub parallelism: usize,
    pub retries: usize,
}

impl Default for CollectSection {
    fn default() -> Self {
        let d = CollectOptions::default();
        CollectSection { parallelism: d.parallelism, retries: d.retries }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    /// `Model,Question,Annotation` rows.
    pub annotations: PathBuf,
    #[serde(default)]
    pub correlation: Correlation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsSection {
    pub level: f64,
    pub resamples: usize,
}

impl Default for StatsSection {
    fn default() -> Self {
        StatsSection { level: 0.95, resamples: 10_000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSection {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// Name of the base model in outputs; the adapted model is `<name>-lora`.
    #[serde(default = "default_finetune_name")]
    pub name: String,
    /// Saved tiny model; the bundled one when absent.
    #[serde(default)]
    pub model_path: Option<PathBuf>,
    /// Held-out questions drawn from outside the evaluated subset.
    #[serde(default)]
    pub test_size: usize,
    #[serde(default)]
    pub lora: LoraConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub generation: GenerationOverrides,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    pub projections: Vec<ProjectionMethod>,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection { projections: vec![ProjectionMethod::Isomap, ProjectionMethod::Tsne] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub corpus: CorpusSection,
    pub references: ReferencesSection,
    #[serde(default)]
    pub lexicons: Option<LexiconSection>,
    #[serde(default)]
    pub providers: ProvidersSection,
    #[serde(default)]
    pub generation: GenerationParams,
    #[serde(default)]
    pub collect: CollectSection,
    #[serde(default)]
    pub models: Vec<ProviderConfig>,
    #[serde(default)]
    pub weights: CeWeights<f64>,
    #[serde(default)]
    pub calibration: Option<CalibrationSection>,
    #[serde(default)]
    pub stats: StatsSection,
    #[serde(default)]
    pub finetune: Option<FinetuneSection>,
    #[serde(default)]
    pub report: ReportSection,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_finetune_name() -> String {
    "tiny-lm".into()
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text)?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads the config file and returns it with its raw bytes, which name the run.
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path).with_context(|| format!("{}", path.display()))?;
        let text = String::from_utf8(bytes.clone()).with_context(|| format!("{}: not UTF-8", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = Self::parse(&text, base).with_context(|| format!("{}", path.display()))?;
        Ok((cfg, bytes))
    }

    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.out);
        if let Some(p) = self.corpus.posts.as_mut() {
            resolve(base, p);
        }
        if let Some(p) = self.corpus.include_list.as_mut() {
            resolve(base, p);
        }
        resolve(base, &mut self.references.user_responses);
        if let Some(l) = self.lexicons.as_mut() {
            resolve(base, &mut l.latin_american);
            resolve(base, &mut l.western);
        }
        for m in &mut self.models {
            m.resolve_paths(base);
        }
        if let Some(c) = self.calibration.as_mut() {
            resolve(base, &mut c.annotations);
        }
        if let Some(p) = self.finetune.as_mut().and_then(|f| f.model_path.as_mut()) {
            resolve(base, p);
        }
    }

    fn validate(&self) -> Result<()> {
        if self.corpus.source == SourceKind::Fixture && self.corpus.posts.is_none() {
            bail!("corpus.source = \"fixture\" needs corpus.posts");
        }
        if self.models.is_empty() {
            bail!("no [[models]] configured");
        }
        let mut names = std::collections::HashSet::new();
        for m in &self.models {
            if m.name.is_empty() || !m.name.chars().all(|c| c.is_ascii_alphanumeric() || "._+-".contains(c)) {
                bail!("model name {:?} must be non-empty ASCII letters, digits, '.', '_', '+' or '-'", m.name);
            }
            if !names.insert(m.name.as_str()) {
                bail!("model name {:?} is used twice", m.name);
            }
        }
        if let Some(f) = self.finetune.as_ref().filter(|f| f.enabled) {
            if names.contains(f.name.as_str()) || names.contains(adapted_name(&f.name).as_str()) {
                bail!("finetune name {:?} collides with a configured model", f.name);
            }
            f.lora.validate()?;
            f.train.validate()?;
        }
        self.generation.validate()?;
        if !(self.stats.level > 0.0 && self.stats.level < 1.0) || self.stats.resamples == 0 {
            bail!("stats.level must lie in (0, 1) and stats.resamples must be positive");
        }
        Ok(())
    }

    /// Files whose bytes determine the run's results.
    pub fn input_files(&self) -> Vec<(String, PathBuf)> {
        let mut out = Vec::new();
        if let Some(p) = &self.corpus.posts {
            out.push(("corpus.posts".into(), p.clone()));
        }
        if let Some(p) = &self.corpus.include_list {
            out.push(("corpus.include_list".into(), p.clone()));
        }
        out.push(("references.user_responses".into(), self.references.user_responses.clone()));
        if let Some(l) = &self.lexicons {
            out.push(("lexicons.latin_american".into(), l.latin_american.clone()));
            out.push(("lexicons.western".into(), l.western.clone()));
        }
        for m in &self.models {
            for (field, p) in [("path", &m.path), ("model_path", &m.model_path), ("adapter_path", &m.adapter_path)] {
                if let Some(p) = p.as_ref().filter(|p| p.is_file()) {
                    out.push((format!("models.{}.{field}", m.name), p.clone()));
                }
            }
        }
        if let Some(c) = &self.calibration {
            out.push(("calibration.annotations".into(), c.annotations.clone()));
        }
        if let Some(p) = self.finetune.as_ref().and_then(|f| f.model_path.as_ref()) {
            out.push(("finetune.model_path".into(), p.clone()));
        }
        out
    }

    pub fn active_finetune(&self) -> Option<&FinetuneSection> {
        self.finetune.as_ref().filter(|f| f.enabled)
    }

    pub fn model_kind(&self, name: &str) -> Option<BackendKind> {
        self.models.iter().find(|m| m.name == name).map(|m| m.kind)
    }
}

pub fn adapted_name(base: &str) -> String {
    format!("{base}-lora")
}
