//! `polynorm.toml`: provider endpoints and defaults. Flags override it;
//! secrets stay in environment variables named by `api_key_env`.
//!
//! ```toml
//! [defaults]
//! locale = "en-US"
//! provider = "gpt-4o"
//! out = "runs"
//!
//! [providers.gpt-4o]
//! model_id = "gpt-4o"
//! api_key_env = "OPENAI_API_KEY"
//!
//! [datasets]
//! en-US = "data/en-US.tsv"
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use polynorm_core::eval::SystemSpec;
use polynorm_core::llm::ProviderConfig;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Defaults {
    pub locale: Option<String>,
    pub dataset: Option<PathBuf>,
    pub icl: Option<PathBuf>,
    pub instruction: Option<PathBuf>,
    pub provider: Option<String>,
    pub out: Option<PathBuf>,
    pub parallelism: Option<usize>,
    pub static_dir: Option<PathBuf>,
    pub port: Option<u16>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ProviderEntry {
    #[serde(flatten)]
    pub config: ProviderConfig,
    /// Cassette used by `serve` reruns; `replay` wins over `record`.
    #[serde(default)]
    pub replay: Option<PathBuf>,
    #[serde(default)]
    pub record: Option<PathBuf>,
}

impl ProviderEntry {
    pub fn spec(&self) -> SystemSpec {
        match (&self.replay, &self.record) {
            (Some(p), _) => SystemSpec::Replay(self.config.clone(), p.clone()),
            (None, Some(p)) => SystemSpec::Record(self.config.clone(), p.clone()),
            (None, None) => SystemSpec::Live(self.config.clone()),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub defaults: Defaults,
    pub providers: BTreeMap<String, ProviderEntry>,
    /// Locale tag to dataset path, used by `serve` for reruns.
    pub datasets: BTreeMap<String, PathBuf>,
}

fn rebase(base: &Path, path: &mut PathBuf) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

impl Config {
    pub fn parse(text: &str, base: &Path) -> anyhow::Result<Config> {
        let mut config: Config = toml::from_str(text)?;
        let d = &mut config.defaults;
        for p in [&mut d.dataset, &mut d.icl, &mut d.instruction, &mut d.out, &mut d.static_dir].into_iter().flatten() {
            rebase(base, p);
        }
        for (name, entry) in &mut config.providers {
            if name == polynorm_core::baseline::Baseline::SYSTEM_ID {
                bail!("provider name {name:?} is reserved for the rule-based baseline");
            }
            entry.config.validate().with_context(|| format!("provider {name}"))?;
            for p in [&mut entry.replay, &mut entry.record].into_iter().flatten() {
                rebase(base, p);
            }
        }
        for p in config.datasets.values_mut() {
            rebase(base, p);
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> anyhow::Result<Config> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Config::parse(&text, base).with_context(|| format!("invalid config {}", path.display()))
    }

    /// Provider settings by name. Names that are not configured are taken
    /// as a model id with default settings.
    pub fn provider(&self, name: &str) -> ProviderConfig {
        match self.providers.get(name) {
            Some(entry) => entry.config.clone(),
            None => {
                log::info!("provider {name} is not configured; using defaults with model_id {name}");
                ProviderConfig::for_model(name)
            }
        }
    }
}
