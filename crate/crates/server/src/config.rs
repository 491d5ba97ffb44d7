//! Runtime configuration: content locations, LLM backend and server options.
//!
//! A TOML file may provide `[server]`, `[llm]` and `[dialogue]` tables;
//! command-line flags override it.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use serde::Deserialize;

use denial_core::dialogue::{DialogueConfig, DialogueEngine};
use denial_core::llm::{HttpCompletionClient, LlmConfig, LlmGateway, MockGateway};
use denial_core::nlu::IntentClassifier;
use denial_core::persona::{load_personas_dir, shipped_personas, Persona};
use denial_core::sentiment::Lexicon;
use denial_core::taxonomy::Catalog;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct ServerSection {
    pub port: Option<u16>,
    pub data_dir: Option<PathBuf>,
    pub personas_dir: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
    pub cors_origins: Vec<String>,
    pub reveal_debug: bool,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct FileConfig {
    pub server: ServerSection,
    pub llm: LlmConfig,
    pub dialogue: DialogueConfig,
}

impl FileConfig {
    pub fn from_path(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Mock,
    Http,
}

/// The catalog at `path`, or the bundled one.
pub fn load_catalog(path: Option<&Path>) -> anyhow::Result<Catalog> {
    match path {
        Some(p) => {
            Catalog::from_path(p).with_context(|| format!("loading catalog {}", p.display()))
        }
        None => Ok(Catalog::shipped()),
    }
}

/// Personas from `dir`, or the bundled ones.
pub fn load_personas(dir: Option<&Path>, catalog: &Catalog) -> anyhow::Result<Vec<Persona>> {
    match dir {
        Some(d) => load_personas_dir(d, catalog)
            .with_context(|| format!("loading personas from {}", d.display())),
        None => Ok(shipped_personas(catalog)?),
    }
}

pub fn build_gateway(
    backend: Backend,
    llm: &LlmConfig,
    catalog: Arc<Catalog>,
) -> anyhow::Result<Arc<dyn LlmGateway>> {
    Ok(match backend {
        Backend::Mock => Arc::new(MockGateway::new(catalog)),
        Backend::Http => {
            if llm.url.is_none() {
                bail!("no LLM endpoint configured; pass --llm-url, set it in [llm], or use --llm-mock");
            }
            Arc::new(HttpCompletionClient::new(llm)?)
        }
    })
}

pub fn build_engine(
    catalog: Arc<Catalog>,
    personas: Vec<Persona>,
    gateway: Arc<dyn LlmGateway>,
    config: DialogueConfig,
) -> DialogueEngine {
    DialogueEngine::new(
        catalog,
        personas,
        Arc::new(IntentClassifier::shipped()),
        Arc::new(Lexicon::shipped()),
        gateway,
        config,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_config_sections() {
        let cfg: FileConfig = toml::from_str(
            "[server]\nport = 9000\ncors_origins = [\"http://localhost:5173\"]\n\
             [llm]\nurl = \"http://x/v1/completions\"\n\
             [dialogue]\nhistory_window = 10\n",
        )
        .unwrap();
        assert_eq!(cfg.server.port, Some(9000));
        assert_eq!(cfg.llm.url.as_deref(), Some("http://x/v1/completions"));
        assert_eq!(cfg.dialogue.history_window, 10);
        assert_eq!(cfg.dialogue.scoring.identify_points, 10);
    }

    #[test]
    fn http_backend_requires_url() {
        let catalog = Arc::new(Catalog::shipped());
        assert!(build_gateway(Backend::Http, &LlmConfig::default(), catalog.clone()).is_err());
        assert!(build_gateway(Backend::Mock, &LlmConfig::default(), catalog).is_ok());
    }
}
