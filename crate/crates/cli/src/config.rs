use std::path::{Path, PathBuf};

use misinfo_core::analysis::AnalysisConfig;
use misinfo_core::evidence::EvidenceConfig;
use misinfo_core::judge::JudgeConfig;
use misinfo_core::optimizer::OptimizerConfig;
use misinfo_core::provider::EndpointConfig;
use misinfo_core::tasks::TaskSetConfig;
use serde::{Deserialize, Serialize};

use crate::error::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ProviderSettings {
    Live(EndpointConfig),
    Mock { script: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; defaults to the number of logical cores.
    pub workers: Option<usize>,
    /// Directory holding one prompt file per role; built-in prompts otherwise.
    pub prompts_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub provider: Option<ProviderSettings>,
    /// Items analyzed between archive writes.
    pub chunk_size: usize,
    /// When false, evaluation uses the initial rule alone.
    pub optimize: bool,
    pub analysis: AnalysisConfig,
    pub evidence: EvidenceConfig,
    pub tasks: TaskSetConfig,
    pub optimizer: OptimizerConfig,
    pub judge: JudgeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: None,
            prompts_dir: None,
            cache_dir: None,
            provider: None,
            chunk_size: 32,
            optimize: true,
            analysis: AnalysisConfig::default(),
            evidence: EvidenceConfig::default(),
            tasks: TaskSetConfig::default(),
            optimizer: OptimizerConfig::default(),
            judge: JudgeConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a TOML file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| Failure::usage(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = &mut self.prompts_dir {
            join(p);
        }
        if let Some(p) = &mut self.cache_dir {
            join(p);
        }
        if let Some(ProviderSettings::Mock { script }) = &mut self.provider {
            join(script);
        }
        self.evidence.resolve_paths(base);
    }

    /// The settings that shape results. Machine-local details (paths,
    /// worker count, cache location, provider wiring) are left out so equal
    /// runs hash equally wherever they execute.
    pub fn provenance_view(&self) -> serde_json::Value {
        let mut value = serde_json::to_value(self).expect("config serializes");
        let map = value.as_object_mut().expect("config is an object");
        for key in ["workers", "prompts_dir", "cache_dir", "provider", "chunk_size", "evidence"] {
            map.remove(key);
        }
        let mut evidence = serde_json::to_value(&self.evidence).expect("config serializes");
        let ev = evidence.as_object_mut().expect("evidence is an object");
        for backend in ["search", "encyclopedia"] {
            if let Some(obj) = ev.get_mut(backend).and_then(|b| b.as_object_mut()) {
                obj.remove("dir");
            }
        }
        map.insert("evidence".into(), evidence);
        value
    }
}
