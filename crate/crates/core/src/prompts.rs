//! System prompts for every agent role, loadable from a directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::provider::Role;

/// Default starting rule for optimization. Not taken from any published run;
/// override it with `initial_rule.txt` in a prompt directory.
pub const DEFAULT_INITIAL_RULE: &str = include_str!("../prompts/initial_rule.txt");

const OPTIMIZER_TRAJECTORY_SLOT: &str = "{{trajectory}}";
const OPTIMIZER_EXAMPLES_SLOT: &str = "{{examples}}";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("missing prompt file {0}")]
    Missing(String),
    #[error("prompt file {0} is empty")]
    Empty(String),
    #[error("optimizer template lacks the {0} placeholder")]
    MissingSlot(&'static str),
    #[error("io error reading {path}: {message}")]
    Io { path: String, message: String },
}

/// File name for a role's prompt inside a prompt directory.
pub fn file_name(role: Role) -> String {
    format!("{}.txt", role.as_str())
}

fn builtin(role: Role) -> &'static str {
    match role {
        Role::Linguistic => include_str!("../prompts/linguistic.txt"),
        Role::Comment => include_str!("../prompts/comment.txt"),
        Role::FactQuestion => include_str!("../prompts/fact_question.txt"),
        Role::FactCheck => include_str!("../prompts/fact_check.txt"),
        Role::Questioning => include_str!("../prompts/questioning.txt"),
        Role::Judge => include_str!("../prompts/judge.txt"),
        Role::Optimizer => include_str!("../prompts/optimizer.txt"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptRegistry {
    templates: BTreeMap<Role, String>,
    initial_rule: String,
}

impl Default for PromptRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptRegistry {
    /// The prompts compiled into the crate.
    pub fn builtin() -> Self {
        let templates = Role::ALL
            .iter()
            .map(|&r| (r, builtin(r).trim().to_string()))
            .collect();
        Self {
            templates,
            initial_rule: DEFAULT_INITIAL_RULE.trim().to_string(),
        }
    }

    /// Loads one `<role>.txt` file per role. Every role file is required;
    /// `initial_rule.txt` is optional.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut templates = BTreeMap::new();
        for role in Role::ALL {
            let path = dir.join(file_name(role));
            if !path.exists() {
                return Err(PromptError::Missing(path.display().to_string()));
            }
            let text = read(&path)?;
            if text.is_empty() {
                return Err(PromptError::Empty(path.display().to_string()));
            }
            templates.insert(role, text);
        }
        let rule_path = dir.join("initial_rule.txt");
        let initial_rule = if rule_path.exists() {
            read(&rule_path)?
        } else {
            DEFAULT_INITIAL_RULE.trim().to_string()
        };
        let registry = Self {
            templates,
            initial_rule,
        };
        registry.validate()?;
        Ok(registry)
    }

    pub fn with_template(mut self, role: Role, text: impl Into<String>) -> Self {
        self.templates.insert(role, text.into());
        self
    }

    fn validate(&self) -> Result<(), PromptError> {
        let opt = self.get(Role::Optimizer);
        for slot in [OPTIMIZER_TRAJECTORY_SLOT, OPTIMIZER_EXAMPLES_SLOT] {
            if !opt.contains(slot) {
                return Err(PromptError::MissingSlot(slot));
            }
        }
        Ok(())
    }

    pub fn get(&self, role: Role) -> &str {
        self.templates
            .get(&role)
            .map(String::as_str)
            .expect("registry holds every role")
    }

    pub fn initial_rule(&self) -> &str {
        &self.initial_rule
    }

    /// Fills the optimizer template's trajectory and examples slots.
    pub fn render_optimizer(&self, trajectory: &str, examples: &str) -> String {
        self.get(Role::Optimizer)
            .replace(OPTIMIZER_TRAJECTORY_SLOT, trajectory)
            .replace(OPTIMIZER_EXAMPLES_SLOT, examples)
    }

    /// SHA-256 of each prompt, keyed by file name, for provenance records.
    pub fn hashes(&self) -> BTreeMap<String, String> {
        let mut out: BTreeMap<String, String> = self
            .templates
            .iter()
            .map(|(role, text)| (file_name(*role), sha256_hex(text)))
            .collect();
        out.insert("initial_rule.txt".into(), sha256_hex(&self.initial_rule));
        out
    }

    /// Writes every prompt to `dir` in the layout [`load_dir`](Self::load_dir) reads.
    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        for (role, text) in &self.templates {
            fs::write(dir.join(file_name(*role)), format!("{text}\n"))?;
        }
        fs::write(dir.join("initial_rule.txt"), format!("{}\n", self.initial_rule))
    }
}

fn read(path: &Path) -> Result<String, PromptError> {
    fs::read_to_string(path)
        .map(|s| s.trim().to_string())
        .map_err(|e| PromptError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}
