use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;

use cgmqa_core::temporal::VagueTermTable;

use crate::BackendKind;

/// Optional TOML defaults. Command-line flags win over file values.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub data_dir: Option<PathBuf>,
    pub prompts_dir: Option<PathBuf>,
    pub backend: Option<BackendKind>,
    pub script: Option<PathBuf>,
    pub host: Option<String>,
    pub port: Option<u16>,
    pub ui_dir: Option<PathBuf>,
    /// Extra or replacement vague time phrases, e.g. `dawn = "05:00-07:00"`.
    #[serde(default)]
    pub vague_terms: BTreeMap<String, String>,
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config: Self = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        config.vague_table().validate().context("invalid vague_terms window")?;
        Ok(config)
    }

    pub fn vague_table(&self) -> VagueTermTable {
        let mut table = VagueTermTable::default();
        table.0.extend(self.vague_terms.iter().map(|(k, v)| (k.to_lowercase(), v.clone())));
        table
    }
}
