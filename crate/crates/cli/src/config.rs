//! Optional TOML configuration file, merged under explicit flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use facecloak::{CloakConfig, DetectorParams, PerturbationConfig, RemoteDetectorConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub cascade: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub jobs: Option<usize>,
    pub detector: Option<DetectorParams>,
    pub perturbation: Option<PerturbationConfig>,
    pub campaign: Option<CampaignSection>,
    pub cloak: Option<CloakConfig>,
    pub remote: Option<RemoteDetectorConfig>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignSection {
    pub iterations: Option<u32>,
    pub success_iou: Option<f64>,
}

impl FileConfig {
    /// Parses `path`; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<FileConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        rebase(&mut cfg.cascade);
        rebase(&mut cfg.out);
        Ok(cfg)
    }
}

/// Provider description for a remote detector: a TOML file holding a
/// `RemoteDetectorConfig` table.
pub fn load_remote(path: &Path) -> Result<RemoteDetectorConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading provider config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing provider config {}", path.display()))
}
