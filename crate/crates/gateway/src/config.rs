//! Gateway configuration file.
//!
//! The file is TOML. Platform settings sit at the top level; the gateway's
//! own settings live in `[poll]` and `[ui]`, and `manifest_files` lists widget
//! manifests to register at boot (paths relative to the config file).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use dashgate_core::PlatformConfig;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PollConfig {
    /// Wait used when a poll request does not name one.
    pub wait_s: u64,
    /// Upper bound on any requested wait.
    pub max_wait_s: u64,
}

impl Default for PollConfig {
    fn default() -> Self {
        PollConfig {
            wait_s: 25,
            max_wait_s: 60,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UiConfig {
    /// Directory of static dashboard assets served at `/`.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct GatewayConfig {
    pub platform: PlatformConfig,
    pub poll: PollConfig,
    pub ui: UiConfig,
}

impl GatewayConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> anyhow::Result<Self> {
        let mut table: toml::Table = text.parse().context("config is not valid TOML")?;
        let poll = match table.remove("poll") {
            Some(v) => v.try_into().context("invalid [poll] section")?,
            None => PollConfig::default(),
        };
        let mut ui: UiConfig = match table.remove("ui") {
            Some(v) => v.try_into().context("invalid [ui] section")?,
            None => UiConfig::default(),
        };
        if let Some(dir) = ui.dir.take() {
            ui.dir = Some(base_dir.join(dir));
        }
        let manifest_files: Vec<PathBuf> = match table.remove("manifest_files") {
            Some(v) => v.try_into().context("manifest_files must be a list of paths")?,
            None => Vec::new(),
        };
        let mut platform: PlatformConfig = toml::Value::Table(table)
            .try_into()
            .context("invalid platform settings")?;
        for file in manifest_files {
            let path = base_dir.join(file);
            let doc = std::fs::read_to_string(&path)
                .with_context(|| format!("reading manifest {}", path.display()))?;
            platform.catalog.manifests.push(doc);
        }
        if poll.wait_s == 0 || poll.max_wait_s < poll.wait_s {
            bail!("poll.wait_s must be positive and not above poll.max_wait_s");
        }
        Ok(GatewayConfig { platform, poll, ui })
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }
}
