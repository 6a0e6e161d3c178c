//! Run configuration: defaults, overlaid by a TOML file, overlaid by flags.

use std::path::Path;

use adw_core::evalharness::ProtocolConfig;
use adw_core::pipeline::{DiscDetectorConfig, FeatureConfig, FlowDetectorConfig};
use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Invalid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    #[default]
    Flow,
    Discriminator,
    /// Scores each sample by its ground-truth label.
    Oracle,
    /// Label-dependent Gaussian noise; never reads pixels.
    SyntheticGaussian,
}

impl DetectorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::Flow => "flow",
            DetectorKind::Discriminator => "discriminator",
            DetectorKind::Oracle => "oracle",
            DetectorKind::SyntheticGaussian => "synthetic-gaussian",
        }
    }

    pub fn is_trainable(self) -> bool {
        matches!(self, DetectorKind::Flow | DetectorKind::Discriminator)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepConfig {
    pub mask: bool,
    pub center_embed: bool,
    /// Rotation angles in degrees; each must be 90, 180 or 270.
    pub rotate: Vec<u32>,
    /// Reject quarter turns of non-square images.
    pub strict_rotation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    /// Mean of anomalous scores; nominal scores are standard normal.
    pub shift: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { shift: 2.0 }
    }
}

/// Effective configuration of a run. `seed` is the single source of
/// randomness and is copied into `protocol.seed`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub detector: DetectorKind,
    pub prep: PrepConfig,
    pub features: FeatureConfig,
    pub flow: FlowDetectorConfig,
    pub discriminator: DiscDetectorConfig,
    pub synthetic: SyntheticConfig,
    pub protocol: ProtocolConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        toml::from_str(text).map_err(|e| Invalid(format!("config: {e}")).into())
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn finalize(mut self) -> Self {
        self.protocol.seed = self.seed;
        self
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(
            serde_json::to_vec(self).expect("serializable"),
        ))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("sed = 3").is_err());
        assert!(RunConfig::from_toml("[flow]\nepochs = 3").is_err());
        assert!(RunConfig::from_toml("[flow.train]\nepochs = 3").is_ok());
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = RunConfig::from_toml(
            "seed = 7\ndetector = \"synthetic-gaussian\"\n[protocol]\nfolds = 3",
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.detector, DetectorKind::SyntheticGaussian);
        assert_eq!(c.protocol.folds, 3);
        assert_eq!(c.protocol.ci_level, 0.95);
        assert_eq!(c.finalize().protocol.seed, 7);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
