use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use forcecheck_core::augment::AugmentPolicy;
use forcecheck_core::nn::{Preset, TrainConfig};
use forcecheck_core::preprocess::{Normalization, PipelineConfig};
use forcecheck_core::record::NUM_CHANNELS;
use forcecheck_core::wavelet::CwtConfig;
use forcecheck_core::Error;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Everything `train` needs besides the manifest, preset and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub cwt: CwtConfig,
    pub train: TrainConfig,
    /// Policy used by `train --augment`.
    pub augment: AugmentPolicy,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            pipeline: PipelineConfig {
                normalization: Normalization::Standard,
                ..Default::default()
            },
            cwt: CwtConfig::default(),
            train: TrainConfig::default(),
            augment: AugmentPolicy::default(),
        }
    }
}

impl RunConfig {
    /// Rejects combinations the preset cannot be built from.
    pub fn check_preset(&self, preset: Preset) -> Result<(), Error> {
        self.pipeline.validate()?;
        self.train.validate()?;
        self.augment.validate()?;
        if let Some(sel) = &self.pipeline.selected_channels {
            let full: Vec<usize> = (0..NUM_CHANNELS).collect();
            if *sel != full {
                let hint = if preset.uses_scaleograms() && self.pipeline.normalization == Normalization::None {
                    " (a scaleogram preset with normalization None and no wrench channels has nothing to transform)"
                } else {
                    ""
                };
                return Err(Error::Config(format!(
                    "preset {preset} reads fixed channels of the full 9-channel window but pipeline.selected_channels is {sel:?}{hint}; remove selected_channels or build a custom architecture"
                )));
            }
        }
        if preset.uses_scaleograms() {
            self.cwt.validate()?;
        }
        Ok(())
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        .map_err(Into::into)
}

pub fn read_json_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => read_json(p),
        None => Ok(T::default()),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the compact JSON serialization.
pub fn hash_json<T: Serialize>(v: &T) -> String {
    sha256_hex(&serde_json::to_vec(v).expect("serializable config"))
}
