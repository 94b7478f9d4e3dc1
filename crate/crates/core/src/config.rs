//! Model, data and training configuration with `paper` and `toy` presets.
//!
//! Config files are TOML. A `[preset]` table picks the base values and every
//! other table overrides individual keys:
//!
//! ```toml
//! [preset]
//! name = "toy"
//!
//! [train]
//! lr = 5e-4
//! ```

use serde::{Deserialize, Serialize};

use crate::clipsim::ClipSimConfig;
use crate::error::{OtvmError, Result};
use crate::nn::NormKind;
use crate::trainer::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Paper,
    Toy,
}

impl std::str::FromStr for Preset {
    type Err = OtvmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "toy" => Ok(Preset::Toy),
            other => Err(OtvmError::Config(format!("unknown preset `{other}`"))),
        }
    }
}

/// Channel widths and layer counts of the three networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub preset: Preset,
    /// Trimap-propagation encoder widths at strides 2, 4, 8, 16.
    pub prop_widths: [usize; 4],
    /// Residual blocks in the stride-4, -8 and -16 stages.
    pub prop_blocks: [usize; 3],
    pub key_channels: usize,
    pub value_channels: usize,
    pub prop_decoder_channels: usize,
    pub prop_norm: NormKind,
    /// Alpha encoder widths: stem (stride 2), stride 4, stride 8, then the
    /// two dilated stages (dilation 2 and 4) that stay at stride 8.
    pub alpha_widths: [usize; 5],
    pub alpha_blocks: [usize; 4],
    pub alpha_decoder_channels: usize,
    pub ppm_bins: Vec<usize>,
    pub alpha_norm: NormKind,
    pub refine_channels: usize,
    pub refine_norm: NormKind,
    /// Hidden channels emitted by the alpha decoder.
    pub alpha_hidden: usize,
    /// Hidden channels emitted by the refinement module.
    pub refine_hidden: usize,
    /// Gaussian blur scales of the eight-channel trimap encoding.
    pub blur_sigmas: [f64; 3],
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn paper() -> Self {
        Self {
            preset: Preset::Paper,
            prop_widths: [64, 256, 512, 1024],
            prop_blocks: [3, 4, 6],
            key_channels: 128,
            value_channels: 512,
            prop_decoder_channels: 256,
            prop_norm: NormKind::Identity,
            alpha_widths: [64, 256, 512, 1024, 2048],
            alpha_blocks: [3, 4, 6, 3],
            alpha_decoder_channels: 256,
            ppm_bins: vec![1, 2, 3, 6],
            alpha_norm: NormKind::GroupWs,
            refine_channels: 32,
            refine_norm: NormKind::GroupWs,
            alpha_hidden: 64,
            refine_hidden: 16,
            blur_sigmas: [1.0, 2.0, 4.0],
            init_seed: 0,
        }
    }

    pub fn toy() -> Self {
        Self {
            preset: Preset::Toy,
            prop_widths: [8, 16, 16, 24],
            prop_blocks: [1, 1, 1],
            key_channels: 16,
            value_channels: 32,
            prop_decoder_channels: 16,
            prop_norm: NormKind::Identity,
            alpha_widths: [8, 16, 16, 24, 24],
            alpha_blocks: [1, 1, 1, 1],
            alpha_decoder_channels: 16,
            ppm_bins: vec![1, 2, 3, 6],
            alpha_norm: NormKind::GroupWs,
            refine_channels: 16,
            refine_norm: NormKind::GroupWs,
            alpha_hidden: 64,
            refine_hidden: 16,
            blur_sigmas: [1.0, 2.0, 4.0],
            init_seed: 0,
        }
    }

    pub fn for_preset(p: Preset) -> Self {
        match p {
            Preset::Paper => Self::paper(),
            Preset::Toy => Self::toy(),
        }
    }

    /// Memory-encoder input channels: frame, trimap, alpha, refined hidden.
    pub fn memory_in_channels(&self) -> usize {
        3 + 3 + 1 + self.refine_hidden
    }

    /// Refinement input channels: frame, trimap, alpha, alpha hidden.
    pub fn refine_in_channels(&self) -> usize {
        3 + 3 + 1 + self.alpha_hidden
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct PresetTable {
    name: Preset,
}

/// Everything a config file can set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub model: ModelConfig,
    pub clipsim: ClipSimConfig,
    pub train: TrainConfig,
}

impl Config {
    pub fn for_preset(p: Preset) -> Self {
        Self {
            model: ModelConfig::for_preset(p),
            clipsim: ClipSimConfig::for_preset(p),
            train: TrainConfig::for_preset(p),
        }
    }

    pub fn preset(&self) -> Preset {
        self.model.preset
    }

    /// Parse a TOML config; keys absent from the file keep their preset value.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = text
            .parse()
            .map_err(|e| OtvmError::Config(format!("{e}")))?;
        let preset = match user.get("preset") {
            Some(v) => {
                let t: PresetTable = v
                    .clone()
                    .try_into()
                    .map_err(|e| OtvmError::Config(format!("[preset]: {e}")))?;
                t.name
            }
            None => Preset::Toy,
        };
        let base = Self::for_preset(preset);
        let mut merged =
            toml::Table::try_from(&base).map_err(|e| OtvmError::Config(format!("{e}")))?;
        for (k, v) in user {
            if k == "preset" {
                continue;
            }
            if !merged.contains_key(&k) {
                return Err(OtvmError::Config(format!("unknown table [{k}]")));
            }
            merge(merged.get_mut(&k).expect("present"), v, &k)?;
        }
        let mut cfg: Config = toml::Value::Table(merged)
            .try_into()
            .map_err(|e| OtvmError::Config(format!("{e}")))?;
        cfg.model.preset = preset;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        let mut out = format!(
            "[preset]\nname = \"{}\"\n\n",
            match self.preset() {
                Preset::Paper => "paper",
                Preset::Toy => "toy",
            }
        );
        out.push_str(&toml::to_string(self).expect("config serialises"));
        out
    }
}

fn merge(base: &mut toml::Value, user: toml::Value, path: &str) -> Result<()> {
    match (base, user) {
        (toml::Value::Table(b), toml::Value::Table(u)) => {
            for (k, v) in u {
                let sub = format!("{path}.{k}");
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &sub)?,
                    None => return Err(OtvmError::Config(format!("unknown key `{sub}`"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}
