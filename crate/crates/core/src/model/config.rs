use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::snn::LifConfig;

/// Which branches of each block are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    /// Spike Mamba branch removed: it contributes zero to its residual.
    SlaOnly,
    /// Windowed attention removed: it passes its input through unchanged.
    MambaOnly,
    /// Every spike layer replaced by SiLU.
    AnnMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Tiny,
    Desk,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_blocks: usize,
    /// Frames per attention window.
    pub window: usize,
    pub d_inner: usize,
    pub d_state: usize,
    pub conv_k: usize,
    pub ffn_hidden: usize,
    pub n_classes: usize,
    /// Spatial patch edge; the patch kernel and stride are `1 x patch x patch`.
    pub patch: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub lif: LifConfig,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

impl ModelConfig {
    pub fn preset(p: Preset) -> Self {
        let desk = Self {
            d_model: 64,
            n_blocks: 2,
            window: 4,
            d_inner: 128,
            d_state: 16,
            conv_k: 4,
            ffn_hidden: 256,
            n_classes: 4,
            patch: 8,
            frames: 8,
            height: 64,
            width: 64,
            lif: LifConfig::default(),
            ablation: Ablation::Full,
        };
        match p {
            Preset::Desk => desk,
            Preset::Tiny => Self {
                d_model: 8,
                n_blocks: 1,
                window: 2,
                d_inner: 16,
                d_state: 4,
                conv_k: 4,
                ffn_hidden: 16,
                n_classes: 2,
                frames: 4,
                height: 16,
                width: 16,
                ..desk
            },
            Preset::Paper => Self {
                d_model: 256,
                d_inner: 2048,
                ffn_hidden: 1024,
                n_classes: 11,
                height: 128,
                width: 128,
                ..desk
            },
        }
    }

    pub fn tokens_per_frame(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.patch, self.width / self.patch)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_model", self.d_model),
            ("n_blocks", self.n_blocks),
            ("window", self.window),
            ("d_inner", self.d_inner),
            ("d_state", self.d_state),
            ("conv_k", self.conv_k),
            ("ffn_hidden", self.ffn_hidden),
            ("n_classes", self.n_classes),
            ("patch", self.patch),
            ("frames", self.frames),
            ("height", self.height),
            ("width", self.width),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be at least 1")));
        }
        if !self.height.is_multiple_of(self.patch) || !self.width.is_multiple_of(self.patch) {
            return Err(Error::Config(format!(
                "input {}x{} is not divisible by patch {}",
                self.height, self.width, self.patch
            )));
        }
        if !self.frames.is_multiple_of(self.window) {
            return Err(Error::Config(format!(
                "frames ({}) must be divisible by window ({})",
                self.frames, self.window
            )));
        }
        self.lif.validate()
    }
}
