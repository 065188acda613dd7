use serde::{Deserialize, Serialize};

use crate::data::tokenizer::VOCAB_SIZE;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisionEncoderConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    pub embed_dim: usize,
}

impl Default for VisionEncoderConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            patch_size: 8,
            width: 64,
            depth: 2,
            heads: 4,
            embed_dim: 32,
        }
    }
}

impl VisionEncoderConfig {
    pub fn patches_per_side(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// Patches plus the class token.
    pub fn sequence_length(&self) -> usize {
        self.patches_per_side().pow(2) + 1
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.image_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::Validation(format!(
                "vision image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        check_width("vision", self.width, self.heads)?;
        check_positive("vision embed_dim", self.embed_dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextEncoderConfig {
    pub vocab_size: usize,
    pub max_length: usize,
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    pub embed_dim: usize,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: VOCAB_SIZE,
            max_length: 64,
            width: 64,
            depth: 2,
            heads: 4,
            embed_dim: 32,
        }
    }
}

impl TextEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("text max_length", self.max_length)?;
        check_positive("text vocab_size", self.vocab_size)?;
        check_width("text", self.width, self.heads)?;
        check_positive("text embed_dim", self.embed_dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DinoProjectorConfig {
    pub hidden_dim: usize,
    pub bottleneck_dim: usize,
    /// K, the number of distribution bins.
    pub output_dim: usize,
}

impl Default for DinoProjectorConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 128,
            bottleneck_dim: 64,
            output_dim: 256,
        }
    }
}

impl DinoProjectorConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("dino hidden_dim", self.hidden_dim)?;
        check_positive("dino bottleneck_dim", self.bottleneck_dim)?;
        check_positive("dino output_dim", self.output_dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vision: VisionEncoderConfig,
    pub text: TextEncoderConfig,
    pub dino: DinoProjectorConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.vision.validate()?;
        self.text.validate()?;
        self.dino.validate()?;
        if self.vision.embed_dim != self.text.embed_dim {
            return Err(Error::Validation(format!(
                "vision embed_dim {} != text embed_dim {}",
                self.vision.embed_dim, self.text.embed_dim
            )));
        }
        Ok(())
    }

    /// Shared embedding dimension m.
    pub fn embed_dim(&self) -> usize {
        self.vision.embed_dim
    }
}

fn check_positive(what: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::Validation(format!("{what} must be >= 1")));
    }
    Ok(())
}

fn check_width(what: &str, width: usize, heads: usize) -> Result<()> {
    if heads == 0 || width == 0 || !width.is_multiple_of(heads) {
        return Err(Error::Validation(format!(
            "{what} width {width} not divisible by heads {heads}"
        )));
    }
    Ok(())
}
