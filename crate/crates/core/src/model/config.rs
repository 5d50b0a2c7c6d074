use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Joint embedding width.
    pub r: usize,
    /// Summary tokens per view and per class (T); token 0 is the CLS slot.
    pub summary_tokens: usize,
    /// Encoder blocks in the single-view summary transformer.
    pub text_blocks: usize,
    pub heads: usize,
    /// Longest view, in tokens, after vocabulary filtering.
    pub m_max: usize,
    /// Views per class.
    pub q: usize,
    pub d_backbone: usize,
    /// Width of the pretrained word vectors.
    pub embed_dim: usize,
    /// Hidden width of encoder MLPs as a multiple of `r`.
    pub mlp_ratio: usize,
    pub ln_eps: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            r: 32,
            summary_tokens: 4,
            text_blocks: 2,
            heads: 4,
            m_max: 512,
            q: 3,
            d_backbone: 32,
            embed_dim: 32,
            mlp_ratio: 4,
            ln_eps: 1e-5,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    /// The configuration used by gradient checks.
    pub fn tiny() -> Self {
        Self {
            r: 8,
            summary_tokens: 3,
            text_blocks: 2,
            heads: 2,
            m_max: 6,
            q: 2,
            d_backbone: 6,
            embed_dim: 5,
            mlp_ratio: 2,
            ln_eps: 1e-5,
            init_seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("r", self.r),
            ("text_blocks", self.text_blocks),
            ("heads", self.heads),
            ("m_max", self.m_max),
            ("q", self.q),
            ("d_backbone", self.d_backbone),
            ("embed_dim", self.embed_dim),
            ("mlp_ratio", self.mlp_ratio),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.summary_tokens < 2 {
            return Err(Error::Config(format!(
                "summary_tokens must be >= 2 (CLS plus at least one local token), got {}",
                self.summary_tokens
            )));
        }
        if self.r % self.heads != 0 {
            return Err(Error::Config(format!(
                "r = {} is not divisible by heads = {}",
                self.r, self.heads
            )));
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::Config("ln_eps must be positive".into()));
        }
        Ok(())
    }
}
