//! Flat run configuration: one key per model or training field, readable
//! from a JSON file and overridable by a flag of the same name.

use std::path::Path;

use clap::Args;
use i2mv_core::model::ModelConfig;
use i2mv_core::train::{Selection, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::Failure;

fn parse_selection(s: &str) -> Result<Selection, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned()))
        .map_err(|_| format!("unknown selection `{s}` (expected zsl_t1 or gzsl_h)"))
}

macro_rules! keys {
    ($( $(#[$doc:meta])* $name:ident : $ty:ty ),* $(,)?) => {
        #[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct ConfigKeys {
            $( $(#[$doc])* #[arg(long)]
                #[serde(default, skip_serializing_if = "Option::is_none")]
                pub $name: Option<$ty>, )*
        }

        impl ConfigKeys {
            /// Keys set in `over` win.
            pub fn overlay(self, over: &Self) -> Self {
                Self { $( $name: over.$name.clone().or(self.$name), )* }
            }
        }
    };
}

keys! {
    r: usize,
    summary_tokens: usize,
    text_blocks: usize,
    heads: usize,
    m_max: usize,
    /// Views per class; taken from the corpus when unset.
    q: usize,
    /// Patch feature width; taken from the feature file when unset.
    d_backbone: usize,
    /// Word vector width; taken from the embedding table when unset.
    embed_dim: usize,
    mlp_ratio: usize,
    ln_eps: f64,
    init_seed: u64,
    lr: f64,
    epochs: usize,
    batch_size: usize,
    lambda_local: f64,
    seed: u64,
    patience: usize,
    #[arg(value_parser = parse_selection)]
    selection: Selection,
    allow_ragged_views: bool,
}

impl ConfigKeys {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
    }

    /// File keys, then flags on top.
    pub fn resolve(file: Option<&Path>, flags: &Self) -> Result<Self, Failure> {
        let base = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        Ok(base.overlay(flags))
    }

    pub fn model(&self, base: ModelConfig) -> ModelConfig {
        ModelConfig {
            r: self.r.unwrap_or(base.r),
            summary_tokens: self.summary_tokens.unwrap_or(base.summary_tokens),
            text_blocks: self.text_blocks.unwrap_or(base.text_blocks),
            heads: self.heads.unwrap_or(base.heads),
            m_max: self.m_max.unwrap_or(base.m_max),
            q: self.q.unwrap_or(base.q),
            d_backbone: self.d_backbone.unwrap_or(base.d_backbone),
            embed_dim: self.embed_dim.unwrap_or(base.embed_dim),
            mlp_ratio: self.mlp_ratio.unwrap_or(base.mlp_ratio),
            ln_eps: self.ln_eps.unwrap_or(base.ln_eps),
            init_seed: self.init_seed.unwrap_or(base.init_seed),
        }
    }

    pub fn train(&self) -> TrainConfig {
        let base = TrainConfig::default();
        TrainConfig {
            lr: self.lr.unwrap_or(base.lr),
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            lambda_local: self.lambda_local.unwrap_or(base.lambda_local),
            seed: self.seed.unwrap_or(base.seed),
            patience: self.patience.or(base.patience),
            selection: self.selection.unwrap_or(base.selection),
        }
    }

    /// Every key filled in, for the effective-config header.
    pub fn echo(model: &ModelConfig, train: Option<&TrainConfig>, allow_ragged_views: Option<bool>) -> Self {
        let mut k = Self {
            r: Some(model.r),
            summary_tokens: Some(model.summary_tokens),
            text_blocks: Some(model.text_blocks),
            heads: Some(model.heads),
            m_max: Some(model.m_max),
            q: Some(model.q),
            d_backbone: Some(model.d_backbone),
            embed_dim: Some(model.embed_dim),
            mlp_ratio: Some(model.mlp_ratio),
            ln_eps: Some(model.ln_eps),
            init_seed: Some(model.init_seed),
            allow_ragged_views,
            ..Self::default()
        };
        if let Some(t) = train {
            k.lr = Some(t.lr);
            k.epochs = Some(t.epochs);
            k.batch_size = Some(t.batch_size);
            k.lambda_local = Some(t.lambda_local);
            k.seed = Some(t.seed);
            k.patience = t.patience;
            k.selection = Some(t.selection);
        }
        k
    }
}

/// Prints `config <json>` so a run can be repeated from its own output.
pub fn print_header(value: &impl Serialize) {
    println!("config {}", serde_json::to_string(value).expect("config serializes"));
}
