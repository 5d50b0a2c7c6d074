use std::collections::HashMap;

use i2mv_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
enum Init {
    /// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))
    Uniform(usize),
    /// N(0, 0.02)
    Token,
    Ones,
    Zeros,
}

fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let r = cfg.r;
    let t = cfg.summary_tokens;
    let hidden = cfg.mlp_ratio * r;
    let mut out: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| out.push((name, shape, init));

    let proj_mlp = |push: &mut dyn FnMut(String, Vec<usize>, Init), prefix: &str, input: usize| {
        push(format!("{prefix}.fc1.weight"), vec![input, r], Init::Uniform(input));
        push(format!("{prefix}.fc1.bias"), vec![r], Init::Uniform(input));
        push(format!("{prefix}.norm.gain"), vec![r], Init::Ones);
        push(format!("{prefix}.norm.bias"), vec![r], Init::Zeros);
        push(format!("{prefix}.fc2.weight"), vec![r, r], Init::Uniform(r));
        push(format!("{prefix}.fc2.bias"), vec![r], Init::Uniform(r));
    };
    proj_mlp(&mut push, "image", cfg.d_backbone);
    proj_mlp(&mut push, "text", cfg.embed_dim);

    let block = |push: &mut dyn FnMut(String, Vec<usize>, Init), prefix: &str| {
        push(format!("{prefix}.ln1.gain"), vec![r], Init::Ones);
        push(format!("{prefix}.ln1.bias"), vec![r], Init::Zeros);
        push(format!("{prefix}.attn.wq"), vec![r, r], Init::Uniform(r));
        push(format!("{prefix}.attn.bq"), vec![r], Init::Uniform(r));
        // No key bias: it shifts every logit of a query equally.
        push(format!("{prefix}.attn.wk"), vec![r, r], Init::Uniform(r));
        push(format!("{prefix}.attn.wv"), vec![r, r], Init::Uniform(r));
        push(format!("{prefix}.attn.bv"), vec![r], Init::Uniform(r));
        push(format!("{prefix}.attn.wo"), vec![r, r], Init::Uniform(r));
        push(format!("{prefix}.attn.bo"), vec![r], Init::Uniform(r));
        push(format!("{prefix}.ln2.gain"), vec![r], Init::Ones);
        push(format!("{prefix}.ln2.bias"), vec![r], Init::Zeros);
        push(format!("{prefix}.mlp.fc1.weight"), vec![r, hidden], Init::Uniform(r));
        push(format!("{prefix}.mlp.fc1.bias"), vec![hidden], Init::Uniform(r));
        push(format!("{prefix}.mlp.fc2.weight"), vec![hidden, r], Init::Uniform(hidden));
        push(format!("{prefix}.mlp.fc2.bias"), vec![r], Init::Uniform(hidden));
    };
    push("sv.pos".into(), vec![cfg.m_max, r], Init::Token);
    push("sv.tokens".into(), vec![t, r], Init::Token);
    for b in 0..cfg.text_blocks {
        block(&mut push, &format!("sv.block{b}"));
    }
    push("mv.tokens".into(), vec![t, r], Init::Token);
    block(&mut push, "mv.block0");

    push("local.wq".into(), vec![r, r], Init::Uniform(r));
    push("local.wk".into(), vec![r, r], Init::Uniform(r));
    push("local.wv".into(), vec![r, r], Init::Uniform(r));
    push("local.s_im".into(), vec![r], Init::Token);
    push("local.pool_key.weight".into(), vec![r, r], Init::Uniform(r));
    push("local.pool_value.weight".into(), vec![r, r], Init::Uniform(r));
    push("local.pool_value.bias".into(), vec![r], Init::Uniform(r));
    push("local.mlp.fc1.weight".into(), vec![r, r], Init::Uniform(r));
    push("local.mlp.fc1.bias".into(), vec![r], Init::Uniform(r));
    // No output bias on the second MLP layer or on J: either would shift
    // every class's local score equally, which the loss cannot see.
    push("local.mlp.fc2.weight".into(), vec![r, r], Init::Uniform(r));
    push("local.j".into(), vec![1, r], Init::Uniform(r));
    out
}

/// Named parameters in a fixed order.
#[derive(Clone, Debug)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub(super) fn init(cfg: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let normal = Normal::new(0.0, 0.02).expect("valid normal");
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, init) in layout(cfg) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = match init {
                Init::Uniform(fan_in) => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                }
                Init::Token => (0..n).map(|_| normal.sample(&mut rng)).collect(),
                Init::Ones => vec![1.0; n],
                Init::Zeros => vec![0.0; n],
            };
            names.push(name);
            tensors.push(Tensor::new(&shape, data).expect("layout shapes are positive"));
        }
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Self {
            names,
            tensors,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.position(name).map(move |i| &mut self.tensors[i])
    }

    pub fn named(&self) -> Vec<(String, Tensor)> {
        self.names
            .iter()
            .cloned()
            .zip(self.tensors.iter().map(|t| t.clone().with_requires_grad(false)))
            .collect()
    }

    /// Replaces every parameter by name; shapes and the name set must match.
    pub fn assign(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        if named.len() != self.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.len(),
                named.len()
            )));
        }
        for (name, t) in named {
            let slot = self
                .get(name)
                .ok_or_else(|| Error::Shape(format!("unknown parameter `{name}`")))?;
            if slot.shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "parameter `{name}` has shape {:?}, model expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
        }
        for (name, t) in named {
            let i = self.index[name.as_str()];
            self.tensors[i] = t.clone().with_requires_grad(false);
        }
        Ok(())
    }
}
