//! The multi-view zero-shot classifier.
//!
//! A [`Model`] owns the parameters; [`Model::bind`] places them on a tape
//! and returns a [`Bound`] that runs the forward passes. Scores are
//! differentiable whenever the parameters were bound as trainable.

mod config;
mod params;

use std::cell::{Cell, OnceCell, RefCell};

use i2mv_tensor::{concat, mean, Tape, Tensor, Var};

pub use config::ModelConfig;
pub use params::ParamStore;

use crate::data::Checkpoint;
use crate::embed::TokenizedView;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
}

/// Projected image: the global row and the patch rows.
#[derive(Clone, Debug)]
pub struct ImageEmbedding<'t> {
    /// `r`
    pub cls: Var<'t>,
    /// `N x r`
    pub patches: Var<'t>,
}

/// Output of the single-view summary for one view.
#[derive(Clone, Debug)]
pub struct ViewSummary<'t> {
    /// `r`
    pub cls: Var<'t>,
    /// `(T-1) x r`
    pub local: Var<'t>,
}

/// Everything the scorer needs to know about one class.
#[derive(Clone, Debug)]
pub struct ClassEmbedding<'t> {
    /// Mean of the per-view CLS rows, `r`.
    pub global: Var<'t>,
    /// Multi-view summary tokens, `T x r`.
    pub summary: Var<'t>,
}

/// Query rows of one image for the local scorer, computed once per image.
#[derive(Clone, Debug)]
pub struct LocalQuery<'t> {
    /// `N x r`, already scaled by `1/sqrt(r)`.
    q: Var<'t>,
}

/// Keys and values of one class for the local scorer.
#[derive(Clone, Debug)]
pub struct LocalKeys<'t> {
    /// `r x T`
    kt: Var<'t>,
    /// `T x r`
    v: Var<'t>,
}

/// Which classes may be predicted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Unseen classes only.
    Zsl,
    /// Every class; unseen scores are shifted by the calibration constant.
    Gzsl,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = ParamStore::init(&config);
        Ok(Self { config, params })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut model = Self::new(ck.config.clone())?;
        model.params.assign(&ck.tensors)?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        self.params.named()
    }

    /// Replaces all parameters; fails on a missing name or any shape mismatch.
    pub fn load_params(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        self.params.assign(named)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.tensors().iter().map(Tensor::numel).sum()
    }

    /// Registers every parameter on `tape`.
    pub fn bind<'m, 't>(&'m self, tape: &'t Tape, trainable: bool) -> Bound<'m, 't> {
        let vars = self
            .params
            .tensors()
            .iter()
            .map(|p| tape.leaf(p.clone().with_requires_grad(trainable)))
            .collect();
        Bound::new(self, vars)
    }

    /// Uses caller-supplied leaves, one per parameter in store order.
    pub fn bind_vars<'m, 't>(&'m self, vars: Vec<Var<'t>>) -> Result<Bound<'m, 't>> {
        if vars.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter leaves, got {}",
                self.params.len(),
                vars.len()
            )));
        }
        for ((v, p), name) in vars
            .iter()
            .zip(self.params.tensors())
            .zip(self.params.names())
        {
            if v.shape() != p.shape() {
                return Err(Error::Shape(format!(
                    "leaf for `{name}` has shape {:?}, expected {:?}",
                    v.shape(),
                    p.shape()
                )));
            }
        }
        Ok(Bound::new(self, vars))
    }
}

/// Parameters placed on a tape.
pub struct Bound<'m, 't> {
    model: &'m Model,
    vars: Vec<Var<'t>>,
    pool_query: OnceCell<Var<'t>>,
    attended_tokens: Cell<usize>,
    trace: RefCell<Option<Vec<Tensor>>>,
}

impl<'m, 't> Bound<'m, 't> {
    fn new(model: &'m Model, vars: Vec<Var<'t>>) -> Self {
        Self {
            model,
            vars,
            pool_query: OnceCell::new(),
            attended_tokens: Cell::new(0),
            trace: RefCell::new(None),
        }
    }

    pub fn config(&self) -> &'m ModelConfig {
        &self.model.config
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    fn p(&self, name: &str) -> Var<'t> {
        let i = self
            .model
            .params
            .position(name)
            .unwrap_or_else(|| panic!("no parameter named `{name}`"));
        self.vars[i].clone()
    }

    fn tape(&self) -> &'t Tape {
        self.vars[0].tape()
    }

    /// Number of class-side token rows the local scorer has attended over
    /// since binding.
    pub fn attended_tokens(&self) -> usize {
        self.attended_tokens.get()
    }

    /// Starts recording every attention matrix produced from now on.
    pub fn trace_attention(&self) {
        *self.trace.borrow_mut() = Some(Vec::new());
    }

    pub fn take_attention(&self) -> Vec<Tensor> {
        self.trace.borrow_mut().take().unwrap_or_default()
    }

    fn record(&self, a: &Var<'t>) {
        if let Some(t) = self.trace.borrow_mut().as_mut() {
            t.push((*a.value()).clone());
        }
    }

    fn linear(&self, x: &Var<'t>, prefix: &str) -> Result<Var<'t>> {
        let w = self.p(&format!("{prefix}.weight"));
        let b = self.p(&format!("{prefix}.bias"));
        Ok(x.matmul(&w)?.add_row(&b)?)
    }

    /// Linear, layer norm, ReLU, linear.
    fn projector(&self, x: &Var<'t>, prefix: &str) -> Result<Var<'t>> {
        let h = self.linear(x, &format!("{prefix}.fc1"))?;
        let h = h
            .layer_norm(
                &self.p(&format!("{prefix}.norm.gain")),
                &self.p(&format!("{prefix}.norm.bias")),
                self.model.config.ln_eps,
            )?
            .relu();
        self.linear(&h, &format!("{prefix}.fc2"))
    }

    fn attend(&self, q: &Var<'t>, k: &Var<'t>, v: &Var<'t>, scale: f64) -> Result<Var<'t>> {
        let a = q.matmul(&k.t()?)?.scale(scale).softmax(1)?;
        self.record(&a);
        Ok(a.matmul(v)?)
    }

    /// Pre-norm transformer block with residuals around attention and MLP.
    fn block(&self, x: &Var<'t>, prefix: &str) -> Result<Var<'t>> {
        let cfg = &self.model.config;
        let eps = cfg.ln_eps;
        let h = x.layer_norm(
            &self.p(&format!("{prefix}.ln1.gain")),
            &self.p(&format!("{prefix}.ln1.bias")),
            eps,
        )?;
        let q = h
            .matmul(&self.p(&format!("{prefix}.attn.wq")))?
            .add_row(&self.p(&format!("{prefix}.attn.bq")))?;
        let k = h.matmul(&self.p(&format!("{prefix}.attn.wk")))?;
        let v = h
            .matmul(&self.p(&format!("{prefix}.attn.wv")))?
            .add_row(&self.p(&format!("{prefix}.attn.bv")))?;
        let dh = cfg.r / cfg.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let heads = if cfg.heads == 1 {
            self.attend(&q, &k, &v, scale)?
        } else {
            let parts = (0..cfg.heads)
                .map(|i| {
                    let s = i * dh;
                    self.attend(&q.narrow(1, s, dh)?, &k.narrow(1, s, dh)?, &v.narrow(1, s, dh)?, scale)
                })
                .collect::<Result<Vec<_>>>()?;
            concat(&parts, 1)?
        };
        let o = heads
            .matmul(&self.p(&format!("{prefix}.attn.wo")))?
            .add_row(&self.p(&format!("{prefix}.attn.bo")))?;
        let x = x.add(&o)?;
        let h = x.layer_norm(
            &self.p(&format!("{prefix}.ln2.gain")),
            &self.p(&format!("{prefix}.ln2.bias")),
            eps,
        )?;
        let m = self.linear(&h, &format!("{prefix}.mlp.fc1"))?.relu();
        let m = self.linear(&m, &format!("{prefix}.mlp.fc2"))?;
        Ok(x.add(&m)?)
    }

    /// Projects one `(N+1) x d` feature block. Row 0 is the global feature.
    pub fn project_image(&self, features: &Tensor) -> Result<ImageEmbedding<'t>> {
        Ok(self.project_images(&[features])?.remove(0))
    }

    /// Projects several images through one shared pass.
    pub fn project_images(&self, features: &[&Tensor]) -> Result<Vec<ImageEmbedding<'t>>> {
        let d = self.model.config.d_backbone;
        let mut rows = Vec::new();
        let mut counts = Vec::with_capacity(features.len());
        for f in features {
            if f.rank() != 2 || f.shape()[1] != d || f.shape()[0] < 2 {
                return Err(Error::Shape(format!(
                    "image features must be (N+1) x {d} with N >= 1, got {:?}",
                    f.shape()
                )));
            }
            counts.push(f.shape()[0]);
            rows.extend_from_slice(f.data());
        }
        if counts.is_empty() {
            return Ok(Vec::new());
        }
        let total: usize = counts.iter().sum();
        let x = self.tape().constant(Tensor::new(&[total, d], rows)?);
        let y = self.projector(&x, "image")?;
        let mut out = Vec::with_capacity(counts.len());
        let mut start = 0;
        for n in counts {
            out.push(ImageEmbedding {
                cls: y.row(start)?,
                patches: y.narrow(0, start + 1, n - 1)?,
            });
            start += n;
        }
        Ok(out)
    }

    /// Projects a view's word vectors into the joint space, `M x r`.
    pub fn encode_view(&self, view: &TokenizedView) -> Result<Var<'t>> {
        let e = self.model.config.embed_dim;
        let shape = view.embeddings.shape();
        if shape.len() != 2 || shape[1] != e {
            return Err(Error::Shape(format!(
                "view embeddings must be M x {e}, got {shape:?}"
            )));
        }
        let x = self.tape().constant(view.embeddings.clone());
        self.projector(&x, "text")
    }

    /// Summarises one projected view (`M x r`) into `T` tokens.
    pub fn sv_summary(&self, words: &Var<'t>) -> Result<ViewSummary<'t>> {
        let cfg = &self.model.config;
        let shape = words.shape();
        if shape.len() != 2 || shape[1] != cfg.r {
            return Err(Error::Shape(format!(
                "projected view must be M x {}, got {shape:?}",
                cfg.r
            )));
        }
        let m = shape[0];
        if m > cfg.m_max {
            return Err(Error::Shape(format!(
                "view has {m} tokens, more than m_max = {}",
                cfg.m_max
            )));
        }
        let positioned = words.add(&self.p("sv.pos").narrow(0, 0, m)?)?;
        let mut x = concat(&[self.p("sv.tokens"), positioned], 0)?;
        for b in 0..cfg.text_blocks {
            x = self.block(&x, &format!("sv.block{b}"))?;
        }
        let t = cfg.summary_tokens;
        Ok(ViewSummary {
            cls: x.row(0)?,
            local: x.narrow(0, 1, t - 1)?,
        })
    }

    /// Fuses the local tokens of every view of a class into `T` tokens.
    pub fn mv_summary(&self, views: &[ViewSummary<'t>]) -> Result<Var<'t>> {
        let cfg = &self.model.config;
        if views.is_empty() {
            return Err(Error::Shape("a class needs at least one view".into()));
        }
        let mut parts = Vec::with_capacity(views.len() + 1);
        parts.push(self.p("mv.tokens"));
        for v in views {
            if v.local.shape() != [cfg.summary_tokens - 1, cfg.r] {
                return Err(Error::Shape(format!(
                    "view summary must be {} x {}, got {:?}",
                    cfg.summary_tokens - 1,
                    cfg.r,
                    v.local.shape()
                )));
            }
            parts.push(v.local.clone());
        }
        let x = self.block(&concat(&parts, 0)?, "mv.block0")?;
        Ok(x.narrow(0, 0, cfg.summary_tokens)?)
    }

    pub fn class_embedding(&self, views: &[TokenizedView]) -> Result<ClassEmbedding<'t>> {
        let summaries = views
            .iter()
            .map(|v| self.sv_summary(&self.encode_view(v)?))
            .collect::<Result<Vec<_>>>()?;
        if summaries.is_empty() {
            return Err(Error::Shape("a class needs at least one view".into()));
        }
        let cls: Vec<Var<'t>> = summaries.iter().map(|s| s.cls.clone()).collect();
        Ok(ClassEmbedding {
            global: mean(&cls)?,
            summary: self.mv_summary(&summaries)?,
        })
    }

    /// Global compatibility: dot product of the image and class CLS rows.
    pub fn score_global(&self, image: &ImageEmbedding<'t>, class: &ClassEmbedding<'t>) -> Result<Var<'t>> {
        Ok(image.cls.mul(&class.global)?.sum())
    }

    /// Global scores of many images against many classes, `B x C`.
    pub fn global_logits(
        &self,
        images: &[ImageEmbedding<'t>],
        classes: &[ClassEmbedding<'t>],
    ) -> Result<Var<'t>> {
        let r = self.model.config.r;
        let rows = |vs: Vec<&Var<'t>>| -> Result<Var<'t>> {
            let parts = vs
                .into_iter()
                .map(|v| v.reshape(&[1, r]))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Ok(concat(&parts, 0)?)
        };
        let i = rows(images.iter().map(|x| &x.cls).collect())?;
        let c = rows(classes.iter().map(|x| &x.global).collect())?;
        Ok(i.matmul(&c.t()?)?)
    }

    pub fn local_query(&self, image: &ImageEmbedding<'t>) -> Result<LocalQuery<'t>> {
        let scale = 1.0 / (self.model.config.r as f64).sqrt();
        Ok(LocalQuery {
            q: image.patches.matmul(&self.p("local.wq"))?.scale(scale),
        })
    }

    pub fn local_keys(&self, class: &ClassEmbedding<'t>) -> Result<LocalKeys<'t>> {
        Ok(LocalKeys {
            kt: class.summary.matmul(&self.p("local.wk"))?.t()?,
            v: class.summary.matmul(&self.p("local.wv"))?,
        })
    }

    /// `S_Im W_pk^T / sqrt(r)` as a `1 x r` row. Pooling logits for patch
    /// rows `P` are then `u P^T`, which equals `S_Im (P W_pk)^T / sqrt(r)`.
    fn pool_query(&self) -> Result<Var<'t>> {
        if let Some(u) = self.pool_query.get() {
            return Ok(u.clone());
        }
        let r = self.model.config.r;
        let u = self
            .p("local.s_im")
            .reshape(&[1, r])?
            .matmul(&self.p("local.pool_key.weight").t()?)?
            .scale(1.0 / (r as f64).sqrt());
        Ok(self.pool_query.get_or_init(|| u).clone())
    }

    /// Local compatibility of one image with one class, a scalar.
    pub fn local_score(&self, query: &LocalQuery<'t>, keys: &LocalKeys<'t>) -> Result<Var<'t>> {
        let t = keys.v.shape()[0];
        self.attended_tokens.set(self.attended_tokens.get() + t);
        let a = query.q.matmul(&keys.kt)?.softmax(1)?;
        self.record(&a);
        let patches = a.matmul(&keys.v)?;
        let pool = self.pool_query()?.matmul(&patches.t()?)?.softmax(1)?;
        self.record(&pool);
        let pooled = pool.matmul(&patches)?;
        let pooled = self.linear(&pooled, "local.pool_value")?;
        let h = self.linear(&pooled, "local.mlp.fc1")?.relu();
        let h = h.matmul(&self.p("local.mlp.fc2.weight"))?;
        let out = pooled.add(&h)?.matmul(&self.p("local.j").t()?)?;
        Ok(out.reshape(&[])?)
    }

    pub fn score_local(&self, image: &ImageEmbedding<'t>, class: &ClassEmbedding<'t>) -> Result<Var<'t>> {
        self.local_score(&self.local_query(image)?, &self.local_keys(class)?)
    }

    /// Predicts among `candidates` (class index, is unseen, embedding) by
    /// global score. Returns the winning class index.
    pub fn infer(
        &self,
        image: &ImageEmbedding<'t>,
        candidates: &[(usize, bool, &ClassEmbedding<'t>)],
        mode: Mode,
        gamma: f64,
    ) -> Result<usize> {
        let mut scores = Vec::with_capacity(candidates.len());
        let mut unseen = Vec::with_capacity(candidates.len());
        let mut ids = Vec::with_capacity(candidates.len());
        for (id, is_unseen, class) in candidates {
            if mode == Mode::Zsl && !is_unseen {
                continue;
            }
            scores.push(self.score_global(image, class)?.item()?);
            unseen.push(*is_unseen);
            ids.push(*id);
        }
        let g = if mode == Mode::Gzsl { gamma } else { 0.0 };
        argmax_calibrated(&scores, &unseen, &ids, g)
            .ok_or_else(|| Error::Validation("no candidate classes to predict from".into()))
    }
}

/// Index into `ids` of the best `score + gamma * unseen`; ties go to the
/// smallest id. Returns the id itself.
pub fn argmax_calibrated(scores: &[f64], unseen: &[bool], ids: &[usize], gamma: f64) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for ((&s, &u), &id) in scores.iter().zip(unseen).zip(ids) {
        let v = if u { s + gamma } else { s };
        best = match best {
            Some((bv, bid)) if bv > v || (bv == v && bid < id) => Some((bv, bid)),
            _ => Some((v, id)),
        };
    }
    best.map(|(_, id)| id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_prefer_lowest_id() {
        assert_eq!(argmax_calibrated(&[1.0, 1.0], &[false, false], &[3, 1], 0.0), Some(1));
        assert_eq!(argmax_calibrated(&[1.0, 0.5], &[false, true], &[0, 1], 0.5), Some(0));
        assert_eq!(argmax_calibrated(&[1.0, 0.5], &[false, true], &[0, 1], 0.6), Some(1));
        assert_eq!(argmax_calibrated(&[], &[], &[], 0.0), None);
    }

    #[test]
    fn parameter_names_are_unique_and_layout_is_deterministic() {
        let a = Model::new(ModelConfig::tiny()).unwrap();
        let b = Model::new(ModelConfig::tiny()).unwrap();
        let mut names = a.params().names().to_vec();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), a.params().len());
        for (x, y) in a.params().tensors().iter().zip(b.params().tensors()) {
            assert_eq!(x.data(), y.data());
        }
    }
}
