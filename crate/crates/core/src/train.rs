//! Joint optimisation of the global and local losses over seen classes.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use i2mv_tensor::{adam_step, concat, AdamConfig, AdamState, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{save_checkpoint, PatchFeatureRecord, Split};
use crate::embed::{ClassTexts, TokenizedView};
use crate::error::{Error, Result};
use crate::eval::{gzsl_point, gzsl_matrix, per_class_top1, resolve_labels, score_matrix};
use crate::model::{Bound, Model};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Per-class top-1 over validation classes.
    ZslT1,
    /// Harmonic mean over seen and validation classes, uncalibrated.
    GzslH,
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ZslT1 => "zsl_t1",
            Self::GzslH => "gzsl_h",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the local loss.
    pub lambda_local: f64,
    pub seed: u64,
    /// Stop once this many epochs pass without a new best validation
    /// score. `None` runs every epoch.
    pub patience: Option<usize>,
    pub selection: Selection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 200,
            batch_size: 32,
            lambda_local: 1.0,
            seed: 0,
            patience: None,
            selection: Selection::ZslT1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_local >= 0.0 && self.lambda_local.is_finite()) {
            return Err(Error::Config(format!(
                "lambda_local must be finite and >= 0, got {}",
                self.lambda_local
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Local-loss weights tried by the grid mode.
pub const LAMBDA_GRID: [f64; 3] = [0.1, 0.5, 1.0];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub loss_cls: f64,
    pub loss_local: f64,
    pub loss_total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_cls: f64,
    pub loss_local: f64,
    pub loss_total: f64,
    pub val_metric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Epochs completed.
    pub epoch: usize,
    pub best_score: f64,
    pub best_epoch: usize,
    pub best_checkpoint: Option<PathBuf>,
    pub history: Vec<EpochLog>,
}

/// Owns the model's optimiser state across steps.
pub struct Trainer {
    pub config: TrainConfig,
    adam: AdamState,
}

impl Trainer {
    pub fn new(model: &Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(
            AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            },
            model.params().tensors(),
        );
        Ok(Self { config, adam })
    }

    /// One optimiser step on `batch` of (features, class id) pairs; every
    /// label must belong to a seen class.
    pub fn step<C: ClassTexts + ?Sized>(
        &mut self,
        model: &mut Model,
        corpus: &C,
        batch: &[(&Tensor, usize)],
    ) -> Result<StepLosses> {
        if batch.is_empty() {
            return Err(Error::Validation("empty batch".into()));
        }
        let seen = corpus.classes_in(Split::Seen);
        let targets = batch
            .iter()
            .map(|&(_, label)| {
                seen.iter().position(|&c| c == label).ok_or_else(|| {
                    Error::SplitLeak(format!(
                        "training label `{}` is not a seen class",
                        if label < corpus.num_classes() {
                            corpus.class_name(label).to_owned()
                        } else {
                            label.to_string()
                        }
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let tape = Tape::new();
        let (losses, grads) = {
            let bound = model.bind(&tape, true);
            let views: Vec<&[TokenizedView]> = seen.iter().map(|&c| corpus.views(c)).collect();
            let loss = joint_loss(&bound, &views, batch_targets(batch, &targets).as_slice(), self.config.lambda_local)?;
            let losses = loss.values()?;
            tape.backward(loss.total)?;
            let grads: Vec<Option<Tensor>> = bound.vars().iter().map(|&v| tape.grad(v)).collect();
            (losses, grads)
        };
        if !losses.loss_total.is_finite() {
            return Err(Error::Tensor(i2mv_tensor::TensorError::NonFinite {
                context: "training loss".into(),
                value: losses.loss_total,
            }));
        }
        for (p, g) in model.params_mut().tensors_mut().iter_mut().zip(grads) {
            match g {
                Some(g) => p.set_grad(g.into_data())?,
                None => p.set_grad(vec![0.0; p.numel()])?,
            }
        }
        adam_step(model.params_mut().tensors_mut(), &mut self.adam)?;
        Ok(losses)
    }
}

fn batch_targets<'a>(batch: &[(&'a Tensor, usize)], targets: &[usize]) -> Vec<(&'a Tensor, usize)> {
    batch.iter().zip(targets).map(|(&(f, _), &t)| (f, t)).collect()
}

/// The three loss terms of one batch, still on the tape.
pub struct JointLoss<'t> {
    pub cls: Var<'t>,
    pub local: Var<'t>,
    pub total: Var<'t>,
}

impl JointLoss<'_> {
    pub fn values(&self) -> Result<StepLosses> {
        Ok(StepLosses {
            loss_cls: self.cls.item()?,
            loss_local: self.local.item()?,
            loss_total: self.total.item()?,
        })
    }
}

/// Mean over the batch of `CE(global row) + lambda * CE(local row)`, with
/// every class in `classes` as a candidate. Targets index into `classes`.
pub fn joint_loss<'t>(
    bound: &Bound<'_, 't>,
    classes: &[&[TokenizedView]],
    batch: &[(&Tensor, usize)],
    lambda: f64,
) -> Result<JointLoss<'t>> {
    if batch.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    if let Some(&(_, t)) = batch.iter().find(|(_, t)| *t >= classes.len()) {
        return Err(Error::Validation(format!(
            "target {t} out of range for {} classes",
            classes.len()
        )));
    }
    let classes = classes
        .iter()
        .map(|v| bound.class_embedding(v))
        .collect::<Result<Vec<_>>>()?;
    let feats: Vec<&Tensor> = batch.iter().map(|(f, _)| *f).collect();
    let images = bound.project_images(&feats)?;
    let global = bound.global_logits(&images, &classes)?;
    let keys = classes
        .iter()
        .map(|c| bound.local_keys(c))
        .collect::<Result<Vec<_>>>()?;

    let scale = 1.0 / batch.len() as f64;
    let mut cls_terms = Vec::with_capacity(batch.len());
    let mut local_terms = Vec::with_capacity(batch.len());
    for (i, (image, &(_, target))) in images.iter().zip(batch).enumerate() {
        cls_terms.push(global.row(i)?.cross_entropy(target)?.reshape(&[1])?);
        let query = bound.local_query(image)?;
        let row = keys
            .iter()
            .map(|k| Ok(bound.local_score(&query, k)?.reshape(&[1])?))
            .collect::<Result<Vec<_>>>()?;
        local_terms.push(concat(&row, 0)?.cross_entropy(target)?.reshape(&[1])?);
    }
    let cls = concat(&cls_terms, 0)?.sum().scale(scale);
    let local = concat(&local_terms, 0)?.sum().scale(scale);
    let total = if lambda == 0.0 {
        cls
    } else {
        cls.add(&local.scale(lambda))?
    };
    Ok(JointLoss { cls, local, total })
}

/// Validation score used for model selection. Validation-class records are
/// the novel side; seen-class records (if any) only count for `GzslH`.
pub fn validation_score<C: ClassTexts + ?Sized>(
    model: &Model,
    corpus: &C,
    val: &[PatchFeatureRecord],
    selection: Selection,
) -> Result<f64> {
    match selection {
        Selection::ZslT1 => {
            let labels = resolve_labels(corpus, val)?;
            let (records, labels): (Vec<PatchFeatureRecord>, Vec<usize>) = val
                .iter()
                .zip(labels)
                .filter(|(_, l)| corpus.split(*l) == Split::Val)
                .map(|(r, l)| (r.clone(), l))
                .unzip();
            let classes: Vec<usize> = corpus.classes_in(Split::Val);
            let present: Vec<usize> = classes.iter().copied().filter(|c| labels.contains(c)).collect();
            if present.is_empty() {
                return Err(Error::Validation("validation set has no validation-class images".into()));
            }
            let unseen = vec![false; classes.len()];
            let m = score_matrix(model, corpus, &records, &labels, &classes, &unseen)?;
            Ok(per_class_top1(&m.predict(0.0), &labels, &present)?.0)
        }
        Selection::GzslH => {
            let m = gzsl_matrix(model, corpus, val, Split::Val)?;
            Ok(gzsl_point(&m, 0.0)?.2)
        }
    }
}

/// Where [`fit`] writes its artifacts.
#[derive(Clone, Debug)]
pub struct FitOutput {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

impl FitOutput {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            checkpoint: dir.join("best.ckpt"),
            log: dir.join("train_log.jsonl"),
        }
    }
}

/// Trains on `train` (seen classes only), scores `val` after each epoch and
/// leaves the best-scoring parameters in `model`.
///
/// `val` may contain validation-class and seen-class records; any other
/// split is rejected. Unseen classes' views are never read.
pub fn fit<C: ClassTexts + ?Sized>(
    model: &mut Model,
    corpus: &C,
    train: &[PatchFeatureRecord],
    val: &[PatchFeatureRecord],
    config: &TrainConfig,
    output: Option<&FitOutput>,
) -> Result<TrainState> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::Validation("validation set is empty".into()));
    }
    let train_labels = resolve_labels(corpus, train)?;
    if let Some((r, _)) = train
        .iter()
        .zip(&train_labels)
        .find(|(_, &l)| corpus.split(l) != Split::Seen)
    {
        return Err(Error::SplitLeak(format!(
            "training record of class `{}` is not from the seen split",
            r.class_name
        )));
    }
    let val_labels = resolve_labels(corpus, val)?;
    if let Some((r, &l)) = val
        .iter()
        .zip(&val_labels)
        .find(|(_, &l)| corpus.split(l) == Split::Unseen)
    {
        return Err(Error::SplitLeak(format!(
            "validation record of class `{}` is from the {} split",
            r.class_name,
            corpus.split(l)
        )));
    }

    let mut log = match output {
        Some(o) => Some(BufWriter::new(
            File::create(&o.log).map_err(|e| Error::io(&o.log, e))?,
        )),
        None => None,
    };
    let mut trainer = Trainer::new(model, config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut state = TrainState {
        epoch: 0,
        best_score: f64::NEG_INFINITY,
        best_epoch: 0,
        best_checkpoint: None,
        history: Vec::new(),
    };
    let mut best_params = model.named_params();
    let mut since_best = 0usize;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sums = (0.0, 0.0, 0.0);
        let mut steps = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&Tensor, usize)> = chunk
                .iter()
                .map(|&i| (&train[i].features, train_labels[i]))
                .collect();
            let l = trainer.step(model, corpus, &batch)?;
            sums.0 += l.loss_cls;
            sums.1 += l.loss_local;
            sums.2 += l.loss_total;
            steps += 1;
        }
        let n = steps as f64;
        let score = validation_score(model, corpus, val, config.selection)?;
        let entry = EpochLog {
            epoch,
            loss_cls: sums.0 / n,
            loss_local: sums.1 / n,
            loss_total: sums.2 / n,
            val_metric: score,
        };
        if let Some(w) = log.as_mut() {
            let line = serde_json::to_string(&entry).expect("log entry serializes");
            writeln!(w, "{line}").map_err(|e| Error::io(&output.unwrap().log, e))?;
        }
        state.history.push(entry);
        state.epoch = epoch;
        if score >= state.best_score {
            state.best_score = score;
            state.best_epoch = epoch;
            best_params = model.named_params();
            since_best = 0;
            if let Some(o) = output {
                save_checkpoint(&o.checkpoint, model.config(), &best_params)?;
                state.best_checkpoint = Some(o.checkpoint.clone());
            }
        } else {
            since_best += 1;
        }
        if config.patience.is_some_and(|p| since_best >= p) {
            break;
        }
    }
    if let Some(mut w) = log {
        w.flush().map_err(|e| Error::io(&output.unwrap().log, e))?;
    }
    model.load_params(&best_params)?;
    Ok(state)
}
