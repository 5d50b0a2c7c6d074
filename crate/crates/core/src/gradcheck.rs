//! Finite-difference check of the full model on a small random problem.

use i2mv_tensor::{
    grad_check, grad_check_with_fault, GradCheckReport, GradFault, Tape, Tensor, TensorError, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::embed::TokenizedView;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::train::joint_loss;

/// Random class views and image features sized for `config`.
#[derive(Clone, Debug)]
pub struct TinyProblem {
    pub classes: Vec<Vec<TokenizedView>>,
    /// (features, class) pairs.
    pub batch: Vec<(Tensor, usize)>,
}

impl TinyProblem {
    /// `classes` classes with `config.q` views of 3 to `config.m_max`
    /// tokens each, and one image per class with `patches` patches.
    pub fn random(config: &ModelConfig, classes: usize, patches: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
        let mut out = Self {
            classes: Vec::new(),
            batch: Vec::new(),
        };
        let mut lengths = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
        let lo = 3.min(config.m_max);
        for c in 0..classes {
            let views = (0..config.q)
                .map(|v| {
                    let m = lengths.random_range(lo..=config.m_max);
                    Ok(TokenizedView {
                        tokens: (0..m).map(|i| format!("c{c}v{v}t{i}")).collect(),
                        embeddings: Tensor::new(&[m, config.embed_dim], gauss(m * config.embed_dim))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            out.classes.push(views);
        }
        for c in 0..classes {
            let feats = Tensor::new(
                &[patches + 1, config.d_backbone],
                gauss((patches + 1) * config.d_backbone),
            )?;
            out.batch.push((feats, c));
        }
        Ok(out)
    }
}

// Pins the closure to the higher-ranked signature the checker expects.
fn objective<F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> i2mv_tensor::Result<Var<'t>>,
{
    f
}

fn to_tensor_error(e: Error) -> TensorError {
    match e {
        Error::Tensor(t) => t,
        other => TensorError::Invalid(other.to_string()),
    }
}

/// Compares analytic and numeric gradients of the joint loss (global plus
/// local, `lambda = 1`) for every parameter of `model` on `problem`.
pub fn check_model(
    model: &Model,
    problem: &TinyProblem,
    epsilon: f64,
    fault: Option<GradFault>,
) -> Result<GradCheckReport> {
    let views: Vec<&[TokenizedView]> = problem.classes.iter().map(Vec::as_slice).collect();
    let batch: Vec<(&Tensor, usize)> = problem.batch.iter().map(|(f, c)| (f, *c)).collect();
    let f = objective(|_, vars| {
        let bound = model.bind_vars(vars.to_vec()).map_err(to_tensor_error)?;
        let loss = joint_loss(&bound, &views, &batch, 1.0).map_err(to_tensor_error)?;
        Ok(loss.total)
    });
    let params = model.params().tensors();
    let report = match fault {
        None => grad_check(params, epsilon, f)?,
        Some(fault) => grad_check_with_fault(params, epsilon, fault, f)?,
    };
    Ok(report)
}

/// Largest central-difference error that rounding in the loss alone can
/// explain: a few units in the last place of the loss, divided by `2 eps`.
///
/// Coordinates whose true gradient is below this size (shift-invariant
/// biases, dead or always-on ReLU units, the patch pooling at small
/// initial scale) cannot meet a relative tolerance, whatever the backward
/// pass does.
pub fn rounding_floor(loss: f64, epsilon: f64) -> f64 {
    let ulp = f64::EPSILON * loss.abs().max(f64::MIN_POSITIVE);
    16.0 * ulp / (2.0 * epsilon)
}

/// Runs [`check_model`] on the tiny problem: `config` with 3 classes and
/// 4 patches per image, at the initial parameters.
pub fn check_config(config: &ModelConfig, epsilon: f64, fault: Option<GradFault>) -> Result<GradCheckReport> {
    let model = Model::new(config.clone())?;
    let problem = TinyProblem::random(config, 3, 4, config.init_seed)?;
    check_model(&model, &problem, epsilon, fault)
}
