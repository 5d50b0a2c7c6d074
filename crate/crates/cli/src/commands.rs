use std::path::{Path, PathBuf};

use clap::Args;
use i2mv_core::data::{
    load_checkpoint, load_embeddings, load_features, load_views, save_report, save_views, ViewCorpus,
};
use i2mv_core::embed::EncodedCorpus;
use i2mv_core::eval::{calibrate_and_eval_gzsl, eval_zsl};
use i2mv_core::gradcheck::{check_config, rounding_floor};
use i2mv_core::model::{Model, ModelConfig};
use i2mv_core::synth::{generate, write_bundle, SynthSpec};
use i2mv_core::train::{fit, FitOutput};
use i2mv_promptgen::{
    cache_key, generate_views, merge_views, plan_prompts, ExamplePool, GenerateConfig, HttpClient, LlmClient,
    MockClient,
};
use i2mv_tensor::GradFault;
use serde::Serialize;

use crate::config::{print_header, ConfigKeys};
use crate::{Failure, Mode};

/// Tolerance for the gradient check's exit status.
const GRAD_TOLERANCE: f64 = 1e-4;

pub fn train(
    views: &Path,
    embeddings: &Path,
    features: &Path,
    val_features: &Path,
    config: Option<&Path>,
    out: &Path,
    flags: &ConfigKeys,
) -> Result<(), Failure> {
    let keys = ConfigKeys::resolve(config, flags)?;
    let ragged = keys.allow_ragged_views.unwrap_or(false);
    let corpus = load_views(views, ragged)?;
    let table = load_embeddings(embeddings)?;
    let train = load_features(features)?;
    let val = load_features(val_features)?;

    let mut base = ModelConfig::default();
    if let Some(r) = train.first() {
        base.d_backbone = r.features.shape()[1];
    }
    base.embed_dim = table.dim();
    if let Some(q) = corpus.views_per_class() {
        base.q = q;
    }
    let model_config = keys.model(base);
    let train_config = keys.train();
    model_config.validate()?;
    train_config.validate()?;
    print_header(&ConfigKeys::echo(&model_config, Some(&train_config), Some(ragged)));

    let encoded = EncodedCorpus::new(&corpus, &table, model_config.m_max)?;
    let mut model = Model::new(model_config)?;
    std::fs::create_dir_all(out).map_err(|e| Failure::Data(format!("{}: {e}", out.display())))?;
    let output = FitOutput::in_dir(out);
    let state = fit(&mut model, &encoded, &train, &val, &train_config, Some(&output))?;
    println!(
        "trained {} epochs; best {} = {:.4} at epoch {}",
        state.epoch, train_config.selection, state.best_score, state.best_epoch
    );
    println!("checkpoint {}", output.checkpoint.display());
    Ok(())
}

pub struct EvalArgs<'a> {
    pub ckpt: &'a Path,
    pub features: &'a Path,
    pub views: &'a Path,
    pub embeddings: &'a Path,
    pub mode: Mode,
    pub heldout: Option<&'a Path>,
    pub report: &'a Path,
    pub allow_ragged_views: bool,
}

#[derive(Serialize)]
struct EvalHeader<'a> {
    ckpt: &'a Path,
    features: &'a Path,
    views: &'a Path,
    embeddings: &'a Path,
    mode: &'static str,
    heldout_features: Option<&'a Path>,
    report: &'a Path,
    allow_ragged_views: bool,
}

pub fn eval(a: EvalArgs) -> Result<(), Failure> {
    if a.mode == Mode::Gzsl && a.heldout.is_none() {
        return Err(Failure::Config(
            "gzsl evaluation needs --heldout-features to choose the calibration shift".into(),
        ));
    }
    print_header(&EvalHeader {
        ckpt: a.ckpt,
        features: a.features,
        views: a.views,
        embeddings: a.embeddings,
        mode: match a.mode {
            Mode::Zsl => "zsl",
            Mode::Gzsl => "gzsl",
        },
        heldout_features: a.heldout,
        report: a.report,
        allow_ragged_views: a.allow_ragged_views,
    });
    let ck = load_checkpoint(a.ckpt)?;
    let model = Model::from_checkpoint(&ck)?;
    let corpus = load_views(a.views, a.allow_ragged_views)?;
    let table = load_embeddings(a.embeddings)?;
    let encoded = EncodedCorpus::new(&corpus, &table, model.config().m_max)?;
    let test = load_features(a.features)?;
    let report = match a.heldout {
        None => eval_zsl(&model, &encoded, &test)?,
        Some(h) => {
            let heldout = load_features(h)?;
            calibrate_and_eval_gzsl(&model, &encoded, &heldout, &test, None)?.0
        }
    };
    print!("{}", report.table());
    save_report(a.report, &report)?;
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct PromptgenArgs {
    /// JSON array of `{name, split}` target classes.
    #[arg(long)]
    classes: PathBuf,
    /// JSON array of `{class_name, description}`: one per view plus a reserve.
    #[arg(long)]
    examples: PathBuf,
    /// Word for the kind of object, e.g. "birds".
    #[arg(long = "type")]
    type_word: String,
    #[arg(long, default_value_t = 2)]
    shots: usize,
    #[arg(long, default_value_t = 3)]
    views: usize,
    #[arg(long, default_value_t = 0.9)]
    temperature: f64,
    #[arg(long, default_value_t = 512)]
    max_tokens: u32,
    /// Recorded in the cache key so different models never share entries.
    #[arg(long, default_value = "default")]
    model_id: String,
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
    #[arg(long)]
    cache: PathBuf,
    /// Answer from `<dir>/<cache key>.txt` instead of the network.
    #[arg(long)]
    mock: Option<PathBuf>,
    /// Corpus whose views are appended to the generated ones.
    #[arg(long)]
    merge: Option<PathBuf>,
    /// Also write every prompt with its cache key.
    #[arg(long)]
    plan_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct PlanEntry<'a> {
    class: &'a str,
    view: usize,
    examples: &'a [usize],
    key: String,
    prompt: &'a str,
}

pub fn promptgen(a: &PromptgenArgs) -> Result<(), Failure> {
    print_header(a);
    let pool = ExamplePool::load(&a.examples, &a.type_word, a.views, a.shots)?;
    let targets = i2mv_promptgen::plan::load_targets(&a.classes)?;
    let plan = plan_prompts(&pool, &targets)?;
    let config = GenerateConfig {
        temperature: a.temperature,
        max_tokens: a.max_tokens,
        model_id: a.model_id.clone(),
        max_in_flight: a.max_in_flight,
    };
    i2mv_promptgen::client::check_temperature(config.temperature)?;
    if let Some(path) = &a.plan_out {
        let entries: Vec<PlanEntry> = plan
            .classes
            .iter()
            .flat_map(|c| {
                c.prompts.iter().enumerate().map(|(view, p)| PlanEntry {
                    class: &c.name,
                    view,
                    examples: &p.examples,
                    key: cache_key(&p.text, config.temperature, &config.model_id),
                    prompt: &p.text,
                })
            })
            .collect();
        let text = serde_json::to_string_pretty(&entries).expect("plan serializes");
        std::fs::write(path, text + "\n").map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    }
    let client: Box<dyn LlmClient> = match &a.mock {
        Some(dir) => Box::new(MockClient::new(dir)),
        None => Box::new(HttpClient::from_env()?),
    };
    let (mut corpus, stats) = generate_views(&plan, client.as_ref(), &config, &a.cache)?;
    if let Some(extra) = &a.merge {
        let extra: ViewCorpus = load_views(extra, true)?;
        corpus = merge_views(&corpus, &extra)?;
    }
    save_views(&a.out, &corpus)?;
    println!(
        "{} classes, {} requests, {} cache hits -> {}",
        corpus.classes.len(),
        stats.requests,
        stats.cache_hits,
        a.out.display()
    );
    Ok(())
}

pub fn gradcheck(config: Option<&Path>, epsilon: f64, break_grad: bool, flags: &ConfigKeys) -> Result<(), Failure> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Failure::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let keys = ConfigKeys::resolve(config, flags)?;
    let model_config = keys.model(ModelConfig::tiny());
    model_config.validate()?;
    #[derive(Serialize)]
    struct Header {
        #[serde(flatten)]
        keys: ConfigKeys,
        epsilon: f64,
        break_grad: bool,
    }
    print_header(&Header {
        keys: ConfigKeys::echo(&model_config, None, None),
        epsilon,
        break_grad,
    });
    if epsilon > 1e-3 {
        eprintln!("warning: epsilon {epsilon} is large; central differences will be dominated by truncation error");
    }
    let fault = break_grad.then_some(GradFault::DoubleMatmulLhs);
    let report = check_config(&model_config, epsilon, fault)?;
    let names: Vec<String> = Model::new(model_config)?
        .named_params()
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    let floor = rounding_floor(report.loss, epsilon);
    let over: Vec<_> = report.probes.iter().filter(|p| p.rel_error() > GRAD_TOLERANCE).collect();
    let within_floor = over
        .iter()
        .filter(|p| (p.analytic - p.numeric).abs() <= floor)
        .count();
    println!(
        "max relative error {:.3e} over {} coordinates",
        report.max_rel_error, report.coordinates
    );
    if let Some((p, i)) = report.worst {
        println!(
            "worst {}[{i}]: analytic {:.6e}, numeric {:.6e}",
            names[p], report.analytic, report.numeric
        );
    }
    println!(
        "{} coordinates above {GRAD_TOLERANCE:e}; {within_floor} of them differ by less than the loss rounding floor {floor:.1e}",
        over.len()
    );
    if report.max_rel_error <= GRAD_TOLERANCE {
        println!("PASS");
        Ok(())
    } else {
        Err(Failure::Runtime(format!(
            "gradient check failed: {:.3e} > {GRAD_TOLERANCE:e}",
            report.max_rel_error
        )))
    }
}

pub fn synth(out: &Path, seed: u64, spec: Option<&Path>) -> Result<(), Failure> {
    let spec: SynthSpec = match spec {
        None => SynthSpec::default(),
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?
        }
    };
    #[derive(Serialize)]
    struct Header<'a> {
        seed: u64,
        spec: &'a SynthSpec,
    }
    print_header(&Header { seed, spec: &spec });
    // Any generator complaint is about the spec the user supplied.
    let data = generate(seed, &spec).map_err(|e| Failure::Config(e.to_string()))?;
    write_bundle(&data, out)?;
    println!("wrote {}", out.display());
    Ok(())
}
