use std::cell::RefCell;
use std::collections::BTreeSet;

use i2mv_core::data::{load_checkpoint, Split};
use i2mv_core::gradcheck::TinyProblem;
use i2mv_core::embed::{ClassTexts, EncodedCorpus, TokenizedView};
use i2mv_core::model::{Model, ModelConfig};
use i2mv_core::synth::{generate, SynthData, SynthSpec};
use i2mv_core::train::{fit, joint_loss, FitOutput, Selection, TrainConfig, Trainer};
use i2mv_core::Error;
use i2mv_tensor::{adam_step, AdamConfig, AdamState, Tape, Tensor};

fn spec() -> SynthSpec {
    SynthSpec {
        attributes: 6,
        noise_vocab: 6,
        seen: 4,
        val: 2,
        unseen: 2,
        attrs_per_class: 2,
        images_per_class: 5,
        seen_test_images: 1,
        patches: 4,
        d_backbone: 8,
        embed_dim: 8,
        tokens_per_view: 4,
        views: 2,
        ..SynthSpec::default()
    }
}

fn setup(seed: u64) -> (SynthData, EncodedCorpus, ModelConfig) {
    let s = spec();
    let data = generate(3, &s).unwrap();
    let config = ModelConfig {
        r: 8,
        summary_tokens: 3,
        text_blocks: 1,
        heads: 2,
        m_max: 8,
        q: s.views,
        d_backbone: s.d_backbone,
        embed_dim: s.embed_dim,
        mlp_ratio: 2,
        ln_eps: 1e-5,
        init_seed: seed,
    };
    let corpus = EncodedCorpus::new(&data.corpus, &data.embeddings, config.m_max).unwrap();
    (data, corpus, config)
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        lr: 3e-3,
        ..TrainConfig::default()
    }
}

fn label(corpus: &EncodedCorpus, name: &str) -> usize {
    corpus.index_of(name).unwrap()
}

#[test]
fn zero_local_weight_leaves_only_the_global_loss() {
    let (data, corpus, config) = setup(0);
    let model = Model::new(config).unwrap();
    let seen = corpus.classes_in(Split::Seen);
    let views: Vec<&[TokenizedView]> = seen.iter().map(|&c| corpus.views(c)).collect();
    let batch: Vec<(&Tensor, usize)> = data.train[..6]
        .iter()
        .map(|r| {
            let c = label(&corpus, &r.class_name);
            (&r.features, seen.iter().position(|&s| s == c).unwrap())
        })
        .collect();
    let tape = Tape::new();
    let bound = model.bind(&tape, true);
    let l = joint_loss(&bound, &views, &batch, 0.0).unwrap().values().unwrap();
    assert_eq!(l.loss_total, l.loss_cls);
    assert!(l.loss_local > 0.0);
}

#[test]
fn untrained_global_loss_is_near_log_classes() {
    let (data, corpus, config) = setup(1);
    let mut model = Model::new(config).unwrap();
    let mut trainer = Trainer::new(&model, TrainConfig::default()).unwrap();
    let batch: Vec<(&Tensor, usize)> = data
        .train
        .iter()
        .map(|r| (&r.features, label(&corpus, &r.class_name)))
        .collect();
    let l = trainer.step(&mut model, &corpus, &batch).unwrap();
    let ln_c = (corpus.classes_in(Split::Seen).len() as f64).ln();
    assert!((l.loss_cls - ln_c).abs() <= 0.2 * ln_c, "{} vs {ln_c}", l.loss_cls);
}

#[test]
fn repeated_steps_on_one_batch_reduce_the_loss() {
    let mut model = Model::new(ModelConfig::tiny()).unwrap();
    let problem = TinyProblem::random(model.config(), 3, 4, 5).unwrap();
    let views: Vec<&[TokenizedView]> = problem.classes.iter().map(Vec::as_slice).collect();
    let batch: Vec<(&Tensor, usize)> = problem.batch.iter().map(|(f, c)| (f, *c)).collect();
    let mut adam = AdamState::new(AdamConfig::default(), model.params().tensors());
    let mut losses = Vec::new();
    for _ in 0..50 {
        let tape = Tape::new();
        let grads: Vec<_> = {
            let bound = model.bind(&tape, true);
            let l = joint_loss(&bound, &views, &batch, 1.0).unwrap();
            losses.push(l.total.item().unwrap());
            tape.backward(l.total).unwrap();
            bound.vars().iter().map(|v| tape.grad(*v)).collect()
        };
        for (p, g) in model.params_mut().tensors_mut().iter_mut().zip(grads) {
            let n = p.numel();
            p.set_grad(g.map_or(vec![0.0; n], Tensor::into_data)).unwrap();
        }
        adam_step(model.params_mut().tensors_mut(), &mut adam).unwrap();
    }
    assert!(losses[49] < losses[0], "{} -> {}", losses[0], losses[49]);
}

#[test]
fn trainer_step_reduces_loss_on_synthetic_batch() {
    let (data, corpus, config) = setup(2);
    let mut model = Model::new(config).unwrap();
    let mut trainer = Trainer::new(&model, quick(1)).unwrap();
    let batch: Vec<(&Tensor, usize)> = data.train[..8]
        .iter()
        .map(|r| (&r.features, label(&corpus, &r.class_name)))
        .collect();
    let first = trainer.step(&mut model, &corpus, &batch).unwrap();
    let mut last = first;
    for _ in 0..49 {
        last = trainer.step(&mut model, &corpus, &batch).unwrap();
    }
    assert!(last.loss_total < first.loss_total);
}

#[test]
fn step_rejects_non_seen_labels() {
    let (data, corpus, config) = setup(0);
    let mut model = Model::new(config).unwrap();
    let mut trainer = Trainer::new(&model, quick(1)).unwrap();
    let r = &data.test[0];
    let err = trainer
        .step(&mut model, &corpus, &[(&r.features, label(&corpus, &r.class_name))])
        .unwrap_err();
    assert!(matches!(err, Error::SplitLeak(_)), "{err}");
}

#[test]
fn zero_patience_runs_one_epoch() {
    let (data, corpus, config) = setup(0);
    let mut model = Model::new(config).unwrap();
    let tc = TrainConfig {
        patience: Some(0),
        ..quick(20)
    };
    let state = fit(&mut model, &corpus, &data.train, &data.val, &tc, None).unwrap();
    assert_eq!(state.epoch, 1);
    assert_eq!(state.history.len(), 1);
}

#[test]
fn same_seed_gives_identical_history() {
    let run = || {
        let (data, corpus, config) = setup(4);
        let mut model = Model::new(config).unwrap();
        let state = fit(&mut model, &corpus, &data.train, &data.val, &quick(3), None).unwrap();
        (state.history, model.named_params())
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a, b);
    assert_eq!(pa, pb);
}

#[test]
fn fit_keeps_the_best_epoch_and_writes_artifacts() {
    let (data, corpus, config) = setup(5);
    let dir = tempfile::tempdir().unwrap();
    let out = FitOutput::in_dir(dir.path());
    let mut model = Model::new(config).unwrap();
    let tc = TrainConfig {
        selection: Selection::GzslH,
        ..quick(4)
    };
    let state = fit(&mut model, &corpus, &data.train, &data.heldout, &tc, Some(&out)).unwrap();
    let best = state
        .history
        .iter()
        .map(|h| h.val_metric)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(state.best_score, best);
    assert_eq!(state.history[state.best_epoch - 1].val_metric, best);

    let log = std::fs::read_to_string(&out.log).unwrap();
    assert_eq!(log.lines().count(), 4);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for k in ["epoch", "loss_cls", "loss_local", "val_metric"] {
            assert!(v.get(k).is_some(), "{k} missing in {line}");
        }
    }
    let ck = load_checkpoint(&out.checkpoint).unwrap();
    assert_eq!(ck.tensors, model.named_params());
}

#[test]
fn fit_rejects_leaky_or_empty_sets() {
    let (data, corpus, config) = setup(0);
    let mut model = Model::new(config).unwrap();
    let tc = quick(1);
    let leak = fit(&mut model, &corpus, &data.test, &data.val, &tc, None).unwrap_err();
    assert!(matches!(leak, Error::SplitLeak(_)), "{leak}");
    let leak = fit(&mut model, &corpus, &data.train, &data.test, &tc, None).unwrap_err();
    assert!(matches!(leak, Error::SplitLeak(_)), "{leak}");
    assert!(fit(&mut model, &corpus, &[], &data.val, &tc, None).is_err());
    assert!(fit(&mut model, &corpus, &data.train, &[], &tc, None).is_err());
}

#[test]
fn negative_local_weight_is_a_config_error() {
    let tc = TrainConfig {
        lambda_local: -0.1,
        ..TrainConfig::default()
    };
    assert!(matches!(tc.validate(), Err(Error::Config(_))));
}

/// Records which classes' views were read.
struct Tracking<'a> {
    inner: &'a EncodedCorpus,
    touched: RefCell<BTreeSet<usize>>,
}

impl ClassTexts for Tracking<'_> {
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn class_name(&self, class: usize) -> &str {
        self.inner.class_name(class)
    }

    fn split(&self, class: usize) -> Split {
        self.inner.split(class)
    }

    fn views(&self, class: usize) -> &[TokenizedView] {
        self.touched.borrow_mut().insert(class);
        self.inner.views(class)
    }
}

#[test]
fn training_never_reads_unseen_views() {
    let (data, corpus, config) = setup(6);
    for selection in [Selection::ZslT1, Selection::GzslH] {
        let tracked = Tracking {
            inner: &corpus,
            touched: RefCell::new(BTreeSet::new()),
        };
        let mut model = Model::new(config.clone()).unwrap();
        let tc = TrainConfig {
            selection,
            ..quick(2)
        };
        fit(&mut model, &tracked, &data.train, &data.heldout, &tc, None).unwrap();
        let touched = tracked.touched.into_inner();
        assert!(!touched.is_empty());
        for c in touched {
            assert_ne!(corpus.split(c), Split::Unseen, "{}", corpus.class_name(c));
        }
    }
}
