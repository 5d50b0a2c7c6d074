//! ZSL and GZSL metrics and the calibrated-stacking sweep.

use std::collections::BTreeMap;

use i2mv_tensor::Tape;

use crate::data::{EvalMode, GzslMetrics, MetricReport, PatchFeatureRecord, Split};
use crate::embed::ClassTexts;
use crate::error::{Error, Result};
use crate::model::{argmax_calibrated, Model};

/// Images scored against a fixed candidate set.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    /// Candidate class ids, ascending.
    pub classes: Vec<usize>,
    /// Per candidate: whether it receives the calibration shift.
    pub unseen: Vec<bool>,
    /// One row per image, one column per candidate.
    pub scores: Vec<Vec<f64>>,
    /// True class id per image.
    pub labels: Vec<usize>,
}

impl ScoreMatrix {
    pub fn predict(&self, gamma: f64) -> Vec<usize> {
        self.scores
            .iter()
            .map(|row| {
                argmax_calibrated(row, &self.unseen, &self.classes, gamma)
                    .expect("score matrix has candidates")
            })
            .collect()
    }

    /// `max - min` over all entries.
    pub fn range(&self) -> f64 {
        let (lo, hi) = self
            .scores
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        if lo.is_finite() {
            hi - lo
        } else {
            0.0
        }
    }
}

/// Per-gamma results of calibrated stacking.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationSweep {
    pub gammas: Vec<f64>,
    /// `(u, s, H)` on the held-out set for each gamma.
    pub points: Vec<(f64, f64, f64)>,
}

pub fn harmonic_mean(u: f64, s: f64) -> f64 {
    if u + s > 0.0 {
        2.0 * u * s / (u + s)
    } else {
        0.0
    }
}

/// Mean over `classes` of within-class accuracy. Returns the mean and the
/// per-class accuracies.
pub fn per_class_top1(
    predictions: &[usize],
    labels: &[usize],
    classes: &[usize],
) -> Result<(f64, BTreeMap<usize, f64>)> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if classes.is_empty() {
        return Err(Error::Validation("empty class set".into()));
    }
    let mut counts: BTreeMap<usize, (usize, usize)> = classes.iter().map(|&c| (c, (0, 0))).collect();
    for (&p, &l) in predictions.iter().zip(labels) {
        let slot = counts
            .get_mut(&l)
            .ok_or_else(|| Error::Validation(format!("label {l} is outside the class set")))?;
        slot.1 += 1;
        if p == l {
            slot.0 += 1;
        }
    }
    let mut per_class = BTreeMap::new();
    for (&c, &(hit, total)) in &counts {
        if total == 0 {
            return Err(Error::Validation(format!("class {c} has no test images")));
        }
        per_class.insert(c, hit as f64 / total as f64);
    }
    let mean = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok((mean, per_class))
}

/// Maps record class names to corpus ids.
pub fn resolve_labels<C: ClassTexts + ?Sized>(
    corpus: &C,
    records: &[PatchFeatureRecord],
) -> Result<Vec<usize>> {
    records
        .iter()
        .map(|r| {
            corpus.index_of(&r.class_name).ok_or_else(|| {
                Error::Validation(format!(
                    "feature record names class `{}`, which is not in the view corpus",
                    r.class_name
                ))
            })
        })
        .collect()
}

/// Global scores of `records` against `classes`; `unseen` marks the
/// candidates that receive the calibration shift.
pub fn score_matrix<C: ClassTexts + ?Sized>(
    model: &Model,
    corpus: &C,
    records: &[PatchFeatureRecord],
    labels: &[usize],
    classes: &[usize],
    unseen: &[bool],
) -> Result<ScoreMatrix> {
    let tape = Tape::new();
    let bound = model.bind(&tape, false);
    let embeddings = classes
        .iter()
        .map(|&c| bound.class_embedding(corpus.views(c)))
        .collect::<Result<Vec<_>>>()?;
    let mut scores = Vec::with_capacity(records.len());
    for chunk in records.chunks(64) {
        let feats: Vec<_> = chunk.iter().map(|r| &r.features).collect();
        let images = bound.project_images(&feats)?;
        let logits = bound.global_logits(&images, &embeddings)?;
        let values = logits.value();
        for i in 0..chunk.len() {
            scores.push(values.row(i).to_vec());
        }
    }
    Ok(ScoreMatrix {
        classes: classes.to_vec(),
        unseen: unseen.to_vec(),
        scores,
        labels: labels.to_vec(),
    })
}

/// `(u, s, H)` for a score matrix whose candidates mix seen and unseen
/// classes; accuracies are per-class means over each side's images.
pub fn gzsl_point(matrix: &ScoreMatrix, gamma: f64) -> Result<(f64, f64, f64)> {
    let preds = matrix.predict(gamma);
    let side = |want_unseen: bool| -> Result<f64> {
        let classes: Vec<usize> = matrix
            .classes
            .iter()
            .zip(&matrix.unseen)
            .filter(|(_, &u)| u == want_unseen)
            .map(|(&c, _)| c)
            .filter(|c| matrix.labels.contains(c))
            .collect();
        let (p, l): (Vec<usize>, Vec<usize>) = preds
            .iter()
            .zip(&matrix.labels)
            .filter(|(_, l)| classes.contains(l))
            .map(|(&p, &l)| (p, l))
            .unzip();
        if classes.is_empty() {
            return Err(Error::Validation(format!(
                "no {} images to evaluate",
                if want_unseen { "unseen-side" } else { "seen-side" }
            )));
        }
        Ok(per_class_top1(&p, &l, &classes)?.0)
    };
    let u = side(true)?;
    let s = side(false)?;
    Ok((u, s, harmonic_mean(u, s)))
}

/// 101 evenly spaced points from 0 to the score range.
pub fn default_grid(matrix: &ScoreMatrix) -> Vec<f64> {
    let span = matrix.range();
    if span <= 0.0 {
        return vec![0.0];
    }
    (0..=100).map(|i| span * i as f64 / 100.0).collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("empty calibration grid".into()));
    }
    if grid.iter().any(|g| !g.is_finite()) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "calibration grid must be finite and strictly increasing".into(),
        ));
    }
    if !grid.contains(&0.0) {
        return Err(Error::Config("calibration grid must include 0".into()));
    }
    Ok(())
}

/// Sweeps `grid` on `heldout`, picks the gamma with the best H (first one
/// on ties) and reports `(u, s, H)` on `test` at that gamma.
pub fn calibrate(
    heldout: &ScoreMatrix,
    test: &ScoreMatrix,
    grid: &[f64],
) -> Result<(GzslMetrics, CalibrationSweep)> {
    check_grid(grid)?;
    let mut points = Vec::with_capacity(grid.len());
    let mut best = 0;
    for (i, &g) in grid.iter().enumerate() {
        let p = gzsl_point(heldout, g)?;
        if p.2 > points.get(best).map_or(f64::NEG_INFINITY, |b: &(f64, f64, f64)| b.2) {
            best = i;
        }
        points.push(p);
    }
    let gamma = grid[best];
    let (u, s, h) = gzsl_point(test, gamma)?;
    Ok((
        GzslMetrics { u, s, h, gamma },
        CalibrationSweep {
            gammas: grid.to_vec(),
            points,
        },
    ))
}

fn names<C: ClassTexts + ?Sized>(corpus: &C, per_class: BTreeMap<usize, f64>) -> BTreeMap<String, f64> {
    per_class
        .into_iter()
        .map(|(c, a)| (corpus.class_name(c).to_owned(), a))
        .collect()
}

/// Top-1 per-class accuracy with predictions restricted to unseen classes.
pub fn eval_zsl<C: ClassTexts + ?Sized>(
    model: &Model,
    corpus: &C,
    test: &[PatchFeatureRecord],
) -> Result<MetricReport> {
    eval_restricted(model, corpus, test, Split::Unseen)
}

/// Top-1 per-class accuracy with predictions restricted to `split`; every
/// record must belong to that split.
pub fn eval_restricted<C: ClassTexts + ?Sized>(
    model: &Model,
    corpus: &C,
    records: &[PatchFeatureRecord],
    split: Split,
) -> Result<MetricReport> {
    let labels = resolve_labels(corpus, records)?;
    if let Some((r, &l)) = records.iter().zip(&labels).find(|(_, &l)| corpus.split(l) != split) {
        return Err(Error::SplitLeak(format!(
            "record of class `{}` ({} split) in a {split} evaluation set",
            r.class_name,
            corpus.split(l)
        )));
    }
    let classes: Vec<usize> = corpus
        .classes_in(split)
        .into_iter()
        .filter(|c| labels.contains(c))
        .collect();
    if classes.is_empty() {
        return Err(Error::Validation(format!("no {split} images to evaluate")));
    }
    let candidates = corpus.classes_in(split);
    let unseen = vec![false; candidates.len()];
    let matrix = score_matrix(model, corpus, records, &labels, &candidates, &unseen)?;
    let (t1, per_class) = per_class_top1(&matrix.predict(0.0), &labels, &classes)?;
    Ok(MetricReport {
        mode: EvalMode::Zsl,
        zsl_t1: Some(t1),
        gzsl: None,
        per_class: names(corpus, per_class),
    })
}

/// Scores a mixed set against seen classes plus the classes of `novel`,
/// the latter marked for the calibration shift.
pub fn gzsl_matrix<C: ClassTexts + ?Sized>(
    model: &Model,
    corpus: &C,
    records: &[PatchFeatureRecord],
    novel: Split,
) -> Result<ScoreMatrix> {
    let labels = resolve_labels(corpus, records)?;
    let allowed = |s: Split| s == Split::Seen || s == novel;
    if let Some((r, &l)) = records.iter().zip(&labels).find(|(_, &l)| !allowed(corpus.split(l))) {
        return Err(Error::SplitLeak(format!(
            "record of class `{}` ({} split) in a seen+{novel} evaluation set",
            r.class_name,
            corpus.split(l)
        )));
    }
    let has = |s: Split| labels.iter().any(|&l| corpus.split(l) == s);
    if !has(Split::Seen) || !has(novel) {
        return Err(Error::Validation(format!(
            "GZSL evaluation needs both seen and {novel} images"
        )));
    }
    let mut classes = corpus.classes_in(Split::Seen);
    classes.extend(corpus.classes_in(novel));
    classes.sort_unstable();
    let unseen: Vec<bool> = classes.iter().map(|&c| corpus.split(c) == novel).collect();
    score_matrix(model, corpus, records, &labels, &classes, &unseen)
}

/// Calibrates on `heldout` (seen plus validation images) and evaluates on
/// `test` (seen plus unseen images). `grid` defaults to [`default_grid`]
/// over the held-out scores.
pub fn calibrate_and_eval_gzsl<C: ClassTexts + ?Sized>(
    model: &Model,
    corpus: &C,
    heldout: &[PatchFeatureRecord],
    test: &[PatchFeatureRecord],
    grid: Option<&[f64]>,
) -> Result<(MetricReport, CalibrationSweep)> {
    if let Some(g) = grid {
        check_grid(g)?;
    }
    let held = gzsl_matrix(model, corpus, heldout, Split::Val)?;
    let test_m = gzsl_matrix(model, corpus, test, Split::Unseen)?;
    let grid = grid.map_or_else(|| default_grid(&held), <[f64]>::to_vec);
    let (metrics, sweep) = calibrate(&held, &test_m, &grid)?;
    let present: Vec<usize> = test_m
        .classes
        .iter()
        .copied()
        .filter(|c| test_m.labels.contains(c))
        .collect();
    let (_, per_class) = per_class_top1(&test_m.predict(metrics.gamma), &test_m.labels, &present)?;
    Ok((
        MetricReport {
            mode: EvalMode::Gzsl,
            zsl_t1: None,
            gzsl: Some(metrics),
            per_class: names(corpus, per_class),
        },
        sweep,
    ))
}
