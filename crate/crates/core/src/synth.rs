//! Deterministic synthetic dataset with a known attribute structure.
//!
//! Every attribute word has a fixed unit direction in feature space. An
//! image of a class is a bag of patches, each patch one of the class's
//! attribute directions plus noise. Each view lists the class's attribute
//! words in random order, padded with noise words. Word vectors are random
//! and unrelated to the feature directions, so the text-to-image mapping
//! has to be learned from seen classes.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use i2mv_tensor::Tensor;

use crate::data::{
    save_embeddings, save_features, save_views, ClassEntry, EmbeddingTable, PatchFeatureRecord,
    Split, ViewCorpus,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub attributes: usize,
    pub noise_vocab: usize,
    pub seen: usize,
    pub val: usize,
    pub unseen: usize,
    pub attrs_per_class: usize,
    pub images_per_class: usize,
    /// Images of each seen class kept aside for the GZSL test set.
    pub seen_test_images: usize,
    /// Fraction of the remaining seen-class images held back for calibration.
    pub holdback: f64,
    /// Patches per image (N).
    pub patches: usize,
    pub d_backbone: usize,
    pub embed_dim: usize,
    pub tokens_per_view: usize,
    /// Views per class (q).
    pub views: usize,
    /// Patch noise scale.
    pub sigma: f64,
    /// When set, view `v` names only `view_attrs` of the class's attributes,
    /// starting at position `v` and wrapping around.
    pub view_attrs: Option<usize>,
    /// Explicit attribute indices per class in seen, val, unseen order.
    pub class_attributes: Option<Vec<Vec<usize>>>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            attributes: 8,
            noise_vocab: 16,
            seen: 8,
            val: 2,
            unseen: 4,
            attrs_per_class: 3,
            images_per_class: 16,
            seen_test_images: 4,
            holdback: 0.2,
            patches: 16,
            d_backbone: 32,
            embed_dim: 32,
            tokens_per_view: 4,
            views: 3,
            sigma: 0.5,
            view_attrs: None,
            class_attributes: None,
        }
    }
}

impl SynthSpec {
    pub fn num_classes(&self) -> usize {
        self.seen + self.val + self.unseen
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.attrs_per_class == 0 {
            return bad("attrs_per_class must be at least 1".into());
        }
        if self.attrs_per_class > self.attributes {
            return bad(format!(
                "attrs_per_class = {} exceeds attributes = {}",
                self.attrs_per_class, self.attributes
            ));
        }
        if self.seen == 0 || self.val == 0 || self.unseen == 0 {
            return bad("seen, val and unseen class counts must be positive".into());
        }
        if self.views == 0 || self.patches == 0 || self.d_backbone == 0 || self.embed_dim == 0 {
            return bad("views, patches, d_backbone and embed_dim must be positive".into());
        }
        if self.images_per_class <= self.seen_test_images {
            return bad("images_per_class must exceed seen_test_images".into());
        }
        if !(0.0..1.0).contains(&self.holdback) {
            return bad(format!("holdback must be in [0, 1), got {}", self.holdback));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be finite and non-negative, got {}", self.sigma));
        }
        let named = self.view_attrs.unwrap_or(self.attrs_per_class);
        if named == 0 || named > self.attrs_per_class {
            return bad(format!(
                "view_attrs must be in 1..={}, got {named}",
                self.attrs_per_class
            ));
        }
        if self.tokens_per_view < named {
            return bad(format!(
                "tokens_per_view = {} cannot hold {named} attribute words",
                self.tokens_per_view
            ));
        }
        if self.tokens_per_view > named && self.noise_vocab == 0 {
            return bad("padding views requires a non-empty noise vocabulary".into());
        }
        if let Some(sets) = &self.class_attributes {
            if sets.len() != self.num_classes() {
                return bad(format!(
                    "class_attributes has {} entries for {} classes",
                    sets.len(),
                    self.num_classes()
                ));
            }
            for (c, s) in sets.iter().enumerate() {
                if s.len() != self.attrs_per_class || s.iter().any(|&a| a >= self.attributes) {
                    return bad(format!("class_attributes[{c}] is invalid: {s:?}"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub embeddings: EmbeddingTable,
    pub corpus: ViewCorpus,
    /// Attribute indices per class, in corpus order.
    pub class_attributes: Vec<Vec<usize>>,
    /// Seen-class training images.
    pub train: Vec<PatchFeatureRecord>,
    /// Validation-class images.
    pub val: Vec<PatchFeatureRecord>,
    /// Held-back seen-class images plus validation-class images.
    pub heldout: Vec<PatchFeatureRecord>,
    /// Unseen-class images.
    pub test: Vec<PatchFeatureRecord>,
    /// Seen test images plus unseen-class images.
    pub test_gzsl: Vec<PatchFeatureRecord>,
}

pub fn attribute_word(i: usize) -> String {
    format!("attr{i:02}")
}

pub fn noise_word(i: usize) -> String {
    format!("noise{i:02}")
}

pub fn class_name(i: usize) -> String {
    format!("class{i:02}")
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v = gaussian(rng, d, 1.0);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Draws distinct attribute sets; seen classes first, later classes only
/// from attributes the seen classes already use.
fn draw_attribute_sets(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let k = spec.attrs_per_class;
    let mut sets: Vec<Vec<usize>> = Vec::new();
    let mut pool: Vec<usize> = (0..spec.attributes).collect();
    // Cycle through a shuffled deck so seen classes cover the vocabulary
    // as evenly as possible.
    let mut deck: Vec<usize> = Vec::new();
    for c in 0..spec.num_classes() {
        if c == spec.seen {
            let mut covered: Vec<usize> = sets.iter().flatten().copied().collect();
            covered.sort_unstable();
            covered.dedup();
            pool = covered;
        }
        let mut tries = 0;
        let set = loop {
            let mut s: Vec<usize> = if c < spec.seen {
                let mut s = Vec::with_capacity(k);
                while s.len() < k {
                    if deck.is_empty() {
                        deck = pool.clone();
                        deck.shuffle(rng);
                    }
                    let a = deck.pop().expect("refilled");
                    if !s.contains(&a) {
                        s.push(a);
                    }
                }
                s
            } else {
                let mut p = pool.clone();
                p.shuffle(rng);
                p.truncate(k);
                p
            };
            s.sort_unstable();
            tries += 1;
            if !sets.contains(&s) || tries > 1000 || pool.len() < k {
                break s;
            }
        };
        sets.push(set);
    }
    sets
}

/// Builds the dataset in memory. A pure function of `(seed, spec)`.
pub fn generate(seed: u64, spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let sets = match &spec.class_attributes {
        Some(s) => s.iter().map(|v| v.to_vec()).collect(),
        None => draw_attribute_sets(spec, &mut rng),
    };
    let mut seen_attrs: Vec<usize> = sets[..spec.seen].iter().flatten().copied().collect();
    seen_attrs.sort_unstable();
    seen_attrs.dedup();
    for (c, s) in sets.iter().enumerate().skip(spec.seen) {
        if let Some(a) = s.iter().find(|a| !seen_attrs.contains(a)) {
            return Err(Error::Validation(format!(
                "class `{}` uses attribute `{}` that no seen-class view mentions",
                class_name(c),
                attribute_word(*a)
            )));
        }
    }

    let directions: Vec<Vec<f64>> = (0..spec.attributes)
        .map(|_| unit(&mut rng, spec.d_backbone))
        .collect();

    let mut embeddings = EmbeddingTable::new(spec.embed_dim);
    let e_std = 1.0 / (spec.embed_dim as f64).sqrt();
    for i in 0..spec.attributes {
        embeddings.insert(&attribute_word(i), &gaussian(&mut rng, spec.embed_dim, e_std))?;
    }
    for i in 0..spec.noise_vocab {
        embeddings.insert(&noise_word(i), &gaussian(&mut rng, spec.embed_dim, e_std))?;
    }

    let named = spec.view_attrs.unwrap_or(spec.attrs_per_class);
    let mut classes = Vec::with_capacity(sets.len());
    for (c, set) in sets.iter().enumerate() {
        let split = if c < spec.seen {
            Split::Seen
        } else if c < spec.seen + spec.val {
            Split::Val
        } else {
            Split::Unseen
        };
        let mut order = set.clone();
        order.shuffle(&mut rng);
        let views = (0..spec.views)
            .map(|v| {
                let mut words: Vec<String> = (0..named)
                    .map(|j| attribute_word(order[(v + j) % order.len()]))
                    .collect();
                while words.len() < spec.tokens_per_view {
                    words.push(noise_word(rng.random_range(0..spec.noise_vocab)));
                }
                words.shuffle(&mut rng);
                words.join(" ")
            })
            .collect();
        classes.push(ClassEntry {
            name: class_name(c),
            split,
            views,
            source_tags: None,
        });
    }
    let corpus = ViewCorpus { classes };
    corpus.validate(false)?;

    let noise_std = spec.sigma / (spec.d_backbone as f64).sqrt();
    let image = |rng: &mut ChaCha8Rng, class: usize| -> Result<PatchFeatureRecord> {
        let d = spec.d_backbone;
        let mut patches = Vec::with_capacity(spec.patches * d);
        let mut global = vec![0.0; d];
        for _ in 0..spec.patches {
            let a = sets[class][rng.random_range(0..sets[class].len())];
            let noise = gaussian(rng, d, noise_std);
            for (i, (u, n)) in directions[a].iter().zip(noise).enumerate() {
                let x = u + n;
                patches.push(x);
                global[i] += x / spec.patches as f64;
            }
        }
        global.extend(patches);
        // Feature files hold f32; round now so a written bundle loads back
        // to exactly these records.
        let values = global.into_iter().map(|x| f64::from(x as f32)).collect();
        Ok(PatchFeatureRecord {
            class_name: class_name(class),
            features: Tensor::new(&[spec.patches + 1, d], values)?,
        })
    };

    let mut out = SynthData {
        embeddings,
        corpus,
        class_attributes: sets.clone(),
        train: Vec::new(),
        val: Vec::new(),
        heldout: Vec::new(),
        test: Vec::new(),
        test_gzsl: Vec::new(),
    };
    let trainable = spec.images_per_class - spec.seen_test_images;
    let held = ((trainable as f64) * spec.holdback).round() as usize;
    for c in 0..sets.len() {
        let images = (0..spec.images_per_class)
            .map(|_| image(&mut rng, c))
            .collect::<Result<Vec<_>>>()?;
        if c < spec.seen {
            let (test, rest) = images.split_at(spec.seen_test_images);
            let (heldout, train) = rest.split_at(held);
            out.test_gzsl.extend_from_slice(test);
            out.heldout.extend_from_slice(heldout);
            out.train.extend_from_slice(train);
        } else if c < spec.seen + spec.val {
            out.heldout.extend_from_slice(&images);
            out.val.extend(images);
        } else {
            out.test_gzsl.extend_from_slice(&images);
            out.test.extend(images);
        }
    }
    Ok(out)
}

pub const BUNDLE_FILES: [&str; 8] = [
    "embeddings.txt",
    "views.json",
    "train.feat",
    "val.feat",
    "heldout.feat",
    "test.feat",
    "test_gzsl.feat",
    "attributes.json",
];

/// Writes the dataset as a directory of files named by [`BUNDLE_FILES`]
/// (each feature file has a `.labels` sidecar).
pub fn write_bundle(data: &SynthData, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_embeddings(dir.join("embeddings.txt"), &data.embeddings)?;
    save_views(dir.join("views.json"), &data.corpus)?;
    save_features(dir.join("train.feat"), &data.train)?;
    save_features(dir.join("val.feat"), &data.val)?;
    save_features(dir.join("heldout.feat"), &data.heldout)?;
    save_features(dir.join("test.feat"), &data.test)?;
    save_features(dir.join("test_gzsl.feat"), &data.test_gzsl)?;
    let attrs = serde_json::to_string_pretty(&data.class_attributes)
        .map_err(|e| Error::Validation(e.to_string()))?;
    let path = dir.join("attributes.json");
    std::fs::write(&path, attrs + "\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}
