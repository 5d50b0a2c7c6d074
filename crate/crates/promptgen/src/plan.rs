//! Prompt text and the per-class example schedule.

use std::path::Path;

use i2mv_core::data::Split;
use i2mv_core::embed::tokenize;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Renders one block of the description prompt. Example blocks carry their
/// description on the next line; the query block stops after the template.
pub fn render_block(type_word: &str, class_name: &str, description: Option<&str>) -> Result<String> {
    let type_word = type_word.trim();
    let name = class_name.trim();
    if type_word.is_empty() {
        return Err(Error::Config("type word is empty".into()));
    }
    if name.is_empty() {
        return Err(Error::Config("class name is empty".into()));
    }
    let mut block = format!(
        "A person wants to recognize {type_word} in images. They come across {name} and search online \
         for facts about {name}. They think the following description of {name} is a good description."
    );
    if let Some(d) = description {
        block.push('\n');
        block.push_str(d.trim());
    }
    Ok(block)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example {
    pub class_name: String,
    pub description: String,
}

/// Curated examples: `views` primaries followed by one reserve.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExamplePool {
    type_word: String,
    examples: Vec<Example>,
    views: usize,
    shots: usize,
}

impl ExamplePool {
    pub fn new(type_word: &str, examples: Vec<Example>, views: usize, shots: usize) -> Result<Self> {
        if type_word.trim().is_empty() {
            return Err(Error::Config("type word is empty".into()));
        }
        if views == 0 {
            return Err(Error::Config("views must be at least 1".into()));
        }
        if examples.len() != views + 1 {
            return Err(Error::Config(format!(
                "{views} views need {} curated examples (one per view plus a reserve), got {}",
                views + 1,
                examples.len()
            )));
        }
        if shots > views {
            return Err(Error::Config(format!("shots ({shots}) exceeds views ({views})")));
        }
        for (i, e) in examples.iter().enumerate() {
            if e.class_name.trim().is_empty() || e.description.trim().is_empty() {
                return Err(Error::Config(format!("example {i} has an empty class name or description")));
            }
            if examples[..i].iter().any(|o| o.class_name.trim() == e.class_name.trim()) {
                return Err(Error::Config(format!("example class `{}` listed twice", e.class_name)));
            }
        }
        Ok(Self {
            type_word: type_word.trim().to_owned(),
            examples,
            views,
            shots,
        })
    }

    /// Reads a JSON array of `{class_name, description}`.
    pub fn load(path: impl AsRef<Path>, type_word: &str, views: usize, shots: usize) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let examples: Vec<Example> = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        Self::new(type_word, examples, views, shots)
    }

    pub fn type_word(&self) -> &str {
        &self.type_word
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn views(&self) -> usize {
        self.views
    }

    pub fn shots(&self) -> usize {
        self.shots
    }

    fn block(&self, i: usize) -> String {
        let e = &self.examples[i];
        render_block(&self.type_word, &e.class_name, Some(&e.description)).expect("validated pool")
    }
}

/// Primary examples used by each view before any replacement: view `v`
/// takes the `k` consecutive primaries starting at `v`, wrapping around,
/// in pool order. For three views and two shots this is (1,2), (2,3), (1,3).
pub fn base_schedule(views: usize, shots: usize) -> Vec<Vec<usize>> {
    (0..views)
        .map(|v| {
            let mut s: Vec<usize> = (0..shots).map(|j| (v + j) % views).collect();
            s.sort_unstable();
            s
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub name: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PlannedPrompt {
    /// Pool indices of the example blocks, in prompt order.
    pub examples: Vec<usize>,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ClassPlan {
    pub name: String,
    pub split: Split,
    pub prompts: Vec<PlannedPrompt>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PromptPlan {
    pub classes: Vec<ClassPlan>,
}

/// Whole-word, case-insensitive phrase match under the view tokenizer, so
/// `bear` is found in "Black Bear." but not in "bearded".
pub fn mentions(block: &str, class: &str) -> bool {
    let needle = tokenize(class);
    if needle.is_empty() {
        return false;
    }
    tokenize(block).windows(needle.len()).any(|w| w == needle.as_slice())
}

/// Builds every class's prompts. An example whose rendered block mentions
/// the target is swapped, in place, for the reserve; if the reserve also
/// mentions it, for the first primary the prompt does not already use.
pub fn plan_prompts(pool: &ExamplePool, targets: &[Target]) -> Result<PromptPlan> {
    let reserve = pool.views;
    let blocks: Vec<String> = (0..pool.examples.len()).map(|i| pool.block(i)).collect();
    let schedule = base_schedule(pool.views, pool.shots);
    let mut classes = Vec::with_capacity(targets.len());
    for (t, target) in targets.iter().enumerate() {
        let name = target.name.trim();
        if targets[..t].iter().any(|o| o.name.trim() == name) {
            return Err(Error::Config(format!("target class `{name}` listed twice")));
        }
        let query = render_block(&pool.type_word, name, None)?;
        let mut prompts = Vec::with_capacity(pool.views);
        for (view, base) in schedule.iter().enumerate() {
            let mut chosen = base.clone();
            for slot in 0..chosen.len() {
                if !mentions(&blocks[chosen[slot]], name) {
                    continue;
                }
                let sub = std::iter::once(reserve)
                    .chain(0..pool.views)
                    .find(|c| !chosen.contains(c) && !mentions(&blocks[*c], name))
                    .ok_or_else(|| Error::PoolExhausted {
                        class: name.to_owned(),
                        view,
                    })?;
                chosen[slot] = sub;
            }
            let mut parts: Vec<&str> = chosen.iter().map(|&i| blocks[i].as_str()).collect();
            parts.push(&query);
            prompts.push(PlannedPrompt {
                examples: chosen,
                text: parts.join("\n\n"),
            });
        }
        classes.push(ClassPlan {
            name: name.to_owned(),
            split: target.split,
            prompts,
        });
    }
    Ok(PromptPlan { classes })
}

/// Reads a JSON array of `{name, split}`.
pub fn load_targets(path: impl AsRef<Path>) -> Result<Vec<Target>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_owned(),
        message: e.to_string(),
    })
}
