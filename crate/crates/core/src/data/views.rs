//! Class view corpora: JSON `{"classes": [{name, split, views, source_tags?}]}`.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Seen,
    Val,
    Unseen,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Seen => "seen",
            Split::Val => "val",
            Split::Unseen => "unseen",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassEntry {
    pub name: String,
    pub split: Split,
    pub views: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_tags: Option<Vec<String>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewCorpus {
    pub classes: Vec<ClassEntry>,
}

impl ViewCorpus {
    /// Checks unique names, disjoint splits, non-empty views and (unless
    /// `allow_ragged`) a uniform view count.
    pub fn validate(&self, allow_ragged: bool) -> Result<()> {
        let mut seen: HashMap<&str, Split> = HashMap::new();
        for c in &self.classes {
            if c.name.trim().is_empty() {
                return Err(Error::Validation("class with empty name".into()));
            }
            if let Some(prev) = seen.insert(&c.name, c.split) {
                if prev != c.split {
                    return Err(Error::Validation(format!(
                        "class `{}` listed under both {prev} and {}; splits must be disjoint",
                        c.name, c.split
                    )));
                }
                return Err(Error::Duplicate {
                    kind: "class",
                    name: c.name.clone(),
                });
            }
            if c.views.is_empty() {
                return Err(Error::Validation(format!("class `{}` has no views", c.name)));
            }
            if let Some(i) = c.views.iter().position(|v| v.trim().is_empty()) {
                return Err(Error::Validation(format!(
                    "class `{}`: view {i} is empty",
                    c.name
                )));
            }
            if let Some(tags) = &c.source_tags {
                if tags.len() != c.views.len() {
                    return Err(Error::Validation(format!(
                        "class `{}`: {} source tags for {} views",
                        c.name,
                        tags.len(),
                        c.views.len()
                    )));
                }
            }
        }
        if !allow_ragged {
            if let Some(first) = self.classes.first() {
                let q = first.views.len();
                if let Some(c) = self.classes.iter().find(|c| c.views.len() != q) {
                    return Err(Error::Validation(format!(
                        "class `{}` has {} views but `{}` has {q}; set allow_ragged_views to permit this",
                        c.name,
                        c.views.len(),
                        first.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Views per class when uniform.
    pub fn views_per_class(&self) -> Option<usize> {
        let q = self.classes.first()?.views.len();
        self.classes.iter().all(|c| c.views.len() == q).then_some(q)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.name == name)
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.classes.len())
            .filter(|&i| self.classes[i].split == split)
            .collect()
    }

    /// Keeps only the first `q` views of every class.
    pub fn truncate_views(&mut self, q: usize) {
        for c in &mut self.classes {
            c.views.truncate(q);
            if let Some(t) = &mut c.source_tags {
                t.truncate(q);
            }
        }
    }

    pub fn parse(text: &str, origin: &str, allow_ragged: bool) -> Result<Self> {
        let corpus: Self = serde_json::from_str(text).map_err(|e| {
            Error::format(origin, format!("line {}", e.line()), e.to_string())
        })?;
        corpus.validate(allow_ragged)?;
        Ok(corpus)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("corpus serializes")
    }
}

pub fn load_views(path: impl AsRef<Path>, allow_ragged: bool) -> Result<ViewCorpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ViewCorpus::parse(&text, &path.display().to_string(), allow_ragged)
}

pub fn save_views(path: impl AsRef<Path>, corpus: &ViewCorpus) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, corpus.to_json() + "\n").map_err(|e| Error::io(path, e))
}
