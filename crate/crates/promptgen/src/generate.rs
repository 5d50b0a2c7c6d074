use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use i2mv_core::data::{ClassEntry, ViewCorpus};
use sha2::{Digest, Sha256};

use crate::client::{LlmClient, LlmRequest, DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE};
use crate::error::{Error, Result};
use crate::plan::PromptPlan;

pub const LLM_TAG: &str = "llm";

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateConfig {
    pub temperature: f64,
    pub max_tokens: u32,
    /// Part of the cache key only; the wire request carries no model field.
    pub model_id: String,
    pub max_in_flight: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            model_id: "default".into(),
            max_in_flight: 4,
        }
    }
}

/// Hex SHA-256 over the JSON triple `[prompt, temperature, model_id]`.
pub fn cache_key(prompt: &str, temperature: f64, model_id: &str) -> String {
    let payload = serde_json::to_string(&(prompt, temperature, model_id)).expect("key serializes");
    hex::encode(Sha256::digest(payload.as_bytes()))
}

/// One UTF-8 file per key. Writes go to a temp file in the same directory
/// and are renamed into place, so concurrent writers never expose a torn file.
#[derive(Clone, Debug)]
pub struct Cache {
    dir: PathBuf,
}

impl Cache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.txt"))
    }

    pub fn get(&self, key: &str) -> Result<Option<String>> {
        let path = self.path(key);
        match std::fs::read_to_string(&path) {
            Ok(text) => Ok(Some(text)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn put(&self, key: &str, text: &str) -> Result<()> {
        use std::io::Write;
        let path = self.path(key);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        tmp.write_all(text.as_bytes()).map_err(|e| Error::io(tmp.path(), e))?;
        tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GenerateStats {
    pub requests: usize,
    pub cache_hits: usize,
}

struct Job<'p> {
    class: &'p str,
    view: usize,
    key: String,
    request: LlmRequest,
}

/// One request per (class, view), answered from the cache when possible.
/// At most `max_in_flight` requests run at once.
pub fn generate_views(
    plan: &PromptPlan,
    client: &dyn LlmClient,
    config: &GenerateConfig,
    cache_dir: &Path,
) -> Result<(ViewCorpus, GenerateStats)> {
    if config.max_in_flight == 0 {
        return Err(Error::Config("max_in_flight must be at least 1".into()));
    }
    let cache = Cache::open(cache_dir)?;
    let mut jobs = Vec::new();
    for class in &plan.classes {
        for (view, p) in class.prompts.iter().enumerate() {
            jobs.push(Job {
                class: &class.name,
                view,
                key: cache_key(&p.text, config.temperature, &config.model_id),
                request: LlmRequest::new(p.text.clone(), config.temperature, config.max_tokens)?,
            });
        }
    }

    let results: Vec<Mutex<Option<Result<String>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let requests = AtomicUsize::new(0);
    let hits = AtomicUsize::new(0);
    let run = |job: &Job| -> Result<String> {
        if let Some(text) = cache.get(&job.key)? {
            hits.fetch_add(1, Ordering::SeqCst);
            return Ok(text);
        }
        requests.fetch_add(1, Ordering::SeqCst);
        let resp = client.complete(&job.key, &job.request).map_err(|message| Error::Request {
            class: job.class.to_owned(),
            view: job.view,
            message,
        })?;
        if resp.text.trim().is_empty() {
            return Err(Error::EmptyGeneration {
                class: job.class.to_owned(),
                view: job.view,
            });
        }
        cache.put(&job.key, &resp.text)?;
        Ok(resp.text)
    };
    std::thread::scope(|s| {
        for _ in 0..config.max_in_flight.min(jobs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let r = run(job);
                *results[i].lock().expect("result slot") = Some(r);
            });
        }
    });

    let mut texts = results
        .into_iter()
        .map(|m| m.into_inner().expect("result slot").expect("every job ran"));
    let mut classes = Vec::with_capacity(plan.classes.len());
    for class in &plan.classes {
        let views = (0..class.prompts.len())
            .map(|_| texts.next().expect("one result per job"))
            .collect::<Result<Vec<_>>>()?;
        classes.push(ClassEntry {
            name: class.name.clone(),
            split: class.split,
            source_tags: Some(vec![LLM_TAG.to_owned(); views.len()]),
            views,
        });
    }
    let corpus = ViewCorpus { classes };
    corpus.validate(false)?;
    let stats = GenerateStats {
        requests: requests.into_inner(),
        cache_hits: hits.into_inner(),
    };
    Ok((corpus, stats))
}

/// Appends `extra`'s views to each class of `base`. Both corpora must list
/// the same classes under the same splits; an empty `extra` is a no-op.
/// Views without a source tag are tagged `unknown`.
pub fn merge_views(base: &ViewCorpus, extra: &ViewCorpus) -> Result<ViewCorpus> {
    if extra.classes.is_empty() {
        return Ok(base.clone());
    }
    if base.classes.len() != extra.classes.len() {
        return Err(Error::Config(format!(
            "cannot merge corpora with {} and {} classes",
            base.classes.len(),
            extra.classes.len()
        )));
    }
    let tags = |c: &ClassEntry| {
        c.source_tags
            .clone()
            .unwrap_or_else(|| vec!["unknown".to_owned(); c.views.len()])
    };
    let mut classes = Vec::with_capacity(base.classes.len());
    for c in &base.classes {
        let other = extra
            .classes
            .iter()
            .find(|o| o.name == c.name)
            .ok_or_else(|| Error::Config(format!("class `{}` missing from the extra corpus", c.name)))?;
        if other.split != c.split {
            return Err(Error::Config(format!(
                "class `{}` is {} in one corpus and {} in the other",
                c.name, c.split, other.split
            )));
        }
        let mut views = c.views.clone();
        views.extend(other.views.iter().cloned());
        let mut source_tags = tags(c);
        source_tags.extend(tags(other));
        classes.push(ClassEntry {
            name: c.name.clone(),
            split: c.split,
            views,
            source_tags: Some(source_tags),
        });
    }
    let merged = ViewCorpus { classes };
    merged.validate(true)?;
    Ok(merged)
}
