//! View text → token rows from the pretrained table. The learnable
//! projection on top of these rows is part of the model
//! (see [`crate::model::Bound::encode_view`]).

use i2mv_tensor::Tensor;

use crate::data::{EmbeddingTable, Split, ViewCorpus};
use crate::error::{Error, Result};

/// Lowercases, turns every non-alphanumeric character into a space and
/// splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

/// In-vocabulary tokens of one view with their pretrained vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenizedView {
    pub tokens: Vec<String>,
    /// `M x e`
    pub embeddings: Tensor,
}

impl TokenizedView {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Drops out-of-vocabulary tokens, then keeps the first `m_max`.
pub fn lookup_view(
    class: &str,
    text: &str,
    table: &EmbeddingTable,
    m_max: usize,
) -> Result<TokenizedView> {
    let tokens: Vec<String> = tokenize(text)
        .into_iter()
        .filter(|t| table.contains(t))
        .take(m_max)
        .collect();
    if tokens.is_empty() {
        return Err(Error::EmptyView {
            class: class.to_owned(),
        });
    }
    let mut rows = Vec::with_capacity(tokens.len() * table.dim());
    for t in &tokens {
        rows.extend_from_slice(table.get(t).expect("filtered to vocabulary"));
    }
    let embeddings = Tensor::new(&[tokens.len(), table.dim()], rows)?;
    Ok(TokenizedView { tokens, embeddings })
}

/// Read access to the per-class views the model trains and scores against.
pub trait ClassTexts {
    fn num_classes(&self) -> usize;
    fn class_name(&self, class: usize) -> &str;
    fn split(&self, class: usize) -> Split;
    fn views(&self, class: usize) -> &[TokenizedView];

    fn classes_in(&self, split: Split) -> Vec<usize> {
        (0..self.num_classes())
            .filter(|&c| self.split(c) == split)
            .collect()
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        (0..self.num_classes()).find(|&c| self.class_name(c) == name)
    }
}

/// A corpus with every view looked up once.
#[derive(Clone, Debug)]
pub struct EncodedCorpus {
    names: Vec<String>,
    splits: Vec<Split>,
    views: Vec<Vec<TokenizedView>>,
}

impl EncodedCorpus {
    pub fn new(corpus: &ViewCorpus, table: &EmbeddingTable, m_max: usize) -> Result<Self> {
        let mut out = Self {
            names: Vec::new(),
            splits: Vec::new(),
            views: Vec::new(),
        };
        for c in &corpus.classes {
            let views = c
                .views
                .iter()
                .map(|v| lookup_view(&c.name, v, table, m_max))
                .collect::<Result<Vec<_>>>()?;
            out.names.push(c.name.clone());
            out.splits.push(c.split);
            out.views.push(views);
        }
        Ok(out)
    }

    pub fn embed_dim(&self) -> Option<usize> {
        self.views
            .first()
            .and_then(|v| v.first())
            .map(|v| v.embeddings.shape()[1])
    }
}

impl ClassTexts for EncodedCorpus {
    fn num_classes(&self) -> usize {
        self.names.len()
    }

    fn class_name(&self, class: usize) -> &str {
        &self.names[class]
    }

    fn split(&self, class: usize) -> Split {
        self.splits[class]
    }

    fn views(&self, class: usize) -> &[TokenizedView] {
        &self.views[class]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> EmbeddingTable {
        let mut t = EmbeddingTable::new(2);
        for (i, w) in ["the", "red", "bird", "has", "wings", "a"].iter().enumerate() {
            t.insert(w, &[i as f64, 1.0]).unwrap();
        }
        t
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("The Cardinal, red!"), ["the", "cardinal", "red"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("A-B  c"), ["a", "b", "c"]);
    }

    #[test]
    fn oov_dropped_before_truncation() {
        let v = lookup_view("x", "zzz the qqq red bird has", &table(), 3).unwrap();
        assert_eq!(v.tokens, ["the", "red", "bird"]);
        assert_eq!(v.embeddings.shape(), &[3, 2]);
        assert_eq!(v.embeddings.row(1), &[1.0, 1.0]);
    }

    #[test]
    fn all_oov_names_the_class() {
        let err = lookup_view("Cardinal", "qqq zzz", &table(), 8).unwrap_err();
        assert!(err.to_string().contains("Cardinal"));
    }
}
