//! GloVe-style text embeddings: `<token> <f1> ... <fe>` per line.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Pretrained word vectors with a uniform dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            tokens: Vec::new(),
            index: HashMap::new(),
            vectors: Vec::new(),
        }
    }

    /// Inserts `token` (lowercased). Rejects duplicates and wrong widths.
    pub fn insert(&mut self, token: &str, vector: &[f64]) -> Result<()> {
        let token = token.to_lowercase();
        if token.is_empty() {
            return Err(Error::Validation("empty embedding token".into()));
        }
        if vector.len() != self.dim {
            return Err(Error::Validation(format!(
                "token `{token}` has {} values, expected {}",
                vector.len(),
                self.dim
            )));
        }
        if self.index.contains_key(&token) {
            return Err(Error::Duplicate {
                kind: "embedding token",
                name: token,
            });
        }
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.vectors.extend_from_slice(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index
            .get(token)
            .map(|&i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }

    /// Parses the text format. `origin` only labels error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut table: Option<Self> = None;
        for (i, line) in text.lines().enumerate() {
            let lineno = format!("line {}", i + 1);
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let token = fields.next().expect("non-empty line");
            let values = fields
                .map(str::parse::<f64>)
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|e| Error::format(origin, &lineno, format!("bad float: {e}")))?;
            if values.is_empty() {
                return Err(Error::format(origin, &lineno, "token without values"));
            }
            if let Some(v) = values.iter().find(|v| !v.is_finite()) {
                return Err(Error::format(origin, &lineno, format!("non-finite value {v}")));
            }
            let t = table.get_or_insert_with(|| Self::new(values.len()));
            if values.len() != t.dim {
                return Err(Error::format(
                    origin,
                    &lineno,
                    format!("expected {} values, found {}", t.dim, values.len()),
                ));
            }
            t.insert(token, &values).map_err(|e| match e {
                Error::Duplicate { .. } => {
                    Error::format(origin, &lineno, format!("duplicate token `{token}`"))
                }
                other => other,
            })?;
        }
        table.ok_or_else(|| Error::format(origin, "line 1", "empty embedding table"))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, tok) in self.tokens.iter().enumerate() {
            out.push_str(tok);
            for v in &self.vectors[i * self.dim..(i + 1) * self.dim] {
                write!(out, " {v}").expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    EmbeddingTable::parse(&text, &path.display().to_string())
}

pub fn save_embeddings(path: impl AsRef<Path>, table: &EmbeddingTable) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, table.to_text()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_parse() {
        let t = EmbeddingTable::parse("a 1.0 0.0\nb 0.0 1.0", "mem").unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("b").unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn ragged_line_is_positioned() {
        let err = EmbeddingTable::parse("a 1.0 0.0\nb 0.0 1.0\nc 1.0\n", "mem").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn empty_file_is_rejected() {
        let err = EmbeddingTable::parse("", "mem").unwrap_err();
        assert!(err.to_string().contains("empty embedding table"));
    }

    #[test]
    fn duplicates_and_case() {
        let err = EmbeddingTable::parse("a 1\nA 2\n", "mem").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let t = EmbeddingTable::parse("Zebra 1 2\n", "mem").unwrap();
        assert!(t.contains("zebra"));
    }

    #[test]
    fn text_round_trip() {
        let mut t = EmbeddingTable::new(3);
        t.insert("x", &[0.1, -2.5e-7, 3.0]).unwrap();
        t.insert("y", &[1.0 / 3.0, 0.0, -1.0]).unwrap();
        let back = EmbeddingTable::parse(&t.to_text(), "mem").unwrap();
        assert_eq!(back, t);
    }
}
