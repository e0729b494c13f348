//! Word-vector tables and fixed-length sentence matrices.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::Rng;

use super::pos::Tag;
use crate::autograd::init::xavier_uniform;
use crate::autograd::Tensor;
use crate::error::{Error, Result};

/// Sentence length every transcript is padded or truncated to.
pub const MAX_LEN: usize = 40;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    /// Row-major `[V, dim]`.
    vectors: Vec<f64>,
    pub trainable: bool,
}

impl EmbeddingTable {
    pub fn new(dim: usize, entries: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut t = Self {
            dim,
            words: Vec::new(),
            index: HashMap::new(),
            vectors: Vec::new(),
            trainable: false,
        };
        for (w, v) in entries {
            if v.len() != dim {
                return Err(Error::shape(
                    "embedding_table",
                    format!("vector for `{w}` has {} values, expected {dim}", v.len()),
                ));
            }
            t.push(w, &v)?;
        }
        Ok(t)
    }

    fn push(&mut self, w: String, v: &[f64]) -> Result<()> {
        if self.index.contains_key(&w) {
            return Err(Error::InvalidArgument(format!("duplicate word `{w}`")));
        }
        self.index.insert(w.clone(), self.words.len());
        self.words.push(w);
        self.vectors.extend_from_slice(v);
        Ok(())
    }

    /// Reads a textual word-vector file: one token followed by `dim` scalars
    /// per line, with an optional `V E` header line.
    pub fn load(path: &Path, dim: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text, dim)
    }

    pub fn parse(path: &Path, text: &str, dim: usize) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut table = Self::new(dim, Vec::new())?;
        let mut declared_rows = None;
        for (i, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if i == 0 && fields.len() == 2 && dim != 1 {
                let v = fields[0].parse::<usize>();
                let e = fields[1].parse::<usize>();
                if let (Ok(v), Ok(e)) = (v, e) {
                    if e != dim {
                        return Err(err(1, format!("header declares E={e}, expected {dim}")));
                    }
                    declared_rows = Some(v);
                    continue;
                }
            }
            if fields.len() != dim + 1 {
                return Err(err(
                    i + 1,
                    format!("{} fields, expected a token and {dim} values", fields.len()),
                ));
            }
            let v = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| err(i + 1, e.to_string()))?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(err(i + 1, "non-finite value".into()));
            }
            table
                .push(fields[0].to_string(), &v)
                .map_err(|e| err(i + 1, e.to_string()))?;
        }
        if let Some(v) = declared_rows {
            if v != table.len() {
                return Err(err(1, format!("header declares {v} rows, found {}", table.len())));
            }
        }
        Ok(table)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// The stored vector, or `None` when out of vocabulary.
    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.id(word).map(|i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    /// Lookup with the zero-vector OOV policy.
    pub fn lookup(&self, word: &str) -> Vec<f64> {
        self.get(word).map_or_else(|| vec![0.0; self.dim], <[f64]>::to_vec)
    }

    /// Keeps only the given words (in sorted order), dropping the rest.
    pub fn restrict<'a>(&self, words: impl IntoIterator<Item = &'a str>) -> Self {
        let keep: BTreeSet<&str> = words.into_iter().filter(|w| self.index.contains_key(*w)).collect();
        let entries = keep
            .into_iter()
            .map(|w| (w.to_string(), self.get(w).unwrap().to_vec()))
            .collect();
        let mut t = Self::new(self.dim, entries).expect("rows already validated");
        t.trainable = self.trainable;
        t
    }

    /// The table as a `[V, dim]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.len(), self.dim], self.vectors.clone()).unwrap_or_else(|_| Tensor::zeros(&[0, self.dim]))
    }

    /// Row ids for the first [`MAX_LEN`] tokens, `None` for OOV and padding.
    pub fn ids(&self, tokens: &[String]) -> Vec<Option<usize>> {
        let mut ids: Vec<Option<usize>> = tokens.iter().take(MAX_LEN).map(|w| self.id(w)).collect();
        ids.resize(MAX_LEN, None);
        ids
    }
}

/// `MAX_LEN × E` matrix of embedded tokens followed by zero rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceMatrix {
    pub rows: Tensor,
    pub valid_len: usize,
}

pub fn embed_and_pad(tokens: &[String], table: &EmbeddingTable) -> SentenceMatrix {
    let e = table.dim();
    let mut data = vec![0.0; MAX_LEN * e];
    let valid_len = tokens.len().min(MAX_LEN);
    for (i, w) in tokens.iter().take(MAX_LEN).enumerate() {
        if let Some(v) = table.get(w) {
            data[i * e..(i + 1) * e].copy_from_slice(v);
        }
    }
    SentenceMatrix {
        rows: Tensor::new(vec![MAX_LEN, e], data).expect("fixed shape"),
        valid_len,
    }
}

/// Tag ids padded with `None` to [`MAX_LEN`].
pub fn tag_ids(tags: &[Tag]) -> Vec<Option<usize>> {
    let mut ids: Vec<Option<usize>> = tags.iter().take(MAX_LEN).map(|t| Some(t.index())).collect();
    ids.resize(MAX_LEN, None);
    ids
}

/// Xavier-initialized `[12, dim]` POS table.
pub fn pos_embedding_table(dim: usize, rng: &mut impl Rng) -> Tensor {
    let n = Tag::ALL.len();
    xavier_uniform(&[n, dim], n, dim, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::init::stream;
    use crate::text::tokenize;

    fn p() -> &'static Path {
        Path::new("vec.txt")
    }

    #[test]
    fn two_line_round_trip_and_oov() {
        let t = EmbeddingTable::parse(p(), "cat 1 2 3\ndog -1 0.5 2e-3\n", 3).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("cat").unwrap(), &[1.0, 2.0, 3.0]);
        assert_eq!(t.get("dog").unwrap(), &[-1.0, 0.5, 2e-3]);
        assert_eq!(t.lookup("zebra"), vec![0.0; 3]);
        assert!(!t.trainable);
    }

    #[test]
    fn short_line_reports_line_number() {
        let good: Vec<String> = (0..300).map(|i| i.to_string()).collect();
        let bad: Vec<String> = (0..299).map(|i| i.to_string()).collect();
        let text = format!("2 300\na {}\nb {}\n", good.join(" "), bad.join(" "));
        match EmbeddingTable::parse(p(), &text, 300) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn header_is_validated() {
        assert!(EmbeddingTable::parse(p(), "1 3\na 1 2 3\n", 3).is_ok());
        assert!(EmbeddingTable::parse(p(), "2 3\na 1 2 3\n", 3).is_err());
        assert!(EmbeddingTable::parse(p(), "1 4\na 1 2 3\n", 3).is_err());
    }

    #[test]
    fn padding_and_truncation() {
        let t = EmbeddingTable::parse(p(), "a 1 1\nb 2 2\n", 2).unwrap();
        let m = embed_and_pad(&tokenize("a b zzz"), &t);
        assert_eq!(m.rows.shape(), &[40, 2]);
        assert_eq!(m.valid_len, 3);
        assert_eq!(&m.rows.data()[..6], &[1.0, 1.0, 2.0, 2.0, 0.0, 0.0]);
        assert!(m.rows.data()[6..].iter().all(|&v| v == 0.0));

        let empty = embed_and_pad(&[], &t);
        assert_eq!(empty.valid_len, 0);
        assert!(empty.rows.data().iter().all(|&v| v == 0.0));

        let long: Vec<String> = (0..45).map(|i| if i < 40 { "a" } else { "b" }.to_string()).collect();
        let m = embed_and_pad(&long, &t);
        assert_eq!(m.valid_len, 40);
        assert!(m.rows.data().iter().all(|&v| v == 1.0));
        assert_eq!(t.ids(&long).len(), 40);
    }

    #[test]
    fn restrict_keeps_known_words_only() {
        let t = EmbeddingTable::parse(p(), "a 1\nb 2\nc 3\n", 1).unwrap();
        let r = t.restrict(["c", "a", "zzz"]);
        assert_eq!(r.words(), &["a".to_string(), "c".to_string()]);
        assert_eq!(r.to_tensor().data(), &[1.0, 3.0]);
    }

    #[test]
    fn pos_table_shape_and_determinism() {
        let a = pos_embedding_table(10, &mut stream(3, "pos"));
        let b = pos_embedding_table(10, &mut stream(3, "pos"));
        assert_eq!(a.shape(), &[12, 10]);
        assert_eq!(a, b);
    }
}
