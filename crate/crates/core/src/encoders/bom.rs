//! Bag of means: the average of pretrained word vectors.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use super::vector_file::{parse_vector_file, DuplicatePolicy};
use super::{EmbeddingProvider, EncodeError, ProviderKind, RepresentationVector, TextRef};
use crate::corpus::tokenize;

/// Word -> dense vector, all of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct WordTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordTable {
    pub fn new(dim: usize, vectors: HashMap<String, Vec<f64>>) -> Result<Self, EncodeError> {
        if let Some((w, v)) = vectors.iter().find(|(_, v)| v.len() != dim) {
            return Err(EncodeError::InvalidParameter(format!(
                "vector for {w:?} has {} values, table dim is {dim}",
                v.len()
            )));
        }
        Ok(WordTable { dim, vectors })
    }

    /// Loads a word-vector text file. Duplicate words keep the last vector.
    pub fn load(path: &Path) -> Result<Self, EncodeError> {
        let (dim, vectors) = parse_vector_file(BufReader::new(File::open(path)?), DuplicatePolicy::LastWins)?;
        Ok(WordTable { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }
}

/// Mean of the in-vocabulary token vectors.
///
/// Tokens are summed in lexicographic order, so any reordering of the same
/// tokens gives a bit-identical result. Out-of-vocabulary tokens are skipped;
/// no known token gives the zero vector.
pub fn encode_bom(text: &str, table: &WordTable) -> RepresentationVector {
    let mut tokens = tokenize(text);
    tokens.sort_unstable();
    let mut sum = vec![0.0; table.dim];
    let mut known = 0usize;
    for t in &tokens {
        if let Some(v) = table.get(t) {
            sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
            known += 1;
        }
    }
    if known > 0 {
        let n = known as f64;
        sum.iter_mut().for_each(|s| *s /= n);
    }
    RepresentationVector::dense(sum)
}

#[derive(Debug, Clone)]
pub struct BomEncoder {
    name: String,
    table: WordTable,
}

impl BomEncoder {
    pub fn new(name: impl Into<String>, table: WordTable) -> Self {
        BomEncoder {
            name: name.into(),
            table,
        }
    }
}

impl EmbeddingProvider for BomEncoder {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::Bom
    }

    fn dim(&self) -> usize {
        self.table.dim
    }

    fn encode(&self, input: TextRef<'_>) -> Result<RepresentationVector, EncodeError> {
        Ok(encode_bom(input.text, &self.table))
    }
}
