//! Precomputed vectors produced outside the harness.
//!
//! The flow is two-phase: the pipeline writes a request list of
//! `key<TAB>text` lines, an external encoder writes one vector per key in the
//! text vector format, and [`load_external`] checks the two agree.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::vector_file::{parse_vector_file, DuplicatePolicy};
use super::{EmbeddingProvider, EncodeError, ProviderKind, RepresentationVector, TextRef};

#[derive(Debug, Clone)]
pub struct ExternalProvider {
    name: String,
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl ExternalProvider {
    pub fn new(name: impl Into<String>, dim: usize, vectors: HashMap<String, Vec<f64>>) -> Self {
        ExternalProvider {
            name: name.into(),
            dim,
            vectors,
        }
    }

    /// Loads every vector in the file. Duplicate keys are an error.
    pub fn from_vectors_file(name: impl Into<String>, path: &Path) -> Result<Self, EncodeError> {
        let (dim, vectors) = parse_vector_file(BufReader::new(File::open(path)?), DuplicatePolicy::Reject)?;
        Ok(ExternalProvider::new(name, dim, vectors))
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Keys from `keys` with no vector, sorted.
    pub fn missing_keys<'a>(&self, keys: impl IntoIterator<Item = &'a str>) -> Vec<String> {
        keys.into_iter()
            .filter(|k| !self.vectors.contains_key(*k))
            .map(str::to_string)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

impl EmbeddingProvider for ExternalProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::External
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, input: TextRef<'_>) -> Result<RepresentationVector, EncodeError> {
        self.vectors
            .get(input.key)
            .map(|v| RepresentationVector::dense(v.clone()))
            .ok_or_else(|| EncodeError::MissingKey {
                keys: vec![input.key.to_string()],
            })
    }
}

/// Keys of a `key<TAB>text` request list, in file order.
pub fn read_request_keys<R: BufRead>(reader: R) -> Result<Vec<String>, EncodeError> {
    let mut keys = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let key = line.split('\t').next().unwrap_or_default();
        if key.is_empty() || key.contains(' ') {
            return Err(EncodeError::MalformedLine {
                line: i + 1,
                reason: format!("bad request key {key:?}"),
            });
        }
        keys.push(key.to_string());
    }
    Ok(keys)
}

/// Loads vectors and checks they cover every key of the request list.
pub fn load_external(name: &str, vectors_path: &Path, requests_path: &Path) -> Result<ExternalProvider, EncodeError> {
    let provider = ExternalProvider::from_vectors_file(name, vectors_path)?;
    let keys = read_request_keys(BufReader::new(File::open(requests_path)?))?;
    let missing = provider.missing_keys(keys.iter().map(String::as_str));
    if !missing.is_empty() {
        return Err(EncodeError::MissingKey { keys: missing });
    }
    Ok(provider)
}
