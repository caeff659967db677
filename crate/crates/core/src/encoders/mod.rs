//! Representation providers.
//!
//! Built-in baselines ([`bow`], [`bom`], [`lda`]) compute vectors from text;
//! [`external`] serves precomputed vectors keyed by request key for every
//! other model. All providers are immutable once built and encode
//! deterministically.

pub mod bom;
pub mod bow;
pub mod external;
pub mod lda;
mod vector_file;

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Tweet;
use crate::util::{derive_seed, stable_hash};

pub use bom::{BomEncoder, WordTable};
pub use bow::{build_bow_vocab, encode_bow, BowEncoder, BowVocabulary};
pub use external::{load_external, read_request_keys, ExternalProvider};
pub use lda::{encode_lda, train_lda, LdaConfig, LdaEncoder, LdaModel};
pub use vector_file::{parse_vector_file, write_vector_file, DuplicatePolicy};

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("line {line}: expected {expected} values, found {found}")]
    DimensionMismatch { line: usize, expected: usize, found: usize },
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("missing vectors for {} key(s): {}", keys.len(), preview(keys))]
    MissingKey { keys: Vec<String> },
    #[error("line {line}: key {key:?} appears more than once")]
    DuplicateKey { line: usize, key: String },
    #[error("invalid sparse vector: {0}")]
    InvalidSparse(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("vector io: {0}")]
    Io(#[from] std::io::Error),
}

fn preview(keys: &[String]) -> String {
    const SHOWN: usize = 10;
    let mut s = keys.iter().take(SHOWN).cloned().collect::<Vec<_>>().join(", ");
    if keys.len() > SHOWN {
        s.push_str(&format!(", ... ({} more)", keys.len() - SHOWN));
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    Dense(Vec<f64>),
    /// Strictly increasing indices, no stored zeros.
    Sparse {
        indices: Vec<u32>,
        values: Vec<f64>,
    },
}

/// A dense or sparse real vector of fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationVector {
    dim: usize,
    storage: Storage,
}

impl RepresentationVector {
    pub fn dense(values: Vec<f64>) -> Self {
        RepresentationVector {
            dim: values.len(),
            storage: Storage::Dense(values),
        }
    }

    /// Sparse vector from `(index, value)` pairs. Indices must be strictly
    /// increasing and below `dim`; zero values are dropped.
    pub fn sparse(dim: usize, pairs: impl IntoIterator<Item = (u32, f64)>) -> Result<Self, EncodeError> {
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for (i, v) in pairs {
            if (i as usize) >= dim {
                return Err(EncodeError::InvalidSparse(format!("index {i} >= dim {dim}")));
            }
            if indices.last().is_some_and(|&last| last >= i) {
                return Err(EncodeError::InvalidSparse(format!("index {i} out of order")));
            }
            if v != 0.0 {
                indices.push(i);
                values.push(v);
            }
        }
        Ok(RepresentationVector {
            dim,
            storage: Storage::Sparse { indices, values },
        })
    }

    /// All-zero sparse vector.
    pub fn zeros(dim: usize) -> Self {
        RepresentationVector {
            dim,
            storage: Storage::Sparse {
                indices: Vec::new(),
                values: Vec::new(),
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, Storage::Sparse { .. })
    }

    pub fn nnz(&self) -> usize {
        match &self.storage {
            Storage::Dense(v) => v.iter().filter(|x| **x != 0.0).count(),
            Storage::Sparse { indices, .. } => indices.len(),
        }
    }

    pub fn get(&self, i: usize) -> f64 {
        match &self.storage {
            Storage::Dense(v) => v[i],
            Storage::Sparse { indices, values } => indices.binary_search(&(i as u32)).map(|p| values[p]).unwrap_or(0.0),
        }
    }

    /// Visits stored entries in index order. Dense vectors visit every entry.
    pub fn for_each_entry(&self, mut f: impl FnMut(usize, f64)) {
        match &self.storage {
            Storage::Dense(v) => v.iter().enumerate().for_each(|(i, &x)| f(i, x)),
            Storage::Sparse { indices, values } => indices.iter().zip(values).for_each(|(&i, &x)| f(i as usize, x)),
        }
    }

    pub fn dot(&self, weights: &[f64]) -> f64 {
        debug_assert_eq!(weights.len(), self.dim);
        match &self.storage {
            Storage::Dense(v) => v.iter().zip(weights).map(|(a, b)| a * b).sum(),
            Storage::Sparse { indices, values } => {
                indices.iter().zip(values).map(|(&i, &x)| x * weights[i as usize]).sum()
            }
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        match &self.storage {
            Storage::Dense(v) => v.clone(),
            Storage::Sparse { .. } => {
                let mut out = vec![0.0; self.dim];
                self.for_each_entry(|i, x| out[i] = x);
                out
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        let mut s = 0.0;
        self.for_each_entry(|_, x| s += x * x);
        s.sqrt()
    }

    /// Concatenation in argument order. Sparse only when every part is sparse.
    pub fn concat(parts: &[&RepresentationVector]) -> RepresentationVector {
        let dim = parts.iter().map(|p| p.dim).sum();
        if parts.iter().all(|p| p.is_sparse()) {
            let mut indices = Vec::new();
            let mut values = Vec::new();
            let mut offset = 0u32;
            for p in parts {
                p.for_each_entry(|i, x| {
                    indices.push(offset + i as u32);
                    values.push(x);
                });
                offset += p.dim as u32;
            }
            RepresentationVector {
                dim,
                storage: Storage::Sparse { indices, values },
            }
        } else {
            let mut out = Vec::with_capacity(dim);
            for p in parts {
                out.extend(p.to_dense());
            }
            RepresentationVector::dense(out)
        }
    }

    /// One-line text form: `dense <dim> v...` or `sparse <dim> i:v ...`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        match &self.storage {
            Storage::Dense(v) => {
                s.push_str(&format!("dense {}", self.dim));
                for x in v {
                    s.push_str(&format!(" {x}"));
                }
            }
            Storage::Sparse { indices, values } => {
                s.push_str(&format!("sparse {}", self.dim));
                for (i, x) in indices.iter().zip(values) {
                    s.push_str(&format!(" {i}:{x}"));
                }
            }
        }
        s
    }

    pub fn from_text(line: &str) -> Result<Self, EncodeError> {
        let bad = |reason: String| EncodeError::MalformedLine { line: 1, reason };
        let mut fields = line.split_whitespace();
        let kind = fields.next().ok_or_else(|| bad("empty vector".into()))?;
        let dim: usize = fields
            .next()
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| bad("missing dimension".into()))?;
        match kind {
            "dense" => {
                let values = fields
                    .map(|f| f.parse::<f64>().map_err(|e| bad(e.to_string())))
                    .collect::<Result<Vec<_>, _>>()?;
                if values.len() != dim {
                    return Err(EncodeError::DimensionMismatch {
                        line: 1,
                        expected: dim,
                        found: values.len(),
                    });
                }
                Ok(RepresentationVector::dense(values))
            }
            "sparse" => {
                let pairs = fields
                    .map(|f| {
                        let (i, v) = f.split_once(':').ok_or_else(|| bad(format!("bad entry {f}")))?;
                        let i = i.parse::<u32>().map_err(|e| bad(e.to_string()))?;
                        let v = v.parse::<f64>().map_err(|e| bad(e.to_string()))?;
                        Ok((i, v))
                    })
                    .collect::<Result<Vec<_>, EncodeError>>()?;
                RepresentationVector::sparse(dim, pairs)
            }
            other => Err(bad(format!("unknown storage {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Bow,
    Bom,
    Lda,
    External,
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ProviderKind::Bow => "bow",
            ProviderKind::Bom => "bom",
            ProviderKind::Lda => "lda",
            ProviderKind::External => "external",
        };
        f.write_str(s)
    }
}

/// A text to encode. Built-in providers read `text`; external providers
/// resolve `key`.
#[derive(Debug, Clone, Copy)]
pub struct TextRef<'a> {
    pub key: &'a str,
    pub text: &'a str,
}

impl<'a> TextRef<'a> {
    pub fn new(key: &'a str, text: &'a str) -> Self {
        TextRef { key, text }
    }

    pub fn tweet(tweet: &'a Tweet) -> Self {
        TextRef {
            key: &tweet.id,
            text: &tweet.raw_text,
        }
    }
}

/// Maps texts to fixed-dimension vectors.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;

    fn kind(&self) -> ProviderKind;

    fn dim(&self) -> usize;

    fn encode(&self, input: TextRef<'_>) -> Result<RepresentationVector, EncodeError>;

    /// Whether vectors are naturally sparse; decides the probe's default
    /// standardization.
    fn is_sparse(&self) -> bool {
        self.kind() == ProviderKind::Bow
    }
}

/// Uniform shuffle of the tweet's tokens, joined by single spaces.
/// Deterministic per `(tweet.id, seed)`.
pub fn permute_tokens(tweet: &Tweet, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stable_hash(&tweet.id)));
    let mut tokens: Vec<&str> = tweet.tokens.iter().map(String::as_str).collect();
    tokens.shuffle(&mut rng);
    tokens.join(" ")
}

/// Request key under which external providers supply the shuffled tweet.
pub fn permuted_key(tweet_id: &str, seed: u64) -> String {
    format!("perm:{seed}:{tweet_id}")
}
