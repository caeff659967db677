//! Bag of n-grams with TF-IDF weights.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{EmbeddingProvider, EncodeError, ProviderKind, RepresentationVector, TextRef};
use crate::corpus::{tokenize, Corpus};

pub const DEFAULT_MAX_TERMS: usize = 50_000;
pub const DEFAULT_N_MAX: usize = 5;

/// The top n-grams of a corpus with their document frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowVocabulary {
    /// Ranked by corpus count (descending), ties lexicographic. The rank is
    /// the vector index.
    terms: Vec<String>,
    df: Vec<u32>,
    n_docs: usize,
    n_max: usize,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl BowVocabulary {
    fn new(terms: Vec<String>, df: Vec<u32>, n_docs: usize, n_max: usize) -> Self {
        let mut v = BowVocabulary {
            terms,
            df,
            n_docs,
            n_max,
            index: HashMap::new(),
        };
        v.reindex();
        v
    }

    /// Rebuilds the lookup table; needed after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn index_of(&self, term: &str) -> Option<u32> {
        self.index.get(term).copied()
    }

    pub fn df(&self, term: &str) -> Option<u32> {
        self.index_of(term).map(|i| self.df[i as usize])
    }

    /// `ln(N / (1 + df)) + 1`
    pub fn idf(&self, index: u32) -> f64 {
        (self.n_docs as f64 / (1.0 + self.df[index as usize] as f64)).ln() + 1.0
    }
}

fn for_each_ngram(tokens: &[String], n_max: usize, mut f: impl FnMut(String)) {
    for n in 1..=n_max {
        for w in tokens.windows(n) {
            f(w.join(" "));
        }
    }
}

/// Keeps the `max_terms` most frequent n-grams of order `1..=n_max`.
pub fn build_bow_vocab(corpus: &Corpus, max_terms: usize, n_max: usize) -> Result<BowVocabulary, EncodeError> {
    if corpus.is_empty() {
        return Err(EncodeError::EmptyCorpus);
    }
    if max_terms == 0 || n_max == 0 {
        return Err(EncodeError::InvalidParameter(format!(
            "max_terms {max_terms} and n_max {n_max} must be positive"
        )));
    }
    let mut stats: HashMap<String, (u64, u32)> = HashMap::new();
    for tweet in corpus.tweets() {
        let mut seen: HashSet<String> = HashSet::new();
        for_each_ngram(&tweet.tokens, n_max, |g| {
            let entry = stats.entry(g.clone()).or_insert((0, 0));
            entry.0 += 1;
            if seen.insert(g) {
                entry.1 += 1;
            }
        });
    }
    let mut ranked: Vec<(String, u64, u32)> = stats.into_iter().map(|(t, (c, d))| (t, c, d)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_terms);
    let (terms, df) = ranked.into_iter().map(|(t, _, d)| (t, d)).unzip();
    Ok(BowVocabulary::new(terms, df, corpus.len(), n_max))
}

/// L2-normalized TF-IDF vector of `text` over `vocab`. Unknown n-grams are
/// ignored; a text with none known yields the zero vector.
pub fn encode_bow(text: &str, vocab: &BowVocabulary) -> RepresentationVector {
    let tokens = tokenize(text);
    let mut tf: BTreeMap<u32, f64> = BTreeMap::new();
    for_each_ngram(&tokens, vocab.n_max, |g| {
        if let Some(i) = vocab.index_of(&g) {
            *tf.entry(i).or_insert(0.0) += 1.0;
        }
    });
    let weighted: Vec<(u32, f64)> = tf.into_iter().map(|(i, c)| (i, c * vocab.idf(i))).collect();
    let norm = weighted.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    let pairs = weighted
        .into_iter()
        .map(|(i, v)| (i, if norm > 0.0 { v / norm } else { v }));
    RepresentationVector::sparse(vocab.len(), pairs).expect("indices come from an ordered map")
}

#[derive(Debug, Clone)]
pub struct BowEncoder {
    name: String,
    vocab: BowVocabulary,
}

impl BowEncoder {
    pub fn new(name: impl Into<String>, vocab: BowVocabulary) -> Self {
        BowEncoder {
            name: name.into(),
            vocab,
        }
    }

    pub fn vocab(&self) -> &BowVocabulary {
        &self.vocab
    }
}

impl EmbeddingProvider for BowEncoder {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::Bow
    }

    fn dim(&self) -> usize {
        self.vocab.len()
    }

    fn encode(&self, input: TextRef<'_>) -> Result<RepresentationVector, EncodeError> {
        Ok(encode_bow(input.text, &self.vocab))
    }
}
