//! LDA topic distributions via collapsed Gibbs sampling.
//!
//! Training resamples every token's topic from
//! `p(k) ∝ (n_dk + α) (n_kw + β) / (n_k + Vβ)`. Encoding freezes the
//! topic-word counts, runs the same sampler over the new text only, and
//! averages the document-topic estimate over the second half of the sweeps.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EmbeddingProvider, EncodeError, ProviderKind, RepresentationVector, TextRef};
use crate::corpus::{tokenize, Corpus};
use crate::util::{derive_seed, stable_hash};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdaConfig {
    pub topics: usize,
    /// Symmetric document prior; `50 / topics` when unset.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub infer_iterations: usize,
    pub seed: u64,
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig {
            topics: 200,
            alpha: None,
            beta: 0.01,
            iterations: 1000,
            infer_iterations: 100,
            seed: 0,
        }
    }
}

impl LdaConfig {
    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.topics as f64)
    }

    pub fn validate(&self) -> Result<(), EncodeError> {
        let ok = self.topics >= 2
            && self.topics <= u16::MAX as usize
            && self.alpha() > 0.0
            && self.alpha().is_finite()
            && self.beta > 0.0
            && self.beta.is_finite()
            && self.infer_iterations >= 2;
        if ok {
            Ok(())
        } else {
            Err(EncodeError::InvalidParameter(format!("bad LDA config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LdaModel {
    topics: usize,
    alpha: f64,
    beta: f64,
    seed: u64,
    iterations: usize,
    /// Sorted training vocabulary.
    vocab: Vec<String>,
    /// `word_topic[w * topics + k]` = tokens of word `w` assigned to topic `k`.
    word_topic: Vec<u32>,
    topic_totals: Vec<u64>,
    #[serde(skip)]
    index: HashMap<String, u32>,
    /// Frozen `φ[w * topics + k] = (n_kw + β) / (n_k + Vβ)`.
    #[serde(skip)]
    phi: Vec<f64>,
}

impl PartialEq for LdaModel {
    fn eq(&self, other: &Self) -> bool {
        self.topics == other.topics
            && self.alpha == other.alpha
            && self.beta == other.beta
            && self.seed == other.seed
            && self.iterations == other.iterations
            && self.vocab == other.vocab
            && self.word_topic == other.word_topic
            && self.topic_totals == other.topic_totals
    }
}

impl LdaModel {
    /// Rebuilds lookup tables; needed after deserialization.
    pub fn prepare(&mut self) {
        self.index = self
            .vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        let v_beta = self.vocab.len() as f64 * self.beta;
        self.phi = self
            .word_topic
            .iter()
            .enumerate()
            .map(|(i, &c)| (c as f64 + self.beta) / (self.topic_totals[i % self.topics] as f64 + v_beta))
            .collect();
    }

    pub fn topics(&self) -> usize {
        self.topics
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn topic_word_count(&self, topic: usize, word: &str) -> u32 {
        self.index
            .get(word)
            .map(|&w| self.word_topic[w as usize * self.topics + topic])
            .unwrap_or(0)
    }

    /// Normalized word distribution of `topic`, in vocabulary order.
    pub fn topic_distribution(&self, topic: usize) -> Vec<f64> {
        (0..self.vocab.len())
            .map(|w| self.phi[w * self.topics + topic])
            .collect()
    }
}

fn draw<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, &w) in weights.iter().enumerate() {
        u -= w;
        if u < 0.0 {
            return k;
        }
    }
    weights.len() - 1
}

/// Trains on the corpus tweets.
pub fn train_lda(corpus: &Corpus, cfg: &LdaConfig) -> Result<LdaModel, EncodeError> {
    let docs: Vec<Vec<String>> = corpus.tweets().iter().map(|t| t.tokens.clone()).collect();
    train_lda_docs(&docs, cfg)
}

/// Trains on pre-tokenized documents.
pub fn train_lda_docs(docs: &[Vec<String>], cfg: &LdaConfig) -> Result<LdaModel, EncodeError> {
    cfg.validate()?;
    if docs.iter().all(Vec::is_empty) {
        return Err(EncodeError::EmptyCorpus);
    }
    let vocab: Vec<String> = docs
        .iter()
        .flatten()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: HashMap<&str, u32> = vocab.iter().enumerate().map(|(i, w)| (w.as_str(), i as u32)).collect();
    let k_topics = cfg.topics;
    let alpha = cfg.alpha();
    let beta = cfg.beta;
    let v_beta = vocab.len() as f64 * beta;

    let words: Vec<Vec<u32>> = docs
        .iter()
        .map(|d| d.iter().map(|w| index[w.as_str()]).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x1da));
    let mut word_topic = vec![0u32; vocab.len() * k_topics];
    let mut topic_totals = vec![0u64; k_topics];
    let mut doc_topic = vec![0u32; words.len() * k_topics];
    let mut assignments: Vec<Vec<u16>> = Vec::with_capacity(words.len());
    for (d, doc) in words.iter().enumerate() {
        let z: Vec<u16> = doc
            .iter()
            .map(|&w| {
                let k = rng.random_range(0..k_topics);
                word_topic[w as usize * k_topics + k] += 1;
                topic_totals[k] += 1;
                doc_topic[d * k_topics + k] += 1;
                k as u16
            })
            .collect();
        assignments.push(z);
    }

    let mut weights = vec![0.0; k_topics];
    for _ in 0..cfg.iterations {
        for (d, doc) in words.iter().enumerate() {
            let nd = &mut doc_topic[d * k_topics..(d + 1) * k_topics];
            for (i, &w) in doc.iter().enumerate() {
                let old = assignments[d][i] as usize;
                let row = &mut word_topic[w as usize * k_topics..(w as usize + 1) * k_topics];
                row[old] -= 1;
                topic_totals[old] -= 1;
                nd[old] -= 1;
                for k in 0..k_topics {
                    weights[k] = (nd[k] as f64 + alpha) * (row[k] as f64 + beta) / (topic_totals[k] as f64 + v_beta);
                }
                let new = draw(&mut rng, &weights);
                row[new] += 1;
                topic_totals[new] += 1;
                nd[new] += 1;
                assignments[d][i] = new as u16;
            }
        }
    }

    let mut model = LdaModel {
        topics: k_topics,
        alpha,
        beta,
        seed: cfg.seed,
        iterations: cfg.iterations,
        vocab,
        word_topic,
        topic_totals,
        index: HashMap::new(),
        phi: Vec::new(),
    };
    model.prepare();
    Ok(model)
}

/// Topic distribution of `text` under the frozen model.
///
/// Runs `infer_iterations` sweeps and averages θ over the last half. Texts
/// with no known token get the uniform distribution. The sampler is seeded
/// from `seed` and the text, so equal texts encode identically.
pub fn encode_lda(text: &str, model: &LdaModel, infer_iterations: usize, seed: u64) -> RepresentationVector {
    let k_topics = model.topics;
    let ids: Vec<usize> = tokenize(text)
        .iter()
        .filter_map(|t| model.index.get(t).map(|&w| w as usize))
        .collect();
    if ids.is_empty() {
        return RepresentationVector::dense(vec![1.0 / k_topics as f64; k_topics]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stable_hash(text)));
    let mut nd = vec![0u32; k_topics];
    let mut z: Vec<usize> = ids
        .iter()
        .map(|_| {
            let k = rng.random_range(0..k_topics);
            nd[k] += 1;
            k
        })
        .collect();
    let burn_in = infer_iterations - infer_iterations / 2;
    let norm = ids.len() as f64 + k_topics as f64 * model.alpha;
    let mut theta = vec![0.0; k_topics];
    let mut weights = vec![0.0; k_topics];
    for sweep in 0..infer_iterations.max(1) {
        for (i, &w) in ids.iter().enumerate() {
            nd[z[i]] -= 1;
            let phi = &model.phi[w * k_topics..(w + 1) * k_topics];
            for k in 0..k_topics {
                weights[k] = (nd[k] as f64 + model.alpha) * phi[k];
            }
            z[i] = draw(&mut rng, &weights);
            nd[z[i]] += 1;
        }
        if sweep >= burn_in || infer_iterations < 2 {
            for k in 0..k_topics {
                theta[k] += (nd[k] as f64 + model.alpha) / norm;
            }
        }
    }
    let total: f64 = theta.iter().sum();
    theta.iter_mut().for_each(|t| *t /= total);
    RepresentationVector::dense(theta)
}

#[derive(Debug, Clone)]
pub struct LdaEncoder {
    name: String,
    model: LdaModel,
    infer_iterations: usize,
    seed: u64,
}

impl LdaEncoder {
    pub fn new(name: impl Into<String>, model: LdaModel, infer_iterations: usize, seed: u64) -> Self {
        LdaEncoder {
            name: name.into(),
            model,
            infer_iterations,
            seed,
        }
    }

    pub fn model(&self) -> &LdaModel {
        &self.model
    }
}

impl EmbeddingProvider for LdaEncoder {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::Lda
    }

    fn dim(&self) -> usize {
        self.model.topics
    }

    fn encode(&self, input: TextRef<'_>) -> Result<RepresentationVector, EncodeError> {
        Ok(encode_lda(input.text, &self.model, self.infer_iterations, self.seed))
    }
}
