//! Probe inputs: the tweet vector followed by one vector per auxiliary text.

use std::collections::HashMap;

use super::ProbeError;
use crate::corpus::Corpus;
use crate::encoders::{permute_tokens, permuted_key, EmbeddingProvider, RepresentationVector, TextRef};
use crate::exec::Execution;
use crate::taskgen::{aux_key, TaskInstance};

/// Which form of the tweet text is encoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TweetView {
    #[default]
    Original,
    /// Tokens shuffled by [`permute_tokens`] under this seed.
    Permuted { seed: u64 },
}

/// Feature vectors with their gold labels, in instance order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledFeatures {
    pub features: Vec<RepresentationVector>,
    pub labels: Vec<usize>,
}

impl LabeledFeatures {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.features.first().map(RepresentationVector::dim)
    }
}

fn tweet_text(corpus: &Corpus, id: &str, view: TweetView) -> Result<(String, String), ProbeError> {
    let tweet = corpus.get(id).ok_or_else(|| ProbeError::UnknownTweet(id.to_string()))?;
    Ok(match view {
        TweetView::Original => (tweet.id.clone(), tweet.raw_text.clone()),
        TweetView::Permuted { seed } => (permuted_key(id, seed), permute_tokens(tweet, seed)),
    })
}

/// `[encode(tweet); encode(aux_1); ...]`, of dimension `dim * (1 + arity)`.
pub fn assemble_features(
    instance: &TaskInstance,
    provider: &dyn EmbeddingProvider,
    corpus: &Corpus,
) -> Result<RepresentationVector, ProbeError> {
    let (key, text) = tweet_text(corpus, &instance.tweet_id, TweetView::Original)?;
    let mut parts = vec![provider.encode(TextRef::new(&key, &text))?];
    for aux in &instance.aux_texts {
        parts.push(provider.encode(TextRef::new(&aux_key(aux), aux))?);
    }
    let refs: Vec<&RepresentationVector> = parts.iter().collect();
    Ok(RepresentationVector::concat(&refs))
}

/// Encodes a batch of instances. Each distinct text is encoded once; the
/// encoding itself runs under `exec`.
pub fn encode_instances(
    instances: &[TaskInstance],
    provider: &dyn EmbeddingProvider,
    corpus: &Corpus,
    view: TweetView,
    exec: Execution,
) -> Result<LabeledFeatures, ProbeError> {
    let mut texts: Vec<(String, String)> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    let mut layout: Vec<Vec<usize>> = Vec::with_capacity(instances.len());
    let mut intern = |key: String, text: String, texts: &mut Vec<(String, String)>| -> usize {
        *slot.entry(key.clone()).or_insert_with(|| {
            texts.push((key, text));
            texts.len() - 1
        })
    };
    for inst in instances {
        let (key, text) = tweet_text(corpus, &inst.tweet_id, view)?;
        let mut row = vec![intern(key, text, &mut texts)];
        for aux in &inst.aux_texts {
            row.push(intern(aux_key(aux), aux.clone(), &mut texts));
        }
        layout.push(row);
    }

    let encoded: Vec<RepresentationVector> = exec.try_map(&texts, |(k, t)| provider.encode(TextRef::new(k, t)))?;
    let features = layout
        .iter()
        .map(|row| {
            let parts: Vec<&RepresentationVector> = row.iter().map(|&i| &encoded[i]).collect();
            RepresentationVector::concat(&parts)
        })
        .collect();
    Ok(LabeledFeatures {
        features,
        labels: instances.iter().map(|i| i.label).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::read_corpus;
    use crate::encoders::{BomEncoder, WordTable};
    use crate::taskgen::Provenance;

    fn setup() -> (Corpus, BomEncoder) {
        let corpus = read_corpus("{\"id\":\"t1\",\"text\":\"a b c\"}\n".as_bytes()).unwrap();
        let table: HashMap<String, Vec<f64>> = ["a", "b", "c"]
            .iter()
            .enumerate()
            .map(|(i, w)| (w.to_string(), (0..200).map(|d| (i * 200 + d) as f64).collect()))
            .collect();
        (corpus, BomEncoder::new("bom", WordTable::new(200, table).unwrap()))
    }

    fn inst(aux: &[&str]) -> TaskInstance {
        TaskInstance {
            tweet_id: "t1".into(),
            aux_texts: aux.iter().map(|s| s.to_string()).collect(),
            label: 1,
            provenance: Provenance::Positive,
        }
    }

    #[test]
    fn dims_follow_arity() {
        let (c, p) = setup();
        assert_eq!(assemble_features(&inst(&[]), &p, &c).unwrap().dim(), 200);
        assert_eq!(assemble_features(&inst(&["a"]), &p, &c).unwrap().dim(), 400);
        let f = assemble_features(&inst(&["a", "c"]), &p, &c).unwrap();
        assert_eq!(f.dim(), 600);
        // tweet part first, then aux in order
        assert_eq!(f.get(200), 0.0);
        assert_eq!(f.get(400), 400.0);
    }

    #[test]
    fn batch_matches_single_assembly() {
        let (c, p) = setup();
        let insts = vec![inst(&["a", "b"]), inst(&["c", "a"]), inst(&["a", "b"])];
        for exec in [Execution::Sequential, Execution::Parallel] {
            let batch = encode_instances(&insts, &p, &c, TweetView::Original, exec).unwrap();
            for (i, f) in insts.iter().zip(&batch.features) {
                assert_eq!(&assemble_features(i, &p, &c).unwrap(), f);
            }
        }
    }

    #[test]
    fn unknown_tweet_is_reported() {
        let (c, p) = setup();
        let mut i = inst(&[]);
        i.tweet_id = "nope".into();
        assert!(matches!(
            assemble_features(&i, &p, &c),
            Err(ProbeError::UnknownTweet(_))
        ));
    }
}
