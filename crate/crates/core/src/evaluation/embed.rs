use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::preprocess::{Preprocessor, TextKind};
use super::EvalError;
use crate::gateway::{HttpClient, ProviderConfig, RetryPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }
}

/// Cosine similarity; `None` when either vector is all-zero or the
/// dimensions differ.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Option<f64> {
    if a.dimension() != b.dimension() || a.is_zero() || b.is_zero() {
        return None;
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Some((dot / (a.norm() * b.norm())).clamp(-1.0, 1.0))
}

pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EvalError>;
}

/// Offline embedder: signed feature hashing of word unigrams and character
/// trigrams into a fixed number of buckets, L2-normalised.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dimension: usize,
}

pub const HASHING_DIMENSION: usize = 256;

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(HASHING_DIMENSION)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl HashingEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension }
    }

    fn add(&self, values: &mut [f64], feature: &str, weight: f64) {
        let h = fnv1a(feature.as_bytes());
        let bucket = (h % self.dimension as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        values[bucket] += sign * weight;
    }

    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        let mut values = vec![0.0; self.dimension];
        let lower = text.to_lowercase();
        for token in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            self.add(&mut values, &format!("w:{token}"), 1.0);
            let padded: Vec<char> = format!("#{token}#").chars().collect();
            for gram in padded.windows(3) {
                let gram: String = gram.iter().collect();
                self.add(&mut values, &format!("c:{gram}"), 0.5);
            }
        }
        if values.iter().all(|v| *v == 0.0) {
            self.add(&mut values, "<empty>", 1.0);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        values.iter_mut().for_each(|v| *v /= norm);
        EmbeddingVector(values)
    }
}

impl Embedder for HashingEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EvalError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// OpenAI-compatible `/embeddings` endpoint, e.g. a sentence-transformer
/// model served locally.
pub struct HttpEmbedder {
    client: HttpClient,
    url: String,
    model: String,
}

impl HttpEmbedder {
    pub fn new(config: &ProviderConfig, retry: RetryPolicy) -> Self {
        Self {
            client: HttpClient::from_config(config, retry),
            url: format!("{}/embeddings", config.base_url.trim_end_matches('/')),
            model: config.model.clone(),
        }
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EvalError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let reply = self
            .client
            .post_json(&self.url, &json!({"model": self.model, "input": texts}))
            .map_err(|e| EvalError::BackendUnreachable(e.to_string()))?;
        let data = reply
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| EvalError::BackendUnreachable("response without data array".into()))?;
        if data.len() != texts.len() {
            return Err(EvalError::BackendUnreachable(format!(
                "{} embeddings for {} inputs",
                data.len(),
                texts.len()
            )));
        }
        let mut out = vec![None; texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let index = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
            let values: Option<Vec<f64>> = item
                .get("embedding")
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(Value::as_f64).collect());
            match (out.get_mut(index), values) {
                (Some(slot), Some(v)) if !v.is_empty() => *slot = Some(EmbeddingVector(v)),
                _ => return Err(EvalError::BackendUnreachable(format!("bad embedding at {pos}"))),
            }
        }
        Ok(out.into_iter().map(|v| v.expect("every index filled")).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Generated,
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedItem {
    pub original: String,
    pub preprocessed: String,
    pub vector: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub side: Side,
    pub items: Vec<EmbeddedItem>,
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Preprocesses and embeds `texts`, one vector per text.
pub fn embed(
    texts: &[String],
    side: Side,
    kind: TextKind,
    preprocessor: &Preprocessor,
    backend: &dyn Embedder,
) -> Result<EmbeddingSet, EvalError> {
    let preprocessed: Vec<String> = texts.iter().map(|t| preprocessor.preprocess(t, kind)).collect();
    let vectors = backend.embed(&preprocessed)?;
    if vectors.len() != texts.len() {
        return Err(EvalError::BackendUnreachable("embedding count mismatch".into()));
    }
    if let Some(first) = vectors.first() {
        if vectors.iter().any(|v| v.dimension() != first.dimension()) {
            return Err(EvalError::DimensionMismatch {
                left: first.dimension(),
                right: vectors.iter().map(|v| v.dimension()).find(|d| *d != first.dimension()).unwrap_or(0),
            });
        }
    }
    Ok(EmbeddingSet {
        side,
        items: texts
            .iter()
            .zip(preprocessed)
            .zip(vectors)
            .map(|((original, preprocessed), vector)| EmbeddedItem {
                original: original.clone(),
                preprocessed,
                vector,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_self_similar() {
        let e = HashingEmbedder::default();
        let a = e.embed_one("Register a new hospital");
        let b = e.embed_one("Register a new hospital");
        assert_eq!(a, b);
        assert!((cosine(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(a.dimension(), HASHING_DIMENSION);
        assert!((a.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn distinct_strings_in_range() {
        let e = HashingEmbedder::default();
        let c = cosine(&e.embed_one("List hospitals"), &e.embed_one("Transfer blood units")).unwrap();
        assert!((-1.0..=1.0).contains(&c));
        let related = cosine(&e.embed_one("list all hospitals"), &e.embed_one("list the hospitals")).unwrap();
        assert!(related > c);
    }

    #[test]
    fn empty_text_is_not_a_zero_vector() {
        assert!(!HashingEmbedder::default().embed_one("").is_zero());
    }

    #[test]
    fn empty_list_gives_empty_set() {
        let set = embed(&[], Side::Generated, TextKind::GoalText, &Preprocessor::default(), &HashingEmbedder::default())
            .unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn cosine_rejects_zero_and_mismatch() {
        let z = EmbeddingVector(vec![0.0, 0.0]);
        let x = EmbeddingVector(vec![1.0, 0.0]);
        assert!(cosine(&z, &x).is_none());
        assert!(cosine(&x, &EmbeddingVector(vec![1.0])).is_none());
    }
}
