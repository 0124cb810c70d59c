//! Ranking candidates for a question: the dual encoder against a stored
//! template pool, the tf-idf baseline, and embedding nearest neighbors.

mod tfidf;

pub use tfidf::{tfidf_fit, tfidf_rank, tfidf_scores, TfidfIndex};

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::{DualEncoder, EncoderError, Side};
use crate::numerics::Tensor;
use crate::templates::TemplatePool;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("pool belongs to model {pool}, not {model}")]
    ModelPoolMismatch { pool: String, model: String },
    #[error("no candidates to index")]
    EmptyCandidates,
    #[error("embedding bank is empty")]
    EmptyBank,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("pool has no active templates")]
    NoActiveTemplates,
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    DualEncoder,
    Tfidf,
}

impl Scorer {
    pub const ALL: [Scorer; 2] = [Scorer::DualEncoder, Scorer::Tfidf];

    pub fn as_str(self) -> &'static str {
        match self {
            Scorer::DualEncoder => "dual_encoder",
            Scorer::Tfidf => "tfidf",
        }
    }
}

impl fmt::Display for Scorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scorer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dual_encoder" => Ok(Scorer::DualEncoder),
            "tfidf" => Ok(Scorer::Tfidf),
            other => Err(format!(
                "unknown scorer {other:?} (expected dual_encoder or tfidf)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub id: u32,
    pub score: f32,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub question: Vec<String>,
    pub scorer: Scorer,
    pub ranked: Vec<Ranked>,
}

/// Descending score, then ascending id. NaN sorts last.
fn by_score_then_id(a: (f64, u32), b: (f64, u32)) -> Ordering {
    match (a.0.is_nan(), b.0.is_nan()) {
        (false, false) => b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)),
        (x, y) => x.cmp(&y).then(a.1.cmp(&b.1)),
    }
}

/// Orders `(id, score, text)` triples into a result.
pub fn rank(
    question: &[String],
    scorer: Scorer,
    mut entries: Vec<(u32, f64, String)>,
) -> RankingResult {
    entries.sort_by(|a, b| by_score_then_id((a.1, a.0), (b.1, b.0)));
    RankingResult {
        question: question.to_vec(),
        scorer,
        ranked: entries
            .into_iter()
            .map(|(id, score, text)| Ranked {
                id,
                score: score as f32,
                text,
            })
            .collect(),
    }
}

/// Largest top-k a caller may request.
pub const MAX_K: usize = 50;

/// The first `min(k, n)` entries.
pub fn top_k(mut result: RankingResult, k: usize) -> Result<RankingResult, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    result.ranked.truncate(k);
    Ok(result)
}

/// Active templates of a pool with their stored embeddings stacked into
/// one matrix, ready for repeated scoring.
#[derive(Clone, Debug)]
pub struct PoolIndex {
    pub ids: Vec<u32>,
    pub texts: Vec<String>,
    pub embeddings: Tensor,
}

impl PoolIndex {
    pub fn new(pool: &TemplatePool, model_hash: &str) -> Result<Self, RetrievalError> {
        if pool.model_hash != model_hash {
            return Err(RetrievalError::ModelPoolMismatch {
                pool: pool.model_hash.clone(),
                model: model_hash.to_string(),
            });
        }
        let active: Vec<_> = pool.active().collect();
        let dim = active
            .first()
            .map(|t| t.embedding.len())
            .ok_or(RetrievalError::NoActiveTemplates)?;
        let data: Vec<f32> = active
            .iter()
            .flat_map(|t| t.embedding.iter().copied())
            .collect();
        let embeddings = Tensor::new(vec![active.len(), dim], data)
            .map_err(|e| RetrievalError::Encoder(EncoderError::Numerics(e)))?;
        Ok(Self {
            ids: active.iter().map(|t| t.id).collect(),
            texts: active.iter().map(|t| t.text_string()).collect(),
            embeddings,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Encodes `question` once and applies the head to each stored template
    /// embedding.
    pub fn score(
        &self,
        question: &[String],
        model: &DualEncoder,
    ) -> Result<RankingResult, RetrievalError> {
        let q = model.encode(Side::Question, question)?;
        let probs = model.score_embeddings(&q, &self.embeddings)?;
        let entries = probs
            .iter()
            .zip(&self.ids)
            .zip(&self.texts)
            .map(|((&p, &id), text)| (id, f64::from(p), text.clone()))
            .collect();
        Ok(rank(question, Scorer::DualEncoder, entries))
    }
}

/// Every active template ranked by match probability for `question`.
pub fn score_against_pool(
    question: &[String],
    pool: &TemplatePool,
    model: &DualEncoder,
    model_hash: &str,
) -> Result<RankingResult, RetrievalError> {
    PoolIndex::new(pool, model_hash)?.score(question, model)
}

/// Sentences embedded by one encoder side, for neighbor lookups.
#[derive(Clone, Debug)]
pub struct EmbeddingBank {
    pub side: Side,
    pub texts: Vec<Vec<String>>,
    pub embeddings: Tensor,
}

impl EmbeddingBank {
    pub fn build(
        texts: Vec<Vec<String>>,
        side: Side,
        model: &DualEncoder,
    ) -> Result<Self, RetrievalError> {
        if texts.is_empty() {
            return Err(RetrievalError::EmptyBank);
        }
        let embeddings = model.encode_many(side, &texts)?;
        Ok(Self {
            side,
            texts,
            embeddings,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub text: Vec<String>,
    pub similarity: f64,
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// The `k` bank entries most cosine-similar to `item` under the bank's
/// encoder side, skipping entries whose text equals `item`. Ties go to the
/// lower bank index.
pub fn nearest_neighbors(
    item: &[String],
    bank: &EmbeddingBank,
    model: &DualEncoder,
    k: usize,
) -> Result<Vec<Neighbor>, RetrievalError> {
    if bank.texts.is_empty() {
        return Err(RetrievalError::EmptyBank);
    }
    if k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    let query = model.encode(bank.side, item)?;
    let mut scored: Vec<(usize, f64)> = (0..bank.texts.len())
        .filter(|&i| bank.texts[i] != item)
        .map(|i| (i, cosine(&query, bank.embeddings.row(i))))
        .collect();
    scored.sort_by(|a, b| by_score_then_id((a.1, a.0 as u32), (b.1, b.0 as u32)));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(index, similarity)| Neighbor {
            index,
            text: bank.texts[index].clone(),
            similarity,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let r = rank(
            &words("q"),
            Scorer::Tfidf,
            vec![
                (5, 0.5, "e".into()),
                (2, 0.5, "b".into()),
                (9, 0.9, "i".into()),
                (1, f64::NAN, "a".into()),
            ],
        );
        let ids: Vec<u32> = r.ranked.iter().map(|e| e.id).collect();
        assert_eq!(ids, vec![9, 2, 5, 1]);
    }

    #[test]
    fn top_k_truncates() {
        let entries = (0..200).map(|i| (i, f64::from(i), String::new())).collect();
        let r = rank(&words("q"), Scorer::DualEncoder, entries);
        assert_eq!(top_k(r.clone(), 3).unwrap().ranked.len(), 3);
        assert_eq!(top_k(r.clone(), 500).unwrap().ranked.len(), 200);
        assert!(matches!(top_k(r, 0), Err(RetrievalError::InvalidK)));
    }

    #[test]
    fn scorer_names() {
        for s in Scorer::ALL {
            assert_eq!(s.as_str().parse::<Scorer>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{s}\""));
        }
        assert!("bm25".parse::<Scorer>().is_err());
    }

    #[test]
    fn result_json_shape() {
        let r = rank(
            &words("hi ?"),
            Scorer::DualEncoder,
            vec![(3, 0.25, "yes .".into())],
        );
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["question"], serde_json::json!(["hi", "?"]));
        assert_eq!(v["scorer"], "dual_encoder");
        assert_eq!(
            v["ranked"][0],
            serde_json::json!({"id": 3, "score": 0.25, "text": "yes ."})
        );
    }

    #[test]
    fn cosine_edge_cases() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((cosine(&[1.0, 1.0], &[2.0, 2.0]) - 1.0).abs() < 1e-12);
        assert!((cosine(&[1.0, 0.0], &[-3.0, 0.0]) + 1.0).abs() < 1e-12);
    }
}
