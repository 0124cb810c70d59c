use std::collections::{BTreeSet, HashMap};

use super::{rank, RankingResult, RetrievalError, Scorer};

/// Raw term counts weighted by smoothed idf, `ln((1 + n) / (1 + df)) + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct TfidfIndex {
    pub n_docs: usize,
    pub df: HashMap<String, usize>,
    pub weights: Vec<HashMap<String, f64>>,
    pub texts: Vec<String>,
}

impl TfidfIndex {
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.df.get(term).copied().unwrap_or(0);
        ((1 + self.n_docs) as f64 / (1 + df) as f64).ln() + 1.0
    }
}

pub fn tfidf_fit(candidates: &[Vec<String>]) -> Result<TfidfIndex, RetrievalError> {
    if candidates.is_empty() {
        return Err(RetrievalError::EmptyCandidates);
    }
    let mut df: HashMap<String, usize> = HashMap::new();
    let mut tfs = Vec::with_capacity(candidates.len());
    for c in candidates {
        let mut tf: HashMap<String, f64> = HashMap::new();
        for t in c {
            *tf.entry(t.clone()).or_default() += 1.0;
        }
        for t in tf.keys() {
            *df.entry(t.clone()).or_default() += 1;
        }
        tfs.push(tf);
    }
    let mut index = TfidfIndex {
        n_docs: candidates.len(),
        df,
        weights: Vec::new(),
        texts: candidates.iter().map(|c| c.join(" ")).collect(),
    };
    index.weights = tfs
        .into_iter()
        .map(|tf| {
            tf.into_iter()
                .map(|(t, n)| {
                    let w = n * index.idf(&t);
                    (t, w)
                })
                .collect()
        })
        .collect();
    Ok(index)
}

/// Per-candidate sum of weights over the distinct tokens of `question`.
pub fn tfidf_scores(question: &[String], index: &TfidfIndex) -> Vec<f64> {
    let terms: BTreeSet<&String> = question.iter().collect();
    index
        .weights
        .iter()
        .map(|w| terms.iter().filter_map(|t| w.get(*t)).sum())
        .collect()
}

pub fn tfidf_rank(question: &[String], index: &TfidfIndex) -> RankingResult {
    let entries = tfidf_scores(question, index)
        .into_iter()
        .enumerate()
        .map(|(i, s)| (i as u32, s, index.texts[i].clone()))
        .collect();
    rank(question, Scorer::Tfidf, entries)
}
