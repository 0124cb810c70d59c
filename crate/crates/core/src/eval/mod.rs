//! The 1-correct-plus-9-distractor ranking task with MRR and precision@k,
//! human relevance annotations, and report emission.

mod report;
mod store;

pub use report::{
    aggregate_by_scorer, aggregate_relevance, emit_report, EvalReport, RankingSection,
    RelevanceSummary, ScorerMetrics, HIST_FILE, REPORT_JSON, REPORT_TXT,
};
pub use store::{read_annotations, AnnotationStore, RelevanceAnnotation, StoreOpen};

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::QaPair;
use crate::encoder::{DualEncoder, EncoderError, Side};
use crate::retrieval::{rank, tfidf_fit, tfidf_scores, RetrievalError, Scorer};

/// Candidates per ranking item: the correct answer plus nine distractors.
pub const CANDIDATES: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty input")]
    EmptyInput,
    #[error("rank positions start at 1, got {0}")]
    InvalidRank(usize),
    #[error("need at least {CANDIDATES} distinct answers, found {0}")]
    TooFewAnswers(usize),
    #[error("requested {requested} items but only {available} questions are available")]
    TooFewQuestions { requested: usize, available: usize },
    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),
    #[error("annotation for question {qid}, template {tid} by {annotator} already recorded")]
    Duplicate {
        qid: String,
        tid: u32,
        annotator: String,
    },
    #[error("annotation store line {line}: {message}")]
    CorruptStore { line: usize, message: String },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingItem {
    pub question: Vec<String>,
    pub candidates: Vec<Vec<String>>,
    pub correct_index: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingTask {
    pub items: Vec<RankingItem>,
    pub seed: u64,
}

/// Samples `n` positive pairs and gives each nine distractor answers drawn
/// from the other pairs, all text-distinct from the correct answer and from
/// each other, in shuffled order.
pub fn build_ranking_task(
    positives: &[QaPair],
    n: usize,
    seed: u64,
) -> Result<RankingTask, EvalError> {
    let positives: Vec<&QaPair> = positives.iter().filter(|p| p.label == 1).collect();
    let distinct: Vec<&Vec<String>> = positives
        .iter()
        .map(|p| &p.answer)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if distinct.len() < CANDIDATES {
        return Err(EvalError::TooFewAnswers(distinct.len()));
    }
    if n > positives.len() {
        return Err(EvalError::TooFewQuestions {
            requested: n,
            available: positives.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = rand::seq::index::sample(&mut rng, positives.len(), n);
    let mut items = Vec::with_capacity(n);
    for i in chosen.iter() {
        let pair = positives[i];
        let mut candidates: Vec<Vec<String>> = vec![pair.answer.clone()];
        while candidates.len() < CANDIDATES {
            let d = *distinct.choose(&mut rng).expect("non-empty");
            if !candidates.contains(d) {
                candidates.push(d.clone());
            }
        }
        candidates.shuffle(&mut rng);
        let correct_index = candidates
            .iter()
            .position(|c| *c == pair.answer)
            .expect("correct answer present");
        items.push(RankingItem {
            question: pair.question.clone(),
            candidates,
            correct_index,
        });
    }
    Ok(RankingTask { items, seed })
}

fn check_ranks(ranks: &[usize]) -> Result<(), EvalError> {
    if ranks.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    match ranks.iter().find(|&&r| r == 0) {
        Some(_) => Err(EvalError::InvalidRank(0)),
        None => Ok(()),
    }
}

/// Mean reciprocal rank of 1-based positions.
pub fn mrr(ranks: &[usize]) -> Result<f64, EvalError> {
    check_ranks(ranks)?;
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

/// Fraction of positions no worse than `k`.
pub fn precision_at_k(ranks: &[usize], k: usize) -> Result<f64, EvalError> {
    check_ranks(ranks)?;
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

/// 1-based position of the correct candidate when candidates are ordered by
/// descending score, ties by candidate index.
pub fn rank_of_correct(item: &RankingItem, scores: &[f64]) -> usize {
    let entries = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| (i as u32, s, String::new()))
        .collect();
    let r = rank(&item.question, Scorer::Tfidf, entries);
    1 + r
        .ranked
        .iter()
        .position(|e| e.id as usize == item.correct_index)
        .expect("correct candidate is ranked")
}

/// Ranks of the correct answer under any per-item scoring function.
pub fn ranks_with<F>(task: &RankingTask, mut score: F) -> Result<Vec<usize>, EvalError>
where
    F: FnMut(&RankingItem) -> Result<Vec<f64>, EvalError>,
{
    task.items
        .iter()
        .map(|item| Ok(rank_of_correct(item, &score(item)?)))
        .collect()
}

/// Dual-encoder match probabilities for one item's candidates.
pub fn dual_encoder_scores(item: &RankingItem, model: &DualEncoder) -> Result<Vec<f64>, EvalError> {
    let q = model.encode(Side::Question, &item.question)?;
    let answers = model.encode_many(Side::Answer, &item.candidates)?;
    Ok(model
        .score_embeddings(&q, &answers)?
        .into_iter()
        .map(f64::from)
        .collect())
}

/// tf-idf scores with an index fitted on the item's own candidates.
pub fn tfidf_item_scores(item: &RankingItem) -> Result<Vec<f64>, EvalError> {
    let index = tfidf_fit(&item.candidates)?;
    Ok(tfidf_scores(&item.question, &index))
}

/// One-sided paired bootstrap on per-item reciprocal-rank differences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub better: Scorer,
    pub baseline: Scorer,
    pub resamples: usize,
    pub seed: u64,
    /// Observed mean difference in reciprocal rank (better - baseline).
    pub mean_difference: f64,
    /// Share of resampled mean differences at or below zero, with add-one smoothing.
    pub p_value: f64,
}

pub const BOOTSTRAP_RESAMPLES: usize = 10_000;

pub fn paired_bootstrap(
    better: &[usize],
    baseline: &[usize],
    resamples: usize,
    seed: u64,
) -> Result<(f64, f64), EvalError> {
    check_ranks(better)?;
    check_ranks(baseline)?;
    if better.len() != baseline.len() || resamples == 0 {
        return Err(EvalError::EmptyInput);
    }
    let diffs: Vec<f64> = better
        .iter()
        .zip(baseline)
        .map(|(&a, &b)| 1.0 / a as f64 - 1.0 / b as f64)
        .collect();
    let n = diffs.len();
    let observed = diffs.iter().sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut not_better = 0usize;
    for _ in 0..resamples {
        let total: f64 = (0..n).map(|_| diffs[rng.random_range(0..n)]).sum();
        if total <= 0.0 {
            not_better += 1;
        }
    }
    Ok((observed, (not_better + 1) as f64 / (resamples + 1) as f64))
}

/// Scores the task with both scorers and tests whether the dual encoder's
/// reciprocal ranks beat tf-idf's.
pub fn run_ranking_eval(
    task: &RankingTask,
    model: &DualEncoder,
    bootstrap_seed: u64,
) -> Result<RankingSection, EvalError> {
    let dual = ranks_with(task, |item| dual_encoder_scores(item, model))?;
    let tfidf = ranks_with(task, tfidf_item_scores)?;
    let (mean_difference, p_value) =
        paired_bootstrap(&dual, &tfidf, BOOTSTRAP_RESAMPLES, bootstrap_seed)?;
    let mut scorers = BTreeMap::new();
    scorers.insert(Scorer::DualEncoder, ScorerMetrics::from_ranks(dual)?);
    scorers.insert(Scorer::Tfidf, ScorerMetrics::from_ranks(tfidf)?);
    Ok(RankingSection {
        n_items: task.items.len(),
        task_seed: task.seed,
        scorers,
        bootstrap: BootstrapResult {
            better: Scorer::DualEncoder,
            baseline: Scorer::Tfidf,
            resamples: BOOTSTRAP_RESAMPLES,
            seed: bootstrap_seed,
            mean_difference,
            p_value,
        },
    })
}
