//! Answer template pools: embed agent answers with the answer encoder,
//! cluster them, keep the answer nearest each center, then curate.

mod kmeans;

pub use kmeans::{
    assign, inertia_of, kmeans_pp_init, lloyd, lloyd_from, minibatch_kmeans, squared_distance,
    Clustering, KMeansConfig, Points,
};

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{extract_positive_pairs, Transcript};
use crate::encoder::{DualEncoder, EncoderError, Side};

/// Largest stored-vs-recomputed embedding difference a pool may carry.
pub const EMBEDDING_TOLERANCE: f64 = 1e-5;

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("{points} points cannot form {k} clusters")]
    TooFewPoints { points: usize, k: usize },
    #[error("fewer than {k} distinct points")]
    TooFewDistinct { k: usize },
    #[error("invalid k-means configuration: {0}")]
    InvalidConfig(String),
    #[error("Lloyd inertia rose at iteration {iteration}: {before} -> {after}")]
    InertiaIncreased {
        iteration: usize,
        before: f64,
        after: f64,
    },
    #[error("no answers to embed")]
    EmptyAnswers,
    #[error("unknown template id {0}")]
    UnknownTemplateId(u32),
    #[error("curation line {line}: {message}")]
    CurationSyntax { line: usize, message: String },
    #[error("template {0} would become active with empty text")]
    EmptyTemplate(u32),
    #[error("pool was built with model {pool}, but the loaded model is {model}")]
    ModelMismatch { pool: String, model: String },
    #[error("template {id} embedding differs from recomputation by {diff}")]
    EmbeddingDrift { id: u32, diff: f64 },
    #[error("duplicate template id {0}")]
    DuplicateId(u32),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

mod text_tokens {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(tokens: &[String], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&tokens.join(" "))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
        let s = String::deserialize(d)?;
        Ok(s.split_whitespace().map(str::to_string).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub id: u32,
    /// Normalized tokens; stored as one space-joined string.
    #[serde(with = "text_tokens")]
    pub text: Vec<String>,
    pub cluster_size: usize,
    pub active: bool,
    pub embedding: Vec<f32>,
}

impl Template {
    pub fn text_string(&self) -> String {
        self.text.join(" ")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplatePool {
    pub model_hash: String,
    pub k: usize,
    pub templates: Vec<Template>,
    /// Left unset by the pipeline so identical runs write identical files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created: Option<String>,
}

impl TemplatePool {
    pub fn active(&self) -> impl Iterator<Item = &Template> {
        self.templates.iter().filter(|t| t.active)
    }

    pub fn active_count(&self) -> usize {
        self.active().count()
    }

    pub fn get(&self, id: u32) -> Option<&Template> {
        self.templates.iter().find(|t| t.id == id)
    }

    pub fn check_ids(&self) -> Result<(), TemplateError> {
        let mut seen = BTreeSet::new();
        for t in &self.templates {
            if !seen.insert(t.id) {
                return Err(TemplateError::DuplicateId(t.id));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<Vec<u8>, TemplateError> {
        let mut out = serde_json::to_vec_pretty(self)?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, TemplateError> {
        let pool: Self = serde_json::from_slice(bytes)?;
        pool.check_ids()?;
        Ok(pool)
    }

    pub fn save(&self, path: &Path) -> Result<(), TemplateError> {
        crate::write_atomic(path, &self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        Self::from_json(&std::fs::read(path)?)
    }
}

/// Answer-encoder embeddings for a list of answers. Empty answers cannot be
/// encoded; they are left out and their input positions reported.
#[derive(Clone, Debug)]
pub struct EmbeddedAnswers {
    pub points: Points,
    /// Input index of each row of `points`.
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
}

pub fn embed_answers(
    answers: &[Vec<String>],
    model: &DualEncoder,
) -> Result<EmbeddedAnswers, TemplateError> {
    let (kept, dropped): (Vec<usize>, Vec<usize>) =
        (0..answers.len()).partition(|&i| !answers[i].is_empty());
    if kept.is_empty() {
        return Err(TemplateError::EmptyAnswers);
    }
    if !dropped.is_empty() {
        log::warn!("dropped {} empty answers before embedding", dropped.len());
    }
    let rows: Vec<Vec<String>> = kept.iter().map(|&i| answers[i].clone()).collect();
    let matrix = model.encode_many(Side::Answer, &rows)?;
    let data = matrix.data().iter().map(|&v| f64::from(v)).collect();
    Ok(EmbeddedAnswers {
        points: Points::new(model.hidden_dim(), data),
        kept,
        dropped,
    })
}

/// Up to `n` answers that directly follow a customer question, sampled
/// without replacement.
pub fn sample_answers(corpus: &[Transcript], n: usize, seed: u64) -> Vec<Vec<String>> {
    let all: Vec<Vec<String>> = corpus
        .iter()
        .flat_map(extract_positive_pairs)
        .map(|p| p.answer)
        .collect();
    if all.len() <= n {
        return all;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, all.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| all[i].clone()).collect()
}

/// For every non-empty cluster, the member closest to its center (lowest
/// index on ties). Returns the templates, numbered from 0 in cluster order,
/// and the ids of clusters that had no members.
pub fn select_representatives(
    points: &Points,
    texts: &[Vec<String>],
    centers: &Points,
    assignments: &[usize],
) -> (Vec<Template>, Vec<usize>) {
    let k = centers.len();
    let mut best: Vec<Option<(usize, f64)>> = vec![None; k];
    let mut sizes = vec![0usize; k];
    for (i, &c) in assignments.iter().enumerate() {
        sizes[c] += 1;
        let d = squared_distance(points.row(i), centers.row(c));
        match best[c] {
            Some((_, bd)) if bd <= d => {}
            _ => best[c] = Some((i, d)),
        }
    }
    let mut templates = Vec::new();
    let mut empty = Vec::new();
    for c in 0..k {
        match best[c] {
            Some((i, _)) => templates.push(Template {
                id: templates.len() as u32,
                text: texts[i].clone(),
                cluster_size: sizes[c],
                active: true,
                embedding: points.row(i).iter().map(|&v| v as f32).collect(),
            }),
            None => empty.push(c),
        }
    }
    if !empty.is_empty() {
        log::warn!("{} empty clusters skipped", empty.len());
    }
    (templates, empty)
}

/// Embeds, clusters and picks representatives for `answers`.
pub fn extract_templates(
    answers: &[Vec<String>],
    model: &DualEncoder,
    model_hash: &str,
    cfg: &KMeansConfig,
) -> Result<TemplatePool, TemplateError> {
    let embedded = embed_answers(answers, model)?;
    let clustering = minibatch_kmeans(&embedded.points, cfg)?;
    let texts: Vec<Vec<String>> = embedded.kept.iter().map(|&i| answers[i].clone()).collect();
    let (templates, _) = select_representatives(
        &embedded.points,
        &texts,
        &clustering.centers,
        &clustering.assignments,
    );
    log::info!(
        "{} templates from {} answers, inertia {:.4} after {} iterations",
        templates.len(),
        texts.len(),
        clustering.inertia,
        clustering.iterations
    );
    Ok(TemplatePool {
        model_hash: model_hash.to_string(),
        k: cfg.k,
        templates,
        created: None,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CurationDecision {
    Keep(u32),
    Drop(u32),
    Edit(u32, String),
}

/// Parses a curation file: `keep <id>`, `drop <id>` or
/// `edit <id>\t<new text>` per line; `#` starts a comment line.
pub fn parse_curation(text: &str) -> Result<Vec<CurationDecision>, TemplateError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |message: &str| TemplateError::CurationSyntax {
            line,
            message: message.to_string(),
        };
        let (verb, rest) = trimmed
            .split_once(char::is_whitespace)
            .ok_or_else(|| err("missing template id"))?;
        let rest = rest.trim_start();
        let parse_id = |s: &str| {
            s.trim()
                .parse::<u32>()
                .map_err(|_| err("template id must be a non-negative integer"))
        };
        out.push(match verb {
            "keep" => CurationDecision::Keep(parse_id(rest)?),
            "drop" => CurationDecision::Drop(parse_id(rest)?),
            "edit" => {
                let (id, new_text) = rest
                    .split_once('\t')
                    .ok_or_else(|| err("edit needs a tab before the new text"))?;
                CurationDecision::Edit(parse_id(id)?, new_text.trim().to_string())
            }
            other => return Err(err(&format!("unknown action {other:?}"))),
        });
    }
    Ok(out)
}

/// Applies curation decisions in order. Edited texts are normalized and
/// re-embedded with `model`, which must be the pool's model.
pub fn curate(
    pool: &TemplatePool,
    decisions: &[CurationDecision],
    model: &DualEncoder,
    model_hash: &str,
) -> Result<TemplatePool, TemplateError> {
    if pool.model_hash != model_hash {
        return Err(TemplateError::ModelMismatch {
            pool: pool.model_hash.clone(),
            model: model_hash.to_string(),
        });
    }
    let mut out = pool.clone();
    let index: HashMap<u32, usize> = out
        .templates
        .iter()
        .enumerate()
        .map(|(i, t)| (t.id, i))
        .collect();
    for d in decisions {
        let id = match d {
            CurationDecision::Keep(id)
            | CurationDecision::Drop(id)
            | CurationDecision::Edit(id, _) => *id,
        };
        let slot = *index.get(&id).ok_or(TemplateError::UnknownTemplateId(id))?;
        let t = &mut out.templates[slot];
        match d {
            CurationDecision::Keep(_) => {
                if t.text.is_empty() {
                    return Err(TemplateError::EmptyTemplate(id));
                }
                t.active = true;
            }
            CurationDecision::Drop(_) => t.active = false,
            CurationDecision::Edit(_, text) => {
                let tokens = crate::corpus::normalize_text(text);
                if tokens.is_empty() {
                    return Err(TemplateError::EmptyTemplate(id));
                }
                if tokens != t.text {
                    t.embedding = model.encode(Side::Answer, &tokens)?;
                    t.text = tokens;
                }
                t.active = true;
            }
        }
    }
    log::info!(
        "{} of {} templates active after curation",
        out.active_count(),
        out.templates.len()
    );
    Ok(out)
}

/// Recomputes every active embedding under `model` and returns the largest
/// absolute difference. Fails if the pool belongs to another model or any
/// difference exceeds [`EMBEDDING_TOLERANCE`].
pub fn verify_pool(
    pool: &TemplatePool,
    model: &DualEncoder,
    model_hash: &str,
) -> Result<f64, TemplateError> {
    if pool.model_hash != model_hash {
        return Err(TemplateError::ModelMismatch {
            pool: pool.model_hash.clone(),
            model: model_hash.to_string(),
        });
    }
    pool.check_ids()?;
    let mut worst = 0.0f64;
    for t in pool.active() {
        if t.text.is_empty() {
            return Err(TemplateError::EmptyTemplate(t.id));
        }
        let fresh = model.encode(Side::Answer, &t.text)?;
        if fresh.len() != t.embedding.len() {
            return Err(TemplateError::EmbeddingDrift {
                id: t.id,
                diff: f64::INFINITY,
            });
        }
        let diff = fresh
            .iter()
            .zip(&t.embedding)
            .map(|(a, b)| (f64::from(*a) - f64::from(*b)).abs())
            .fold(0.0, f64::max);
        if diff > EMBEDDING_TOLERANCE {
            return Err(TemplateError::EmbeddingDrift { id: t.id, diff });
        }
        worst = worst.max(diff);
    }
    Ok(worst)
}
