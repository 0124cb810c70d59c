use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::{Mutex, RwLock};

use replykit_core::corpus::normalize_text;
use replykit_core::encoder::{load_checkpoint, model_digest, DualEncoder};
use replykit_core::eval::{
    read_annotations, AnnotationStore, EvalError, EvalReport, RelevanceAnnotation,
};
use replykit_core::retrieval::{
    rank, tfidf_fit, tfidf_scores, top_k, PoolIndex, RankingResult, Scorer, TfidfIndex, MAX_K,
};
use replykit_core::templates::{verify_pool, TemplatePool};
use serde::{Deserialize, Serialize};

use crate::{ServiceConfig, ServiceError};

/// A loaded model with its template pool, indexed for both scorers.
#[derive(Debug)]
pub struct Engine {
    pub model: DualEncoder,
    pub model_hash: String,
    pub pool: TemplatePool,
    index: PoolIndex,
    tfidf: TfidfIndex,
}

impl Engine {
    /// Fails unless the pool was built from exactly this model.
    pub fn new(model: DualEncoder, pool: TemplatePool) -> Result<Self, ServiceError> {
        let model_hash = model_digest(&model);
        if pool.model_hash != model_hash {
            return Err(ServiceError::PoolMismatch {
                pool: pool.model_hash.clone(),
                model: model_hash,
            });
        }
        pool.check_ids()?;
        let drift = verify_pool(&pool, &model, &model_hash)?;
        log::info!("template embeddings match the model (max difference {drift:.2e})");
        let index = PoolIndex::new(&pool, &model_hash)?;
        let active: Vec<Vec<String>> = pool.active().map(|t| t.text.clone()).collect();
        let tfidf = tfidf_fit(&active)?;
        Ok(Self {
            model,
            model_hash,
            pool,
            index,
            tfidf,
        })
    }

    pub fn load(checkpoint: &Path, pool: &Path) -> Result<Self, ServiceError> {
        let model = load_checkpoint(checkpoint)?;
        let pool = TemplatePool::load(pool)?;
        Self::new(model, pool)
    }

    /// Top `k` active templates for an already normalized question.
    pub fn recommend(
        &self,
        question: &[String],
        scorer: Scorer,
        k: usize,
    ) -> Result<RankingResult, ServiceError> {
        let full = match scorer {
            Scorer::DualEncoder => self.index.score(question, &self.model)?,
            Scorer::Tfidf => {
                let entries = tfidf_scores(question, &self.tfidf)
                    .into_iter()
                    .zip(&self.index.ids)
                    .zip(&self.index.texts)
                    .map(|((s, &id), text)| (id, s, text.clone()))
                    .collect();
                rank(question, Scorer::Tfidf, entries)
            }
        };
        Ok(top_k(full, k)?)
    }
}

/// One issued recommendation, kept so later annotations can be tied to
/// the question and the scorer that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub qid: String,
    pub question: String,
    pub scorer: Scorer,
    /// Template ids in served order.
    pub ranked: Vec<u32>,
    pub ts: String,
}

/// Append-only session log. A trailing partial line from a crash is cut.
#[derive(Debug)]
struct SessionLog {
    file: File,
}

impl SessionLog {
    fn open(path: &Path) -> Result<(Self, Vec<Session>), ServiceError> {
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        let mut sessions = Vec::new();
        for (n, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            let s: Session = serde_json::from_slice(line).map_err(|e| {
                ServiceError::Config(format!("{} line {}: {e}", path.display(), n + 1))
            })?;
            sessions.push(s);
        }
        if complete < bytes.len() {
            log::warn!(
                "dropping {} bytes of an interrupted session log write",
                bytes.len() - complete
            );
            file.set_len(complete as u64)?;
        }
        Ok((Self { file }, sessions))
    }

    fn append(&mut self, s: &Session) -> Result<(), ServiceError> {
        let mut line = serde_json::to_vec(s)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        Ok(())
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
pub struct RecommendRequest {
    #[serde(default)]
    pub question: String,
    pub k: Option<i64>,
    pub scorer: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecommendedTemplate {
    pub id: u32,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecommendResponse {
    pub qid: String,
    /// Absent in evaluation mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scorer: Option<Scorer>,
    pub ranked: Vec<RecommendedTemplate>,
}

/// Annotation body. `rank` and `scorer` are filled from the session; if
/// given they must agree with it.
#[derive(Clone, Debug, Default, Deserialize)]
pub struct AnnotationRequest {
    #[serde(default)]
    pub qid: String,
    pub tid: i64,
    pub score: i64,
    #[serde(default)]
    pub annotator: String,
    pub rank: Option<i64>,
    pub scorer: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationReceipt {
    pub qid: String,
    pub tid: u32,
    pub rank: u8,
    pub score: u8,
    pub annotator: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateListing {
    pub model_hash: String,
    pub active: usize,
    pub templates: Vec<ListedTemplate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ListedTemplate {
    pub id: u32,
    pub text: String,
    pub cluster_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub model_loaded: bool,
    pub model_hash: Option<String>,
    pub active_templates: usize,
    pub annotations: usize,
    pub eval_mode: bool,
}

/// Shared state behind the HTTP handlers. Scoring only reads; annotation
/// and session writes each go through one lock.
#[derive(Debug)]
pub struct AppState {
    pub config: ServiceConfig,
    engine: Option<Engine>,
    sessions: RwLock<HashMap<String, Session>>,
    session_log: Mutex<SessionLog>,
    store: Mutex<AnnotationStore>,
    /// Requests seen per normalized question in evaluation mode.
    served: Mutex<HashMap<Vec<String>, (usize, usize)>>,
}

fn now_rfc3339() -> String {
    time::OffsetDateTime::now_utc()
        .replace_nanosecond(0)
        .expect("zero nanoseconds is valid")
        .format(&time::format_description::well_known::Rfc3339)
        .expect("RFC 3339 formatting")
}

impl AppState {
    /// Loads the model and pool named in `config` and opens the stores.
    pub fn open(config: ServiceConfig) -> Result<Self, ServiceError> {
        config.validate()?;
        let engine = match (&config.checkpoint, &config.pool) {
            (Some(c), Some(p)) => Some(Engine::load(c, p)?),
            _ => None,
        };
        Self::with_engine(config, engine)
    }

    pub fn with_engine(
        config: ServiceConfig,
        engine: Option<Engine>,
    ) -> Result<Self, ServiceError> {
        config.validate()?;
        let (store, info) = AnnotationStore::open(&config.annotations)?;
        if info.quarantined_bytes > 0 {
            log::warn!(
                "moved {} bytes of an interrupted write to {}",
                info.quarantined_bytes,
                AnnotationStore::quarantine_path(&config.annotations).display()
            );
        }
        let (log, previous) = SessionLog::open(&config.sessions)?;
        log::info!(
            "{} annotations and {} sessions on record",
            info.records,
            previous.len()
        );
        Ok(Self {
            sessions: RwLock::new(previous.into_iter().map(|s| (s.qid.clone(), s)).collect()),
            session_log: Mutex::new(log),
            store: Mutex::new(store),
            served: Mutex::new(HashMap::new()),
            engine,
            config,
        })
    }

    pub fn engine(&self) -> Option<&Engine> {
        self.engine.as_ref()
    }

    pub fn session(&self, qid: &str) -> Option<Session> {
        self.sessions
            .read()
            .expect("session lock")
            .get(qid)
            .cloned()
    }

    fn pick_scorer(&self, question: &[String], qid: &uuid::Uuid) -> Scorer {
        let mut served = self.served.lock().expect("served lock");
        let entry = served
            .entry(question.to_vec())
            .or_insert_with(|| (usize::from(qid.as_bytes()[0] & 1), 0));
        let scorer = Scorer::ALL[(entry.0 + entry.1) % Scorer::ALL.len()];
        entry.1 += 1;
        scorer
    }

    pub fn recommend(&self, req: RecommendRequest) -> Result<RecommendResponse, ServiceError> {
        if req.question.chars().count() > self.config.max_question_chars {
            return Err(ServiceError::BadRequest(format!(
                "question longer than {} characters",
                self.config.max_question_chars
            )));
        }
        let tokens = normalize_text(&req.question);
        if tokens.is_empty() {
            return Err(ServiceError::BadRequest("question is empty".into()));
        }
        let k = match req.k {
            None => self.config.top_k,
            Some(k) if (1..=MAX_K as i64).contains(&k) => k as usize,
            Some(k) => {
                return Err(ServiceError::BadRequest(format!(
                    "k must be in 1..={MAX_K}, got {k}"
                )))
            }
        };
        let requested = req
            .scorer
            .as_deref()
            .map(str::parse::<Scorer>)
            .transpose()
            .map_err(ServiceError::BadRequest)?;
        let engine = self.engine.as_ref().ok_or(ServiceError::ModelNotLoaded)?;
        let id = uuid::Uuid::new_v4();
        let scorer = if self.config.eval_mode {
            self.pick_scorer(&tokens, &id)
        } else {
            requested.unwrap_or(Scorer::DualEncoder)
        };
        let result = engine.recommend(&tokens, scorer, k)?;
        let session = Session {
            qid: id.simple().to_string(),
            question: req.question,
            scorer,
            ranked: result.ranked.iter().map(|r| r.id).collect(),
            ts: now_rfc3339(),
        };
        self.session_log
            .lock()
            .expect("session log lock")
            .append(&session)?;
        self.sessions
            .write()
            .expect("session lock")
            .insert(session.qid.clone(), session.clone());
        let blind = self.config.eval_mode;
        Ok(RecommendResponse {
            qid: session.qid,
            scorer: (!blind).then_some(scorer),
            ranked: result
                .ranked
                .into_iter()
                .map(|r| RecommendedTemplate {
                    id: r.id,
                    text: r.text,
                    score: (!blind).then_some(r.score),
                })
                .collect(),
        })
    }

    pub fn annotate(&self, req: AnnotationRequest) -> Result<AnnotationReceipt, ServiceError> {
        if !(1..=3).contains(&req.score) {
            return Err(ServiceError::Unprocessable(format!(
                "score must be 1, 2 or 3, got {}",
                req.score
            )));
        }
        if req.annotator.trim().is_empty() {
            return Err(ServiceError::Unprocessable("annotator is required".into()));
        }
        let session = self
            .session(&req.qid)
            .ok_or_else(|| ServiceError::NotFound(format!("unknown qid {:?}", req.qid)))?;
        let position = u32::try_from(req.tid)
            .ok()
            .and_then(|tid| session.ranked.iter().position(|&t| t == tid))
            .ok_or_else(|| {
                ServiceError::NotFound(format!(
                    "template {} was not served for qid {}",
                    req.tid, req.qid
                ))
            })?;
        let rank = position + 1;
        if req.rank.is_some_and(|r| r != rank as i64) {
            return Err(ServiceError::Unprocessable(format!(
                "template {} was served at rank {rank}",
                req.tid
            )));
        }
        if let Some(s) = &req.scorer {
            if s.parse::<Scorer>().ok() != Some(session.scorer) {
                return Err(ServiceError::Unprocessable(
                    "scorer does not match the session".into(),
                ));
            }
        }
        let annotation = RelevanceAnnotation {
            qid: session.qid,
            tid: req.tid as u32,
            rank: rank as u8,
            score: req.score as u8,
            annotator: req.annotator.trim().to_string(),
            scorer: session.scorer,
            ts: now_rfc3339(),
        };
        let receipt = AnnotationReceipt {
            qid: annotation.qid.clone(),
            tid: annotation.tid,
            rank: annotation.rank,
            score: annotation.score,
            annotator: annotation.annotator.clone(),
        };
        self.store.lock().expect("store lock").append(annotation)?;
        Ok(receipt)
    }

    /// Aggregates a snapshot of the store file.
    pub fn report(&self) -> Result<EvalReport, ServiceError> {
        let records = read_annotations(&self.config.annotations)?;
        Ok(EvalReport::from_annotations(&records)?)
    }

    pub fn templates(&self) -> Result<TemplateListing, ServiceError> {
        let engine = self.engine.as_ref().ok_or(ServiceError::ModelNotLoaded)?;
        let templates: Vec<ListedTemplate> = engine
            .pool
            .active()
            .map(|t| ListedTemplate {
                id: t.id,
                text: t.text_string(),
                cluster_size: t.cluster_size,
            })
            .collect();
        Ok(TemplateListing {
            model_hash: engine.model_hash.clone(),
            active: templates.len(),
            templates,
        })
    }

    pub fn health(&self) -> Health {
        Health {
            model_loaded: self.engine.is_some(),
            model_hash: self.engine.as_ref().map(|e| e.model_hash.clone()),
            active_templates: self.engine.as_ref().map_or(0, |e| e.pool.active_count()),
            annotations: self.store.lock().expect("store lock").records().len(),
            eval_mode: self.config.eval_mode,
        }
    }
}

impl From<EvalError> for ServiceError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Duplicate { .. } => ServiceError::Conflict(e.to_string()),
            EvalError::InvalidAnnotation(m) => ServiceError::Unprocessable(m),
            other => ServiceError::Eval(other),
        }
    }
}
