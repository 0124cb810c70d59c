//! Chat transcripts, weakly labeled question/answer pair mining, negative
//! sampling and dataset splitting.

mod normalize;
mod synth;

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use normalize::{normalize_text, PLACEHOLDERS};
pub use synth::{
    generate_synthetic_corpus, intent_families, intent_of, IntentFamily, SYNTH_INTENT_NAMES,
};

pub type Tokens = Vec<String>;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("answer bank needs at least 2 distinct answers, found {0}")]
    BankTooSmall(usize),
    #[error("negative ratio must be positive and finite, got {0}")]
    InvalidRatio(f64),
    #[error("dev fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("duplicate transcript id {0:?}")]
    DuplicateTranscriptId(String),
    #[error("invalid synthetic corpus spec: {0}")]
    InvalidSpec(String),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Customer,
    Agent,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Turn {
    pub speaker: Speaker,
    pub tokens: Tokens,
    /// Position among the transcript's non-empty turns.
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transcript {
    pub id: String,
    pub turns: Vec<Turn>,
}

/// On-disk transcript line: `{"id": .., "turns": [{"speaker": .., "text": ..}]}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTranscript {
    pub id: String,
    pub turns: Vec<RawTurn>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTurn {
    pub speaker: Speaker,
    pub text: String,
}

impl Transcript {
    /// Normalizes every turn; turns that normalize to nothing are dropped
    /// and the survivors are re-indexed from 0.
    pub fn from_raw(raw: &RawTranscript) -> Self {
        let turns = raw
            .turns
            .iter()
            .map(|t| (t.speaker, normalize_text(&t.text)))
            .filter(|(_, tokens)| !tokens.is_empty())
            .enumerate()
            .map(|(index, (speaker, tokens))| Turn {
                speaker,
                tokens,
                index,
            })
            .collect();
        Self {
            id: raw.id.clone(),
            turns,
        }
    }

    pub fn to_raw(&self) -> RawTranscript {
        RawTranscript {
            id: self.id.clone(),
            turns: self
                .turns
                .iter()
                .map(|t| RawTurn {
                    speaker: t.speaker,
                    text: t.tokens.join(" "),
                })
                .collect(),
        }
    }
}

/// Where a pair's answer came from.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum AnswerOrigin {
    /// The agent turn following the question in the same transcript.
    Turn { transcript: String, index: usize },
    /// An entry of the answer bank used for negative sampling.
    Bank(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SourceIds {
    pub transcript: String,
    pub question_index: usize,
    pub answer: AnswerOrigin,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct QaPair {
    pub question: Tokens,
    pub answer: Tokens,
    /// 1 = matching, 0 = non-matching.
    pub label: u8,
    pub source: Option<SourceIds>,
}

/// Dataset file line: `{"q": [..], "a": [..], "label": 0|1}`. The optional
/// `split` tag lets train and dev pairs share one stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub q: Tokens,
    pub a: Tokens,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
}

impl QaPair {
    pub fn to_record(&self, split: Option<Split>) -> DatasetRecord {
        DatasetRecord {
            q: self.question.clone(),
            a: self.answer.clone(),
            label: self.label,
            split,
        }
    }

    pub fn from_record(r: DatasetRecord) -> Self {
        Self {
            question: r.q,
            answer: r.a,
            label: r.label,
            source: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<QaPair>,
    pub dev: Vec<QaPair>,
    pub seed: u64,
    pub neg_ratio: f64,
}

/// One positive pair per customer turn ending in `?` that is immediately
/// followed by an agent turn.
pub fn extract_positive_pairs(t: &Transcript) -> Vec<QaPair> {
    t.turns
        .windows(2)
        .filter(|w| {
            w[0].speaker == Speaker::Customer
                && w[1].speaker == Speaker::Agent
                && w[0].tokens.last().is_some_and(|tok| tok == "?")
        })
        .map(|w| QaPair {
            question: w[0].tokens.clone(),
            answer: w[1].tokens.clone(),
            label: 1,
            source: Some(SourceIds {
                transcript: t.id.clone(),
                question_index: w[0].index,
                answer: AnswerOrigin::Turn {
                    transcript: t.id.clone(),
                    index: w[1].index,
                },
            }),
        })
        .collect()
}

/// Pairs each positive question with answers drawn uniformly from
/// `answer_bank`, never reusing the question's own answer text.
///
/// The total number of negatives is `round(ratio * positives)`: every
/// question gets `floor(ratio)` and the fractional remainder is spread over
/// a seeded subset, so integer ratios give exactly `ratio` per question.
/// Draws are without replacement per question when enough eligible answers
/// exist.
pub fn sample_negatives(
    positives: &[QaPair],
    answer_bank: &[Tokens],
    ratio: f64,
    seed: u64,
) -> Result<Vec<QaPair>, CorpusError> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(CorpusError::InvalidRatio(ratio));
    }
    let mut text_counts: HashMap<&[String], usize> = HashMap::new();
    for a in answer_bank {
        *text_counts.entry(a.as_slice()).or_default() += 1;
    }
    if text_counts.len() < 2 {
        return Err(CorpusError::BankTooSmall(text_counts.len()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = ratio.floor() as usize;
    let total = (ratio * positives.len() as f64).round() as usize;
    let extra = total.saturating_sub(base * positives.len());
    let mut bonus = vec![false; positives.len()];
    let mut order: Vec<usize> = (0..positives.len()).collect();
    order.shuffle(&mut rng);
    for &i in order.iter().take(extra) {
        bonus[i] = true;
    }

    let mut out = Vec::with_capacity(total);
    for (pos, &has_bonus) in positives.iter().zip(&bonus) {
        let want = base + usize::from(has_bonus);
        if want == 0 {
            continue;
        }
        let own = pos.answer.as_slice();
        let eligible = answer_bank.len() - text_counts.get(own).copied().unwrap_or(0);
        let picks: Vec<usize> = if eligible * 4 < answer_bank.len() {
            let mut pool: Vec<usize> = (0..answer_bank.len())
                .filter(|&i| answer_bank[i] != own)
                .collect();
            if pool.len() >= want {
                let (head, _) = pool.partial_shuffle(&mut rng, want);
                head.to_vec()
            } else {
                (0..want)
                    .map(|_| pool[rng.random_range(0..pool.len())])
                    .collect()
            }
        } else {
            let mut chosen = Vec::with_capacity(want);
            let mut seen = HashSet::new();
            let unique = eligible >= want;
            while chosen.len() < want {
                let i = rng.random_range(0..answer_bank.len());
                if answer_bank[i] == own || (unique && !seen.insert(i)) {
                    continue;
                }
                chosen.push(i);
            }
            chosen
        };
        for i in picks {
            out.push(QaPair {
                question: pos.question.clone(),
                answer: answer_bank[i].clone(),
                label: 0,
                source: pos.source.as_ref().map(|s| SourceIds {
                    transcript: s.transcript.clone(),
                    question_index: s.question_index,
                    answer: AnswerOrigin::Bank(i),
                }),
            });
        }
    }
    Ok(out)
}

/// Splits transcripts into train and dev, then mines positives and samples
/// negatives independently inside each split.
pub fn build_dataset(
    corpus: &[Transcript],
    neg_ratio: f64,
    dev_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(CorpusError::InvalidFraction(dev_fraction));
    }
    if !(neg_ratio > 0.0 && neg_ratio.is_finite()) {
        return Err(CorpusError::InvalidRatio(neg_ratio));
    }
    let mut ids = HashSet::new();
    for t in corpus {
        if !ids.insert(t.id.as_str()) {
            return Err(CorpusError::DuplicateTranscriptId(t.id.clone()));
        }
    }

    let n = corpus.len();
    let n_dev = if n < 2 {
        0
    } else {
        ((n as f64 * dev_fraction).round() as usize).clamp(1, n - 1)
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let (dev_idx, train_idx) = order.split_at(n_dev);
    let mut dev_idx = dev_idx.to_vec();
    let mut train_idx = train_idx.to_vec();
    dev_idx.sort_unstable();
    train_idx.sort_unstable();

    let build = |idx: &[usize], salt: u64| -> Result<Vec<QaPair>, CorpusError> {
        let positives: Vec<QaPair> = idx
            .iter()
            .flat_map(|&i| extract_positive_pairs(&corpus[i]))
            .collect();
        if positives.is_empty() {
            return Ok(positives);
        }
        let bank: Vec<Tokens> = positives.iter().map(|p| p.answer.clone()).collect();
        let negatives = sample_negatives(&positives, &bank, neg_ratio, seed ^ salt)?;
        let mut all = positives;
        all.extend(negatives);
        Ok(all)
    };
    Ok(DatasetSplit {
        train: build(&train_idx, 0x7472_6169_6e00_0001)?,
        dev: build(&dev_idx, 0x6465_7600_0000_0002)?,
        seed,
        neg_ratio,
    })
}

pub fn read_transcripts(reader: impl BufRead) -> Result<Vec<Transcript>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawTranscript =
            serde_json::from_str(&line).map_err(|source| CorpusError::Parse {
                line: i + 1,
                source,
            })?;
        out.push(Transcript::from_raw(&raw));
    }
    Ok(out)
}

pub fn write_transcripts(mut writer: impl Write, corpus: &[Transcript]) -> Result<(), CorpusError> {
    for t in corpus {
        serde_json::to_writer(&mut writer, &t.to_raw()).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_dataset(reader: impl BufRead) -> Result<Vec<DatasetRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| CorpusError::Parse {
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}

pub fn write_dataset(
    mut writer: impl Write,
    pairs: &[QaPair],
    split: Option<Split>,
) -> Result<(), CorpusError> {
    for p in pairs {
        serde_json::to_writer(&mut writer, &p.to_record(split)).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Label ratio negatives : positives.
pub fn negative_ratio(pairs: &[QaPair]) -> f64 {
    let pos = pairs.iter().filter(|p| p.label == 1).count();
    let neg = pairs.len() - pos;
    if pos == 0 {
        return f64::INFINITY;
    }
    neg as f64 / pos as f64
}
