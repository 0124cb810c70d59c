use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{mrr, precision_at_k, BootstrapResult, EvalError, RelevanceAnnotation};
use crate::retrieval::Scorer;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const HIST_FILE: &str = "relevance_hist.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorerMetrics {
    pub mrr: f64,
    pub precision_at_3: f64,
    /// Share of items whose correct answer ranks first.
    pub accuracy: f64,
    /// 1-based rank of the correct answer per item, in task order.
    pub ranks: Vec<usize>,
}

impl ScorerMetrics {
    pub fn from_ranks(ranks: Vec<usize>) -> Result<Self, EvalError> {
        Ok(Self {
            mrr: mrr(&ranks)?,
            precision_at_3: precision_at_k(&ranks, 3)?,
            accuracy: precision_at_k(&ranks, 1)?,
            ranks,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingSection {
    pub n_items: usize,
    pub task_seed: u64,
    pub scorers: BTreeMap<Scorer, ScorerMetrics>,
    pub bootstrap: BootstrapResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelevanceSummary {
    pub n_annotations: usize,
    pub mean: f64,
    /// 1.96 · sample standard deviation / √n.
    pub ci_half_width: f64,
    /// Counts of scores 1, 2 and 3.
    pub histogram: [usize; 3],
    pub n_questions: usize,
    /// Questions with at least one score-3 answer in the top 3.
    pub n_with_very_relevant: usize,
}

pub fn aggregate_relevance(
    annotations: &[RelevanceAnnotation],
) -> Result<RelevanceSummary, EvalError> {
    if annotations.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    for a in annotations {
        a.validate()?;
    }
    let n = annotations.len() as f64;
    let mean = annotations.iter().map(|a| f64::from(a.score)).sum::<f64>() / n;
    let ci_half_width = if annotations.len() < 2 {
        0.0
    } else {
        let var = annotations
            .iter()
            .map(|a| (f64::from(a.score) - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        1.96 * var.sqrt() / n.sqrt()
    };
    let mut histogram = [0usize; 3];
    for a in annotations {
        histogram[usize::from(a.score) - 1] += 1;
    }
    let questions: BTreeSet<&str> = annotations.iter().map(|a| a.qid.as_str()).collect();
    let very: BTreeSet<&str> = annotations
        .iter()
        .filter(|a| a.score == 3 && a.rank <= 3)
        .map(|a| a.qid.as_str())
        .collect();
    Ok(RelevanceSummary {
        n_annotations: annotations.len(),
        mean,
        ci_half_width,
        histogram,
        n_questions: questions.len(),
        n_with_very_relevant: very.len(),
    })
}

/// One summary per scorer present in `annotations`.
pub fn aggregate_by_scorer(
    annotations: &[RelevanceAnnotation],
) -> Result<BTreeMap<Scorer, RelevanceSummary>, EvalError> {
    let mut groups: BTreeMap<Scorer, Vec<RelevanceAnnotation>> = BTreeMap::new();
    for a in annotations {
        groups.entry(a.scorer).or_default().push(a.clone());
    }
    groups
        .into_iter()
        .map(|(s, group)| Ok((s, aggregate_relevance(&group)?)))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranking: Option<RankingSection>,
    #[serde(default)]
    pub relevance: BTreeMap<Scorer, RelevanceSummary>,
}

impl EvalReport {
    pub fn from_annotations(annotations: &[RelevanceAnnotation]) -> Result<Self, EvalError> {
        Ok(Self {
            ranking: None,
            relevance: aggregate_by_scorer(annotations)?,
        })
    }

    pub fn to_json(&self) -> Result<Vec<u8>, EvalError> {
        let mut out = serde_json::to_vec_pretty(self)?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, EvalError> {
        Ok(serde_json::from_slice(bytes)?)
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("scorer,score,count\n");
        for (scorer, s) in &self.relevance {
            for (i, count) in s.histogram.iter().enumerate() {
                let _ = writeln!(out, "{scorer},{},{count}", i + 1);
            }
        }
        out
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        if let Some(r) = &self.ranking {
            let _ = writeln!(
                out,
                "Ranking task: {} items, 1 correct + 9 distractors (seed {})",
                r.n_items, r.task_seed
            );
            let _ = writeln!(out, "{:<14}{:>8}{:>8}{:>8}", "scorer", "MRR", "P@3", "P@1");
            for (scorer, m) in &r.scorers {
                let _ = writeln!(
                    out,
                    "{:<14}{:>8.4}{:>7.1}%{:>7.1}%",
                    scorer.as_str(),
                    m.mrr,
                    100.0 * m.precision_at_3,
                    100.0 * m.accuracy
                );
            }
            let b = &r.bootstrap;
            let _ = writeln!(
                out,
                "paired bootstrap ({} resamples): {} - {} reciprocal rank = {:+.4}, p = {:.4}",
                b.resamples, b.better, b.baseline, b.mean_difference, b.p_value
            );
            out.push('\n');
        }
        if self.relevance.is_empty() {
            out.push_str("Relevance: no annotations yet\n");
        } else {
            let _ = writeln!(
                out,
                "{:<14}{:>6}{:>16}{:>6}{:>6}{:>6}{:>12}",
                "scorer", "n", "mean (95% CI)", "1", "2", "3", "very rel."
            );
            for (scorer, s) in &self.relevance {
                let _ = writeln!(
                    out,
                    "{:<14}{:>6}{:>9.2} ± {:<4.2}{:>6}{:>6}{:>6}{:>6}/{}",
                    scorer.as_str(),
                    s.n_annotations,
                    s.mean,
                    s.ci_half_width,
                    s.histogram[0],
                    s.histogram[1],
                    s.histogram[2],
                    s.n_with_very_relevant,
                    s.n_questions
                );
            }
        }
        out
    }
}

/// Writes report.json, report.txt and relevance_hist.csv into `dir`.
pub fn emit_report(report: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    std::fs::create_dir_all(dir)?;
    let files = [
        (REPORT_JSON, report.to_json()?),
        (REPORT_TXT, report.render_text().into_bytes()),
        (HIST_FILE, report.histogram_csv().into_bytes()),
    ];
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        crate::write_atomic(&path, &bytes)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(qid: &str, tid: u32, rank: u8, score: u8, scorer: Scorer) -> RelevanceAnnotation {
        RelevanceAnnotation {
            qid: qid.into(),
            tid,
            rank,
            score,
            annotator: "a".into(),
            scorer,
            ts: "2024-01-01T00:00:00Z".into(),
        }
    }

    fn scores(s: &[u8]) -> Vec<RelevanceAnnotation> {
        s.iter()
            .enumerate()
            .map(|(i, &v)| ann("q", i as u32, 1, v, Scorer::Tfidf))
            .collect()
    }

    #[test]
    fn relevance_examples() {
        assert_eq!(
            aggregate_relevance(&scores(&[3, 3, 1, 1])).unwrap().mean,
            2.0
        );
        let s = aggregate_relevance(&scores(&[1, 2, 3])).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.ci_half_width - 1.96 / 3f64.sqrt()).abs() < 1e-12);
        assert!((s.ci_half_width - 1.1316).abs() < 1e-4);
        assert_eq!(s.histogram, [1, 1, 1]);
        assert_eq!(
            aggregate_relevance(&scores(&[2, 2, 2]))
                .unwrap()
                .ci_half_width,
            0.0
        );
        assert!(matches!(
            aggregate_relevance(&[]),
            Err(EvalError::EmptyInput)
        ));
    }

    #[test]
    fn very_relevant_counts_questions() {
        let a = vec![
            ann("q1", 1, 1, 3, Scorer::DualEncoder),
            ann("q1", 2, 2, 3, Scorer::DualEncoder),
            ann("q2", 1, 3, 2, Scorer::DualEncoder),
            ann("q3", 4, 3, 3, Scorer::DualEncoder),
            ann("q3", 5, 1, 1, Scorer::Tfidf),
        ];
        let by = aggregate_by_scorer(&a).unwrap();
        assert_eq!(by[&Scorer::DualEncoder].n_with_very_relevant, 2);
        assert_eq!(by[&Scorer::DualEncoder].n_questions, 3);
        assert_eq!(by[&Scorer::Tfidf].n_with_very_relevant, 0);
    }

    #[test]
    fn csv_and_text() {
        let a = vec![
            ann("q1", 1, 1, 3, Scorer::DualEncoder),
            ann("q1", 2, 1, 1, Scorer::Tfidf),
        ];
        let r = EvalReport::from_annotations(&a).unwrap();
        assert_eq!(
            r.histogram_csv(),
            "scorer,score,count\ndual_encoder,1,0\ndual_encoder,2,0\ndual_encoder,3,1\ntfidf,1,1\ntfidf,2,0\ntfidf,3,0\n"
        );
        assert!(r.render_text().contains("dual_encoder"));
        assert!(EvalReport::default()
            .render_text()
            .contains("no annotations yet"));
    }
}
