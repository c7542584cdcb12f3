//! Retrieval runs and evaluation metrics.
//!
//! A run records the top-ranked hits for one question under one instruction
//! group. Scenario 1 evaluates every question under the all-sources
//! instruction; scenario 2 re-runs each question under the instruction of
//! every type for which it has at least one relevant evidence, and reports
//! whether the top ranks contain a relevant hit *of that type*.
//! All metrics are percentages rounded to two decimals.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{label_relevance, EvidenceRecord, KnowledgeType, QuestionRecord};
use crate::error::{Error, Result};
use crate::instructions::InstructionGroup;
use crate::textproc::bm25::Bm25Index;
use crate::textproc::tokenize;

/// Ranking depth for recorded runs and the rank-sensitive metrics.
pub const EVAL_DEPTH: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitEntry {
    pub id: i64,
    pub score: f64,
    pub relevant: bool,
    #[serde(rename = "type")]
    pub etype: KnowledgeType,
}

/// Hits are stored best-first; the position in `hits` is the rank minus one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub question_id: i64,
    pub group: InstructionGroup,
    pub hits: Vec<HitEntry>,
}

impl RunResult {
    fn first_relevant_rank(&self, depth: usize) -> Option<usize> {
        self.hits.iter().take(depth).position(|h| h.relevant).map(|p| p + 1)
    }

    fn has_relevant_of_type(&self, t: KnowledgeType, depth: usize) -> bool {
        self.hits.iter().take(depth).any(|h| h.relevant && h.etype == t)
    }
}

/// Round to two decimals, half away from zero.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Share of runs with a relevant hit at rank <= k, as a percentage.
pub fn hit_at_k(runs: &[&RunResult], k: usize) -> f64 {
    let n = runs.iter().filter(|r| r.first_relevant_rank(k).is_some()).count();
    percent(n, runs.len())
}

/// Mean reciprocal rank of the first relevant hit within [`EVAL_DEPTH`],
/// scaled to a percentage.
pub fn mrr_at_100(runs: &[&RunResult]) -> f64 {
    if runs.is_empty() {
        return 0.0;
    }
    let sum: f64 = runs
        .iter()
        .map(|r| r.first_relevant_rank(EVAL_DEPTH).map_or(0.0, |rank| 1.0 / rank as f64))
        .sum();
    100.0 * sum / runs.len() as f64
}

/// Share of runs with a relevant hit *of type `t`* within [`EVAL_DEPTH`].
pub fn type_hit_at_100(runs: &[&RunResult], t: KnowledgeType) -> f64 {
    let n = runs.iter().filter(|r| r.has_relevant_of_type(t, EVAL_DEPTH)).count();
    percent(n, runs.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOneReport {
    pub questions: usize,
    pub hit_at_5: f64,
    pub hit_at_10: f64,
    pub hit_at_100: f64,
    pub mrr_at_100: f64,
}

/// One knowledge type's scenario-2 slice: only questions with at least one
/// relevant evidence of the type count, and the typed instruction run is
/// compared against the same questions' all-sources runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeScenarioReport {
    pub questions: usize,
    pub type_hit_at_100: f64,
    pub type_hit_at_100_under_all: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scenario1: ScenarioOneReport,
    pub scenario2: BTreeMap<String, TypeScenarioReport>,
}

/// Which types each question is eligible for in scenario 2 (has at least
/// one relevant evidence of that type in the corpus), keyed by question id.
pub type Eligibility = BTreeMap<i64, [bool; 4]>;

/// Compute eligibility from ground truth: relevance per (question, evidence).
pub fn compute_eligibility(
    corpus: &[EvidenceRecord],
    questions: &[QuestionRecord],
    text_fallback: bool,
) -> Eligibility {
    let mut out = Eligibility::new();
    for q in questions {
        let mut flags = [false; 4];
        for e in corpus {
            if crate::corpus::label_relevance_with(q, e, text_fallback) {
                flags[e.etype.index()] = true;
            }
        }
        out.insert(q.question_id, flags);
    }
    out
}

/// Assemble the metric report from recorded runs. Expects exactly one
/// all-sources run per question and one typed run per eligible
/// (question, type) pair.
pub fn build_report(runs: &[RunResult], eligibility: &Eligibility) -> Result<MetricReport> {
    let all_runs: Vec<&RunResult> =
        runs.iter().filter(|r| r.group == InstructionGroup::All).collect();
    if all_runs.is_empty() {
        return Err(Error::validation("no all-sources runs to evaluate".to_owned()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for r in &all_runs {
        if !seen.insert(r.question_id) {
            return Err(Error::validation(format!(
                "question {} has more than one all-sources run",
                r.question_id
            )));
        }
    }
    let scenario1 = ScenarioOneReport {
        questions: all_runs.len(),
        hit_at_5: round2(hit_at_k(&all_runs, 5)),
        hit_at_10: round2(hit_at_k(&all_runs, 10)),
        hit_at_100: round2(hit_at_k(&all_runs, EVAL_DEPTH)),
        mrr_at_100: round2(mrr_at_100(&all_runs)),
    };

    let mut scenario2 = BTreeMap::new();
    for &t in &KnowledgeType::ALL {
        let eligible: std::collections::BTreeSet<i64> = eligibility
            .iter()
            .filter(|(_, flags)| flags[t.index()])
            .map(|(&qid, _)| qid)
            .collect();
        let typed: Vec<&RunResult> = runs
            .iter()
            .filter(|r| r.group == InstructionGroup::for_type(t))
            .collect();
        for r in &typed {
            if !eligible.contains(&r.question_id) {
                return Err(Error::validation(format!(
                    "question {} has a {} run but no relevant {} evidence",
                    r.question_id,
                    InstructionGroup::for_type(t).name(),
                    t.label()
                )));
            }
        }
        let baseline: Vec<&RunResult> = all_runs
            .iter()
            .filter(|r| eligible.contains(&r.question_id))
            .copied()
            .collect();
        scenario2.insert(
            t.wire().to_owned(),
            TypeScenarioReport {
                questions: typed.len(),
                type_hit_at_100: round2(type_hit_at_100(&typed, t)),
                type_hit_at_100_under_all: round2(type_hit_at_100(&baseline, t)),
            },
        );
    }
    Ok(MetricReport { scenario1, scenario2 })
}

/// BM25 scenario-1 runs over the raw question text (no instruction prefix;
/// a lexical scorer only sees the template words as noise).
pub fn bm25_runs(
    bm25: &Bm25Index,
    corpus: &[EvidenceRecord],
    questions: &[QuestionRecord],
    text_fallback: bool,
) -> Result<Vec<RunResult>> {
    questions
        .iter()
        .map(|q| {
            let terms = tokenize(&q.text);
            let top = bm25.top_k(&terms, EVAL_DEPTH);
            let hits = top
                .into_iter()
                .map(|(id, score)| {
                    let e = corpus.get(id as usize).ok_or_else(|| {
                        Error::runtime(format!("scored evidence id {id} is not in the corpus"))
                    })?;
                    Ok(HitEntry {
                        id,
                        score,
                        relevant: crate::corpus::label_relevance_with(q, e, text_fallback),
                        etype: e.etype,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(RunResult { question_id: q.question_id, group: InstructionGroup::All, hits })
        })
        .collect()
}

/// Convenience for tests and callers with default relevance settings.
pub fn relevance_of(q: &QuestionRecord, e: &EvidenceRecord) -> bool {
    label_relevance(q, e)
}

pub fn save_runs(path: &Path, runs: &[RunResult]) -> Result<()> {
    let mut out = Vec::new();
    for r in runs {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::runtime(e.to_string()))?;
        out.push(b'\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_runs(path: &Path) -> Result<Vec<RunResult>> {
    let file = fs::File::open(path)?;
    let mut runs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let run: RunResult = serde_json::from_str(&line).map_err(|e| {
            Error::format(format!("{}:{}: bad run record: {e}", path.display(), i + 1))
        })?;
        runs.push(run);
    }
    Ok(runs)
}

pub fn save_report(path: &Path, report: &MetricReport) -> Result<()> {
    let mut file = fs::File::create(path)?;
    let text =
        serde_json::to_string_pretty(report).map_err(|e| Error::runtime(e.to_string()))?;
    writeln!(file, "{text}")?;
    Ok(())
}

pub fn load_report(path: &Path) -> Result<MetricReport> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("{}: bad metric report: {e}", path.display())))
}
