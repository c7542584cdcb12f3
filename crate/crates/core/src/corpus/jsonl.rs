//! JSONL wire formats for evidence, questions, and data-text pairs.
//!
//! Key names (with spaces) mirror the upstream corpus dumps, e.g.
//! `{"linearized evidence text": …, "wikidata entities": [...], "source": "kg"}`.
//! Evidence lines carry no id: `evidence_id` is the 0-based line index, so a
//! corpus file defines ids by position and rewriting it in order round-trips.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataTextPair, EntityRef, EvidenceRecord, KnowledgeType, QuestionRecord};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct EvidenceLine {
    #[serde(rename = "linearized evidence text")]
    text: String,
    #[serde(rename = "wikidata entities", default)]
    entities: Vec<EntityRef>,
    source: KnowledgeType,
    #[serde(rename = "retrieved for entity", default, skip_serializing_if = "Option::is_none")]
    retrieved_for: Option<EntityRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    disambiguations: Vec<(String, String)>,
}

/// Question ids appear both as JSON strings ("5136") and as bare integers.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum IdValue {
    Int(i64),
    Str(String),
}

#[derive(Serialize, Deserialize)]
struct QuestionLine {
    #[serde(rename = "question id")]
    question_id: IdValue,
    question: String,
    #[serde(default)]
    domain: String,
    #[serde(default)]
    answers: Vec<EntityRef>,
    #[serde(rename = "answer text", default)]
    answer_text: String,
}

#[derive(Serialize, Deserialize)]
struct PairLine {
    evidence_id: i64,
    source: KnowledgeType,
    data: String,
    text: String,
}

fn context(path: &Path, lineno: usize, msg: impl std::fmt::Display) -> Error {
    Error::validation(format!("{}:{}: {}", path.display(), lineno, msg))
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Error::validation(format!("input file not found: {}", path.display())));
    }
    Ok(())
}

/// Load a corpus file, assigning `evidence_id` by line position.
pub fn load_corpus(path: &Path) -> Result<Vec<EvidenceRecord>> {
    require_file(path)?;
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            return Err(context(path, i + 1, "blank line in corpus file"));
        }
        let raw: EvidenceLine =
            serde_json::from_str(&line).map_err(|e| context(path, i + 1, e))?;
        if raw.text.is_empty() {
            return Err(context(path, i + 1, "evidence text must be non-empty"));
        }
        out.push(EvidenceRecord {
            evidence_id: i as i64,
            etype: raw.source,
            text: raw.text,
            entities: raw.entities,
            page_title: String::new(),
            retrieved_for: raw.retrieved_for,
            disambiguations: raw.disambiguations,
        });
    }
    if out.is_empty() {
        return Err(Error::validation(format!("corpus file is empty: {}", path.display())));
    }
    Ok(out)
}

/// Write a corpus file. Records must already be in ascending `evidence_id`
/// order matching their positions, or reloading would renumber them.
pub fn save_corpus(path: &Path, corpus: &[EvidenceRecord]) -> Result<()> {
    for (i, e) in corpus.iter().enumerate() {
        if e.evidence_id != i as i64 {
            return Err(Error::runtime(format!(
                "evidence_id {} at position {i}: ids must equal line positions when saving",
                e.evidence_id
            )));
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    for e in corpus {
        let line = EvidenceLine {
            text: e.text.clone(),
            entities: e.entities.clone(),
            source: e.etype,
            retrieved_for: e.retrieved_for.clone(),
            disambiguations: e.disambiguations.clone(),
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| Error::runtime(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_questions(path: &Path) -> Result<Vec<QuestionRecord>> {
    require_file(path)?;
    let reader = BufReader::new(File::open(path)?);
    let mut out: Vec<QuestionRecord> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            return Err(context(path, i + 1, "blank line in question file"));
        }
        let raw: QuestionLine =
            serde_json::from_str(&line).map_err(|e| context(path, i + 1, e))?;
        let question_id = match raw.question_id {
            IdValue::Int(v) => v,
            IdValue::Str(s) => s
                .parse::<i64>()
                .map_err(|_| context(path, i + 1, format!("non-numeric question id {s:?}")))?,
        };
        if !seen.insert(question_id) {
            return Err(context(path, i + 1, format!("duplicate question id {question_id}")));
        }
        if raw.question.is_empty() {
            return Err(context(path, i + 1, "question text must be non-empty"));
        }
        if raw.answers.is_empty() && raw.answer_text.is_empty() {
            return Err(context(path, i + 1, "question needs answers or answer text"));
        }
        out.push(QuestionRecord {
            question_id,
            text: raw.question,
            domain: raw.domain,
            answer_entities: raw.answers,
            answer_text: raw.answer_text,
        });
    }
    if out.is_empty() {
        return Err(Error::validation(format!("question file is empty: {}", path.display())));
    }
    Ok(out)
}

pub fn save_questions(path: &Path, questions: &[QuestionRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for q in questions {
        let line = QuestionLine {
            // ids serialize as strings, matching the upstream annotation dumps
            question_id: IdValue::Str(q.question_id.to_string()),
            question: q.text.clone(),
            domain: q.domain.clone(),
            answers: q.answer_entities.clone(),
            answer_text: q.answer_text.clone(),
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| Error::runtime(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Persist data-text pairs as slim lines: id, source, both surface strings.
pub fn save_pairs(path: &Path, pairs: &[DataTextPair]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in pairs {
        let line = PairLine {
            evidence_id: p.data.evidence_id,
            source: p.data.etype,
            data: p.data.text.clone(),
            text: p.text.clone(),
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| Error::runtime(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_pairs(path: &Path) -> Result<Vec<DataTextPair>> {
    require_file(path)?;
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let raw: PairLine = serde_json::from_str(&line).map_err(|e| context(path, i + 1, e))?;
        if raw.source == KnowledgeType::Text {
            return Err(context(path, i + 1, "pairs must come from non-Text evidence"));
        }
        out.push(DataTextPair {
            data: EvidenceRecord {
                evidence_id: raw.evidence_id,
                etype: raw.source,
                text: raw.data,
                entities: Vec::new(),
                page_title: String::new(),
                retrieved_for: None,
                disambiguations: Vec::new(),
            },
            text: raw.text,
        });
    }
    if out.is_empty() {
        return Err(Error::validation(format!("pair file is empty: {}", path.display())));
    }
    Ok(out)
}
