//! Evidence corpus: record types, linearization, relevance labeling, stats.
//!
//! Evidence of all four knowledge types (free text, KG triples, table rows,
//! infobox properties) is carried as one flat record whose `text` field holds
//! the linearized surface form. Downstream stages (tokenizer, encoder, BM25)
//! never see the original structure, so the linearizers here are the single
//! place where structure becomes bytes — they must be deterministic and are
//! pinned by tests byte-for-byte.

pub mod jsonl;
pub mod verbalize;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textproc::tokenize;

/// The four evidence source types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnowledgeType {
    Text,
    Kg,
    Table,
    Info,
}

impl KnowledgeType {
    /// Fixed canonical order. Round-robin negative allocation and report
    /// tables both iterate in this order; changing it changes results.
    pub const ALL: [KnowledgeType; 4] = [
        KnowledgeType::Text,
        KnowledgeType::Kg,
        KnowledgeType::Table,
        KnowledgeType::Info,
    ];

    pub fn label(self) -> &'static str {
        match self {
            KnowledgeType::Text => "Text",
            KnowledgeType::Kg => "KG",
            KnowledgeType::Table => "Table",
            KnowledgeType::Info => "Info",
        }
    }

    /// Wire name used in JSONL `source` fields.
    pub fn wire(self) -> &'static str {
        match self {
            KnowledgeType::Text => "text",
            KnowledgeType::Kg => "kg",
            KnowledgeType::Table => "table",
            KnowledgeType::Info => "info",
        }
    }

    pub fn from_wire(s: &str) -> Result<KnowledgeType> {
        match s {
            "text" => Ok(KnowledgeType::Text),
            "kg" => Ok(KnowledgeType::Kg),
            "table" => Ok(KnowledgeType::Table),
            "info" => Ok(KnowledgeType::Info),
            other => Err(Error::validation(format!("unknown evidence source {other:?}"))),
        }
    }

    pub fn index(self) -> usize {
        match self {
            KnowledgeType::Text => 0,
            KnowledgeType::Kg => 1,
            KnowledgeType::Table => 2,
            KnowledgeType::Info => 3,
        }
    }

    pub fn code(self) -> u8 {
        self.index() as u8
    }

    pub fn from_code(c: u8) -> Result<KnowledgeType> {
        KnowledgeType::ALL
            .get(c as usize)
            .copied()
            .ok_or_else(|| Error::format(format!("bad knowledge type code {c}")))
    }
}

/// A knowledge-base entity reference. Labels are display-only; identity is
/// the id string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRef {
    pub id: String,
    #[serde(default)]
    pub label: String,
}

impl EntityRef {
    pub fn new(id: impl Into<String>, label: impl Into<String>) -> EntityRef {
        EntityRef { id: id.into(), label: label.into() }
    }
}

/// One piece of evidence. `evidence_id` is assigned at ingest (line index in
/// the corpus file) and is the corpus-wide tiebreaker everywhere scores tie.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceRecord {
    pub evidence_id: i64,
    pub etype: KnowledgeType,
    /// Linearized surface form; for `Text` evidence, the prose itself.
    pub text: String,
    pub entities: Vec<EntityRef>,
    /// Construction-side metadata; not persisted in the JSONL wire format.
    pub page_title: String,
    pub retrieved_for: Option<EntityRef>,
    /// Parsed and retained verbatim; scoring never reads these.
    pub disambiguations: Vec<(String, String)>,
}

/// A natural-language question with its gold answer annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionRecord {
    pub question_id: i64,
    pub text: String,
    /// Dataset domain code ("tvseries", "music", …) or empty.
    pub domain: String,
    pub answer_entities: Vec<EntityRef>,
    pub answer_text: String,
}

/// A (structured evidence, natural sentence) pair for the two pretraining
/// stages. Built for every non-Text evidence; `text` comes from the template
/// verbalizer or the external endpoint.
#[derive(Debug, Clone)]
pub struct DataTextPair {
    pub data: EvidenceRecord,
    pub text: String,
}

// ---------------------------------------------------------------------------
// Linearization
// ---------------------------------------------------------------------------

fn require(field: &str, value: &str) -> Result<()> {
    if value.is_empty() {
        Err(Error::validation(format!("linearization field {field:?} must be non-empty")))
    } else {
        Ok(())
    }
}

/// Linearize a KG fact: `"subject, relation, object"` plus `, qual_rel,
/// qual_val` for each qualifier pair. The page title is accepted for
/// interface parity with the other linearizers but does not appear in the
/// output.
pub fn linearize_kg_fact(
    _page_title: &str,
    subject: &str,
    relation: &str,
    object: &str,
    qualifiers: &[(String, String)],
) -> Result<String> {
    require("subject", subject)?;
    require("relation", relation)?;
    require("object", object)?;
    let mut out = format!("{subject}, {relation}, {object}");
    for (qr, qv) in qualifiers {
        require("qualifier relation", qr)?;
        require("qualifier value", qv)?;
        out.push_str(", ");
        out.push_str(qr);
        out.push_str(", ");
        out.push_str(qv);
    }
    Ok(out)
}

/// Linearize a table row: `"page_title, header is value, …"`. A cell with an
/// empty value renders as `"header is"` — no trailing period is appended
/// (determinism beats prettiness; source rows sometimes carry one, we never
/// re-add it).
pub fn linearize_table_row(page_title: &str, cells: &[(String, String)]) -> Result<String> {
    require("page_title", page_title)?;
    if cells.is_empty() {
        return Err(Error::validation("table row needs at least one cell"));
    }
    let mut out = String::from(page_title);
    for (header, value) in cells {
        require("header", header)?;
        out.push_str(", ");
        out.push_str(header);
        if value.is_empty() {
            out.push_str(" is");
        } else {
            out.push_str(" is ");
            out.push_str(value);
        }
    }
    Ok(out)
}

/// Linearize infobox properties: `"page_title, subject, property, value, …"`.
pub fn linearize_infobox(
    page_title: &str,
    subject: &str,
    pairs: &[(String, String)],
) -> Result<String> {
    require("page_title", page_title)?;
    require("subject", subject)?;
    if pairs.is_empty() {
        return Err(Error::validation("infobox needs at least one property pair"));
    }
    let mut out = format!("{page_title}, {subject}");
    for (prop, value) in pairs {
        require("property", prop)?;
        require("value", value)?;
        out.push_str(", ");
        out.push_str(prop);
        out.push_str(", ");
        out.push_str(value);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Relevance labeling
// ---------------------------------------------------------------------------

/// True iff the evidence mentions one of the question's answer entities.
/// When the question has no answer entities and `text_fallback` is set, falls
/// back to case-insensitive whole-token containment: the tokenized answer
/// text must appear as a contiguous token run inside the tokenized evidence.
pub fn label_relevance_with(
    question: &QuestionRecord,
    evidence: &EvidenceRecord,
    text_fallback: bool,
) -> bool {
    if !question.answer_entities.is_empty() {
        return evidence
            .entities
            .iter()
            .any(|e| question.answer_entities.iter().any(|a| a.id == e.id));
    }
    if !text_fallback {
        return false;
    }
    let needle = tokenize(&question.answer_text);
    if needle.is_empty() {
        return false;
    }
    let hay = tokenize(&evidence.text);
    hay.windows(needle.len()).any(|w| w == needle.as_slice())
}

/// [`label_relevance_with`] with the fallback enabled (the default).
pub fn label_relevance(question: &QuestionRecord, evidence: &EvidenceRecord) -> bool {
    label_relevance_with(question, evidence, true)
}

// ---------------------------------------------------------------------------
// Corpus statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TypeStats {
    pub count: usize,
    /// Mean whitespace-delimited word count (reporting convention; not the
    /// model tokenizer).
    pub avg_len: f64,
    pub percent: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorpusStats {
    /// Per-type rows in [`KnowledgeType::ALL`] order.
    pub per_type: [TypeStats; 4],
    pub total: TypeStats,
}

pub fn corpus_stats(corpus: &[EvidenceRecord]) -> Result<CorpusStats> {
    if corpus.is_empty() {
        return Err(Error::validation("cannot compute stats for an empty corpus"));
    }
    let mut counts = [0usize; 4];
    let mut words = [0u64; 4];
    for e in corpus {
        let i = e.etype.index();
        counts[i] += 1;
        words[i] += e.text.split_whitespace().count() as u64;
    }
    let total_count: usize = counts.iter().sum();
    let total_words: u64 = words.iter().sum();
    let per_type = std::array::from_fn(|i| TypeStats {
        count: counts[i],
        avg_len: if counts[i] == 0 { 0.0 } else { words[i] as f64 / counts[i] as f64 },
        percent: 100.0 * counts[i] as f64 / total_count as f64,
    });
    Ok(CorpusStats {
        per_type,
        total: TypeStats {
            count: total_count,
            avg_len: total_words as f64 / total_count as f64,
            percent: 100.0,
        },
    })
}

impl CorpusStats {
    /// Render as an aligned text table (percentages and lengths to 2 dp).
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<8} {:>10} {:>10} {:>9}\n", "Source", "Count", "AvgWords", "Percent"));
        for (i, t) in KnowledgeType::ALL.iter().enumerate() {
            let s = &self.per_type[i];
            out.push_str(&format!(
                "{:<8} {:>10} {:>10.2} {:>8.2}%\n",
                t.label(),
                s.count,
                s.avg_len,
                s.percent
            ));
        }
        out.push_str(&format!(
            "{:<8} {:>10} {:>10.2} {:>8.2}%\n",
            "Total",
            self.total.count,
            self.total.avg_len,
            self.total.percent
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairs(v: &[(&str, &str)]) -> Vec<(String, String)> {
        v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    // The canonical linearization examples, byte-for-byte.
    #[test]
    fn kg_fact_plain_and_qualified() {
        assert_eq!(
            linearize_kg_fact("", "Maverick", "cast member", "Robert Colbert", &[]).unwrap(),
            "Maverick, cast member, Robert Colbert"
        );
        assert_eq!(
            linearize_kg_fact(
                "",
                "Maverick",
                "cast member",
                "Roxane Berard",
                &pairs(&[("name of the character role", "'Comtesse de Barot'")]),
            )
            .unwrap(),
            "Maverick, cast member, Roxane Berard, name of the character role, 'Comtesse de Barot'"
        );
        // page title is ignored by design
        assert_eq!(
            linearize_kg_fact("Some Page", "a", "b", "c", &[]).unwrap(),
            linearize_kg_fact("", "a", "b", "c", &[]).unwrap()
        );
    }

    #[test]
    fn table_row_with_and_without_empty_value() {
        assert_eq!(
            linearize_table_row(
                "Stefanie Powers",
                &pairs(&[
                    ("Year", "1975"),
                    ("Title", "Gone with the West"),
                    ("Role", "Little Moon"),
                    ("Notes", "Alternate title: Little Moon and Jud McGraw"),
                ]),
            )
            .unwrap(),
            "Stefanie Powers, Year is 1975, Title is Gone with the West, Role is Little Moon, \
             Notes is Alternate title: Little Moon and Jud McGraw"
        );
        // Empty cell value: "Notes is" with nothing after — and no trailing
        // period gets re-added.
        assert_eq!(
            linearize_table_row(
                "Stefanie Powers",
                &pairs(&[
                    ("Year", "1975"),
                    ("Title", "It Seemed Like a Good Idea at the Time"),
                    ("Role", "Georgia Price"),
                    ("Notes", ""),
                ]),
            )
            .unwrap(),
            "Stefanie Powers, Year is 1975, Title is It Seemed Like a Good Idea at the Time, \
             Role is Georgia Price, Notes is"
        );
    }

    #[test]
    fn infobox_rows() {
        assert_eq!(
            linearize_infobox(
                "When Harry Met Sally...",
                "When Harry Met Sally…",
                &pairs(&[("Directed by", "Rob Reiner")]),
            )
            .unwrap(),
            "When Harry Met Sally..., When Harry Met Sally…, Directed by, Rob Reiner"
        );
        assert_eq!(
            linearize_infobox(
                "When Harry Met Sally...",
                "When Harry Met Sally…",
                &pairs(&[("Produced by", "Rob Reiner Andrew Scheinman")]),
            )
            .unwrap(),
            "When Harry Met Sally..., When Harry Met Sally…, Produced by, Rob Reiner Andrew Scheinman"
        );
    }

    #[test]
    fn empty_required_fields_are_rejected() {
        assert!(linearize_kg_fact("", "", "r", "o", &[]).is_err());
        assert!(linearize_kg_fact("", "s", "r", "", &[]).is_err());
        assert!(linearize_table_row("", &pairs(&[("Y", "1")])).is_err());
        assert!(linearize_table_row("P", &[]).is_err());
        assert!(linearize_infobox("P", "S", &[]).is_err());
        assert!(linearize_infobox("P", "S", &pairs(&[("p", "")])).is_err());
    }

    fn question(entities: &[&str], answer_text: &str) -> QuestionRecord {
        QuestionRecord {
            question_id: 1,
            text: "who?".into(),
            domain: "music".into(),
            answer_entities: entities.iter().map(|id| EntityRef::new(*id, "")).collect(),
            answer_text: answer_text.into(),
        }
    }

    fn evidence(entities: &[&str], text: &str) -> EvidenceRecord {
        EvidenceRecord {
            evidence_id: 0,
            etype: KnowledgeType::Text,
            text: text.into(),
            entities: entities.iter().map(|id| EntityRef::new(*id, "")).collect(),
            page_title: String::new(),
            retrieved_for: None,
            disambiguations: Vec::new(),
        }
    }

    #[test]
    fn relevance_is_entity_id_based() {
        let q = question(&["Q37628"], "Mila Kunis");
        assert!(label_relevance(&q, &evidence(&["Q1", "Q37628"], "whatever")));
        assert!(!label_relevance(&q, &evidence(&["Q2"], "Mila Kunis starred")));
        // entities present but disjoint → no text fallback
    }

    #[test]
    fn relevance_text_fallback_requires_contiguous_whole_tokens() {
        let q = question(&[], "Mila Kunis");
        assert!(label_relevance(&q, &evidence(&[], "The role went to MILA KUNIS that year")));
        // tokens present but not adjacent
        assert!(!label_relevance(&q, &evidence(&[], "Mila met Ashton Kunis")));
        // substring inside a longer token does not count
        assert!(!label_relevance(&q, &evidence(&[], "milak unis")));
        // fallback can be disabled
        assert!(!label_relevance_with(&q, &evidence(&[], "Mila Kunis"), false));
    }

    #[test]
    fn stats_small_corpus_hand_check() {
        // 2 text (3 and 5 words), 1 kg (4 words), 1 table (8 words)
        let corpus = vec![
            EvidenceRecord { etype: KnowledgeType::Text, ..evidence(&[], "one two three") },
            EvidenceRecord { etype: KnowledgeType::Text, ..evidence(&[], "a b c d e") },
            EvidenceRecord { etype: KnowledgeType::Kg, ..evidence(&[], "w x y z") },
            EvidenceRecord { etype: KnowledgeType::Table, ..evidence(&[], "a, b is c, d is e f") },
        ];
        let s = corpus_stats(&corpus).unwrap();
        assert_eq!(s.per_type[0].count, 2);
        assert!((s.per_type[0].avg_len - 4.0).abs() < 1e-12);
        assert!((s.per_type[0].percent - 50.0).abs() < 1e-12);
        assert_eq!(s.per_type[3].count, 0);
        assert_eq!(s.total.count, 4);
        assert!((s.total.avg_len - 20.0 / 4.0).abs() < 1e-12);
        let table = s.render_table();
        assert!(table.contains("50.00%"));
        assert!(table.contains("100.00%"));
    }

    proptest! {
        // Percentages always sum to 100 (within rounding slack), regardless
        // of the type mix.
        #[test]
        fn stats_percentages_sum_to_100(types in proptest::collection::vec(0usize..4, 1..200)) {
            let corpus: Vec<EvidenceRecord> = types
                .iter()
                .enumerate()
                .map(|(i, &t)| EvidenceRecord {
                    evidence_id: i as i64,
                    etype: KnowledgeType::ALL[t],
                    text: "some words here".into(),
                    entities: vec![],
                    page_title: String::new(),
                    retrieved_for: None,
                    disambiguations: vec![],
                })
                .collect();
            let s = corpus_stats(&corpus).unwrap();
            let sum: f64 = s.per_type.iter().map(|t| t.percent).sum();
            prop_assert!((sum - 100.0).abs() < 0.01);
        }

        // KG linearization round-trips: on inputs free of the separator the
        // parts can be recovered by splitting.
        #[test]
        fn kg_linearization_splits_back(
            s in "[A-Za-z][A-Za-z ]{0,10}",
            r in "[a-z][a-z ]{0,10}",
            o in "[A-Za-z][A-Za-z0-9 ]{0,10}",
        ) {
            prop_assume!(!s.contains(", ") && !r.contains(", ") && !o.contains(", "));
            prop_assume!(![&s, &r, &o].iter().any(|x| x.trim().is_empty()));
            let line = linearize_kg_fact("", s.trim(), r.trim(), o.trim(), &[]).unwrap();
            let parts: Vec<&str> = line.split(", ").collect();
            prop_assert_eq!(parts, vec![s.trim(), r.trim(), o.trim()]);
        }
    }
}
