//! Retrieval instructions: the natural-language prefix that tells the
//! encoder which evidence scope a query targets.
//!
//! Five instruction groups exist — one per knowledge type plus `I_All` for
//! source-agnostic retrieval. The canonical surface form is a fixed template;
//! a versioned paraphrase file (embedded at build time, overridable by path)
//! supplies rewrites that training samples uniformly. Evaluation always uses
//! paraphrase index 0, the canonical form, so reported numbers do not depend
//! on the paraphrase file.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{KnowledgeType, QuestionRecord};
use crate::error::{Error, Result};

/// The embedded default paraphrase set (see `data/paraphrases.txt`).
const BUILTIN_PARAPHRASES: &str = include_str!("../data/paraphrases.txt");

/// Which evidence scope an instruction targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InstructionGroup {
    #[serde(rename = "I_All")]
    All,
    #[serde(rename = "I_Text")]
    Text,
    #[serde(rename = "I_KG")]
    Kg,
    #[serde(rename = "I_Table")]
    Table,
    #[serde(rename = "I_Info")]
    Info,
}

impl InstructionGroup {
    pub const ALL_GROUPS: [InstructionGroup; 5] = [
        InstructionGroup::All,
        InstructionGroup::Text,
        InstructionGroup::Kg,
        InstructionGroup::Table,
        InstructionGroup::Info,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InstructionGroup::All => "I_All",
            InstructionGroup::Text => "I_Text",
            InstructionGroup::Kg => "I_KG",
            InstructionGroup::Table => "I_Table",
            InstructionGroup::Info => "I_Info",
        }
    }

    pub fn parse(s: &str) -> Result<InstructionGroup> {
        Self::ALL_GROUPS
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| {
                Error::validation(format!(
                    "unknown instruction group {s:?} (expected I_All, I_Text, I_KG, I_Table or I_Info)"
                ))
            })
    }

    /// Source string substituted into templates.
    pub fn source_string(self) -> &'static str {
        match self {
            InstructionGroup::All => "All Knowledge Sources",
            InstructionGroup::Text => "Text",
            InstructionGroup::Kg => "Knowledge Graph Triples",
            InstructionGroup::Table => "Table",
            InstructionGroup::Info => "Infobox",
        }
    }

    /// The type-specific group for a knowledge type.
    pub fn for_type(t: KnowledgeType) -> InstructionGroup {
        match t {
            KnowledgeType::Text => InstructionGroup::Text,
            KnowledgeType::Kg => InstructionGroup::Kg,
            KnowledgeType::Table => InstructionGroup::Table,
            KnowledgeType::Info => InstructionGroup::Info,
        }
    }

    /// The knowledge type a type-specific group prefers (`None` for I_All).
    pub fn preferred_type(self) -> Option<KnowledgeType> {
        match self {
            InstructionGroup::All => None,
            InstructionGroup::Text => Some(KnowledgeType::Text),
            InstructionGroup::Kg => Some(KnowledgeType::Kg),
            InstructionGroup::Table => Some(KnowledgeType::Table),
            InstructionGroup::Info => Some(KnowledgeType::Info),
        }
    }

    fn idx(self) -> usize {
        match self {
            InstructionGroup::All => 0,
            InstructionGroup::Text => 1,
            InstructionGroup::Kg => 2,
            InstructionGroup::Table => 3,
            InstructionGroup::Info => 4,
        }
    }
}

/// Map a dataset domain code or display name to the display name used in
/// instruction text. Empty stays empty (domain-less instruction).
pub fn normalize_domain(raw: &str) -> Result<String> {
    match raw {
        "" => Ok(String::new()),
        "books" | "movies" | "music" | "football" | "television series" => Ok(raw.to_owned()),
        "tvseries" => Ok("television series".to_owned()),
        other => Err(Error::validation(format!(
            "unknown domain {other:?} (expected books, movies, music, tvseries or football)"
        ))),
    }
}

/// A rendered instruction: resolved domain, chosen surface form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RenderedInstruction {
    pub group: InstructionGroup,
    /// Display-name domain ("television series"), or empty.
    pub domain: String,
    /// 0 = canonical template, k ≥ 1 = paraphrase file line k.
    pub paraphrase_index: usize,
    pub text: String,
}

/// Instruction plus question, ready for encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalQuery {
    pub instruction: RenderedInstruction,
    pub question: QuestionRecord,
    /// `instruction text + single space + question text`.
    pub text: String,
}

pub fn build_retrieval_query(instruction: RenderedInstruction, question: QuestionRecord) -> RetrievalQuery {
    let text = format!("{} {}", instruction.text, question.text);
    RetrievalQuery { instruction, question, text }
}

/// The paraphrase file: one section per group, one paraphrase per line.
#[derive(Debug, Clone)]
pub struct ParaphraseSet {
    groups: [Vec<String>; 5],
}

impl ParaphraseSet {
    /// No paraphrases at all: only the canonical template renders.
    pub fn empty() -> ParaphraseSet {
        ParaphraseSet { groups: Default::default() }
    }

    pub fn builtin() -> ParaphraseSet {
        Self::parse(BUILTIN_PARAPHRASES, "<builtin>").expect("embedded paraphrase file is valid")
    }

    pub fn load(path: &Path) -> Result<ParaphraseSet> {
        if !path.is_file() {
            return Err(Error::validation(format!("paraphrase file not found: {}", path.display())));
        }
        let raw = std::fs::read_to_string(path)?;
        Self::parse(&raw, &path.display().to_string())
    }

    /// Parse section headers like `[I_All]`; `#` lines are comments. Every
    /// paraphrase must contain both `[domain]` and `[source]` placeholders.
    pub fn parse(raw: &str, origin: &str) -> Result<ParaphraseSet> {
        let mut groups: [Vec<String>; 5] = Default::default();
        let mut current: Option<usize> = None;
        for (lineno, line) in raw.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                let group = InstructionGroup::parse(&line[1..line.len() - 1])
                    .map_err(|_| Error::validation(format!("{origin}:{}: unknown section {line}", lineno + 1)))?;
                current = Some(group.idx());
                continue;
            }
            let Some(g) = current else {
                return Err(Error::validation(format!(
                    "{origin}:{}: paraphrase before any [I_*] section header",
                    lineno + 1
                )));
            };
            if !line.contains("[domain]") || !line.contains("[source]") {
                return Err(Error::validation(format!(
                    "{origin}:{}: paraphrase must contain [domain] and [source] placeholders",
                    lineno + 1
                )));
            }
            groups[g].push(line.to_owned());
        }
        Ok(ParaphraseSet { groups })
    }

    pub fn count(&self, group: InstructionGroup) -> usize {
        self.groups[group.idx()].len()
    }
}

/// Renders canonical and paraphrased instructions, and samples surface forms
/// for training.
#[derive(Debug, Clone)]
pub struct InstructionRenderer {
    paraphrases: ParaphraseSet,
}

impl InstructionRenderer {
    pub fn new(paraphrases: ParaphraseSet) -> InstructionRenderer {
        InstructionRenderer { paraphrases }
    }

    pub fn builtin() -> InstructionRenderer {
        InstructionRenderer::new(ParaphraseSet::builtin())
    }

    /// Number of surface forms available for a group (canonical + paraphrases).
    pub fn option_count(&self, group: InstructionGroup) -> usize {
        1 + self.paraphrases.count(group)
    }

    fn canonical(group: InstructionGroup, domain: &str) -> String {
        let source = group.source_string();
        if domain.is_empty() {
            format!("Given a question, retrieve relevant evidence to answer the question from the {source}.")
        } else {
            format!("Given a question in the {domain} domain, retrieve relevant evidence to answer the question from the {source}.")
        }
    }

    /// Render surface form `paraphrase_index` (0 = canonical). Paraphrases
    /// need a domain to fill their clause; with an empty domain every index
    /// falls back to the canonical domain-less template.
    pub fn render(
        &self,
        group: InstructionGroup,
        domain_raw: &str,
        paraphrase_index: usize,
    ) -> Result<RenderedInstruction> {
        let domain = normalize_domain(domain_raw)?;
        let text = if paraphrase_index == 0 || domain.is_empty() {
            Self::canonical(group, &domain)
        } else {
            let lines = &self.paraphrases.groups[group.idx()];
            let line = lines.get(paraphrase_index - 1).ok_or_else(|| {
                Error::validation(format!(
                    "paraphrase index {paraphrase_index} out of range for {} ({} available)",
                    group.name(),
                    lines.len()
                ))
            })?;
            line.replace("[domain]", &domain).replace("[source]", group.source_string())
        };
        let paraphrase_index = if domain.is_empty() { 0 } else { paraphrase_index };
        Ok(RenderedInstruction { group, domain, paraphrase_index, text })
    }

    /// Draw a surface form uniformly from {canonical} ∪ paraphrases.
    pub fn sample<R: Rng>(
        &self,
        group: InstructionGroup,
        domain_raw: &str,
        rng: &mut R,
    ) -> Result<RenderedInstruction> {
        let n = self.paraphrases.count(group);
        let index = rng.gen_range(0..=n);
        self.render(group, domain_raw, index)
    }
}
