//! Synthetic benchmark generator.
//!
//! Builds a pocket-sized knowledge corpus with the semantic structure the
//! trainer needs: entities with canonical two-word names and a one-word
//! alias, facts rendered into several knowledge types per fact, and
//! questions phrased with relation wording that never appears anywhere in
//! the corpus.
//!
//! Every word is composed from syllables, and each word category owns a
//! distinct leading consonant (entity names `k…`, aliases `z…`, KG relation
//! forms `d…`, table headers `t…`, infobox properties `p…`, prose relation
//! phrases and their question-side paraphrases `v…`, prose glue `g…`,
//! question fillers `f…`). Categories therefore never collide in the
//! tokenizer, which makes lexical overlap a design parameter instead of an
//! accident: a question's only lexical link to the corpus is the subject
//! surface, and usually that is the alias, which occurs solely on the
//! subject's own page. A lexical scorer is confined to that page (which
//! never holds the answer), while a trained encoder can bridge the
//! alias-to-name and paraphrase-to-form gaps.
//!
//! Two guarantees the evaluation leans on: every answer entity has its own
//! alias infobox and prose filler lines, so every question has relevant
//! evidence of at least the Info and Text types; and every fact is rendered
//! at least once (KG is forced if no render probability fires).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    linearize_infobox, linearize_kg_fact, linearize_table_row, EntityRef, EvidenceRecord,
    KnowledgeType, QuestionRecord,
};
use crate::error::{Error, Result};

/// Facts attached to each entity.
const FACTS_PER_ENTITY: usize = 3;
/// Prose filler lines per entity page; each line pairs the canonical name
/// with the alias, so the alias-to-name bridge has several contexts to
/// learn from.
const FILLERS_PER_ENTITY: usize = 3;
/// Distinct relations; each owns four corpus surface forms, a question
/// paraphrase, and a value pool.
const NUM_RELATIONS: usize = 12;
/// Independent render probabilities per fact, one per knowledge type.
const RENDER_TEXT_P: f64 = 0.6;
const RENDER_KG_P: f64 = 0.55;
const RENDER_TABLE_P: f64 = 0.4;
const RENDER_INFO_P: f64 = 0.35;
/// Share of questions that name the subject by its alias instead of its
/// canonical name (aliases never appear in fact renders, only on the
/// entity's own page, so these questions have no direct lexical route).
const QUESTION_ALIAS_P: f64 = 0.75;
/// Valid dataset domain codes, cycled over relations.
const DOMAINS: [&str; 5] = ["books", "movies", "music", "football", "tvseries"];

const CONSONANTS: [char; 14] =
    ['b', 'd', 'f', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'z'];
const VOWELS: [char; 5] = ['a', 'e', 'i', 'o', 'u'];

fn syllable(i: usize) -> [char; 2] {
    [CONSONANTS[(i / 5) % 14], VOWELS[i % 5]]
}

/// Deterministic three-syllable word; the leading consonant is the word's
/// category marker, the index is injective within the category.
fn word(category: char, index: usize) -> String {
    let mut w = String::with_capacity(6);
    w.push(category);
    w.push(VOWELS[index % 5]);
    let mut rest = index / 5;
    for _ in 0..2 {
        let [c, v] = syllable(rest % 70);
        w.push(c);
        w.push(v);
        rest /= 70;
    }
    w
}

fn entity_label(idx: usize) -> String {
    format!("{} {}", word('k', 2 * idx), word('k', 2 * idx + 1))
}

fn entity_alias(idx: usize) -> String {
    word('z', idx)
}

fn entity_ref(idx: usize) -> EntityRef {
    EntityRef::new(format!("E{idx}"), entity_label(idx))
}

/// Infobox property naming the alias line on every entity page.
fn alias_property() -> String {
    word('p', 99)
}

struct Relation {
    data_form: String,
    header_form: String,
    prop_form: String,
    text_phrase: String,
    /// Question-side wording; drawn from a disjoint index range so it never
    /// collides with any corpus phrase.
    question_phrase: String,
    domain: &'static str,
}

fn relation(r: usize) -> Relation {
    let q = NUM_RELATIONS + r;
    Relation {
        data_form: word('d', r),
        header_form: word('t', r),
        prop_form: word('p', r),
        text_phrase: format!("{} {}", word('v', 2 * r), word('v', 2 * r + 1)),
        question_phrase: format!("{} {}", word('v', 2 * q), word('v', 2 * q + 1)),
        domain: DOMAINS[r % DOMAINS.len()],
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub seed: u64,
    pub entities: usize,
    pub questions: usize,
}

#[derive(Debug, Clone, Copy)]
struct Fact {
    rel: usize,
    object: usize,
}

/// Generate a corpus and question set. Evidence ids are the final positions
/// (matching the line-index rule at ingest); question ids count from zero.
pub fn synthesize(cfg: &SynthConfig) -> Result<(Vec<EvidenceRecord>, Vec<QuestionRecord>)> {
    if cfg.entities < 2 * NUM_RELATIONS {
        return Err(Error::validation(format!(
            "need at least {} entities (got {})",
            2 * NUM_RELATIONS,
            cfg.entities
        )));
    }
    if cfg.questions == 0 {
        return Err(Error::validation("need at least one question".to_owned()));
    }
    let n = cfg.entities;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // object pools: relation r draws objects from a fixed slice of entities,
    // so values are shared across facts and act as lexical distractors
    let pool = (n / (2 * NUM_RELATIONS)).max(2);
    let object_of = |r: usize, pick: usize| -> usize { r * pool + pick % pool };

    // facts first, in entity order
    let mut facts: Vec<Fact> = Vec::with_capacity(n * FACTS_PER_ENTITY);
    for _ in 0..n {
        let mut rels = [0usize; FACTS_PER_ENTITY];
        for (slot, rel) in rels.iter_mut().enumerate() {
            // distinct relations per entity: offset stride keeps them apart
            *rel = (rng.gen_range(0..NUM_RELATIONS) + slot * (NUM_RELATIONS / FACTS_PER_ENTITY))
                % NUM_RELATIONS;
        }
        for rel in rels {
            let object = object_of(rel, rng.gen_range(0..pool));
            facts.push(Fact { rel, object });
        }
    }

    let glue = |rng: &mut ChaCha8Rng| word('g', rng.gen_range(0..20));

    let mut corpus: Vec<EvidenceRecord> = Vec::new();
    let push = |etype: KnowledgeType,
                    text: String,
                    entities: Vec<EntityRef>,
                    page: &str,
                    subject: usize,
                    corpus: &mut Vec<EvidenceRecord>| {
        corpus.push(EvidenceRecord {
            evidence_id: corpus.len() as i64,
            etype,
            text,
            entities,
            page_title: page.to_owned(),
            retrieved_for: Some(entity_ref(subject)),
            disambiguations: Vec::new(),
        });
    };

    for e in 0..n {
        let page = entity_label(e);
        // alias infobox: the one guaranteed Info evidence about this entity
        let alias_box =
            linearize_infobox(&page, &page, &[(alias_property(), entity_alias(e))])?;
        push(KnowledgeType::Info, alias_box, vec![entity_ref(e)], &page, e, &mut corpus);
        // prose fillers: guaranteed Text evidence, bridging alias and name;
        // the alias moves around so the bridge is not tied to one position
        for line in 0..FILLERS_PER_ENTITY {
            let (g0, g1, g2) = (glue(&mut rng), glue(&mut rng), glue(&mut rng));
            let alias = entity_alias(e);
            let filler = match line % 3 {
                0 => format!("{page} {g0} {g1} {alias} {g2}."),
                1 => format!("{alias} {g0} {page} {g1} {g2}."),
                _ => format!("{g0} {page} {g1} {alias} {g2}."),
            };
            push(KnowledgeType::Text, filler, vec![entity_ref(e)], &page, e, &mut corpus);
        }

        for fact in &facts[e * FACTS_PER_ENTITY..(e + 1) * FACTS_PER_ENTITY] {
            let rel = relation(fact.rel);
            let obj_label = entity_label(fact.object);
            let pair = vec![entity_ref(e), entity_ref(fact.object)];
            // roll all four dice first so the random stream has a fixed
            // shape per fact, then render in the canonical type order;
            // when nothing fires, the KG render is forced
            let r_text = rng.gen_bool(RENDER_TEXT_P);
            let r_kg = rng.gen_bool(RENDER_KG_P);
            let r_table = rng.gen_bool(RENDER_TABLE_P);
            let r_info = rng.gen_bool(RENDER_INFO_P);
            if r_text {
                let text = format!("{} {} {} {}.", page, rel.text_phrase, obj_label, glue(&mut rng));
                push(KnowledgeType::Text, text, pair.clone(), &page, e, &mut corpus);
            }
            if r_kg || !(r_text || r_table || r_info) {
                let kg = linearize_kg_fact(&page, &page, &rel.data_form, &obj_label, &[])?;
                push(KnowledgeType::Kg, kg, pair.clone(), &page, e, &mut corpus);
            }
            if r_table {
                let row =
                    linearize_table_row(&page, &[(rel.header_form.clone(), obj_label.clone())])?;
                push(KnowledgeType::Table, row, pair.clone(), &page, e, &mut corpus);
            }
            if r_info {
                let ib =
                    linearize_infobox(&page, &page, &[(rel.prop_form.clone(), obj_label.clone())])?;
                push(KnowledgeType::Info, ib, pair.clone(), &page, e, &mut corpus);
            }
        }
    }

    // questions ask for the object of one subject fact, using the relation's
    // question paraphrase and inert filler words around it
    let mut questions = Vec::with_capacity(cfg.questions);
    for qid in 0..cfg.questions {
        let subject = rng.gen_range(0..n);
        let fact = facts[subject * FACTS_PER_ENTITY + rng.gen_range(0..FACTS_PER_ENTITY)];
        let rel = relation(fact.rel);
        let surface = if rng.gen_bool(QUESTION_ALIAS_P) {
            entity_alias(subject)
        } else {
            entity_label(subject)
        };
        let template = rng.gen_range(0..3usize);
        let f = |i: usize| word('f', 3 * template + i);
        let text = format!("{} {} {} {} {}?", f(0), f(1), rel.question_phrase, f(2), surface);
        questions.push(QuestionRecord {
            question_id: qid as i64,
            text,
            domain: rel.domain.to_owned(),
            answer_entities: vec![entity_ref(fact.object)],
            answer_text: entity_label(fact.object),
        });
    }
    Ok((corpus, questions))
}
