//! End-to-end orchestration over a working directory of fixed-name artifacts.
//!
//! Every step reads its inputs from the workdir and writes its outputs back
//! there, so steps can run as separate processes: `synth`/`ingest` produce
//! `corpus.jsonl` + `questions.jsonl`, `pairs` adds `pairs.jsonl`, the three
//! training steps hand the encoder forward through `encoder.bin` (keeping a
//! per-stage snapshot), `index` freezes `index.hgix` against the encoder's
//! fingerprint, and `eval` emits `run.jsonl` + `metrics.json`. A lock file
//! guards the directory against concurrent runs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{MinerKind, PipelineConfig, VerbalizerSection};
use crate::corpus::{
    self, jsonl, label_relevance_with, verbalize, DataTextPair, EvidenceRecord, KnowledgeType,
    QuestionRecord,
};
use crate::encoder::{self, EncoderParams};
use crate::error::{Error, Result};
use crate::eval::{self, HitEntry, RunResult, EVAL_DEPTH};
use crate::index::VectorIndex;
use crate::instructions::{InstructionGroup, InstructionRenderer, ParaphraseSet};
use crate::par;
use crate::synth::{self, SynthConfig};
use crate::textproc::{bm25::Bm25Index, tokenize, TokenSequence, Vocabulary};
use crate::training::{
    self,
    negatives::{build_negative_group, GroupMode, ScoredCandidate, TypedPools},
    ContrastSample, StageReport,
};

/// Token cap applied to every encoded text.
pub const MAX_SEQ_LEN: usize = 256;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const QUESTIONS_FILE: &str = "questions.jsonl";
pub const PAIRS_FILE: &str = "pairs.jsonl";
pub const VOCAB_FILE: &str = "vocab.tsv";
pub const ENCODER_FILE: &str = "encoder.bin";
pub const INDEX_FILE: &str = "index.hgix";
pub const RUNS_FILE: &str = "run.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const LOCK_FILE: &str = ".lock";

/// Per-stage encoder snapshot (`stage 0` is the untrained initialization).
pub fn stage_encoder_file(stage: u8) -> String {
    format!("encoder.stage{stage}.bin")
}

pub fn stage_report_file(stage: u8) -> String {
    format!("report.stage{stage}.jsonl")
}

// Distinct seed streams derived from the master seed, one per consumer, so
// changing one stage's schedule never shifts another stage's draws.
const SEED_SYNTH: u64 = 1;
const SEED_ENCODER_INIT: u64 = 2;
const SEED_STAGE1: u64 = 3;
const SEED_STAGE2: u64 = 4;
const SEED_STAGE3: u64 = 5;

/// splitmix64 finalizer over `master ^ stream`.
fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A locked working directory. The lock file is created exclusively on
/// acquire and removed on drop; a second acquire on the same directory fails
/// until the first is released.
#[derive(Debug)]
pub struct Workdir {
    root: PathBuf,
}

impl Workdir {
    pub fn acquire(root: &Path) -> Result<Workdir> {
        fs::create_dir_all(root)?;
        let lock = root.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => Ok(Workdir { root: root.to_path_buf() }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::runtime(format!(
                "workdir {} is locked by another run (remove {} if it is stale)",
                root.display(),
                lock.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Path of an artifact a step depends on; names the missing file.
    fn require(&self, name: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if !p.is_file() {
            return Err(Error::validation(format!(
                "missing artifact {} (run the step that produces it first)",
                p.display()
            )));
        }
        Ok(p)
    }
}

impl Drop for Workdir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.root.join(LOCK_FILE));
    }
}

fn renderer_from(cfg: &PipelineConfig) -> Result<InstructionRenderer> {
    if cfg.instructions.paraphrases.is_empty() {
        Ok(InstructionRenderer::builtin())
    } else {
        Ok(InstructionRenderer::new(ParaphraseSet::load(Path::new(&cfg.instructions.paraphrases))?))
    }
}

fn verbalizer_client(cfg: &VerbalizerSection) -> Option<verbalize::VerbalizerClient> {
    if cfg.url.is_empty() {
        return None;
    }
    let token = std::env::var(&cfg.token_env).ok().filter(|t| !t.is_empty());
    Some(verbalize::VerbalizerClient::new(cfg.url.clone(), token, cfg.timeout_ms, cfg.retries))
}

fn load_vocab(wd: &Workdir) -> Result<Vocabulary> {
    Vocabulary::load(&wd.require(VOCAB_FILE)?)
}

fn load_encoder_checked(wd: &Workdir, vocab: &Vocabulary) -> Result<EncoderParams> {
    let enc = encoder::io::load(&wd.require(ENCODER_FILE)?)?;
    if enc.vocab_size != vocab.len() {
        return Err(Error::validation(format!(
            "encoder vocabulary size {} does not match {} ({} entries)",
            enc.vocab_size,
            VOCAB_FILE,
            vocab.len()
        )));
    }
    Ok(enc)
}

fn save_stage_report(path: &Path, report: &StageReport) -> Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        stage: u8,
        #[serde(flatten)]
        epoch: &'a training::EpochReport,
    }
    let mut out = String::new();
    for e in &report.epochs {
        let line = serde_json::to_string(&Line { stage: report.stage, epoch: e })
            .map_err(|e| Error::runtime(format!("serialize epoch report: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn report_summary(report: &StageReport) -> String {
    match (report.epochs.first(), report.epochs.last()) {
        (Some(a), Some(b)) => {
            format!("loss {:.4} -> {:.4} over {} epochs", a.mean_loss, b.mean_loss, report.epochs.len())
        }
        _ => "no epochs".to_owned(),
    }
}

/// Every instruction surface form the pipeline can emit, so the vocabulary
/// covers template words before any query is encoded.
fn instruction_texts(renderer: &InstructionRenderer) -> Vec<String> {
    let domains = ["", "books", "movies", "music", "football", "television series"];
    let mut out = Vec::new();
    for g in InstructionGroup::ALL_GROUPS {
        for d in domains {
            for i in 0..renderer.option_count(g) {
                let r = renderer.render(g, d, i).expect("fixed domain list is valid");
                out.push(r.text);
            }
        }
    }
    out
}

fn sequence_ids(vocab: &Vocabulary, text: &str) -> Vec<u32> {
    vocab.sequence(text, MAX_SEQ_LEN).ids
}

// ---------------------------------------------------------------------------
// Steps
// ---------------------------------------------------------------------------

pub fn cmd_synth(wd: &Workdir, cfg: &PipelineConfig) -> Result<()> {
    let sc = SynthConfig {
        seed: derive_seed(cfg.seed, SEED_SYNTH),
        entities: cfg.synth.entities,
        questions: cfg.synth.questions,
    };
    let (corpus, questions) = synth::synthesize(&sc)?;
    jsonl::save_corpus(&wd.path(CORPUS_FILE), &corpus)?;
    jsonl::save_questions(&wd.path(QUESTIONS_FILE), &questions)?;
    println!(
        "synth: {} evidence records, {} questions -> {}",
        corpus.len(),
        questions.len(),
        wd.root().display()
    );
    Ok(())
}

/// Copy external corpus and question files into the workdir, validating and
/// normalizing them on the way. Explicit paths win over the config section.
pub fn cmd_ingest(
    wd: &Workdir,
    cfg: &PipelineConfig,
    corpus_src: Option<&Path>,
    questions_src: Option<&Path>,
) -> Result<()> {
    let corpus_path = resolve_source(corpus_src, &cfg.ingest.corpus, "corpus")?;
    let questions_path = resolve_source(questions_src, &cfg.ingest.questions, "questions")?;
    let corpus = jsonl::load_corpus(&corpus_path)?;
    let questions = jsonl::load_questions(&questions_path)?;
    jsonl::save_corpus(&wd.path(CORPUS_FILE), &corpus)?;
    jsonl::save_questions(&wd.path(QUESTIONS_FILE), &questions)?;
    println!("ingest: {} evidence records, {} questions", corpus.len(), questions.len());
    Ok(())
}

fn resolve_source(flag: Option<&Path>, config_value: &str, what: &str) -> Result<PathBuf> {
    if let Some(p) = flag {
        return Ok(p.to_path_buf());
    }
    if !config_value.is_empty() {
        return Ok(PathBuf::from(config_value));
    }
    Err(Error::validation(format!(
        "no {what} source: pass --{what} or set [ingest] {what} in the config"
    )))
}

/// Pair every structured evidence record with a verbalized sentence.
pub fn cmd_pairs(wd: &Workdir, cfg: &PipelineConfig) -> Result<()> {
    let corpus = jsonl::load_corpus(&wd.require(CORPUS_FILE)?)?;
    let client = verbalizer_client(&cfg.verbalizer);
    let mut pairs = Vec::new();
    let mut fallbacks = 0usize;
    for e in &corpus {
        if e.etype == KnowledgeType::Text {
            continue;
        }
        let (text, fell_back) = verbalize::verbalize_with(e, client.as_ref())?;
        fallbacks += fell_back as usize;
        pairs.push(DataTextPair { data: e.clone(), text });
    }
    jsonl::save_pairs(&wd.path(PAIRS_FILE), &pairs)?;
    match (client.is_some(), fallbacks) {
        (false, _) => println!("pairs: {} data-text pairs (template verbalizer)", pairs.len()),
        (true, 0) => println!("pairs: {} data-text pairs (external verbalizer)", pairs.len()),
        (true, n) => println!(
            "pairs: {} data-text pairs ({n} fell back to the template verbalizer)",
            pairs.len()
        ),
    }
    Ok(())
}

/// Build the vocabulary, initialize the encoder, and run masked-
/// reconstruction pretraining over evidence and question texts.
///
/// The vocabulary must cover everything any later step encodes — evidence,
/// questions, instruction surfaces, and the verbalized pair texts — so this
/// step requires `pairs.jsonl` even though pretraining itself never reads
/// the pair sentences.
pub fn cmd_pretrain(wd: &Workdir, cfg: &PipelineConfig) -> Result<()> {
    let corpus = jsonl::load_corpus(&wd.require(CORPUS_FILE)?)?;
    let questions = jsonl::load_questions(&wd.require(QUESTIONS_FILE)?)?;
    let pairs = jsonl::load_pairs(&wd.require(PAIRS_FILE)?)?;
    let renderer = renderer_from(cfg)?;

    let mut vocab_texts: Vec<String> = Vec::with_capacity(corpus.len() + questions.len() + pairs.len());
    let mut texts: Vec<String> = Vec::with_capacity(corpus.len() + questions.len());
    texts.extend(corpus.iter().map(|e| e.text.clone()));
    texts.extend(questions.iter().map(|q| q.text.clone()));
    vocab_texts.extend(texts.iter().cloned());
    vocab_texts.extend(pairs.into_iter().map(|p| p.text));
    vocab_texts.extend(instruction_texts(&renderer));
    let vocab = Vocabulary::build(
        vocab_texts.iter().map(|s| s.as_str()),
        cfg.vocab.min_frequency as u32,
        cfg.vocab.max_size,
    )?;
    vocab.save(&wd.path(VOCAB_FILE))?;

    let mut enc = EncoderParams::init(
        vocab.len(),
        cfg.encoder.dim,
        derive_seed(cfg.seed, SEED_ENCODER_INIT),
        cfg.encoder.init_scale,
    )?;
    encoder::io::save(&enc, &wd.path(&stage_encoder_file(0)))?;

    let sequences: Vec<Vec<u32>> = par::map_ordered(&texts, |t| sequence_ids(&vocab, t));
    let report =
        training::stage1_pretrain(&mut enc, &sequences, &cfg.stage1.opts(), derive_seed(cfg.seed, SEED_STAGE1))?;
    encoder::io::save(&enc, &wd.path(&stage_encoder_file(1)))?;
    encoder::io::save(&enc, &wd.path(ENCODER_FILE))?;
    save_stage_report(&wd.path(&stage_report_file(1)), &report)?;
    println!(
        "pretrain: vocab {} tokens, encoder dim {}, {}",
        vocab.len(),
        cfg.encoder.dim,
        report_summary(&report)
    );
    Ok(())
}

/// Align structured linearizations with their verbalized sentences.
pub fn cmd_align(wd: &Workdir, cfg: &PipelineConfig) -> Result<()> {
    let vocab = load_vocab(wd)?;
    let mut enc = load_encoder_checked(wd, &vocab)?;
    let pairs = jsonl::load_pairs(&wd.require(PAIRS_FILE)?)?;
    let token_pairs: Vec<(Vec<u32>, Vec<u32>)> = par::map_ordered(&pairs, |p| {
        (sequence_ids(&vocab, &p.data.text), sequence_ids(&vocab, &p.text))
    });
    let report =
        training::stage2_align(&mut enc, &token_pairs, &cfg.stage2.opts(), derive_seed(cfg.seed, SEED_STAGE2))?;
    encoder::io::save(&enc, &wd.path(&stage_encoder_file(2)))?;
    encoder::io::save(&enc, &wd.path(ENCODER_FILE))?;
    save_stage_report(&wd.path(&stage_report_file(2)), &report)?;
    println!("align: {} pairs, {}", pairs.len(), report_summary(&report));
    Ok(())
}

/// One fine-tuning question: its positives (lowest-id relevant evidence per
/// type), its mined hard-negative pools, and the first relevant evidence of
/// each type (the replacement source for exploration swaps).
struct QuestionPlan {
    q_index: usize,
    positives: Vec<(KnowledgeType, i64)>,
    pools: TypedPools,
    first_relevant: [Option<i64>; 4],
}

impl QuestionPlan {
    /// Lowest-id relevant evidence whose type differs from `avoid`.
    fn swap_candidate(&self, avoid: KnowledgeType) -> Option<(KnowledgeType, i64)> {
        KnowledgeType::ALL
            .iter()
            .filter(|&&t| t != avoid)
            .filter_map(|&t| self.first_relevant[t.index()].map(|id| (t, id)))
            .min_by_key(|&(_, id)| id)
    }
}

/// Instruction-aware fine-tuning on the training split (everything before
/// the evaluation holdout).
pub fn cmd_finetune(wd: &Workdir, cfg: &PipelineConfig) -> Result<()> {
    let corpus = jsonl::load_corpus(&wd.require(CORPUS_FILE)?)?;
    let questions = jsonl::load_questions(&wd.require(QUESTIONS_FILE)?)?;
    let vocab = load_vocab(wd)?;
    let mut enc = load_encoder_checked(wd, &vocab)?;
    let renderer = renderer_from(cfg)?;

    if cfg.eval.holdout >= questions.len() {
        return Err(Error::validation(format!(
            "eval.holdout = {} leaves no training questions (have {})",
            cfg.eval.holdout,
            questions.len()
        )));
    }
    let train = &questions[..questions.len() - cfg.eval.holdout];

    let corpus_tokens: Vec<Vec<u32>> = par::map_ordered(&corpus, |e| sequence_ids(&vocab, &e.text));

    let text_fallback = cfg.eval.text_fallback;
    let relevance: Vec<Vec<bool>> = par::map_ordered(train, |q| {
        corpus.iter().map(|e| label_relevance_with(q, e, text_fallback)).collect()
    });

    let scores: Vec<Vec<f64>> = match cfg.stage3.miner {
        MinerKind::Dense => {
            let entries: Vec<(i64, KnowledgeType, TokenSequence)> = corpus
                .iter()
                .map(|e| (e.evidence_id, e.etype, vocab.sequence(&e.text, MAX_SEQ_LEN)))
                .collect();
            let probe = VectorIndex::build(&enc, &entries)?;
            let mut scores = Vec::with_capacity(train.len());
            for q in train {
                let emb = encoder::encode(&enc, &sequence_ids(&vocab, &q.text), true)?;
                scores.push(probe.score_all(&emb)?);
            }
            scores
        }
        MinerKind::Bm25 => {
            let docs: Vec<(i64, Vec<String>)> =
                corpus.iter().map(|e| (e.evidence_id, tokenize(&e.text))).collect();
            let bm25 = Bm25Index::build(&docs)?;
            let queries: Vec<Vec<String>> = train.iter().map(|q| tokenize(&q.text)).collect();
            bm25.score_batch(&queries)
        }
    };

    let mut plans = Vec::new();
    for (qi, _) in train.iter().enumerate() {
        let rel = &relevance[qi];
        let mut first_relevant = [None; 4];
        for (ei, e) in corpus.iter().enumerate() {
            if rel[ei] && first_relevant[e.etype.index()].is_none() {
                first_relevant[e.etype.index()] = Some(e.evidence_id);
            }
        }
        let positives: Vec<(KnowledgeType, i64)> = KnowledgeType::ALL
            .iter()
            .filter_map(|&t| first_relevant[t.index()].map(|id| (t, id)))
            .collect();
        if positives.is_empty() {
            continue;
        }
        let candidates: Vec<ScoredCandidate> = corpus
            .iter()
            .enumerate()
            .map(|(ei, e)| ScoredCandidate {
                evidence_id: e.evidence_id,
                etype: e.etype,
                score: scores[qi][ei],
                relevant: rel[ei],
            })
            .collect();
        plans.push(QuestionPlan {
            q_index: qi,
            positives,
            pools: TypedPools::mine(&candidates),
            first_relevant,
        });
    }
    if plans.is_empty() {
        return Err(Error::validation(
            "no training question has any relevant evidence; cannot fine-tune".to_owned(),
        ));
    }

    let capacity = cfg.stage3.group_capacity;
    let report = training::stage3_finetune(
        &mut enc,
        &cfg.stage3.opts(),
        derive_seed(cfg.seed, SEED_STAGE3),
        |_, rng| {
            let mut samples = Vec::new();
            for plan in &plans {
                let q = &train[plan.q_index];
                for &(ptype, pid) in &plan.positives {
                    let positive_ids = corpus_tokens[pid as usize].clone();

                    let inst = renderer.sample(InstructionGroup::All, &q.domain, rng)?;
                    let group =
                        build_negative_group(&plan.pools, GroupMode::Balanced, capacity, None, rng);
                    samples.push(ContrastSample {
                        query_ids: sequence_ids(&vocab, &format!("{} {}", inst.text, q.text)),
                        positive_ids: positive_ids.clone(),
                        group: group_tokens(&group.members, &corpus_tokens),
                    });

                    let inst = renderer.sample(InstructionGroup::for_type(ptype), &q.domain, rng)?;
                    let group = build_negative_group(
                        &plan.pools,
                        GroupMode::Preferred(ptype),
                        capacity,
                        plan.swap_candidate(ptype),
                        rng,
                    );
                    samples.push(ContrastSample {
                        query_ids: sequence_ids(&vocab, &format!("{} {}", inst.text, q.text)),
                        positive_ids,
                        group: group_tokens(&group.members, &corpus_tokens),
                    });
                }
            }
            Ok(samples)
        },
    )?;
    encoder::io::save(&enc, &wd.path(&stage_encoder_file(3)))?;
    encoder::io::save(&enc, &wd.path(ENCODER_FILE))?;
    save_stage_report(&wd.path(&stage_report_file(3)), &report)?;
    println!("finetune: {} training questions, {}", plans.len(), report_summary(&report));
    Ok(())
}

fn group_tokens(
    members: &[(KnowledgeType, i64)],
    corpus_tokens: &[Vec<u32>],
) -> Vec<(KnowledgeType, Vec<u32>)> {
    members.iter().map(|&(t, id)| (t, corpus_tokens[id as usize].clone())).collect()
}

/// Encode the whole corpus with the current encoder and freeze the result.
pub fn cmd_index(wd: &Workdir, cfg: &PipelineConfig) -> Result<()> {
    let _ = cfg;
    let corpus = jsonl::load_corpus(&wd.require(CORPUS_FILE)?)?;
    let vocab = load_vocab(wd)?;
    let enc = load_encoder_checked(wd, &vocab)?;
    let entries: Vec<(i64, KnowledgeType, TokenSequence)> = corpus
        .iter()
        .map(|e| (e.evidence_id, e.etype, vocab.sequence(&e.text, MAX_SEQ_LEN)))
        .collect();
    let index = VectorIndex::build(&enc, &entries)?;
    index.save(&wd.path(INDEX_FILE))?;
    println!("index: {} vectors, dim {}", index.len(), index.dim());
    Ok(())
}

/// Interactive retrieval against the frozen index.
pub fn cmd_search(
    wd: &Workdir,
    cfg: &PipelineConfig,
    query: &str,
    group: InstructionGroup,
    domain: &str,
    k: usize,
) -> Result<()> {
    let corpus = jsonl::load_corpus(&wd.require(CORPUS_FILE)?)?;
    let vocab = load_vocab(wd)?;
    let enc = load_encoder_checked(wd, &vocab)?;
    let index = VectorIndex::load(&wd.require(INDEX_FILE)?)?;
    index.verify_encoder(&enc)?;
    let renderer = renderer_from(cfg)?;

    let inst = renderer.render(group, domain, 0)?;
    let full = format!("{} {}", inst.text, query);
    let emb = encoder::encode(&enc, &sequence_ids(&vocab, &full), true)?;
    let hits = index.top_k(&emb, k)?;
    println!("query: {full}");
    for h in &hits {
        let text = corpus
            .get(h.evidence_id as usize)
            .map(|e| snippet(&e.text))
            .unwrap_or_default();
        println!("{:>4}  {:>9.6}  {:>7}  {:<5}  {}", h.rank, h.score, h.evidence_id, h.etype.label(), text);
    }
    Ok(())
}

fn snippet(text: &str) -> String {
    const LIMIT: usize = 72;
    if text.chars().count() <= LIMIT {
        text.to_owned()
    } else {
        let mut s: String = text.chars().take(LIMIT - 1).collect();
        s.push('…');
        s
    }
}

/// Run both evaluation scenarios over the holdout split and write
/// `run.jsonl` (every ranked list) and `metrics.json` (the aggregates).
pub fn cmd_eval(wd: &Workdir, cfg: &PipelineConfig) -> Result<()> {
    let corpus = jsonl::load_corpus(&wd.require(CORPUS_FILE)?)?;
    let questions = jsonl::load_questions(&wd.require(QUESTIONS_FILE)?)?;
    let vocab = load_vocab(wd)?;
    let enc = load_encoder_checked(wd, &vocab)?;
    let index = VectorIndex::load(&wd.require(INDEX_FILE)?)?;
    index.verify_encoder(&enc)?;
    let renderer = renderer_from(cfg)?;

    if cfg.eval.holdout > questions.len() {
        return Err(Error::validation(format!(
            "eval.holdout = {} exceeds the question count {}",
            cfg.eval.holdout,
            questions.len()
        )));
    }
    let eval_qs: &[QuestionRecord] = if cfg.eval.holdout == 0 {
        &questions
    } else {
        &questions[questions.len() - cfg.eval.holdout..]
    };
    let text_fallback = cfg.eval.text_fallback;
    let eligibility = eval::compute_eligibility(&corpus, eval_qs, text_fallback);

    let mut tasks: Vec<(&QuestionRecord, InstructionGroup)> =
        eval_qs.iter().map(|q| (q, InstructionGroup::All)).collect();
    for &t in &KnowledgeType::ALL {
        for q in eval_qs {
            if eligibility[&q.question_id][t.index()] {
                tasks.push((q, InstructionGroup::for_type(t)));
            }
        }
    }

    let runs: Vec<RunResult> = par::map_ordered(&tasks, |&(q, group)| {
        run_question(&corpus, &vocab, &enc, &index, &renderer, q, group, text_fallback)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    eval::save_runs(&wd.path(RUNS_FILE), &runs)?;
    let report = eval::build_report(&runs, &eligibility)?;
    eval::save_report(&wd.path(METRICS_FILE), &report)?;

    let s1 = &report.scenario1;
    println!("scenario 1 (all sources, {} questions)", s1.questions);
    println!(
        "  Hit@5 {:.2}  Hit@10 {:.2}  Hit@100 {:.2}  MRR@100 {:.2}",
        s1.hit_at_5, s1.hit_at_10, s1.hit_at_100, s1.mrr_at_100
    );
    println!("scenario 2 (typed instructions)");
    for &t in &KnowledgeType::ALL {
        let r = &report.scenario2[t.wire()];
        println!(
            "  {:<5} questions {:>4}  Type-Hit@100 {:>6.2}  (all-sources baseline {:>6.2})",
            t.wire(),
            r.questions,
            r.type_hit_at_100,
            r.type_hit_at_100_under_all
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_question(
    corpus: &[EvidenceRecord],
    vocab: &Vocabulary,
    enc: &EncoderParams,
    index: &VectorIndex,
    renderer: &InstructionRenderer,
    q: &QuestionRecord,
    group: InstructionGroup,
    text_fallback: bool,
) -> Result<RunResult> {
    let inst = renderer.render(group, &q.domain, 0)?;
    let full = format!("{} {}", inst.text, q.text);
    let emb = encoder::encode(enc, &sequence_ids(vocab, &full), true)?;
    let top = index.top_k(&emb, EVAL_DEPTH)?;
    let hits = top
        .into_iter()
        .map(|h| {
            let e = corpus.get(h.evidence_id as usize).ok_or_else(|| {
                Error::runtime(format!("indexed evidence id {} is not in the corpus", h.evidence_id))
            })?;
            Ok(HitEntry {
                id: h.evidence_id,
                score: h.score,
                relevant: label_relevance_with(q, e, text_fallback),
                etype: h.etype,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunResult { question_id: q.question_id, group, hits })
}

pub fn cmd_stats(wd: &Workdir) -> Result<()> {
    let corpus = jsonl::load_corpus(&wd.require(CORPUS_FILE)?)?;
    let stats = corpus::corpus_stats(&corpus)?;
    print!("{}", stats.render_table());
    Ok(())
}

/// The whole flow in one process: source data (ingest when a source is
/// configured, synthesis otherwise), then pairs, the three training stages,
/// the index, and the evaluation.
pub fn cmd_pipeline(
    wd: &Workdir,
    cfg: &PipelineConfig,
    corpus_src: Option<&Path>,
    questions_src: Option<&Path>,
) -> Result<()> {
    if corpus_src.is_some() || !cfg.ingest.corpus.is_empty() {
        cmd_ingest(wd, cfg, corpus_src, questions_src)?;
    } else {
        cmd_synth(wd, cfg)?;
    }
    cmd_pairs(wd, cfg)?;
    cmd_pretrain(wd, cfg)?;
    cmd_align(wd, cfg)?;
    cmd_finetune(wd, cfg)?;
    cmd_index(wd, cfg)?;
    cmd_eval(wd, cfg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.seed = 11;
        cfg.synth.entities = 24;
        cfg.synth.questions = 30;
        cfg.encoder.dim = 8;
        cfg.stage1 = crate::config::StageSection { epochs: 1, batch_size: 16, lr: 0.3 };
        cfg.stage2 = crate::config::StageSection { epochs: 1, batch_size: 16, lr: 0.2 };
        cfg.stage3.epochs = 1;
        cfg.stage3.batch_size = 8;
        cfg.eval.holdout = 5;
        cfg
    }

    #[test]
    fn lock_excludes_second_acquire_until_drop() {
        let dir = tempfile::tempdir().unwrap();
        let wd = Workdir::acquire(dir.path()).unwrap();
        let err = Workdir::acquire(dir.path()).unwrap_err();
        assert!(err.to_string().contains("locked"), "unexpected: {err}");
        drop(wd);
        Workdir::acquire(dir.path()).unwrap();
    }

    #[test]
    fn missing_artifact_error_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let wd = Workdir::acquire(dir.path()).unwrap();
        let err = cmd_pairs(&wd, &tiny_config()).unwrap_err();
        assert!(err.to_string().contains(CORPUS_FILE), "unexpected: {err}");
    }

    #[test]
    fn full_flow_produces_loadable_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let wd = Workdir::acquire(dir.path()).unwrap();
        let cfg = tiny_config();
        cmd_pipeline(&wd, &cfg, None, None).unwrap();

        for name in [CORPUS_FILE, QUESTIONS_FILE, PAIRS_FILE, VOCAB_FILE, ENCODER_FILE, INDEX_FILE, RUNS_FILE, METRICS_FILE] {
            assert!(wd.path(name).is_file(), "missing {name}");
        }
        for stage in 0..=3 {
            assert!(wd.path(&stage_encoder_file(stage)).is_file(), "missing stage {stage} snapshot");
        }

        let vocab = load_vocab(&wd).unwrap();
        let enc = load_encoder_checked(&wd, &vocab).unwrap();
        let index = VectorIndex::load(&wd.path(INDEX_FILE)).unwrap();
        index.verify_encoder(&enc).unwrap();
        let report = eval::load_report(&wd.path(METRICS_FILE)).unwrap();
        assert_eq!(report.scenario1.questions, cfg.eval.holdout);
        let runs = eval::load_runs(&wd.path(RUNS_FILE)).unwrap();
        assert!(runs.len() >= cfg.eval.holdout);
        // Synthetic questions always have two relevant types, so every
        // question contributes at least the all-sources run plus two typed runs.
        assert!(runs.len() >= 3 * cfg.eval.holdout, "only {} runs", runs.len());
    }

    #[test]
    fn same_seed_reruns_are_byte_identical() {
        let cfg = tiny_config();
        let mut outputs: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().unwrap();
            let wd = Workdir::acquire(dir.path()).unwrap();
            cmd_pipeline(&wd, &cfg, None, None).unwrap();
            let mut files = Vec::new();
            for name in [CORPUS_FILE, QUESTIONS_FILE, PAIRS_FILE, VOCAB_FILE, ENCODER_FILE, INDEX_FILE, RUNS_FILE, METRICS_FILE] {
                files.push((name.to_owned(), fs::read(wd.path(name)).unwrap()));
            }
            outputs.push(files);
        }
        let (a, b) = (&outputs[0], &outputs[1]);
        for ((name, bytes_a), (_, bytes_b)) in a.iter().zip(b) {
            assert_eq!(bytes_a, bytes_b, "{name} differs between identically-seeded runs");
        }
    }

    #[test]
    fn derived_seeds_differ_by_stream_and_master() {
        let mut seen = std::collections::BTreeSet::new();
        for master in [0u64, 1, 42, u64::MAX] {
            for stream in [SEED_SYNTH, SEED_ENCODER_INIT, SEED_STAGE1, SEED_STAGE2, SEED_STAGE3] {
                assert!(seen.insert(derive_seed(master, stream)), "collision at {master}/{stream}");
            }
        }
    }
}
