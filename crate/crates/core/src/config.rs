//! TOML pipeline configuration.
//!
//! Every field has a default, so an empty file (or no file at all) is a
//! valid configuration; unknown keys are rejected rather than ignored.
//! Relative paths in the file resolve against the working directory of the
//! process, not the workdir.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::StageOpts;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    pub ingest: IngestSection,
    pub synth: SynthSection,
    pub vocab: VocabSection,
    pub encoder: EncoderSection,
    pub instructions: InstructionsSection,
    pub stage1: StageSection,
    pub stage2: StageSection,
    pub stage3: Stage3Section,
    pub eval: EvalSection,
    pub verbalizer: VerbalizerSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestSection {
    /// Source corpus JSONL; empty means the workdir already holds one.
    pub corpus: String,
    /// Source questions JSONL; empty means the workdir already holds one.
    pub questions: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub entities: usize,
    pub questions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocabSection {
    pub min_frequency: usize,
    pub max_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub dim: usize,
    pub init_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InstructionsSection {
    /// Paraphrase file path; empty selects the built-in set.
    pub paraphrases: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MinerKind {
    /// Score mining candidates with the current encoder.
    Dense,
    /// Score mining candidates lexically.
    Bm25,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage3Section {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub miner: MinerKind,
    pub group_capacity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// The last `holdout` questions form the evaluation split (0 = all
    /// questions are evaluated and none are held out from fine-tuning).
    pub holdout: usize,
    /// Fall back to answer-text containment when a question has no answer
    /// entity annotations.
    pub text_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerbalizerSection {
    /// HTTP endpoint; empty selects the built-in template verbalizer.
    pub url: String,
    pub timeout_ms: u64,
    pub retries: u32,
    /// Environment variable holding the bearer token, read at call time.
    pub token_env: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            ingest: IngestSection::default(),
            synth: SynthSection::default(),
            vocab: VocabSection::default(),
            encoder: EncoderSection::default(),
            instructions: InstructionsSection::default(),
            stage1: StageSection { epochs: 6, batch_size: 32, lr: 0.08 },
            stage2: StageSection { epochs: 8, batch_size: 32, lr: 0.3 },
            stage3: Stage3Section::default(),
            eval: EvalSection::default(),
            verbalizer: VerbalizerSection::default(),
        }
    }
}

impl Default for IngestSection {
    fn default() -> Self {
        IngestSection { corpus: String::new(), questions: String::new() }
    }
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection { entities: 500, questions: 500 }
    }
}

impl Default for VocabSection {
    fn default() -> Self {
        VocabSection { min_frequency: 1, max_size: 30_000 }
    }
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection { dim: 64, init_scale: 0.02 }
    }
}

impl Default for InstructionsSection {
    fn default() -> Self {
        InstructionsSection { paraphrases: String::new() }
    }
}

impl Default for StageSection {
    fn default() -> Self {
        StageSection { epochs: 8, batch_size: 32, lr: 0.3 }
    }
}

impl Default for Stage3Section {
    fn default() -> Self {
        Stage3Section {
            epochs: 10,
            batch_size: 16,
            lr: 0.3,
            miner: MinerKind::Dense,
            group_capacity: crate::training::negatives::GROUP_CAPACITY,
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { holdout: 100, text_fallback: true }
    }
}

impl Default for VerbalizerSection {
    fn default() -> Self {
        VerbalizerSection {
            url: String::new(),
            timeout_ms: 3000,
            retries: 2,
            token_env: "HETRIEVER_VERBALIZER_TOKEN".to_owned(),
        }
    }
}

impl StageSection {
    pub fn opts(&self) -> StageOpts {
        StageOpts { epochs: self.epochs, batch_size: self.batch_size, lr: self.lr }
    }
}

impl Stage3Section {
    pub fn opts(&self) -> StageOpts {
        StageOpts { epochs: self.epochs, batch_size: self.batch_size, lr: self.lr }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::validation(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: PipelineConfig = toml::from_str(&text)
            .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.dim == 0 {
            return Err(Error::validation("encoder.dim must be at least 1".to_owned()));
        }
        if !(self.encoder.init_scale > 0.0) {
            return Err(Error::validation("encoder.init_scale must be positive".to_owned()));
        }
        if self.vocab.max_size < 3 {
            return Err(Error::validation("vocab.max_size must be at least 3".to_owned()));
        }
        if self.stage3.group_capacity == 0 {
            return Err(Error::validation("stage3.group_capacity must be at least 1".to_owned()));
        }
        for (name, s) in [("stage1", &self.stage1), ("stage2", &self.stage2)] {
            if s.batch_size == 0 || !(s.lr > 0.0) {
                return Err(Error::validation(format!(
                    "{name} needs batch_size >= 1 and a positive lr"
                )));
            }
        }
        if self.stage3.batch_size == 0 || !(self.stage3.lr > 0.0) {
            return Err(Error::validation("stage3 needs batch_size >= 1 and a positive lr".to_owned()));
        }
        Ok(())
    }
}
