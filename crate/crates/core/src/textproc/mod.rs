//! Tokenization and vocabulary handling.
//!
//! The tokenizer is deliberately blunt: lowercase, then split on maximal runs
//! of non-alphanumeric characters. Retrieval sees evidence through exactly
//! this lens, so punctuation in linearized records (commas between fields,
//! quotes around literals) never reaches the models.

pub mod bm25;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Reserved id for out-of-vocabulary tokens.
pub const UNK_ID: u32 = 0;
/// Reserved id for the mask token used by masked-reconstruction training.
pub const MASK_ID: u32 = 1;

const UNK_TOKEN: &str = "<unk>";
const MASK_TOKEN: &str = "<mask>";

/// Lowercase and split on maximal non-alphanumeric runs, dropping empties.
///
/// `"Maverick, cast member"` → `["maverick", "cast", "member"]`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Token ids for one input, remembering the pre-truncation length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    /// Token count before truncation to the maximum sequence length.
    pub original_len: usize,
}

/// Frequency-built token↔id table with dense ids.
///
/// Id 0 is `<unk>`, id 1 is `<mask>`; both are injected and can never collide
/// with real tokens (the tokenizer strips angle brackets). Remaining ids are
/// assigned by descending frequency, ties broken lexicographically.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    id_of: HashMap<String, u32>,
    token_of: Vec<String>,
}

impl Vocabulary {
    /// Count tokens over `texts` and keep the most frequent `max_size - 2`
    /// that occur at least `min_frequency` times.
    pub fn build<'a, I>(texts: I, min_frequency: u32, max_size: usize) -> Result<Vocabulary>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if max_size < 2 {
            return Err(Error::validation(format!(
                "vocabulary max_size must be at least 2 (got {max_size})"
            )));
        }
        let mut counts: HashMap<String, u32> = HashMap::new();
        for text in texts {
            for tok in tokenize(text) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(String, u32)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_frequency.max(1))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - 2);

        let mut token_of = Vec::with_capacity(ranked.len() + 2);
        token_of.push(UNK_TOKEN.to_owned());
        token_of.push(MASK_TOKEN.to_owned());
        token_of.extend(ranked.into_iter().map(|(t, _)| t));
        let id_of = token_of
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Vocabulary { id_of, token_of })
    }

    pub fn len(&self) -> usize {
        self.token_of.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the two reserved entries always exist
    }

    pub fn id(&self, token: &str) -> u32 {
        self.id_of.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.token_of.get(id as usize).map(String::as_str)
    }

    /// Tokenize, map to ids (unknown → [`UNK_ID`]), truncate to `max_len`.
    pub fn sequence(&self, text: &str, max_len: usize) -> TokenSequence {
        let mut ids: Vec<u32> = tokenize(text).iter().map(|t| self.id(t)).collect();
        let original_len = ids.len();
        ids.truncate(max_len.max(1));
        TokenSequence { ids, original_len }
    }

    /// Map a pre-tokenized id list, truncating the same way.
    pub fn truncate_ids(ids: Vec<u32>, max_len: usize) -> TokenSequence {
        let original_len = ids.len();
        let mut ids = ids;
        ids.truncate(max_len.max(1));
        TokenSequence { ids, original_len }
    }

    /// Serialize as `token<TAB>id` lines ordered by id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (id, tok) in self.token_of.iter().enumerate() {
            writeln!(out, "{tok}\t{id}").expect("string write");
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let raw = std::fs::read_to_string(path)?;
        let mut token_of = Vec::new();
        for (lineno, line) in raw.lines().enumerate() {
            let (tok, id) = line.split_once('\t').ok_or_else(|| {
                Error::format(format!("{}:{}: expected token<TAB>id", path.display(), lineno + 1))
            })?;
            let id: usize = id.parse().map_err(|_| {
                Error::format(format!("{}:{}: bad id {id:?}", path.display(), lineno + 1))
            })?;
            if id != lineno {
                return Err(Error::format(format!(
                    "{}:{}: ids must be dense and ascending (got {id})",
                    path.display(),
                    lineno + 1
                )));
            }
            token_of.push(tok.to_owned());
        }
        if token_of.len() < 2 || token_of[0] != UNK_TOKEN || token_of[1] != MASK_TOKEN {
            return Err(Error::format(format!(
                "{}: first entries must be {UNK_TOKEN} and {MASK_TOKEN}",
                path.display()
            )));
        }
        let id_of = token_of
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Vocabulary { id_of, token_of })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenize_strips_punctuation_and_lowercases() {
        assert_eq!(tokenize("Maverick, cast member"), vec!["maverick", "cast", "member"]);
        assert_eq!(tokenize("Year is 1975"), vec!["year", "is", "1975"]);
        assert_eq!(tokenize("  --  "), Vec::<String>::new());
        // Unicode ellipsis and apostrophes are separators too
        assert_eq!(tokenize("Sally…'s"), vec!["sally", "s"]);
    }

    #[test]
    fn vocab_reserves_unk_and_mask_and_ranks_by_frequency() {
        let texts = ["b b b a a c", "a d"];
        let v = Vocabulary::build(texts.iter().copied(), 1, 100).unwrap();
        // a:3 b:3 (tie → lexicographic), c:1 d:1
        assert_eq!(v.id("a"), 2);
        assert_eq!(v.id("b"), 3);
        assert_eq!(v.id("c"), 4);
        assert_eq!(v.id("d"), 5);
        assert_eq!(v.id("zzz"), UNK_ID);
        assert_eq!(v.token(MASK_ID), Some("<mask>"));
    }

    #[test]
    fn vocab_respects_min_frequency_and_cap() {
        let texts = ["a a a b b c"];
        let v = Vocabulary::build(texts.iter().copied(), 2, 100).unwrap();
        assert_eq!(v.len(), 4); // unk, mask, a, b
        assert_eq!(v.id("c"), UNK_ID);

        let capped = Vocabulary::build(texts.iter().copied(), 1, 3).unwrap();
        assert_eq!(capped.len(), 3); // only "a" fits after the reserved pair
        assert_eq!(capped.id("a"), 2);
        assert_eq!(capped.id("b"), UNK_ID);
    }

    #[test]
    fn sequence_truncates_but_remembers_length() {
        let v = Vocabulary::build(["a b c d e"].iter().copied(), 1, 100).unwrap();
        let seq = v.sequence("a b c d e", 3);
        assert_eq!(seq.ids.len(), 3);
        assert_eq!(seq.original_len, 5);
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        let v = Vocabulary::build(["alpha beta beta gamma"].iter().copied(), 1, 100).unwrap();
        v.save(&path).unwrap();
        let w = Vocabulary::load(&path).unwrap();
        assert_eq!(v.len(), w.len());
        for id in 0..v.len() as u32 {
            assert_eq!(v.token(id), w.token(id));
        }
    }

    proptest! {
        // Tokenizing a token stream again is the identity on the stream.
        #[test]
        fn tokenize_is_idempotent(s in "\\PC{0,80}") {
            let once = tokenize(&s);
            let again = tokenize(&once.join(" "));
            prop_assert_eq!(once, again);
        }

        // Every id a vocabulary hands out maps back to a token and vice versa.
        #[test]
        fn ids_are_dense_and_invertible(words in proptest::collection::vec("[a-z]{1,6}", 1..40)) {
            let text = words.join(" ");
            let v = Vocabulary::build([text.as_str()].iter().copied(), 1, 1000).unwrap();
            for id in 0..v.len() as u32 {
                let tok = v.token(id).unwrap().to_owned();
                if id >= 2 {
                    prop_assert_eq!(v.id(&tok), id);
                }
            }
            for w in &words {
                prop_assert!(v.id(w) >= 2, "in-corpus word must be in vocab");
            }
        }
    }
}
