//! Vocabularies and tokenization for the two backbone flavors: a word-level
//! vocabulary built from the corpus, and a wordpiece vocabulary loaded from
//! an exported pretrained model.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

/// Tokenizer surface needed by prompt construction and answer-space
/// building; implemented by [`Vocab`] and forwarded by every backbone.
pub trait PromptTokenizer {
    fn tokenize(&self, text: &str) -> Vec<u32>;
    fn decode(&self, ids: &[u32]) -> Vec<String>;
    fn token_id(&self, surface: &str) -> Option<u32>;
    fn mask_token_id(&self) -> u32;
    fn begin_token_id(&self) -> u32;
    fn end_token_id(&self) -> u32;
}

impl PromptTokenizer for Vocab {
    fn tokenize(&self, text: &str) -> Vec<u32> {
        Vocab::tokenize(self, text)
    }

    fn decode(&self, ids: &[u32]) -> Vec<String> {
        Vocab::decode(self, ids)
    }

    fn token_id(&self, surface: &str) -> Option<u32> {
        Vocab::token_id(self, surface)
    }

    fn mask_token_id(&self) -> u32 {
        self.mask_id()
    }

    fn begin_token_id(&self) -> u32 {
        self.cls_id()
    }

    fn end_token_id(&self) -> u32 {
        self.sep_id()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenizerKind {
    WordLevel,
    /// Greedy longest-match subword tokenizer with a continuation prefix
    /// ("##" in the common export).
    WordPiece { continuation: String },
}

#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, u32>,
    specials: BTreeSet<String>,
    kind: TokenizerKind,
    lowercase: bool,
    unk_id: u32,
    cls_id: u32,
    sep_id: u32,
    mask_id: u32,
}

fn strip_outer_punct(word: &str) -> &str {
    word.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'')
}

impl Vocab {
    /// Word-level vocabulary: fixed specials first, then the given words
    /// sorted and deduplicated.
    pub fn word_level(words: impl IntoIterator<Item = String>) -> Vocab {
        let mut unique: BTreeSet<String> = BTreeSet::new();
        for w in words {
            let w = w.to_lowercase();
            let w = strip_outer_punct(&w);
            if !w.is_empty() {
                unique.insert(w.to_string());
            }
        }
        let mut tokens: Vec<String> = vec![UNK.into(), CLS.into(), SEP.into(), MASK.into()];
        tokens.extend(unique);
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab {
            tokens,
            index,
            specials: [UNK, CLS, SEP, MASK].iter().map(|s| s.to_string()).collect(),
            kind: TokenizerKind::WordLevel,
            lowercase: true,
            unk_id: 0,
            cls_id: 1,
            sep_id: 2,
            mask_id: 3,
        }
    }

    /// Rebuilds a vocabulary from an exact ordered token list, preserving
    /// ids. Used when loading exported or checkpointed backbones.
    pub fn from_token_list(
        tokens: Vec<String>,
        kind: TokenizerKind,
        lowercase: bool,
        specials: &[String],
    ) -> Result<Vocab> {
        let index: BTreeMap<String, u32> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        if index.len() != tokens.len() {
            return Err(Error::Config("vocabulary token list has duplicates".into()));
        }
        let lookup = |s: &str| {
            index
                .get(s)
                .copied()
                .ok_or_else(|| Error::Config(format!("vocabulary lacks control token {s}")))
        };
        let unk_id = lookup(UNK)?;
        let cls_id = lookup(CLS)?;
        let sep_id = lookup(SEP)?;
        let mask_id = lookup(MASK)?;
        let mut special_set: BTreeSet<String> =
            [UNK, CLS, SEP, MASK].iter().map(|s| s.to_string()).collect();
        for s in specials {
            if !index.contains_key(s) {
                return Err(Error::Config(format!("declared special token {s} missing from vocabulary")));
            }
            special_set.insert(s.clone());
        }
        Ok(Vocab {
            tokens,
            index,
            specials: special_set,
            kind,
            lowercase,
            unk_id,
            cls_id,
            sep_id,
            mask_id,
        })
    }

    /// Wordpiece vocabulary from an ordered token list (ids follow list
    /// order). The four control surfaces must be present.
    pub fn word_piece(tokens: Vec<String>, continuation: String, lowercase: bool) -> Result<Vocab> {
        Vocab::from_token_list(tokens, TokenizerKind::WordPiece { continuation }, lowercase, &[])
    }

    pub fn kind(&self) -> &TokenizerKind {
        &self.kind
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn special_surfaces(&self) -> Vec<String> {
        self.specials.iter().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk_id(&self) -> u32 {
        self.unk_id
    }

    pub fn cls_id(&self) -> u32 {
        self.cls_id
    }

    pub fn sep_id(&self) -> u32 {
        self.sep_id
    }

    pub fn mask_id(&self) -> u32 {
        self.mask_id
    }

    pub fn token_id(&self, surface: &str) -> Option<u32> {
        self.index.get(surface).copied()
    }

    pub fn surface(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(&self, surface: &str) -> bool {
        self.specials.contains(surface)
    }

    /// Appends a new atomic token; later tokenization treats the surface as
    /// a single unit even if it contains punctuation.
    pub fn add_special(&mut self, surface: &str) -> Result<u32> {
        if self.index.contains_key(surface) {
            return Err(Error::DuplicateSpecialToken(surface.to_string()));
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(surface.to_string());
        self.index.insert(surface.to_string(), id);
        self.specials.insert(surface.to_string());
        Ok(id)
    }

    fn word_to_ids(&self, word: &str, out: &mut Vec<u32>) {
        // Atomic specials match before any normalization.
        if let Some(&id) = self.index.get(word) {
            if self.specials.contains(word) {
                out.push(id);
                return;
            }
        }
        let lowered;
        let mut w = strip_outer_punct(word);
        if self.lowercase {
            lowered = w.to_lowercase();
            w = &lowered;
        }
        if w.is_empty() {
            return;
        }
        match &self.kind {
            TokenizerKind::WordLevel => {
                out.push(self.index.get(w).copied().unwrap_or(self.unk_id));
            }
            TokenizerKind::WordPiece { continuation } => {
                let mut rest = w;
                let mut first = true;
                let mut pieces = Vec::new();
                while !rest.is_empty() {
                    let mut matched = None;
                    // Longest prefix that exists in the vocabulary.
                    for end in (1..=rest.len()).rev() {
                        if !rest.is_char_boundary(end) {
                            continue;
                        }
                        let candidate = if first {
                            rest[..end].to_string()
                        } else {
                            format!("{continuation}{}", &rest[..end])
                        };
                        if let Some(&id) = self.index.get(&candidate) {
                            matched = Some((id, end));
                            break;
                        }
                    }
                    match matched {
                        Some((id, end)) => {
                            pieces.push(id);
                            rest = &rest[end..];
                            first = false;
                        }
                        None => {
                            pieces.clear();
                            pieces.push(self.unk_id);
                            break;
                        }
                    }
                }
                out.extend(pieces);
            }
        }
    }

    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            self.word_to_ids(word, &mut out);
        }
        out
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&id| self.surface(id).to_string()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_vocab() -> Vocab {
        Vocab::word_level(
            ["the", "committee", "approved", "plan", "so", "because"]
                .iter()
                .map(|s| s.to_string()),
        )
    }

    #[test]
    fn word_level_tokenizes_known_words() {
        let v = sample_vocab();
        let ids = v.tokenize("The committee approved, the plan.");
        assert_eq!(ids.len(), 5);
        assert!(ids.iter().all(|&i| i != v.unk_id()));
        assert_eq!(v.decode(&ids), vec!["the", "committee", "approved", "the", "plan"]);
    }

    #[test]
    fn unknown_word_maps_to_unk() {
        let v = sample_vocab();
        let ids = v.tokenize("the zeppelin");
        assert_eq!(ids[1], v.unk_id());
    }

    #[test]
    fn specials_are_atomic() {
        let mut v = sample_vocab();
        let id = v.add_special("[Arg1]").unwrap();
        assert_eq!(v.tokenize("[Arg1]"), vec![id]);
        assert_eq!(v.tokenize("the [Arg1] plan").len(), 3);
    }

    #[test]
    fn duplicate_special_rejected() {
        let mut v = sample_vocab();
        v.add_special("[Arg1]").unwrap();
        assert!(matches!(
            v.add_special("[Arg1]"),
            Err(Error::DuplicateSpecialToken(_))
        ));
    }

    #[test]
    fn vocab_order_is_deterministic() {
        let a = Vocab::word_level(["b", "a", "c"].iter().map(|s| s.to_string()));
        let b = Vocab::word_level(["c", "b", "a", "a"].iter().map(|s| s.to_string()));
        assert_eq!(a.tokens(), b.tokens());
    }

    #[test]
    fn wordpiece_greedy_longest_match() {
        let tokens: Vec<String> = [
            UNK, CLS, SEP, MASK, "un", "##able", "##b", "able", "run", "##ning",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let v = Vocab::word_piece(tokens, "##".into(), true).unwrap();
        let ids = v.tokenize("unable running");
        let surfaces = v.decode(&ids);
        assert_eq!(surfaces, vec!["un", "##able", "run", "##ning"]);
        // A word with no decomposition becomes a single unk.
        assert_eq!(v.tokenize("xyz"), vec![v.unk_id()]);
    }
}
