//! Whitespace word vocabulary with fixed special ids.

use crate::corpus::{enumerate_tasks, SubstitutionLexicon};
use crate::domain::{ActionLanguage, ALL_CATEGORIES};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SEP: usize = 4;
pub const MASK: usize = 5;

pub const SEP_WORD: &str = "<SEP>";
pub const MASK_WORD: &str = "<MASK>";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// The full closed vocabulary of the stack: specials, every instruction
    /// template word, every category word, every skill-sentence word, and
    /// both sides of the substitution lexicon.
    pub fn build() -> Vocabulary {
        let mut words: Vec<String> = Vec::new();
        for spec in enumerate_tasks() {
            for t in spec.templates {
                words.extend(t.split_whitespace().map(str::to_string));
            }
        }
        for c in ALL_CATEGORIES {
            words.push(c.word().to_string());
        }
        for al in ActionLanguage::closed_set() {
            words.extend(al.text().split_whitespace().map(str::to_string));
        }
        let lex = SubstitutionLexicon::default();
        words.extend(lex.source_words().iter().map(|w| w.to_string()));
        words.extend(lex.replacement_words().iter().map(|w| w.to_string()));
        words.retain(|w| w != "{obj}");
        words.sort();
        words.dedup();

        let mut tokens = vec![
            "<PAD>".to_string(),
            "<BOS>".to_string(),
            "<EOS>".to_string(),
            "<UNK>".to_string(),
            SEP_WORD.to_string(),
            MASK_WORD.to_string(),
        ];
        tokens.extend(words);
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> &str {
        self.tokens.get(id).map(|s| s.as_str()).unwrap_or("<UNK>")
    }

    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.word(i)).collect::<Vec<_>>().join(" ")
    }

    /// Order-sensitive hash of the token list; stored in checkpoint headers
    /// so a checkpoint can never be loaded against a different vocabulary.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for t in &self.tokens {
            for b in t.as_bytes() {
                h = (h ^ *b as u64).wrapping_mul(0x100000001b3);
            }
            h = (h ^ 0xff).wrapping_mul(0x100000001b3);
        }
        h
    }

    /// Rebuilds the word index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }
}
