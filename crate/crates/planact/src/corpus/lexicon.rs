//! Unseen-word rephrasing for the generalization protocol.
//!
//! Replacement words never occur in the tuning dataset (the templates do not
//! contain them) but are present in the backbone pretraining corpus, so the
//! frozen backbone knows them while the tuned prompts have never seen them.

use super::Instruction;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RephraseMode {
    None,
    Verb,
    Noun,
    Both,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubstitutionLexicon {
    pub verbs: Vec<(String, String)>,
    pub nouns: Vec<(String, String)>,
}

impl Default for SubstitutionLexicon {
    fn default() -> Self {
        let pair = |a: &str, b: &str| (a.to_string(), b.to_string());
        SubstitutionLexicon {
            verbs: vec![
                pair("open", "unlock"),
                pair("close", "shut"),
                pair("grasp", "fetch"),
                pair("pick", "take"),
                pair("cut", "chop"),
                pair("put", "stow"),
                pair("place", "set"),
                pair("clean", "tidy"),
            ],
            nouns: vec![
                pair("drawer", "cabinet"),
                pair("table", "desk"),
                pair("bin", "box"),
                pair("knife", "blade"),
                pair("object", "item"),
                pair("objects", "items"),
                pair("trash", "litter"),
                pair("cosmetic", "lotion"),
                pair("can", "cola"),
                pair("banana", "plantain"),
                pair("apple", "fruit"),
                pair("bread", "loaf"),
                pair("ball", "orb"),
            ],
        }
    }
}

impl SubstitutionLexicon {
    /// Every replacement word (the "unseen" side).
    pub fn replacement_words(&self) -> Vec<&str> {
        self.verbs.iter().chain(&self.nouns).map(|(_, to)| to.as_str()).collect()
    }

    /// Every mapped source word.
    pub fn source_words(&self) -> Vec<&str> {
        self.verbs.iter().chain(&self.nouns).map(|(from, _)| from.as_str()).collect()
    }

    fn map_word<'a>(&'a self, word: &'a str, mode: RephraseMode) -> &'a str {
        let lookup = |pairs: &'a [(String, String)]| {
            pairs.iter().find(|(from, _)| from == word).map(|(_, to)| to.as_str())
        };
        let mapped = match mode {
            RephraseMode::None => None,
            RephraseMode::Verb => lookup(&self.verbs),
            RephraseMode::Noun => lookup(&self.nouns),
            RephraseMode::Both => lookup(&self.verbs).or_else(|| lookup(&self.nouns)),
        };
        mapped.unwrap_or(word)
    }
}

/// Word-wise substitution over the instruction surface text. The grounding
/// (task, target) is untouched: rephrasing changes words, not semantics.
pub fn rephrase(inst: &Instruction, mode: RephraseMode, lex: &SubstitutionLexicon) -> Instruction {
    let text: Vec<&str> =
        inst.text.split_whitespace().map(|word| lex.map_word(word, mode)).collect();
    Instruction { text: text.join(" "), task: inst.task, target: inst.target }
}
