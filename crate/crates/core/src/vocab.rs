//! The closed token vocabulary used for conditioning.
//!
//! The toy backbones have no text encoder, so every prompt phrase is a token
//! carrying a concept label. Positive phrases are trained on the well-formed
//! mode of the toy data, negative phrases on the malformed mode, and the
//! neutral phrase on both.
//!
//! | token | phrase               | concept  |
//! |-------|----------------------|----------|
//! | 0     | `<null>`             | null     |
//! | 1     | `hands`              | neutral  |
//! | 2     | `realistic hands`    | positive |
//! | 3     | `five fingers`       | positive |
//! | 4     | `8k`                 | positive |
//! | 5     | `correct anatomy`    | positive |
//! | 6     | `distorted hands`    | negative |
//! | 7     | `clumsy hands`       | negative |
//! | 8     | `poorly drawn hands` | negative |
//! | 9     | `blurry hands`       | negative |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Token = usize;

/// Token of the unconditional branch used by classifier-free guidance.
pub const NULL_TOKEN: Token = 0;
pub const NEUTRAL_TOKEN: Token = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Concept {
    Null,
    Neutral,
    Positive,
    Negative,
}

const TABLE: [(&str, Concept); 10] = [
    ("<null>", Concept::Null),
    ("hands", Concept::Neutral),
    ("realistic hands", Concept::Positive),
    ("five fingers", Concept::Positive),
    ("8k", Concept::Positive),
    ("correct anatomy", Concept::Positive),
    ("distorted hands", Concept::Negative),
    ("clumsy hands", Concept::Negative),
    ("poorly drawn hands", Concept::Negative),
    ("blurry hands", Concept::Negative),
];

pub const VOCAB_SIZE: usize = TABLE.len();

pub fn phrase(token: Token) -> Option<&'static str> {
    TABLE.get(token).map(|(p, _)| *p)
}

pub fn concept(token: Token) -> Option<Concept> {
    TABLE.get(token).map(|(_, c)| *c)
}

pub fn tokens_of(c: Concept) -> Vec<Token> {
    TABLE
        .iter()
        .enumerate()
        .filter(|(_, (_, k))| *k == c)
        .map(|(i, _)| i)
        .collect()
}

/// Resolves a phrase (case-insensitive) or a numeric token id.
pub fn lookup(s: &str) -> Result<Token> {
    let key = s.trim().to_lowercase();
    if let Ok(id) = key.parse::<usize>() {
        if id < VOCAB_SIZE {
            return Ok(id);
        }
    }
    TABLE
        .iter()
        .position(|(p, _)| *p == key)
        .ok_or_else(|| Error::invalid(format!("`{s}` is not in the vocabulary")))
}

pub fn check_token(token: Token) -> Result<()> {
    if token < VOCAB_SIZE {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "token {token} outside vocabulary of {VOCAB_SIZE}"
        )))
    }
}

/// Maps free text (e.g. a caption) to the most specific phrase it mentions,
/// falling back to the neutral token.
pub fn token_for_text(text: &str) -> Token {
    let lower = text.to_lowercase();
    TABLE
        .iter()
        .enumerate()
        .skip(2)
        .filter(|(_, (p, _))| lower.contains(p))
        .max_by_key(|(_, (p, _))| p.len())
        .map(|(i, _)| i)
        .unwrap_or(NEUTRAL_TOKEN)
}

/// A neutral prompt with the phrases it is pushed towards and away from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTriple {
    pub neutral: Token,
    pub positives: Vec<Token>,
    pub negatives: Vec<Token>,
}

impl PromptTriple {
    pub fn validate(&self) -> Result<()> {
        check_token(self.neutral)?;
        if self.positives.is_empty() || self.negatives.is_empty() {
            return Err(Error::invalid("prompt triple needs positives and negatives"));
        }
        for &t in self.positives.iter().chain(&self.negatives) {
            check_token(t)?;
        }
        Ok(())
    }
}

/// Phrase-level form used in triple files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTripleSpec {
    pub neutral: String,
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
}

impl PromptTripleSpec {
    pub fn resolve(&self) -> Result<PromptTriple> {
        let triple = PromptTriple {
            neutral: lookup(&self.neutral)?,
            positives: self.positives.iter().map(|s| lookup(s)).collect::<Result<_>>()?,
            negatives: self.negatives.iter().map(|s| lookup(s)).collect::<Result<_>>()?,
        };
        triple.validate()?;
        Ok(triple)
    }
}

/// The five default prompt sets: `hands` as the neutral prompt, combinations
/// of the positive phrases, and every negative phrase.
pub fn default_prompt_sets() -> Vec<PromptTriple> {
    let negatives = tokens_of(Concept::Negative);
    [vec![2, 3], vec![2, 4], vec![3, 5], vec![4, 5], vec![2, 3, 4, 5]]
        .into_iter()
        .map(|positives| PromptTriple {
            neutral: NEUTRAL_TOKEN,
            positives,
            negatives: negatives.clone(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_by_phrase_and_id() {
        assert_eq!(lookup("Hands").unwrap(), NEUTRAL_TOKEN);
        assert_eq!(lookup("five fingers").unwrap(), 3);
        assert_eq!(lookup("7").unwrap(), 7);
        assert!(lookup("elbows").is_err());
        assert!(lookup("10").is_err());
    }

    #[test]
    fn caption_mapping_prefers_specific_phrases() {
        assert_eq!(token_for_text("A person opening a jar"), NEUTRAL_TOKEN);
        assert_eq!(token_for_text("realistic hands holding a cup"), 2);
        assert_eq!(token_for_text("poorly drawn hands"), 8);
    }

    #[test]
    fn default_sets_are_valid() {
        let sets = default_prompt_sets();
        assert_eq!(sets.len(), 5);
        for s in &sets {
            s.validate().unwrap();
            assert!(s.positives.iter().all(|&t| concept(t) == Some(Concept::Positive)));
        }
    }
}
