use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD_TOKEN: &str = "<pad>";

/// Lowercases and splits on whitespace and punctuation, rejoining with
/// single spaces.
pub fn normalize_caption(caption: &str) -> String {
    caption
        .to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Token table; id 0 is always the padding token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from captions, tokens in sorted order after `<pad>`.
    pub fn build<'a>(captions: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words: Vec<String> = captions
            .into_iter()
            .flat_map(|c| normalize_caption(c).split(' ').map(str::to_string).collect::<Vec<_>>())
            .filter(|w| !w.is_empty())
            .collect();
        words.sort();
        words.dedup();
        let mut tokens = vec![PAD_TOKEN.to_string()];
        tokens.extend(words);
        Self::from_tokens(tokens).expect("built vocabulary is well formed")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(PAD_TOKEN) {
            return Err(Error::InvalidInput(format!("vocabulary must start with {PAD_TOKEN}")));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::InvalidInput(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn tokenize(&self, caption: &str) -> Result<Vec<u32>> {
        let norm = normalize_caption(caption);
        if norm.is_empty() {
            return Err(Error::InvalidInput("empty caption".into()));
        }
        norm.split(' ')
            .map(|w| {
                self.id(w)
                    .ok_or_else(|| Error::InvalidInput(format!("token {w:?} is not in the vocabulary")))
            })
            .collect()
    }

    pub fn detokenize(&self, ids: &[u32]) -> Result<String> {
        let words = ids
            .iter()
            .filter(|&&id| id != 0)
            .map(|&id| {
                self.tokens
                    .get(id as usize)
                    .map(String::as_str)
                    .ok_or(Error::OutOfVocabulary { id, size: self.len() })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(words.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_returns_normalized_caption() {
        let caps = ["A small, RED circle.", "this bird's wing is   black!"];
        let vocab = Vocabulary::build(caps.iter().copied());
        for c in caps {
            let ids = vocab.tokenize(c).unwrap();
            assert_eq!(vocab.detokenize(&ids).unwrap(), normalize_caption(c));
        }
        assert_eq!(normalize_caption("A small, RED circle."), "a small red circle");
        assert_eq!(vocab.tokens()[0], PAD_TOKEN);
    }

    #[test]
    fn unknown_tokens_are_rejected() {
        let vocab = Vocabulary::build(["a red circle"]);
        assert!(vocab.tokenize("a blue circle").is_err());
        assert!(matches!(vocab.detokenize(&[99]), Err(Error::OutOfVocabulary { id: 99, .. })));
        assert!(Vocabulary::from_tokens(vec!["a".into()]).is_err());
    }
}
