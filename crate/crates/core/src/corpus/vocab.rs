use std::collections::HashMap;

use crate::error::{Error, Result};

use super::tokenize::tokenize;
use super::Story;

pub const UNK: usize = 0;
pub const PAD: usize = 1;
pub const START: usize = 2;
pub const DELIM: usize = 3;
pub const CLF: usize = 4;

pub const RESERVED: [&str; 5] = ["<unk>", "<pad>", "<start>", "<delim>", "<clf>"];

/// Word-level vocabulary. Reserved markers hold the five lowest ids; all
/// other tokens map bijectively onto the remaining ids, ordered by
/// (frequency desc, token asc) at build time so construction is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Build from every sentence (body and endings) of `stories`, keeping
    /// tokens whose corpus frequency is at least `min_count`.
    pub fn build(stories: &[Story], min_count: usize) -> Result<Self> {
        if stories.is_empty() {
            return Err(Error::contract("cannot build a vocabulary from an empty corpus"));
        }
        if min_count == 0 {
            return Err(Error::config("vocab min_count must be positive"));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for story in stories {
            for sentence in story.sentences() {
                for token in tokenize(sentence) {
                    *counts.entry(token).or_insert(0) += 1;
                }
            }
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self::from_tokens(kept.into_iter().map(|(t, _)| t)))
    }

    /// Rebuild from the non-reserved tokens in id order (checkpoint loads).
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut id_to_token: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(tokens);
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            token_to_id,
            id_to_token,
        }
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    /// Id for `token`, falling back to `<unk>`.
    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    /// Non-reserved tokens in id order, for serialization.
    pub fn plain_tokens(&self) -> &[String] {
        &self.id_to_token[RESERVED.len()..]
    }
}

/// Vocabulary ids for one serialized story, at most the context window long.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<usize>,
}

impl TokenSequence {
    pub(crate) fn new(ids: Vec<usize>) -> Self {
        TokenSequence { ids }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_sentence_story(text: &str) -> Story {
        Story::unlabeled(
            "s1",
            [
                text.to_string(),
                String::new(),
                String::new(),
                String::new(),
            ],
            String::new(),
        )
    }

    #[test]
    fn min_count_filters_rare_tokens() {
        let stories = vec![one_sentence_story("a a b")];
        let vocab = Vocabulary::build(&stories, 2).unwrap();
        assert!(vocab.contains("a"));
        assert!(!vocab.contains("b"));
        assert_eq!(vocab.id("b"), UNK);
    }

    #[test]
    fn min_count_one_keeps_every_token() {
        let stories = vec![one_sentence_story("x y z z")];
        let vocab = Vocabulary::build(&stories, 1).unwrap();
        for t in ["x", "y", "z"] {
            assert!(vocab.contains(t));
        }
    }

    #[test]
    fn rebuilding_gives_identical_ids() {
        let stories = vec![
            one_sentence_story("the cat sat on the mat"),
            one_sentence_story("the dog sat"),
        ];
        let a = Vocabulary::build(&stories, 1).unwrap();
        let b = Vocabulary::build(&stories, 1).unwrap();
        assert_eq!(a, b);
        // Higher frequency wins the lower id; ties break alphabetically.
        assert!(a.id("the") < a.id("sat"));
        assert!(a.id("sat") < a.id("cat"));
        assert!(a.id("cat") < a.id("dog"));
    }

    #[test]
    fn reserved_ids_are_lowest() {
        let stories = vec![one_sentence_story("word")];
        let vocab = Vocabulary::build(&stories, 1).unwrap();
        for (i, t) in RESERVED.iter().enumerate() {
            assert_eq!(vocab.id(t), i);
        }
        assert_eq!(vocab.id("word"), RESERVED.len());
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(Vocabulary::build(&[], 1).is_err());
    }
}
