use std::collections::{BTreeSet, HashMap};

use crate::metrics::TokenSeq;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Token ids: the four specials first, then words in sorted order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Every word seen at least once, sorted for determinism.
    pub fn build<'a, I: IntoIterator<Item = &'a TokenSeq>>(captions: I) -> Self {
        let words: BTreeSet<&str> = captions.into_iter().flat_map(|c| c.iter()).collect();
        Self::from_words(words)
    }

    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, usize> = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        for w in words {
            let w = w.as_ref();
            if !index.contains_key(w) {
                index.insert(w.to_string(), tokens.len());
                tokens.push(w.to_string());
            }
        }
        Self { tokens, index }
    }

    /// Rebuilds a vocabulary from its full token list (specials included).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, String> {
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err("vocabulary must start with <pad> <bos> <eos> <unk>".into());
        }
        let index: HashMap<String, usize> = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        if index.len() != tokens.len() {
            return Err("vocabulary has duplicate tokens".into());
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(SPECIALS[UNK], String::as_str)
    }

    /// Word ids of a caption; unknown words map to UNK.
    pub fn encode(&self, caption: &TokenSeq) -> Vec<usize> {
        caption.iter().map(|w| self.id(w)).collect()
    }

    /// Words up to the first EOS, with special tokens dropped.
    pub fn decode(&self, ids: &[usize]) -> TokenSeq {
        TokenSeq::from_tokens(
            ids.iter().take_while(|&&i| i != EOS).filter(|&&i| i > UNK).map(|&i| self.word(i).to_string()),
        )
    }
}
